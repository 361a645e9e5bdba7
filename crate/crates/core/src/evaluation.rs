//! Error metrics and mixing diagnostics.

use crate::corrector::{gibbs_kernel_exact, GibbsCorrectorConfig};
use crate::error::{Error, Result};
use crate::kernel::Kernel;
use crate::rng::{mix64, unit_symmetric};
use crate::score::ExactScore;
use crate::state_space::{tv_distance, Pmf, Sequence};

/// Hellinger distance `sqrt(1 - sum sqrt(p q))` between two histograms.
/// Inputs are normalized first.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyInput);
    }
    if p.len() != q.len() {
        return Err(Error::SpecMismatch(format!("histograms of length {} and {}", p.len(), q.len())));
    }
    let (sp, sq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    if !(sp > 0.0 && sq > 0.0) || p.iter().chain(q).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidPmf("histograms must be nonnegative with positive mass".into()));
    }
    // Written as (1/sqrt 2) |sqrt p - sqrt q|_2, which keeps precision near 0.
    let sq_dist: f64 = p.iter().zip(q).map(|(a, b)| ((a / sp).sqrt() - (b / sq).sqrt()).powi(2)).sum();
    Ok((0.5 * sq_dist).sqrt().min(1.0))
}

/// Token frequencies pooled over all positions of all samples.
pub fn pooled_histogram(samples: &[Sequence], s: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut h = vec![0.0; s];
    for x in samples {
        for &a in x.tokens() {
            if a >= s {
                return Err(Error::InvalidSequence(format!("token {a} outside vocabulary of size {s}")));
            }
            h[a] += 1.0;
        }
    }
    Ok(h)
}

/// What a sample set is compared against.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Samples(&'a [Sequence]),
    Law(&'a Pmf),
}

/// Hellinger distance between pooled token histograms.
pub fn hellinger_histogram(samples: &[Sequence], reference: Reference<'_>, s: usize) -> Result<f64> {
    let p = pooled_histogram(samples, s)?;
    let q = match reference {
        Reference::Samples(r) => pooled_histogram(r, s)?,
        Reference::Law(law) => {
            if law.space().s() != s {
                return Err(Error::SpecMismatch("reference law has a different vocabulary".into()));
            }
            law.pooled_token_histogram()
        }
    };
    hellinger(&p, &q)
}

/// Hellinger distance between the pooled token histograms of two laws.
pub fn hellinger_laws(p: &Pmf, q: &Pmf) -> Result<f64> {
    hellinger(&p.pooled_token_histogram(), &q.pooled_token_histogram())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractionMethod {
    Eigen,
    TvDecayFit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    pub rho: f64,
    pub method: ContractionMethod,
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 100_000;
const REVERSIBILITY_TOL: f64 = 1e-8;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn deflate(v: &mut [f64], u: &[f64]) {
    let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
}

/// `rho = 1 - |lambda_2|` of a kernel reversible with respect to `target`,
/// by power iteration on `D^{1/2} P D^{-1/2}` with the top eigenvector
/// `sqrt(target)` projected out.
pub fn spectral_gap(kernel: &Kernel, target: &Pmf) -> Result<ContractionEstimate> {
    let n = kernel.n();
    if target.len() != n {
        return Err(Error::SpecMismatch(format!("kernel has {n} states, target {}", target.len())));
    }
    let pi = target.mass();
    if pi.iter().any(|p| !(*p > 0.0)) {
        return Err(Error::InvalidPmf("spectral gap needs a target with full support".into()));
    }
    let violation = kernel.detailed_balance_violation(pi);
    if violation > REVERSIBILITY_TOL {
        return Err(Error::NotReversible(violation));
    }
    let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let sym_apply = |v: &[f64]| -> Vec<f64> {
        let f: Vec<f64> = v.iter().zip(&sqrt_pi).map(|(a, s)| a / s).collect();
        kernel.apply(&f).into_iter().zip(&sqrt_pi).map(|(a, s)| a * s).collect()
    };
    let mut v: Vec<f64> = (0..n as u64).map(|k| unit_symmetric(mix64(k ^ 0xA5A5))).collect();
    deflate(&mut v, &sqrt_pi);
    let mut len = norm(&v);
    if len < 1e-300 {
        return Ok(ContractionEstimate { rho: 1.0, method: ContractionMethod::Eigen });
    }
    v.iter_mut().for_each(|a| *a /= len);
    let mut lambda = f64::NAN;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = sym_apply(&v);
        deflate(&mut w, &sqrt_pi);
        len = norm(&w);
        if len < 1e-300 {
            return Ok(ContractionEstimate { rho: 1.0, method: ContractionMethod::Eigen });
        }
        w.iter_mut().for_each(|a| *a /= len);
        let converged = (len - lambda).abs() <= POWER_TOL * len.max(1e-3);
        lambda = len;
        v = w;
        if converged {
            let rho = (1.0 - lambda).clamp(0.0, 1.0);
            return Ok(ContractionEstimate { rho, method: ContractionMethod::Eigen });
        }
    }
    Err(Error::NoConvergence(POWER_MAX_ITERS))
}

/// TV values below this are treated as numerical noise.
pub const TV_FLOOR: f64 = 1e-12;

/// Ordinary least squares; returns `(slope, intercept, r_squared)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::SpecMismatch("fit inputs differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(Error::EmptyInput);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidConfig("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, my - slope * mx, r2))
}

/// `rho = 1 - exp(slope)` from a least-squares fit of `log tv(init P^l, target)`
/// over the second half of `l = 0..=steps`.
pub fn tv_decay_rate(kernel: &Kernel, target: &Pmf, init: &Pmf, steps: usize) -> Result<ContractionEstimate> {
    let mut p = init.clone();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for l in 0..=steps {
        let tv = tv_distance(&p, target)?;
        if 2 * l >= steps && tv > TV_FLOOR {
            xs.push(l as f64);
            ys.push(tv.ln());
        }
        if l < steps {
            p = kernel.push_pmf(&p)?;
        }
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientDecay(format!("only {} points above the TV floor in the fit window", xs.len())));
    }
    let (slope, _, _) = linear_fit(&xs, &ys)?;
    let rho = (1.0 - slope.exp()).clamp(0.0, 1.0);
    Ok(ContractionEstimate { rho, method: ContractionMethod::TvDecayFit })
}

/// TV against NFE for one method and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct TvCurve {
    pub method: String,
    pub seed: u64,
    points: Vec<(usize, f64)>,
}

impl TvCurve {
    pub fn new(method: impl Into<String>, seed: u64, points: Vec<(usize, f64)>) -> Result<Self> {
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidConfig("curve NFE values must increase strictly".into()));
        }
        if let Some((_, tv)) = points.iter().find(|(_, tv)| !(0.0..=1.0 + 1e-12).contains(tv)) {
            return Err(Error::InvalidConfig(format!("tv {tv} outside [0, 1]")));
        }
        Ok(Self { method: method.into(), seed, points })
    }

    pub fn points(&self) -> &[(usize, f64)] {
        &self.points
    }
}

/// Smallest NFE on the curve whose TV is at most `eps`.
pub fn steps_to_epsilon(curve: &TvCurve, eps: f64) -> Option<usize> {
    curve.points.iter().find(|(_, tv)| *tv <= eps).map(|(n, _)| *n)
}

/// Spectral gaps of the Gibbs corrector kernel along a set of times.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile {
    pub per_time: Vec<(f64, f64)>,
}

impl GapProfile {
    /// Smallest gap over the sampled times (not the infimum over the continuum).
    pub fn min_gap(&self) -> Option<f64> {
        self.per_time.iter().map(|(_, r)| *r).reduce(f64::min)
    }
}

pub fn gap_profile(times: &[f64], cfg: &GibbsCorrectorConfig, oracle: &ExactScore) -> Result<GapProfile> {
    let per_time = times
        .iter()
        .map(|&t| {
            let k = gibbs_kernel_exact(t, cfg, oracle)?;
            Ok((t, spectral_gap(&k, &*oracle.marginal(t)?)?.rho))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapProfile { per_time })
}
