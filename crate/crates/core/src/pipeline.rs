//! Predictor-corrector sampling over a time grid.
//!
//! Each outer step `k = N-1, ..., 0` takes one Euler step from `t_{k+1}` to
//! `t_k` and then runs `L_k` corrector steps targeting `q_{t_k}`. Samples are
//! produced either one chain at a time or, on enumerable spaces, by pushing
//! the whole law through the exact transition kernels.

use rand::Rng;

use crate::corrector::{
    ctmc_corrector_kernel, ctmc_corrector_step, gibbs_kernel_exact, run_gibbs_loop, CtmcCorrectorConfig,
    GibbsCorrectorConfig, Schedule, ScorePolicy,
};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, SparseKernel};
use crate::predictor::{euler_step_kernel, euler_step_sample, EulerStep, OverflowPolicy};
use crate::rng::{split_stream, SimRng};
use crate::score::ScoreOracle;
use crate::state_space::{Pmf, Sequence, StateSpace};

/// Decreasing times `T = points[0] > ... > points[N] = delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    delta: f64,
    kappa: f64,
    points: Vec<f64>,
}

impl TimeGrid {
    /// Steps of size `kappa` from `T` down to `max(1, delta)`, then geometric
    /// steps `t -> (1 - kappa) t` down to `delta`. The last step of each
    /// phase is shortened to land exactly on its endpoint.
    pub fn build(t_max: f64, delta: f64, kappa: f64) -> Result<Self> {
        if !(delta > 0.0 && t_max > delta && t_max.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid needs 0 < delta < T, got delta = {delta}, T = {t_max}")));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::InvalidConfig(format!("kappa = {kappa} outside (0, 1)")));
        }
        // Guards the snapping comparisons against round-off in `T - k kappa`.
        let tol = 1e-12 * t_max;
        let knee = delta.max(1.0);
        let mut points = vec![t_max];
        if t_max > knee {
            let mut k = 1.0;
            loop {
                let t = t_max - k * kappa;
                if t <= knee + tol {
                    points.push(knee);
                    break;
                }
                points.push(t);
                k += 1.0;
            }
        }
        let mut t = *points.last().expect("grid starts at T");
        while t > delta {
            let next = (1.0 - kappa) * t;
            t = if next <= delta * (1.0 + 1e-12) { delta } else { next };
            points.push(t);
        }
        let grid = Self { t_max, delta, kappa, points };
        grid.check_invariant()?;
        Ok(grid)
    }

    /// Grid with exactly `n` steps: splits `n` between the uniform and the
    /// geometric phase so that the largest relative step is as small as
    /// possible.
    pub fn with_steps(t_max: f64, delta: f64, n: usize) -> Result<Self> {
        if !(delta > 0.0 && t_max > delta && t_max.is_finite()) {
            return Err(Error::InvalidConfig(format!("grid needs 0 < delta < T, got delta = {delta}, T = {t_max}")));
        }
        if n == 0 {
            return Err(Error::InvalidConfig("grid needs at least one step".into()));
        }
        let knee = delta.max(1.0);
        // Phase lengths: uniform on [knee, T] when T > 1, geometric on [delta, min(T, 1)].
        let uniform_len = (t_max - knee).max(0.0);
        let geo_ratio = delta / t_max.min(1.0).max(delta);
        let need_uniform = uniform_len > 0.0;
        let need_geo = geo_ratio < 1.0;
        if n == 1 {
            return Self::from_points(vec![t_max, delta]);
        }
        let uniform_kappa = |nu: usize| if nu == 0 { 0.0 } else { uniform_len / nu as f64 };
        let geo_kappa = |ng: usize| if ng == 0 { 0.0 } else { 1.0 - geo_ratio.powf(1.0 / ng as f64) };
        let (nu, ng) = match (need_uniform, need_geo) {
            (true, true) => (1..n)
                .map(|nu| (nu, n - nu))
                .min_by(|a, b| {
                    let ka = uniform_kappa(a.0).max(geo_kappa(a.1));
                    let kb = uniform_kappa(b.0).max(geo_kappa(b.1));
                    ka.total_cmp(&kb)
                })
                .expect("n >= 2"),
            (true, false) => (n, 0),
            _ => (0, n),
        };
        let mut points = Vec::with_capacity(n + 1);
        for k in 0..nu {
            points.push(t_max - k as f64 * uniform_kappa(nu));
        }
        let top = if nu > 0 { knee } else { t_max };
        for k in 0..ng {
            points.push(top * geo_ratio.powf(k as f64 / ng as f64));
        }
        points.push(delta);
        let kappa = uniform_kappa(nu).max(geo_kappa(ng));
        let grid = Self { t_max, delta, kappa: kappa.max(f64::MIN_POSITIVE), points };
        grid.check_invariant()?;
        Ok(grid)
    }

    /// Grid from explicit decreasing times; `kappa` is the smallest value
    /// for which the step bound holds.
    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig("grid needs at least two times".into()));
        }
        if points.windows(2).any(|w| !(w[0] > w[1])) || !(points[points.len() - 1] > 0.0) {
            return Err(Error::InvalidConfig("grid times must be positive and decreasing".into()));
        }
        let kappa = points.windows(2).map(|w| (w[0] - w[1]) / w[0].min(1.0)).fold(0.0, f64::max);
        Ok(Self { t_max: points[0], delta: points[points.len() - 1], kappa, points })
    }

    /// Rechecks `t_{k+1} - t_k <= kappa min(1, t_{k+1})` and exact endpoints.
    pub fn check_invariant(&self) -> Result<()> {
        if self.points.first() != Some(&self.t_max) || self.points.last() != Some(&self.delta) {
            return Err(Error::InvalidConfig("grid endpoints are not exact".into()));
        }
        for w in self.points.windows(2) {
            let bound = self.kappa * w[0].min(1.0);
            if !(w[0] > w[1]) || w[0] - w[1] > bound * (1.0 + 1e-9) {
                return Err(Error::InvalidConfig(format!(
                    "grid step {} -> {} exceeds kappa bound {bound}",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Times from `T` down to `delta`.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of outer steps `N`.
    pub fn num_steps(&self) -> usize {
        self.points.len() - 1
    }

    /// `t_k` in the increasing indexing (`t_0 = delta`, `t_N = T`).
    pub fn time(&self, k: usize) -> f64 {
        self.points[self.num_steps() - k]
    }

    /// Euler step from `t_{k+1}` to `t_k`.
    pub fn step(&self, k: usize) -> EulerStep {
        EulerStep::new(self.time(k + 1), self.time(k)).expect("grid is strictly decreasing")
    }
}

/// Early-stopping horizon for accuracy `eps`: `T = log(d log S / eps^2)`,
/// `delta = eps / d`.
pub fn default_horizon(space: &StateSpace, eps: f64) -> Result<(f64, f64)> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidConfig(format!("accuracy {eps} outside (0, 1)")));
    }
    let d = space.d() as f64;
    let t_max = (d * (space.s() as f64).ln() / (eps * eps)).ln();
    let delta = eps / d;
    if !(t_max > delta) {
        return Err(Error::InvalidConfig(format!("horizon T = {t_max} below delta = {delta}")));
    }
    Ok((t_max, delta))
}

/// Score evaluations charged to a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct NfeLedger {
    pub predictor_calls: usize,
    pub corrector_calls: usize,
}

impl NfeLedger {
    pub fn total(&self) -> usize {
        self.predictor_calls + self.corrector_calls
    }
}

/// Tokens held fixed for conditional generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClampMask {
    entries: Vec<(usize, usize)>,
}

impl ClampMask {
    pub fn new(space: &StateSpace, mut entries: Vec<(usize, usize)>) -> Result<Self> {
        entries.sort_unstable();
        entries.dedup();
        for w in entries.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidConfig(format!("position {} clamped twice", w[0].0)));
            }
        }
        for &(i, a) in &entries {
            if i >= space.d() || a >= space.s() {
                return Err(Error::InvalidConfig(format!(
                    "clamp ({i}, {a}) outside d = {}, S = {}",
                    space.d(),
                    space.s()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn apply(&self, x: &mut Sequence) {
        let tokens = x.tokens_mut();
        for &(i, a) in &self.entries {
            tokens[i] = a;
        }
    }

    /// Deterministic kernel `x -> clamp(x)`.
    pub fn kernel(&self, space: &StateSpace) -> Result<Kernel> {
        let strides = space.strides();
        let map = space
            .sequences()?
            .enumerate()
            .map(|(idx, x)| self.entries.iter().fold(idx, |acc, &(i, a)| acc - x[i] * strides[i] + a * strides[i]))
            .collect::<Vec<_>>();
        Ok(Kernel::Sparse(SparseKernel::deterministic(&map)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CorrectorKind {
    None,
    Gibbs(GibbsCorrectorConfig),
    Ctmc(CtmcCorrectorConfig),
}

impl CorrectorKind {
    fn steps_at(&self, k: usize) -> usize {
        match self {
            CorrectorKind::None => 0,
            CorrectorKind::Gibbs(g) => g.schedule.steps_at(k),
            CorrectorKind::Ctmc(c) => c.schedule.steps_at(k),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub grid: TimeGrid,
    pub corrector: CorrectorKind,
    pub clamp: Option<ClampMask>,
    pub overflow: OverflowPolicy,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn euler(grid: TimeGrid) -> Self {
        Self { grid, corrector: CorrectorKind::None, clamp: None, overflow: OverflowPolicy::Strict, seed: 0 }
    }

    pub fn with_corrector(mut self, corrector: CorrectorKind) -> Self {
        self.corrector = corrector;
        self
    }

    pub fn with_clamp(mut self, clamp: Option<ClampMask>) -> Self {
        self.clamp = clamp;
        self
    }

    pub fn with_overflow(mut self, overflow: OverflowPolicy) -> Self {
        self.overflow = overflow;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        self.grid.check_invariant()?;
        match &self.corrector {
            CorrectorKind::None => Ok(()),
            CorrectorKind::Gibbs(g) => g.validate(space),
            CorrectorKind::Ctmc(c) => c.validate(),
        }
    }

    /// Ledger of a run; it does not depend on the random draws.
    pub fn planned_ledger(&self, s: usize) -> NfeLedger {
        let n = self.grid.num_steps();
        let corrector_calls = (0..n)
            .map(|k| match &self.corrector {
                CorrectorKind::None => 0,
                CorrectorKind::Gibbs(g) => g.loop_nfe(g.schedule.steps_at(k), s),
                CorrectorKind::Ctmc(c) => c.schedule.steps_at(k),
            })
            .sum();
        NfeLedger { predictor_calls: n, corrector_calls }
    }
}

/// Runs one chain and records the state after initialization and after every
/// outer step.
pub fn run_gadd_trajectory<O, R>(cfg: &SamplerConfig, oracle: &O, rng: &mut R) -> Result<(Vec<Sequence>, NfeLedger)>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let space = *oracle.space();
    cfg.validate(&space)?;
    let grid = &cfg.grid;
    let clamp = |z: &mut Sequence| {
        if let Some(c) = &cfg.clamp {
            c.apply(z);
        }
    };
    let mut x = space.random_sequence(rng);
    clamp(&mut x);
    let mut trajectory = vec![x.clone()];
    let mut ledger = NfeLedger::default();
    for k in (0..grid.num_steps()).rev() {
        let step = grid.step(k);
        x = euler_step_sample(&x, &step, oracle, cfg.overflow, rng)?;
        ledger.predictor_calls += 1;
        clamp(&mut x);
        let t = step.t_lo();
        let steps = cfg.corrector.steps_at(k);
        match &cfg.corrector {
            CorrectorKind::None => {}
            CorrectorKind::Gibbs(g) => {
                ledger.corrector_calls += run_gibbs_loop(&mut x, t, g, steps, oracle, rng, clamp)?;
            }
            CorrectorKind::Ctmc(c) => {
                let eta = c.step.eta(step.h());
                for _ in 0..steps {
                    x = ctmc_corrector_step(&x, t, eta, oracle, cfg.overflow, rng)?;
                    clamp(&mut x);
                }
                ledger.corrector_calls += steps;
            }
        }
        trajectory.push(x.clone());
    }
    Ok((trajectory, ledger))
}

/// One GADD sample from a uniformly random start.
pub fn run_gadd_sample<O, R>(cfg: &SamplerConfig, oracle: &O, rng: &mut R) -> Result<(Sequence, NfeLedger)>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let (mut traj, ledger) = run_gadd_trajectory(cfg, oracle, rng)?;
    Ok((traj.pop().expect("trajectory holds the initial state"), ledger))
}

/// Plain Euler sampler with no corrector and no clamp, written out on its
/// own as the reference the corrector-free sampler must reproduce.
pub fn run_euler_trajectory<O, R>(
    grid: &TimeGrid,
    oracle: &O,
    overflow: OverflowPolicy,
    rng: &mut R,
) -> Result<(Vec<Sequence>, NfeLedger)>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let mut x = oracle.space().random_sequence(rng);
    let mut out = vec![x.clone()];
    for w in grid.points().windows(2) {
        x = euler_step_sample(&x, &EulerStep::new(w[0], w[1])?, oracle, overflow, rng)?;
        out.push(x.clone());
    }
    Ok((out, NfeLedger { predictor_calls: grid.num_steps(), corrector_calls: 0 }))
}

/// Evolves the full law from uniform through the exact kernels. Returns
/// `(t, law)` for the initial time and after every outer step.
pub fn run_pushforward<O: ScoreOracle + ?Sized>(cfg: &SamplerConfig, oracle: &O) -> Result<Vec<(f64, Pmf)>> {
    let space = *oracle.space();
    space.size()?;
    cfg.validate(&space)?;
    if let CorrectorKind::Gibbs(g) = &cfg.corrector {
        if g.policy == ScorePolicy::Stale {
            return Err(Error::UnsupportedExact(
                "stale scores make the corrector loop depend on its entry state".into(),
            ));
        }
    }
    let clamp = cfg.clamp.as_ref().map(|c| c.kernel(&space)).transpose()?;
    let clamp_law = |p: Pmf| match &clamp {
        Some(k) => k.push_pmf(&p),
        None => Ok(p),
    };
    let grid = &cfg.grid;
    let mut p = clamp_law(Pmf::uniform(space)?)?;
    let mut out = vec![(grid.t_max(), p.clone())];
    for k in (0..grid.num_steps()).rev() {
        let step = grid.step(k);
        p = clamp_law(euler_step_kernel(&step, oracle, cfg.overflow)?.push_pmf(&p)?)?;
        let t = step.t_lo();
        let steps = cfg.corrector.steps_at(k);
        if steps > 0 {
            let kernel = match &cfg.corrector {
                CorrectorKind::None => unreachable!("no corrector has no steps"),
                CorrectorKind::Gibbs(g) => gibbs_kernel_exact(t, g, oracle)?,
                CorrectorKind::Ctmc(c) => ctmc_corrector_kernel(t, c.step.eta(step.h()), oracle, cfg.overflow)?,
            };
            for _ in 0..steps {
                p = clamp_law(kernel.push_pmf(&p)?)?;
            }
        }
        out.push((t, p.clone()));
    }
    Ok(out)
}

/// Output of independent chains.
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub samples: Vec<Sequence>,
    pub ledgers: Vec<NfeLedger>,
    /// Histogram of the samples when the space is enumerable.
    pub empirical: Option<Pmf>,
}

/// Runs `n_chains` chains; chain `c` draws from stream `c` of `rng`, so a
/// single chain reproduces [`run_gadd_sample`] with the same generator.
pub fn run_monte_carlo<O: ScoreOracle + ?Sized>(
    cfg: &SamplerConfig,
    oracle: &O,
    n_chains: usize,
    rng: &SimRng,
) -> Result<MonteCarlo> {
    if n_chains == 0 {
        return Err(Error::InvalidConfig("need at least one chain".into()));
    }
    let mut samples = Vec::with_capacity(n_chains);
    let mut ledgers = Vec::with_capacity(n_chains);
    for c in 0..n_chains {
        let mut chain_rng = split_stream(rng, c as u64);
        let (x, ledger) = run_gadd_sample(cfg, oracle, &mut chain_rng)?;
        samples.push(x);
        ledgers.push(ledger);
    }
    let space = *oracle.space();
    let empirical = if space.is_enumerable() { Some(Pmf::empirical(space, &samples)?) } else { None };
    Ok(MonteCarlo { samples, ledgers, empirical })
}

/// Plain Gibbs chain at a fixed time: uniform start, then `steps` corrector
/// steps (single-site updates or sweeps) with fresh scores.
pub fn run_gibbs_chain<O, R>(
    t: f64,
    cfg: &GibbsCorrectorConfig,
    steps: usize,
    oracle: &O,
    rng: &mut R,
) -> Result<(Sequence, usize)>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate(oracle.space())?;
    let mut x = oracle.space().random_sequence(rng);
    let nfe = run_gibbs_loop(&mut x, t, cfg, steps, oracle, rng, |_| {})?;
    Ok((x, nfe))
}

/// Laws of [`run_gibbs_chain`] after each of `0..=steps` steps.
pub fn gibbs_chain_pushforward<O: ScoreOracle + ?Sized>(
    t: f64,
    cfg: &GibbsCorrectorConfig,
    steps: usize,
    oracle: &O,
) -> Result<Vec<Pmf>> {
    if cfg.policy == ScorePolicy::Stale {
        return Err(Error::UnsupportedExact("stale Gibbs chain".into()));
    }
    let kernel = gibbs_kernel_exact(t, cfg, oracle)?;
    let mut p = Pmf::uniform(*oracle.space())?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(p.clone());
    for _ in 0..steps {
        p = kernel.push_pmf(&p)?;
        out.push(p.clone());
    }
    Ok(out)
}

/// `L_k` for every outer step, read off a schedule.
pub fn schedule_table(schedule: &Schedule, n: usize) -> Vec<usize> {
    (0..n).map(|k| schedule.steps_at(k)).collect()
}
