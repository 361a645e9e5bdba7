//! Correctors run at a fixed time `t` to pull the sampler law towards `q_t`.
//!
//! The Gibbs corrector resamples single tokens from posteriors
//! `q_t^i(. | x^{-i})` reconstructed from concrete scores. The CTMC corrector
//! simulates the rate `R(x, y) + R(y, x) s_t(y, x)`, whose stationary law is
//! `q_t`, with per-token Euler steps.

use std::borrow::Cow;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, ProductKernel, SparseKernel};
use crate::predictor::{finish_move_probs, per_token_kernel, OverflowPolicy};
use crate::rng::sample_categorical;
use crate::score::{check_position, ScoreOracle};
use crate::state_space::{hamming, Sequence, StateSpace};

/// Which token the anchor-ratio estimator divides by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// The token currently at the position; its score row is already at hand.
    #[default]
    Current,
    Token(usize),
}

/// Ways of turning score ratios into a single-token posterior.
///
/// Writing `r_b(a) = s_t(x^{-i} (+) a, x^{-i} (+) b)` for the score row rooted
/// at token `b`:
/// * `InverseSum`: `q(a) = 1 / sum_c r_a(c)`
/// * `AnchorRatio(b)`: `q(a) = r_b(a) / sum_c r_b(c)`
/// * `AveragedRatio`: the anchor-ratio estimate averaged over all anchors
/// * `SumNormalized`: `q(a) = sum_b r_b(a) / sum_b sum_c r_b(c)`
///
/// Each is renormalized to sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorVariant {
    InverseSum,
    AnchorRatio(Anchor),
    AveragedRatio,
    SumNormalized,
}

impl Default for EstimatorVariant {
    fn default() -> Self {
        EstimatorVariant::AnchorRatio(Anchor::Current)
    }
}

impl EstimatorVariant {
    pub const ALL: [EstimatorVariant; 4] = [
        EstimatorVariant::InverseSum,
        EstimatorVariant::AnchorRatio(Anchor::Current),
        EstimatorVariant::AveragedRatio,
        EstimatorVariant::SumNormalized,
    ];

    /// Whether the estimate needs score rows rooted away from the current state.
    pub fn needs_rooted_rows(&self) -> bool {
        !matches!(self, EstimatorVariant::AnchorRatio(Anchor::Current))
    }

    fn validate(&self, s: usize) -> Result<()> {
        match self {
            EstimatorVariant::AnchorRatio(Anchor::Token(b)) if *b >= s => {
                Err(Error::InvalidConfig(format!("anchor token {b} outside vocabulary of size {s}")))
            }
            _ => Ok(()),
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Result<Vec<f64>> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::DegenerateScore(format!("posterior weights {v:?}")));
    }
    let total: f64 = v.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateScore(format!("posterior weights sum to {total}")));
    }
    v.iter_mut().for_each(|p| *p /= total);
    Ok(v)
}

fn rooted_row<O: ScoreOracle + ?Sized>(oracle: &O, t: f64, x: &Sequence, i: usize, b: usize) -> Result<Vec<f64>> {
    if x[i] == b {
        oracle.score_row(t, x, i)
    } else {
        oracle.score_row(t, &x.with_token(i, b), i)
    }
}

/// Estimate of `q_t^i(. | x^{-i})` from the oracle's scores.
pub fn posterior_estimate<O: ScoreOracle + ?Sized>(
    oracle: &O,
    t: f64,
    x: &Sequence,
    i: usize,
    variant: EstimatorVariant,
) -> Result<Vec<f64>> {
    let space = oracle.space();
    check_position(space, i)?;
    let s = space.s();
    variant.validate(s)?;
    let raw = match variant {
        EstimatorVariant::AnchorRatio(anchor) => {
            let b = match anchor {
                Anchor::Current => x[i],
                Anchor::Token(b) => b,
            };
            rooted_row(oracle, t, x, i, b)?
        }
        EstimatorVariant::InverseSum => {
            (0..s).map(|a| Ok(1.0 / rooted_row(oracle, t, x, i, a)?.iter().sum::<f64>())).collect::<Result<Vec<_>>>()?
        }
        EstimatorVariant::AveragedRatio => {
            let mut acc = vec![0.0; s];
            for b in 0..s {
                let row = rooted_row(oracle, t, x, i, b)?;
                let total: f64 = row.iter().sum();
                for (o, v) in acc.iter_mut().zip(&row) {
                    *o += v / total / s as f64;
                }
            }
            acc
        }
        EstimatorVariant::SumNormalized => {
            let mut acc = vec![0.0; s];
            for b in 0..s {
                for (o, v) in acc.iter_mut().zip(rooted_row(oracle, t, x, i, b)?) {
                    *o += v;
                }
            }
            acc
        }
    };
    normalize(raw)
}

/// How positions are chosen for Gibbs updates.
#[derive(Debug, Clone, PartialEq)]
pub enum Scan {
    /// One position per step, drawn from `weights`.
    Random { weights: Vec<f64> },
    /// Every position in order within one sweep.
    Systematic,
}

impl Scan {
    pub fn uniform_random(d: usize) -> Self {
        Scan::Random { weights: vec![1.0 / d as f64; d] }
    }
}

/// Whether score outputs are re-queried at every Gibbs step or frozen at
/// corrector-loop entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScorePolicy {
    Fresh,
    #[default]
    Stale,
}

/// Number of corrector steps `L_k` per outer step.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Constant(usize),
    /// Indexed by outer step `k` (target time `t_k`); missing entries are 0.
    PerStep(Vec<usize>),
}

impl Schedule {
    pub fn steps_at(&self, k: usize) -> usize {
        match self {
            Schedule::Constant(l) => *l,
            Schedule::PerStep(v) => v.get(k).copied().unwrap_or(0),
        }
    }

    /// Spreads `budget` steps over `n` outer steps as evenly as possible,
    /// giving the remainder to the smallest times.
    pub fn spread(n: usize, budget: usize) -> Self {
        if n == 0 {
            return Schedule::PerStep(Vec::new());
        }
        let (base, rem) = (budget / n, budget % n);
        Schedule::PerStep((0..n).map(|k| base + usize::from(k < rem)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsCorrectorConfig {
    pub scan: Scan,
    pub schedule: Schedule,
    pub estimator: EstimatorVariant,
    pub policy: ScorePolicy,
    /// Skip the update when the current token's estimated posterior is at
    /// least this large.
    pub threshold: Option<f64>,
    /// Charge `S` evaluations per posterior for variants that need rows
    /// rooted away from the current state.
    pub strict_nfe: bool,
}

impl GibbsCorrectorConfig {
    pub fn new(scan: Scan, schedule: Schedule) -> Self {
        Self {
            scan,
            schedule,
            estimator: EstimatorVariant::default(),
            policy: ScorePolicy::Fresh,
            threshold: None,
            strict_nfe: false,
        }
    }

    pub fn with_estimator(mut self, estimator: EstimatorVariant) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_policy(mut self, policy: ScorePolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_threshold(mut self, threshold: Option<f64>) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn validate(&self, space: &StateSpace) -> Result<()> {
        if let Scan::Random { weights } = &self.scan {
            if weights.len() != space.d() {
                return Err(Error::InvalidConfig(format!("{} scan weights for d = {}", weights.len(), space.d())));
            }
            if weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::InvalidConfig("scan weights must be nonnegative".into()));
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("scan weights sum to {total}")));
            }
        }
        if let Some(th) = self.threshold {
            if !(0.0..=1.0).contains(&th) {
                return Err(Error::InvalidConfig(format!("threshold {th} outside [0, 1]")));
            }
        }
        self.estimator.validate(space.s())
    }

    /// Score evaluations charged per posterior construction.
    pub fn cost_per_query(&self, s: usize) -> usize {
        if self.strict_nfe && self.estimator.needs_rooted_rows() {
            s
        } else {
            1
        }
    }

    /// Evaluations charged for a corrector loop of `steps` Gibbs steps
    /// (a step is one single-site update or one systematic sweep).
    pub fn loop_nfe(&self, steps: usize, s: usize) -> usize {
        match (self.policy, steps) {
            (_, 0) => 0,
            (ScorePolicy::Fresh, l) => l * self.cost_per_query(s),
            (ScorePolicy::Stale, _) => self.cost_per_query(s),
        }
    }
}

fn gated(probs: &[f64], current: usize, threshold: Option<f64>) -> bool {
    threshold.is_some_and(|th| probs[current] >= th)
}

/// Posterior provider for one corrector loop.
struct Posteriors<'a, O: ?Sized> {
    oracle: &'a O,
    t: f64,
    variant: EstimatorVariant,
    /// Loop-entry state and memoized posteriors when scores are stale.
    frozen: Option<(Sequence, Vec<Option<Vec<f64>>>)>,
}

impl<'a, O: ScoreOracle + ?Sized> Posteriors<'a, O> {
    fn new(oracle: &'a O, t: f64, cfg: &GibbsCorrectorConfig, entry: &Sequence) -> Self {
        let frozen = match cfg.policy {
            ScorePolicy::Fresh => None,
            ScorePolicy::Stale => Some((entry.clone(), vec![None; entry.len()])),
        };
        Self { oracle, t, variant: cfg.estimator, frozen }
    }

    fn get(&mut self, z: &Sequence, i: usize) -> Result<Cow<'_, [f64]>> {
        match &mut self.frozen {
            None => Ok(Cow::Owned(posterior_estimate(self.oracle, self.t, z, i, self.variant)?)),
            Some((entry, memo)) => {
                if memo[i].is_none() {
                    memo[i] = Some(posterior_estimate(self.oracle, self.t, entry, i, self.variant)?);
                }
                Ok(Cow::Borrowed(memo[i].as_deref().expect("memoized above")))
            }
        }
    }
}

fn resample_position<O, R>(
    z: &mut Sequence,
    i: usize,
    posteriors: &mut Posteriors<'_, O>,
    threshold: Option<f64>,
    rng: &mut R,
) -> Result<()>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let probs = posteriors.get(z, i)?;
    if gated(&probs, z[i], threshold) {
        return Ok(());
    }
    let a = sample_categorical(&probs, rng);
    z.tokens_mut()[i] = a;
    Ok(())
}

fn random_step_inner<O, R>(
    z: &mut Sequence,
    weights: &[f64],
    cfg: &GibbsCorrectorConfig,
    posteriors: &mut Posteriors<'_, O>,
    rng: &mut R,
) -> Result<()>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let i = sample_categorical(weights, rng);
    resample_position(z, i, posteriors, cfg.threshold, rng)
}

fn sweep_inner<O, R>(
    z: &mut Sequence,
    cfg: &GibbsCorrectorConfig,
    posteriors: &mut Posteriors<'_, O>,
    rng: &mut R,
) -> Result<()>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    for i in 0..z.len() {
        resample_position(z, i, posteriors, cfg.threshold, rng)?;
    }
    Ok(())
}

/// One random-scan Gibbs step targeting `q_t`.
pub fn gibbs_step_random<O, R>(
    z: &Sequence,
    t: f64,
    cfg: &GibbsCorrectorConfig,
    oracle: &O,
    rng: &mut R,
) -> Result<Sequence>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let Scan::Random { weights } = &cfg.scan else {
        return Err(Error::InvalidConfig("random-scan step needs a random scan".into()));
    };
    cfg.validate(oracle.space())?;
    oracle.space().check(z)?;
    let mut out = z.clone();
    let mut posteriors = Posteriors::new(oracle, t, cfg, z);
    random_step_inner(&mut out, weights, cfg, &mut posteriors, rng)?;
    Ok(out)
}

/// One systematic sweep over all positions. With stale scores every
/// posterior is taken at the sweep-entry state.
pub fn gibbs_sweep_systematic<O, R>(
    z: &Sequence,
    t: f64,
    cfg: &GibbsCorrectorConfig,
    oracle: &O,
    rng: &mut R,
) -> Result<Sequence>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    if cfg.scan != Scan::Systematic {
        return Err(Error::InvalidConfig("systematic sweep needs a systematic scan".into()));
    }
    cfg.validate(oracle.space())?;
    oracle.space().check(z)?;
    let mut out = z.clone();
    let mut posteriors = Posteriors::new(oracle, t, cfg, z);
    sweep_inner(&mut out, cfg, &mut posteriors, rng)?;
    Ok(out)
}

/// Runs `steps` Gibbs steps (single-site updates or sweeps) at time `t`,
/// honoring the score policy across the whole loop. Returns the charged NFE.
///
/// `after_step` runs after every step (used for conditioning clamps).
pub fn run_gibbs_loop<O, R>(
    z: &mut Sequence,
    t: f64,
    cfg: &GibbsCorrectorConfig,
    steps: usize,
    oracle: &O,
    rng: &mut R,
    mut after_step: impl FnMut(&mut Sequence),
) -> Result<usize>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    if steps == 0 {
        return Ok(0);
    }
    let mut posteriors = Posteriors::new(oracle, t, cfg, z);
    for _ in 0..steps {
        match &cfg.scan {
            Scan::Random { weights } => random_step_inner(z, weights, cfg, &mut posteriors, rng)?,
            Scan::Systematic => sweep_inner(z, cfg, &mut posteriors, rng)?,
        }
        after_step(z);
    }
    Ok(cfg.loop_nfe(steps, oracle.space().s()))
}

fn single_site_rows<O: ScoreOracle + ?Sized>(
    t: f64,
    cfg: &GibbsCorrectorConfig,
    oracle: &O,
    weights: &[f64],
) -> Result<SparseKernel> {
    let space = *oracle.space();
    let strides = space.strides();
    let mut rows = Vec::with_capacity(space.size()?);
    for (idx, x) in space.sequences()?.enumerate() {
        let mut diag = 0.0;
        let mut row = Vec::new();
        for (i, &w) in weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let probs = posterior_estimate(oracle, t, &x, i, cfg.estimator)?;
            if gated(&probs, x[i], cfg.threshold) {
                diag += w;
                continue;
            }
            for (a, p) in probs.into_iter().enumerate() {
                if a == x[i] {
                    diag += w * p;
                } else if p > 0.0 {
                    let y = idx + a * strides[i] - x[i] * strides[i];
                    row.push((y, w * p));
                }
            }
        }
        row.push((idx, diag));
        rows.push(row);
    }
    Ok(SparseKernel::from_rows(rows))
}

/// Exact one-step kernel of the Gibbs corrector at time `t`.
///
/// Random scan gives `P(x, y) = sum_i w_i q^i(y^i | x^{-i})` on single-site
/// moves. A fresh systematic sweep is the composition of the `d` single-site
/// kernels; a stale sweep resamples every position independently from the
/// posteriors at the sweep-entry state.
pub fn gibbs_kernel_exact<O: ScoreOracle + ?Sized>(t: f64, cfg: &GibbsCorrectorConfig, oracle: &O) -> Result<Kernel> {
    let space = *oracle.space();
    cfg.validate(&space)?;
    space.size()?;
    match (&cfg.scan, cfg.policy) {
        (Scan::Random { weights }, _) => Ok(Kernel::Sparse(single_site_rows(t, cfg, oracle, weights)?)),
        (Scan::Systematic, ScorePolicy::Fresh) => {
            let d = space.d();
            let parts = (0..d)
                .map(|i| {
                    let mut w = vec![0.0; d];
                    w[i] = 1.0;
                    Ok(Kernel::Sparse(single_site_rows(t, cfg, oracle, &w)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Kernel::Chain(parts))
        }
        (Scan::Systematic, ScorePolicy::Stale) => {
            let (d, s) = (space.d(), space.s());
            let mut factors = Vec::with_capacity(space.size()? * d * s);
            for x in space.sequences()? {
                for i in 0..d {
                    let probs = posterior_estimate(oracle, t, &x, i, cfg.estimator)?;
                    if gated(&probs, x[i], cfg.threshold) {
                        factors.extend((0..s).map(|a| f64::from(a == x[i])));
                    } else {
                        factors.extend(probs);
                    }
                }
            }
            Ok(Kernel::Product(ProductKernel::new(space, factors)?))
        }
    }
}

/// Inner step size of the CTMC corrector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectorStep {
    Fixed(f64),
    /// A multiple of the preceding predictor step `t_{k+1} - t_k`.
    Relative(f64),
}

impl CorrectorStep {
    pub fn eta(&self, predictor_h: f64) -> f64 {
        match *self {
            CorrectorStep::Fixed(eta) => eta,
            CorrectorStep::Relative(c) => c * predictor_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmcCorrectorConfig {
    pub step: CorrectorStep,
    pub schedule: Schedule,
}

impl CtmcCorrectorConfig {
    pub fn validate(&self) -> Result<()> {
        let v = match self.step {
            CorrectorStep::Fixed(v) | CorrectorStep::Relative(v) => v,
        };
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::InvalidConfig(format!("corrector step {v} must be positive")));
        }
        Ok(())
    }
}

/// Rate `R^c(x, y) = (1/S)(1 + s_t(y, x))` on Hamming-1 pairs, with the
/// balancing diagonal.
pub fn ctmc_corrector_rate<O: ScoreOracle + ?Sized>(x: &Sequence, y: &Sequence, t: f64, oracle: &O) -> Result<f64> {
    let space = oracle.space();
    space.check(x)?;
    space.check(y)?;
    let s = space.s() as f64;
    match hamming(x, y)? {
        0 => {
            let mut out = 0.0;
            for i in 0..space.d() {
                let row = oracle.score_row(t, x, i)?;
                out -= row.iter().enumerate().filter(|(a, _)| *a != x[i]).map(|(_, v)| (1.0 + v) / s).sum::<f64>();
            }
            Ok(out)
        }
        1 => {
            let i = (0..space.d()).find(|&i| x[i] != y[i]).expect("one position differs");
            Ok((1.0 + oracle.score_row(t, x, i)?[y[i]]) / s)
        }
        _ => Ok(0.0),
    }
}

/// Per-token move probabilities of one Euler step of the corrector chain.
pub fn ctmc_move_probs(row: &[f64], current: usize, eta: f64, policy: OverflowPolicy) -> Result<Vec<f64>> {
    if !(eta > 0.0) {
        return Err(Error::InvalidConfig(format!("corrector step {eta} must be positive")));
    }
    let rate = 1.0 / row.len() as f64;
    if let Some(bad) = row.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateScore(format!("score entry {bad} is not positive")));
    }
    let probs = row.iter().map(|&v| eta * rate * (1.0 + v)).collect();
    finish_move_probs(probs, current, policy)
}

/// One Euler step of duration `eta` under the corrector rate.
pub fn ctmc_corrector_step<O, R>(
    z: &Sequence,
    t: f64,
    eta: f64,
    oracle: &O,
    policy: OverflowPolicy,
    rng: &mut R,
) -> Result<Sequence>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let space = *oracle.space();
    space.check(z)?;
    let mut moves = Vec::with_capacity(space.d());
    let mut row = vec![0.0; space.s()];
    for i in 0..space.d() {
        oracle.score_row_into(t, z, i, &mut row)?;
        moves.push(ctmc_move_probs(&row, z[i], eta, policy)?);
    }
    let mut out = z.clone();
    for (tok, probs) in out.tokens_mut().iter_mut().zip(&moves) {
        *tok = sample_categorical(probs, rng);
    }
    Ok(out)
}

/// Exact kernel of one corrector Euler step.
pub fn ctmc_corrector_kernel<O: ScoreOracle + ?Sized>(
    t: f64,
    eta: f64,
    oracle: &O,
    policy: OverflowPolicy,
) -> Result<Kernel> {
    let space = *oracle.space();
    per_token_kernel(space, oracle, t, |row, cur| ctmc_move_probs(row, cur, eta, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::forward_marginal;
    use crate::score::{ExactScore, PerturbedScore};
    use crate::state_space::{tv_distance, Pmf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(space: StateSpace, seed: u64) -> Pmf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..space.size().unwrap()).map(|_| rng.random::<f64>() + 0.02).collect();
        Pmf::from_weights(space, w).unwrap()
    }

    fn product_pmf(space: StateSpace, marginals: &[Vec<f64>]) -> Pmf {
        let w = space.sequences().unwrap().map(|x| (0..space.d()).map(|i| marginals[i][x[i]]).product()).collect();
        Pmf::from_weights(space, w).unwrap()
    }

    #[test]
    fn estimators_recover_true_conditionals() {
        for (d, s) in [(1, 2), (2, 3), (3, 4), (3, 2)] {
            let space = StateSpace::new(d, s).unwrap();
            let oracle = ExactScore::new(random_pmf(space, (d * 10 + s) as u64));
            for t in [0.2, 1.0, 3.0] {
                let qt = oracle.marginal(t).unwrap();
                for (idx, x) in space.sequences().unwrap().enumerate() {
                    for i in 0..d {
                        let truth = qt.conditional(idx, i).unwrap();
                        let mut variants = EstimatorVariant::ALL.to_vec();
                        variants.push(EstimatorVariant::AnchorRatio(Anchor::Token(s - 1)));
                        for v in variants {
                            let est = posterior_estimate(&oracle, t, &x, i, v).unwrap();
                            for (a, b) in est.iter().zip(&truth) {
                                assert!((a - b).abs() < 1e-12, "{v:?}");
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn estimator_examples() {
        let space = StateSpace::new(1, 2).unwrap();
        let oracle = ExactScore::new(Pmf::new(space, vec![0.9, 0.1]).unwrap());
        let t = 2f64.ln();
        let p = posterior_estimate(&oracle, t, &vec![0].into(), 0, EstimatorVariant::InverseSum).unwrap();
        assert!((p[0] - 0.7).abs() < 1e-14);
        let uniform = ExactScore::new(Pmf::uniform(StateSpace::new(2, 5).unwrap()).unwrap());
        for v in EstimatorVariant::ALL {
            let p = posterior_estimate(&uniform, 0.3, &vec![4, 1].into(), 1, v).unwrap();
            assert!(p.iter().all(|q| (q - 0.2).abs() < 1e-14));
        }
        let bad = EstimatorVariant::AnchorRatio(Anchor::Token(5));
        assert!(posterior_estimate(&uniform, 0.3, &vec![4, 1].into(), 1, bad).is_err());
    }

    #[test]
    fn random_scan_kernel_is_reversible_and_stationary() {
        for (d, s) in [(2, 3), (3, 3), (3, 2)] {
            let space = StateSpace::new(d, s).unwrap();
            let oracle = ExactScore::new(random_pmf(space, 3));
            let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(d), Schedule::Constant(1));
            for t in [0.2, 1.0, 3.0] {
                let qt = oracle.marginal(t).unwrap();
                let k = gibbs_kernel_exact(t, &cfg, &oracle).unwrap();
                assert!(tv_distance(&k.push_pmf(&qt).unwrap(), &qt).unwrap() <= 1e-10);
                assert!(k.detailed_balance_violation(qt.mass()) <= 1e-12);
                let (err, _) = k.row_sum_error();
                assert!(err < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_target_kernel_entries() {
        let (d, s) = (3, 4);
        let space = StateSpace::new(d, s).unwrap();
        let oracle = ExactScore::new(Pmf::uniform(space).unwrap());
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(d), Schedule::Constant(1));
        let k = gibbs_kernel_exact(0.5, &cfg, &oracle).unwrap();
        let Kernel::Sparse(sk) = &k else { panic!() };
        for (x, row) in sk.rows().iter().enumerate() {
            for &(y, v) in row {
                let expect = if y == x { 1.0 / s as f64 } else { 1.0 / (d * s) as f64 };
                assert!((v - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn systematic_sweep_samples_product_targets_exactly() {
        let space = StateSpace::new(3, 2).unwrap();
        let q = product_pmf(space, &[vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]]);
        let oracle = ExactScore::new(q.clone());
        // At t = 1e-12 the forward chain has barely moved.
        let t = 1e-12;
        let qt = oracle.marginal(t).unwrap();
        let cfg = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(1));
        let k = gibbs_kernel_exact(t, &cfg, &oracle).unwrap();
        for x in 0..8 {
            let row = k.dense_row(x);
            assert!(row.iter().zip(qt.mass()).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }

    #[test]
    fn systematic_single_site_equals_random_scan() {
        let space = StateSpace::new(1, 4).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 8));
        let sys = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(1));
        let rnd = GibbsCorrectorConfig::new(Scan::uniform_random(1), Schedule::Constant(1));
        let a = gibbs_kernel_exact(0.4, &sys, &oracle).unwrap().to_dense();
        let b = gibbs_kernel_exact(0.4, &rnd, &oracle).unwrap().to_dense();
        assert!(a.data().iter().zip(b.data()).all(|(u, v)| (u - v).abs() < 1e-15));
    }

    #[test]
    fn threshold_gate() {
        let space = StateSpace::new(1, 2).unwrap();
        let oracle = ExactScore::new(Pmf::new(space, vec![0.9, 0.1]).unwrap());
        let t = 2f64.ln();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Posterior at x = [0] is (0.7, 0.3): threshold 1 never blocks it.
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(1), Schedule::Constant(1)).with_threshold(Some(1.0));
        let moved = (0..2000)
            .filter(|_| gibbs_step_random(&vec![0].into(), t, &cfg, &oracle, &mut rng).unwrap()[0] == 1)
            .count();
        assert!(moved > 0);
        // Threshold 0.5 blocks updates from x = [0] (posterior 0.7 >= 0.5).
        let cfg = cfg.with_threshold(Some(0.5));
        assert!((0..200).all(|_| gibbs_step_random(&vec![0].into(), t, &cfg, &oracle, &mut rng).unwrap()[0] == 0));
        let k = gibbs_kernel_exact(t, &cfg, &oracle).unwrap();
        assert_eq!(k.dense_row(0), vec![1.0, 0.0]);
        // From x = [1] the current token has posterior 0.3 < 0.5, so it is resampled.
        let row = k.dense_row(1);
        assert!((row[0] - 0.7).abs() < 1e-14);
    }

    #[test]
    fn degenerate_point_posterior_is_never_resampled() {
        // At t = 0 with a point-mass conditional the current token has probability 1.
        let space = StateSpace::new(2, 2).unwrap();
        let q = Pmf::new(space, vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let oracle = ExactScore::new(q);
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(2), Schedule::Constant(1)).with_threshold(Some(0.9));
        let probs = posterior_estimate(&oracle, 0.0, &vec![0, 1].into(), 0, cfg.estimator).unwrap();
        assert_eq!(probs, vec![1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let z = gibbs_step_random(&vec![0, 1].into(), 0.0, &cfg, &oracle, &mut rng).unwrap();
            assert_eq!(z[0], 0);
        }
    }

    #[test]
    fn stale_and_fresh_loops_charge_as_documented() {
        let space = StateSpace::new(3, 3).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fresh = GibbsCorrectorConfig::new(Scan::uniform_random(3), Schedule::Constant(5));
        let stale = fresh.clone().with_policy(ScorePolicy::Stale);
        let mut z: Sequence = vec![0, 1, 2].into();
        assert_eq!(run_gibbs_loop(&mut z, 0.5, &fresh, 7, &oracle, &mut rng, |_| {}).unwrap(), 7);
        assert_eq!(run_gibbs_loop(&mut z, 0.5, &stale, 7, &oracle, &mut rng, |_| {}).unwrap(), 1);
        assert_eq!(run_gibbs_loop(&mut z, 0.5, &stale, 0, &oracle, &mut rng, |_| {}).unwrap(), 0);
        let strict =
            GibbsCorrectorConfig { strict_nfe: true, ..fresh.clone() }.with_estimator(EstimatorVariant::InverseSum);
        assert_eq!(run_gibbs_loop(&mut z, 0.5, &strict, 2, &oracle, &mut rng, |_| {}).unwrap(), 6);
    }

    #[test]
    fn stale_sweep_uses_entry_posteriors() {
        let space = StateSpace::new(2, 3).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 5));
        let cfg = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(1)).with_policy(ScorePolicy::Stale);
        let k = gibbs_kernel_exact(0.3, &cfg, &oracle).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Sequence = vec![2, 0].into();
        let xi = space.encode(&x).unwrap();
        let n = 60_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            let y = gibbs_sweep_systematic(&x, 0.3, &cfg, &oracle, &mut rng).unwrap();
            counts[space.encode(&y).unwrap()] += 1;
        }
        for (y, &c) in counts.iter().enumerate() {
            let p = k.dense_row(xi)[y];
            let sigma = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!((c as f64 - n as f64 * p).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn sampled_random_steps_match_kernel() {
        let space = StateSpace::new(2, 2).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 6));
        let cfg = GibbsCorrectorConfig::new(Scan::Random { weights: vec![0.3, 0.7] }, Schedule::Constant(1));
        let k = gibbs_kernel_exact(0.6, &cfg, &oracle).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 60_000;
        for x in space.sequences().unwrap() {
            let xi = space.encode(&x).unwrap();
            let mut counts = [0usize; 4];
            for _ in 0..n {
                counts[space.encode(&gibbs_step_random(&x, 0.6, &cfg, &oracle, &mut rng).unwrap()).unwrap()] += 1;
            }
            for (y, &c) in counts.iter().enumerate() {
                let p = k.dense_row(xi)[y];
                let sigma = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
                assert!((c as f64 - n as f64 * p).abs() <= 4.0 * sigma);
            }
        }
    }

    #[test]
    fn config_validation() {
        let space = StateSpace::new(2, 3).unwrap();
        let bad = GibbsCorrectorConfig::new(Scan::Random { weights: vec![0.5, 0.6] }, Schedule::Constant(1));
        assert!(bad.validate(&space).is_err());
        let bad = GibbsCorrectorConfig::new(Scan::Random { weights: vec![1.0] }, Schedule::Constant(1));
        assert!(bad.validate(&space).is_err());
        let bad = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(1)).with_threshold(Some(1.5));
        assert!(bad.validate(&space).is_err());
        let rnd = GibbsCorrectorConfig::new(Scan::uniform_random(2), Schedule::Constant(1));
        let oracle = ExactScore::new(Pmf::uniform(space).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gibbs_sweep_systematic(&vec![0, 0].into(), 0.1, &rnd, &oracle, &mut rng).is_err());
    }

    #[test]
    fn schedule_spread() {
        assert_eq!(Schedule::spread(4, 10), Schedule::PerStep(vec![3, 3, 2, 2]));
        assert_eq!(Schedule::spread(3, 0).steps_at(1), 0);
        assert_eq!(Schedule::Constant(4).steps_at(100), 4);
    }

    #[test]
    fn ctmc_rates() {
        let space = StateSpace::new(2, 4).unwrap();
        let u = ExactScore::new(Pmf::uniform(space).unwrap());
        let x: Sequence = vec![0, 1].into();
        assert!((ctmc_corrector_rate(&x, &vec![3, 1].into(), 0.5, &u).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ctmc_corrector_rate(&x, &vec![3, 2].into(), 0.5, &u).unwrap(), 0.0);
        assert!((ctmc_corrector_rate(&x, &x, 0.5, &u).unwrap() + 3.0).abs() < 1e-14);
    }

    #[test]
    fn ctmc_generator_has_target_as_stationary_law() {
        for (d, s) in [(1, 3), (2, 3), (3, 2), (3, 3)] {
            let space = StateSpace::new(d, s).unwrap();
            let oracle = ExactScore::new(random_pmf(space, 11));
            let t = 0.4;
            let qt = oracle.marginal(t).unwrap();
            let seqs: Vec<Sequence> = space.sequences().unwrap().collect();
            for y in &seqs {
                let residual: f64 = seqs
                    .iter()
                    .enumerate()
                    .map(|(xi, x)| qt.prob(xi) * ctmc_corrector_rate(x, y, t, &oracle).unwrap())
                    .sum();
                assert!(residual.abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn ctmc_step_preserves_uniform_and_has_a_floor() {
        let space = StateSpace::new(2, 3).unwrap();
        let u = ExactScore::new(Pmf::uniform(space).unwrap());
        let k = ctmc_corrector_kernel(0.5, 0.2, &u, OverflowPolicy::Strict).unwrap();
        let uni = Pmf::uniform(space).unwrap();
        assert!(tv_distance(&k.push_pmf(&uni).unwrap(), &uni).unwrap() < 1e-12);

        let q0 = random_pmf(space, 12);
        let oracle = ExactScore::new(q0.clone());
        let t = 0.3;
        let qt = forward_marginal(&q0, t).unwrap();
        let plateau = |eta: f64| {
            let k = ctmc_corrector_kernel(t, eta, &oracle, OverflowPolicy::Strict).unwrap();
            let mut p = Pmf::uniform(space).unwrap();
            for _ in 0..(400.0 / eta) as usize {
                p = k.push_pmf(&p).unwrap();
            }
            tv_distance(&p, &qt).unwrap()
        };
        let (a, b) = (plateau(0.1), plateau(0.05));
        assert!(a > 0.0 && b < a);
    }

    #[test]
    fn mismatched_kernel_error_accumulates_at_most_linearly() {
        let space = StateSpace::new(3, 3).unwrap();
        let q0 = random_pmf(space, 13);
        let exact = ExactScore::new(q0.clone());
        let noisy = PerturbedScore::new(ExactScore::new(q0), 50.0, 0.3, 2).unwrap();
        let t = 0.5;
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(3), Schedule::Constant(1));
        let k = gibbs_kernel_exact(t, &cfg, &exact).unwrap();
        let k_hat = gibbs_kernel_exact(t, &cfg, &noisy).unwrap();
        let row_tv: Vec<f64> =
            (0..27).map(|x| crate::state_space::tv_slices(&k.dense_row(x), &k_hat.dense_row(x))).collect();
        let mut p = Pmf::point(space, 0).unwrap();
        let mut p_hat = p.clone();
        let mut eps: f64 = 0.0;
        for l in 1..=20 {
            eps = eps.max(p.mass().iter().zip(&row_tv).map(|(a, b)| a * b).sum());
            p = k.push_pmf(&p).unwrap();
            p_hat = k_hat.push_pmf(&p_hat).unwrap();
            assert!(tv_distance(&p, &p_hat).unwrap() <= l as f64 * eps + 1e-10);
        }
    }
}
