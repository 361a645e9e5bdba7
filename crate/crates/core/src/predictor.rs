//! Euler predictor for the reverse chain.
//!
//! From state `x` at time `t_hi`, token `i` moves to `a != x^i` with
//! probability `h * (1/S) * s_{t_hi}(x^{-i} (+)_i a, x)` and otherwise stays.
//! All tokens are updated independently from the same score evaluation.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernel::{Kernel, ProductKernel};
use crate::rng::sample_categorical;
use crate::score::ScoreOracle;
use crate::state_space::{Sequence, StateSpace};

/// What to do when the per-token move mass of an Euler-type step exceeds 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowPolicy {
    /// Fail with [`Error::StepTooLarge`].
    #[default]
    Strict,
    /// Renormalize the move vector and give zero probability to staying.
    Clamp,
}

/// One reverse step from `t_hi` down to `t_lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerStep {
    t_hi: f64,
    t_lo: f64,
}

impl EulerStep {
    pub fn new(t_hi: f64, t_lo: f64) -> Result<Self> {
        if !(t_lo > 0.0 && t_hi > t_lo && t_hi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "Euler step needs 0 < t_lo < t_hi, got t_lo = {t_lo}, t_hi = {t_hi}"
            )));
        }
        Ok(Self { t_hi, t_lo })
    }

    pub fn t_hi(&self) -> f64 {
        self.t_hi
    }

    pub fn t_lo(&self) -> f64 {
        self.t_lo
    }

    pub fn h(&self) -> f64 {
        self.t_hi - self.t_lo
    }
}

/// Turns per-token move masses (entry at `current` ignored) into a
/// probability vector, applying the overflow policy.
pub(crate) fn finish_move_probs(mut probs: Vec<f64>, current: usize, policy: OverflowPolicy) -> Result<Vec<f64>> {
    probs[current] = 0.0;
    let moved: f64 = probs.iter().sum();
    if moved > 1.0 {
        match policy {
            OverflowPolicy::Strict => return Err(Error::StepTooLarge { mass: moved }),
            OverflowPolicy::Clamp => {
                log::debug!("move mass {moved} exceeds 1; renormalizing");
                probs.iter_mut().for_each(|p| *p /= moved);
                return Ok(probs);
            }
        }
    }
    probs[current] = 1.0 - moved;
    Ok(probs)
}

/// Per-token Euler transition probabilities from a score row.
pub fn euler_move_probs(row: &[f64], current: usize, h: f64, policy: OverflowPolicy) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step size {h} must be positive")));
    }
    let rate = 1.0 / row.len() as f64;
    if let Some(bad) = row.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateScore(format!("score entry {bad} is not positive")));
    }
    let probs = row.iter().map(|&v| rate * v * h).collect();
    finish_move_probs(probs, current, policy)
}

/// Samples one Euler step. Costs one score evaluation for the whole state.
pub fn euler_step_sample<O, R>(
    x: &Sequence,
    step: &EulerStep,
    oracle: &O,
    policy: OverflowPolicy,
    rng: &mut R,
) -> Result<Sequence>
where
    O: ScoreOracle + ?Sized,
    R: Rng + ?Sized,
{
    let space = *oracle.space();
    space.check(x)?;
    // Compute every row from the pre-step state before touching any token.
    let mut moves = Vec::with_capacity(space.d());
    let mut row = vec![0.0; space.s()];
    for i in 0..space.d() {
        oracle.score_row_into(step.t_hi, x, i, &mut row)?;
        moves.push(euler_move_probs(&row, x[i], step.h(), policy)?);
    }
    let mut out = x.clone();
    for (tok, probs) in out.tokens_mut().iter_mut().zip(&moves) {
        *tok = sample_categorical(probs, rng);
    }
    Ok(out)
}

/// Builds the exact product kernel of a step whose per-token move
/// distributions are produced by `move_probs(x, i, row)`.
pub(crate) fn per_token_kernel<O, F>(space: StateSpace, oracle: &O, t_score: f64, mut move_probs: F) -> Result<Kernel>
where
    O: ScoreOracle + ?Sized,
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    let n = space.size()?;
    let (d, s) = (space.d(), space.s());
    let mut factors = Vec::with_capacity(n * d * s);
    let mut row = vec![0.0; s];
    for x in space.sequences()? {
        for i in 0..d {
            oracle.score_row_into(t_score, &x, i, &mut row)?;
            factors.extend(move_probs(&row, x[i])?);
        }
    }
    Ok(Kernel::Product(ProductKernel::new(space, factors)?))
}

/// Exact transition kernel of one Euler step over the enumerable space.
pub fn euler_step_kernel<O: ScoreOracle + ?Sized>(
    step: &EulerStep,
    oracle: &O,
    policy: OverflowPolicy,
) -> Result<Kernel> {
    let space = *oracle.space();
    let h = step.h();
    per_token_kernel(space, oracle, step.t_hi, |row, cur| euler_move_probs(row, cur, h, policy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::forward_marginal;
    use crate::score::ExactScore;
    use crate::state_space::{tv_distance, Pmf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(space: StateSpace, seed: u64) -> Pmf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..space.size().unwrap()).map(|_| rng.random::<f64>() + 0.05).collect();
        Pmf::from_weights(space, w).unwrap()
    }

    #[test]
    fn move_prob_examples() {
        let p = euler_move_probs(&[1.0, 1.0], 0, 0.1, OverflowPolicy::Strict).unwrap();
        assert!((p[1] - 0.05).abs() < 1e-16 && (p[0] - 0.95).abs() < 1e-16);
        let p = euler_move_probs(&[1.0, 3.0 / 7.0], 0, 0.1, OverflowPolicy::Strict).unwrap();
        assert!((p[1] - 3.0 / 140.0).abs() < 1e-16);
        let p = euler_move_probs(&[2.0, 1.0, 5.0], 1, 1e-9, OverflowPolicy::Strict).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn overflow_policies() {
        let row = [1.0, 30.0, 30.0];
        let err = euler_move_probs(&row, 0, 0.1, OverflowPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::StepTooLarge { .. }));
        let p = euler_move_probs(&row, 0, 0.1, OverflowPolicy::Clamp).unwrap();
        assert_eq!(p, vec![0.0, 0.5, 0.5]);
    }

    #[test]
    fn invalid_step() {
        assert!(EulerStep::new(1.0, 1.0).is_err());
        assert!(EulerStep::new(1.0, 0.0).is_err());
        assert!((EulerStep::new(1.0, 0.25).unwrap().h() - 0.75).abs() < 1e-16);
    }

    #[test]
    fn uniform_target_switch_probability() {
        let space = StateSpace::new(3, 4).unwrap();
        let oracle = ExactScore::new(Pmf::uniform(space).unwrap());
        let step = EulerStep::new(0.6, 0.5).unwrap();
        let k = euler_step_kernel(&step, &oracle, OverflowPolicy::Strict).unwrap();
        let Kernel::Product(pk) = &k else { panic!("expected product kernel") };
        let stay = pk.factor(0, 1)[0];
        assert!((1.0 - stay - 3.0 * 0.1 / 4.0).abs() < 1e-14);
    }

    #[test]
    fn single_token_kernel_matches_move_probs() {
        let space = StateSpace::new(1, 3).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 1));
        let step = EulerStep::new(0.8, 0.7).unwrap();
        let k = euler_step_kernel(&step, &oracle, OverflowPolicy::Strict).unwrap();
        for x in 0..3 {
            let row = oracle.score_row(0.8, &vec![x].into(), 0).unwrap();
            let probs = euler_move_probs(&row, x, step.h(), OverflowPolicy::Strict).unwrap();
            assert_eq!(k.dense_row(x), probs);
        }
    }

    #[test]
    fn kernel_rows_are_distributions_and_vanish_with_h() {
        let space = StateSpace::new(2, 3).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 2));
        for h in [0.1, 1e-3, 1e-6] {
            let step = EulerStep::new(1.0, 1.0 - h).unwrap();
            let k = euler_step_kernel(&step, &oracle, OverflowPolicy::Strict).unwrap();
            let (err, min) = k.row_sum_error();
            assert!(err < 1e-12 && min >= 0.0);
            let dense = k.to_dense();
            let off_identity = (0..9)
                .map(|x| (0..9).map(|y| (dense.get(x, y) - f64::from(x == y)).abs()).sum::<f64>())
                .fold(0.0, f64::max);
            assert!(off_identity < 10.0 * h, "h = {h}: {off_identity}");
        }
    }

    #[test]
    fn euler_step_improves_on_standing_still() {
        let space = StateSpace::new(2, 3).unwrap();
        let q0 = random_pmf(space, 3);
        let oracle = ExactScore::new(q0.clone());
        let (t, h) = (0.5, 1e-3);
        let q_hi = forward_marginal(&q0, t).unwrap();
        let q_lo = forward_marginal(&q0, t - h).unwrap();
        let k = euler_step_kernel(&EulerStep::new(t, t - h).unwrap(), &oracle, OverflowPolicy::Strict).unwrap();
        let pushed = k.push_pmf(&q_hi).unwrap();
        assert!(tv_distance(&pushed, &q_lo).unwrap() < tv_distance(&q_hi, &q_lo).unwrap());
    }

    #[test]
    fn local_error_is_second_order() {
        let space = StateSpace::new(2, 3).unwrap();
        let q0 = random_pmf(space, 4);
        let oracle = ExactScore::new(q0.clone());
        let t = 0.7;
        let err = |h: f64| {
            let k = euler_step_kernel(&EulerStep::new(t, t - h).unwrap(), &oracle, OverflowPolicy::Strict).unwrap();
            let pushed = k.push_pmf(&forward_marginal(&q0, t).unwrap()).unwrap();
            tv_distance(&pushed, &forward_marginal(&q0, t - h).unwrap()).unwrap()
        };
        let ratio = err(0.02) / err(0.01);
        assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn sampling_matches_kernel() {
        let space = StateSpace::new(2, 2).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 5));
        let step = EulerStep::new(1.0, 0.6).unwrap();
        let k = euler_step_kernel(&step, &oracle, OverflowPolicy::Strict).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 100_000;
        for x in space.sequences().unwrap() {
            let xi = space.encode(&x).unwrap();
            let mut counts = [0usize; 4];
            for _ in 0..n {
                let y = euler_step_sample(&x, &step, &oracle, OverflowPolicy::Strict, &mut rng).unwrap();
                counts[space.encode(&y).unwrap()] += 1;
            }
            for (y, &c) in counts.iter().enumerate() {
                let p = k.dense_row(xi)[y];
                let sigma = (n as f64 * p * (1.0 - p)).sqrt().max(1.0);
                assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma, "x={xi} y={y}");
            }
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let space = StateSpace::new(4, 3).unwrap();
        let oracle = ExactScore::new(random_pmf(space, 7));
        let step = EulerStep::new(2.0, 1.0).unwrap();
        let x: Sequence = vec![0, 1, 2, 0].into();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| euler_step_sample(&x, &step, &oracle, OverflowPolicy::Clamp, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
    }
}
