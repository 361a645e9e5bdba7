//! Concrete-score providers.
//!
//! A score row for `(t, x, i)` lists `s_t(x^{-i} (+)_i a, x)` for every token
//! `a`, i.e. the density ratios a learned model would emit in one forward pass.
//! The entry at `a = x^i` is exactly 1.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::forward::{check_time, forward_marginal};
use crate::rng::{hash_words, unit_symmetric};
use crate::state_space::{Pmf, Sequence, StateSpace};

/// Anything that can answer concrete-score queries.
pub trait ScoreOracle: Send + Sync {
    fn space(&self) -> &StateSpace;

    /// Writes the score row for position `i` at state `x` into `out` (length `S`).
    fn score_row_into(&self, t: f64, x: &Sequence, i: usize, out: &mut [f64]) -> Result<()>;

    fn score_row(&self, t: f64, x: &Sequence, i: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.space().s()];
        self.score_row_into(t, x, i, &mut out)?;
        Ok(out)
    }
}

impl<T: ScoreOracle + ?Sized> ScoreOracle for &T {
    fn space(&self) -> &StateSpace {
        (**self).space()
    }
    fn score_row_into(&self, t: f64, x: &Sequence, i: usize, out: &mut [f64]) -> Result<()> {
        (**self).score_row_into(t, x, i, out)
    }
}

impl<T: ScoreOracle + ?Sized> ScoreOracle for Arc<T> {
    fn space(&self) -> &StateSpace {
        (**self).space()
    }
    fn score_row_into(&self, t: f64, x: &Sequence, i: usize, out: &mut [f64]) -> Result<()> {
        (**self).score_row_into(t, x, i, out)
    }
}

impl<T: ScoreOracle + ?Sized> ScoreOracle for Box<T> {
    fn space(&self) -> &StateSpace {
        (**self).space()
    }
    fn score_row_into(&self, t: f64, x: &Sequence, i: usize, out: &mut [f64]) -> Result<()> {
        (**self).score_row_into(t, x, i, out)
    }
}

pub(crate) fn check_position(space: &StateSpace, i: usize) -> Result<()> {
    if i < space.d() {
        Ok(())
    } else {
        Err(Error::InvalidIndex(format!("position {i} not below d = {}", space.d())))
    }
}

/// Exact scores from a known data distribution.
///
/// Forward marginals are cached per distinct time; the cache is behind a
/// read-write lock so one oracle can serve many chains.
#[derive(Debug)]
pub struct ExactScore {
    q0: Pmf,
    strides: Vec<usize>,
    cache: RwLock<HashMap<u64, Arc<Pmf>>>,
}

impl ExactScore {
    pub fn new(q0: Pmf) -> Self {
        let strides = q0.space().strides();
        Self { q0, strides, cache: RwLock::new(HashMap::new()) }
    }

    pub fn q0(&self) -> &Pmf {
        &self.q0
    }

    /// `q_t`, computed once per distinct `t`.
    pub fn marginal(&self, t: f64) -> Result<Arc<Pmf>> {
        check_time(t)?;
        let key = t.to_bits();
        if let Some(p) = self.cache.read().expect("score cache poisoned").get(&key) {
            return Ok(Arc::clone(p));
        }
        let p = Arc::new(forward_marginal(&self.q0, t)?);
        self.cache.write().expect("score cache poisoned").entry(key).or_insert_with(|| Arc::clone(&p));
        Ok(p)
    }

    pub fn cached_times(&self) -> usize {
        self.cache.read().expect("score cache poisoned").len()
    }

    pub fn clear_cache(&self) {
        self.cache.write().expect("score cache poisoned").clear();
    }

    /// Score row for the state with a known index.
    pub fn score_row_at_index(&self, qt: &Pmf, index: usize, i: usize, out: &mut [f64]) -> Result<()> {
        let s = self.q0.space().s();
        let stride = self.strides[i];
        let current = (index / stride) % s;
        let base = index - current * stride;
        let qx = qt.prob(index);
        if qx <= 0.0 {
            return Err(Error::ZeroDensity(index));
        }
        for (a, o) in out.iter_mut().enumerate() {
            *o = if a == current { 1.0 } else { qt.prob(base + a * stride) / qx };
        }
        Ok(())
    }
}

impl ScoreOracle for ExactScore {
    fn space(&self) -> &StateSpace {
        self.q0.space()
    }

    fn score_row_into(&self, t: f64, x: &Sequence, i: usize, out: &mut [f64]) -> Result<()> {
        check_position(self.space(), i)?;
        let index = self.space().encode(x)?;
        let qt = self.marginal(t)?;
        self.score_row_at_index(&qt, index, i, out)
    }
}

/// One-off exact score row, without caching.
pub fn exact_score_row(q0: &Pmf, t: f64, x: &Sequence, i: usize) -> Result<Vec<f64>> {
    ExactScore::new(q0.clone()).score_row(t, x, i)
}

/// Applies log-uniform multiplicative noise and clamps into `[1/M, M]`.
///
/// `noise(a)` must return a value in `[-1, 1]`; the multiplier is
/// `exp(sigma * noise(a))`. The entry at `current` stays exactly 1.
pub fn perturb_score_row(
    inner_row: &[f64],
    current: usize,
    m: f64,
    sigma: f64,
    noise: impl Fn(usize) -> f64,
) -> Result<Vec<f64>> {
    if !(m >= 1.0) {
        return Err(Error::InvalidConfig(format!("regularity bound M = {m} must be >= 1")));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise width {sigma} must be >= 0")));
    }
    Ok(inner_row
        .iter()
        .enumerate()
        .map(|(a, &v)| {
            if a == current {
                1.0
            } else {
                let u = if sigma > 0.0 { noise(a) } else { 0.0 };
                (v * (sigma * u).exp()).clamp(1.0 / m, m)
            }
        })
        .collect())
}

/// Wraps an oracle with deterministic keyed noise and range clamping, to
/// emulate a learned score with controlled error.
#[derive(Debug, Clone)]
pub struct PerturbedScore<O> {
    inner: O,
    m: f64,
    sigma: f64,
    seed: u64,
}

impl<O: ScoreOracle> PerturbedScore<O> {
    pub fn new(inner: O, m: f64, sigma: f64, seed: u64) -> Result<Self> {
        if !(m >= 1.0) {
            return Err(Error::InvalidConfig(format!("regularity bound M = {m} must be >= 1")));
        }
        if !(sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise width {sigma} must be >= 0")));
        }
        Ok(Self { inner, m, sigma, seed })
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    pub fn bound(&self) -> f64 {
        self.m
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    fn key(&self, t: f64, x: &Sequence, i: usize, a: usize) -> u64 {
        hash_words([self.seed, t.to_bits(), i as u64, a as u64].into_iter().chain(x.tokens().iter().map(|&v| v as u64)))
    }
}

impl<O: ScoreOracle> ScoreOracle for PerturbedScore<O> {
    fn space(&self) -> &StateSpace {
        self.inner.space()
    }

    fn score_row_into(&self, t: f64, x: &Sequence, i: usize, out: &mut [f64]) -> Result<()> {
        self.inner.score_row_into(t, x, i, out)?;
        let row = perturb_score_row(out, x[i], self.m, self.sigma, |a| unit_symmetric(self.key(t, x, i, a)))?;
        out.copy_from_slice(&row);
        Ok(())
    }
}

/// Weighted `L1` score error over Hamming-1 pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreErrorReport {
    /// Contribution of neighbors along each position.
    pub per_position: Vec<f64>,
    /// Sum over all positions: `E_x sum_{y ~ x} R(y, x) |s_hat - s|`.
    pub aggregate: f64,
}

impl ScoreErrorReport {
    pub fn max_position(&self) -> f64 {
        self.per_position.iter().copied().fold(0.0, f64::max)
    }
}

/// `E_{x ~ weighting} sum_{y : Ham(x,y)=1} (1/S) |s_hat_t(y,x) - q_t(y)/q_t(x)|`.
pub fn assumption1_error<O: ScoreOracle + ?Sized>(
    oracle: &O,
    exact: &ExactScore,
    t: f64,
    weighting: &Pmf,
) -> Result<ScoreErrorReport> {
    let space = *exact.space();
    if *oracle.space() != space || *weighting.space() != space {
        return Err(Error::SpecMismatch("oracle, exact score and weighting disagree".into()));
    }
    let (d, s) = (space.d(), space.s());
    let rate = 1.0 / s as f64;
    let qt = exact.marginal(t)?;
    let mut per_position = vec![0.0; d];
    let mut est = vec![0.0; s];
    let mut truth = vec![0.0; s];
    for (idx, x) in space.sequences()?.enumerate() {
        let w = weighting.prob(idx);
        if w == 0.0 {
            continue;
        }
        for (i, acc) in per_position.iter_mut().enumerate() {
            oracle.score_row_into(t, &x, i, &mut est)?;
            exact.score_row_at_index(&qt, idx, i, &mut truth)?;
            let err: f64 = (0..s).filter(|&a| a != x[i]).map(|a| rate * (est[a] - truth[a]).abs()).sum();
            *acc += w * err;
        }
    }
    let aggregate = per_position.iter().sum();
    Ok(ScoreErrorReport { per_position, aggregate })
}

/// `p^{-i} (x) q_t(x^i | x^{-i})`: the weighting a corrector step at position
/// `i` sees when the other coordinates follow the sampler law `p`.
pub fn corrector_weighting(p: &Pmf, qt: &Pmf, i: usize) -> Result<Pmf> {
    if p.space() != qt.space() {
        return Err(Error::SpecMismatch("sampler law and target differ in space".into()));
    }
    let space = *p.space();
    check_position(&space, i)?;
    let s = space.s();
    let stride = space.strides()[i];
    let mut out = vec![0.0; p.len()];
    for idx in 0..p.len() {
        let digit = (idx / stride) % s;
        if digit != 0 {
            continue;
        }
        let p_rest: f64 = (0..s).map(|a| p.prob(idx + a * stride)).sum();
        let q_rest: f64 = (0..s).map(|a| qt.prob(idx + a * stride)).sum();
        if q_rest <= 0.0 {
            continue;
        }
        for a in 0..s {
            out[idx + a * stride] = p_rest * qt.prob(idx + a * stride) / q_rest;
        }
    }
    Pmf::from_weights(space, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pmf(space: StateSpace, rng: &mut ChaCha8Rng) -> Pmf {
        let w = (0..space.size().unwrap()).map(|_| rng.random::<f64>() + 0.01).collect();
        Pmf::from_weights(space, w).unwrap()
    }

    fn toy() -> (Pmf, f64) {
        let space = StateSpace::new(1, 2).unwrap();
        (Pmf::new(space, vec![0.9, 0.1]).unwrap(), 2f64.ln())
    }

    #[test]
    fn exact_row_examples() {
        let (q0, t) = toy();
        let row = exact_score_row(&q0, t, &vec![0].into(), 0).unwrap();
        assert_eq!(row[0], 1.0);
        assert!((row[1] - 3.0 / 7.0).abs() < 1e-14);

        let space = StateSpace::new(2, 3).unwrap();
        let u = Pmf::uniform(space).unwrap();
        let row = exact_score_row(&u, 0.4, &vec![1, 2].into(), 1).unwrap();
        assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-14));

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q0 = random_pmf(space, &mut rng);
        let row = exact_score_row(&q0, 50.0, &vec![0, 2].into(), 0).unwrap();
        assert!(row.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn zero_density_is_reported() {
        let space = StateSpace::new(1, 2).unwrap();
        let q0 = Pmf::point(space, 0).unwrap();
        let err = exact_score_row(&q0, 0.0, &vec![1].into(), 0).unwrap_err();
        assert_eq!(err, Error::ZeroDensity(1));
    }

    #[test]
    fn score_consistency_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (d, s) in [(1, 4), (2, 3), (3, 4)] {
            let space = StateSpace::new(d, s).unwrap();
            let oracle = ExactScore::new(random_pmf(space, &mut rng));
            for x in space.sequences().unwrap() {
                for i in 0..d {
                    let row = oracle.score_row(0.3, &x, i).unwrap();
                    for (a, fwd) in row.iter().enumerate() {
                        let y = x.with_token(i, a);
                        let back = oracle.score_row(0.3, &y, i).unwrap()[x[i]];
                        assert!((fwd * back - 1.0).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn cache_reuses_marginals() {
        let (q0, t) = toy();
        let oracle = ExactScore::new(q0);
        for _ in 0..5 {
            oracle.score_row(t, &vec![1].into(), 0).unwrap();
        }
        oracle.score_row(1.0, &vec![1].into(), 0).unwrap();
        assert_eq!(oracle.cached_times(), 2);
        oracle.clear_cache();
        assert_eq!(oracle.cached_times(), 0);
    }

    #[test]
    fn perturbation_examples() {
        let row = [1.0, 5.0, 0.1];
        let out = perturb_score_row(&row, 0, 2.0, 0.0, |_| 0.7).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 0.5]);
        assert!(matches!(perturb_score_row(&row, 0, 0.5, 0.0, |_| 0.0), Err(Error::InvalidConfig(_))));

        let (q0, t) = toy();
        let p = PerturbedScore::new(ExactScore::new(q0), 10.0, 0.1, 3).unwrap();
        let a = p.score_row(t, &vec![0].into(), 0).unwrap();
        let b = p.score_row(t, &vec![0].into(), 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], 1.0);
        assert_ne!(a[1], 3.0 / 7.0);
    }

    struct FixedRows;
    impl ScoreOracle for FixedRows {
        fn space(&self) -> &StateSpace {
            static SPACE: std::sync::OnceLock<StateSpace> = std::sync::OnceLock::new();
            SPACE.get_or_init(|| StateSpace::new(1, 2).unwrap())
        }
        fn score_row_into(&self, _t: f64, x: &Sequence, _i: usize, out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(if x[0] == 0 { &[1.0, 0.5] } else { &[2.0, 1.0] });
            Ok(())
        }
    }

    #[test]
    fn assumption1_by_enumeration() {
        let (q0, t) = toy();
        let exact = ExactScore::new(q0);
        let qt = exact.marginal(t).unwrap();
        let report = assumption1_error(&FixedRows, &exact, t, &qt).unwrap();
        // 0.7 * (1/2) |0.5 - 3/7| + 0.3 * (1/2) |2 - 7/3|
        let expect = 0.7 * 0.5 * (0.5 - 3.0 / 7.0f64).abs() + 0.3 * 0.5 * (2.0 - 7.0 / 3.0f64).abs();
        assert!((report.aggregate - expect).abs() < 1e-15);
        assert!((expect - 0.075).abs() < 1e-15);

        let zero = assumption1_error(&exact, &exact, t, &qt).unwrap();
        assert_eq!(zero.aggregate, 0.0);
        let flat = PerturbedScore::new(ExactScore::new(exact.q0().clone()), 1e9, 0.0, 1).unwrap();
        assert_eq!(assumption1_error(&flat, &exact, t, &qt).unwrap().aggregate, 0.0);
    }

    #[test]
    fn assumption1_monotone_in_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let space = StateSpace::new(3, 3).unwrap();
        let exact = ExactScore::new(random_pmf(space, &mut rng));
        let qt = exact.marginal(0.5).unwrap();
        let mut last = -1.0;
        for sigma in [0.0, 0.05, 0.1, 0.2] {
            let p = PerturbedScore::new(ExactScore::new(exact.q0().clone()), 1e9, sigma, 9).unwrap();
            let e = assumption1_error(&p, &exact, 0.5, &qt).unwrap().aggregate;
            assert!(e >= last);
            last = e;
        }
        assert!(last > 0.0);
    }

    #[test]
    fn corrector_weighting_marginalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let space = StateSpace::new(2, 3).unwrap();
        let p = random_pmf(space, &mut rng);
        let q = random_pmf(space, &mut rng);
        let w = corrector_weighting(&p, &q, 0).unwrap();
        // Same marginal of the other coordinate as p, and q's conditional.
        assert!(w.token_marginal(1).iter().zip(p.token_marginal(1)).all(|(a, b)| (a - b).abs() < 1e-14));
        let c = w.conditional(4, 0).unwrap();
        let cq = q.conditional(4, 0).unwrap();
        assert!(c.iter().zip(&cq).all(|(a, b)| (a - b).abs() < 1e-14));
        // Weighting by q itself gives back q.
        let self_w = corrector_weighting(&q, &q, 1).unwrap();
        assert!(crate::tv_distance(&self_w, &q).unwrap() < 1e-14);
    }

    proptest::proptest! {
        #[test]
        fn perturbed_outputs_stay_in_range(
            seed in 0u64..1000, m in 1.0f64..20.0, sigma in 0.0f64..3.0,
            x0 in 0usize..3, x1 in 0usize..3, i in 0usize..2, t in 0.01f64..4.0,
        ) {
            let space = StateSpace::new(2, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q0 = random_pmf(space, &mut rng);
            let p = PerturbedScore::new(ExactScore::new(q0), m, sigma, seed).unwrap();
            let x: Sequence = vec![x0, x1].into();
            let row = p.score_row(t, &x, i).unwrap();
            for (a, v) in row.iter().enumerate() {
                if a == x[i] {
                    proptest::prop_assert_eq!(*v, 1.0);
                } else {
                    proptest::prop_assert!(*v >= 1.0 / m && *v <= m);
                }
            }
        }
    }
}
