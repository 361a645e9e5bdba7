//! The uniform-rate forward noising chain.
//!
//! Every token jumps to each of the other `S - 1` values at rate `1/S`,
//! independently of the other tokens, so the per-token transition kernel
//! after time `t` has the closed form
//! `p_stay = (1 + (S-1) e^{-t}) / S` and `p_switch = (1 - e^{-t}) / S`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{expm, Matrix};
use crate::state_space::{hamming, Pmf, Sequence, StateSpace};

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}

/// Uniform rate matrix on `[S]^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformRate {
    space: StateSpace,
}

impl UniformRate {
    pub fn new(space: StateSpace) -> Self {
        Self { space }
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    /// `R(x, y)`: `1/S` on Hamming-1 pairs, `0` beyond, and the balancing
    /// diagonal `-d (S-1) / S`.
    pub fn rate_entry(&self, x: &Sequence, y: &Sequence) -> Result<f64> {
        self.space.check(x)?;
        self.space.check(y)?;
        let s = self.space.s() as f64;
        Ok(match hamming(x, y)? {
            0 => -(self.space.d() as f64) * (s - 1.0) / s,
            1 => 1.0 / s,
            _ => 0.0,
        })
    }

    /// The `S x S` generator of a single token.
    pub fn token_generator(&self) -> Matrix {
        token_generator(self.space.s())
    }
}

pub fn token_generator(s: usize) -> Matrix {
    let off = 1.0 / s as f64;
    let mut q = Matrix::zeros(s);
    for a in 0..s {
        for b in 0..s {
            q.set(a, b, if a == b { -(s as f64 - 1.0) * off } else { off });
        }
    }
    q
}

/// Per-token transition probabilities after forward time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenKernel {
    pub t: f64,
    pub s: usize,
    pub p_stay: f64,
    /// Probability of moving to one specific other token.
    pub p_switch: f64,
}

impl TokenKernel {
    pub fn entry(&self, from: usize, to: usize) -> f64 {
        if from == to {
            self.p_stay
        } else {
            self.p_switch
        }
    }

    pub fn matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.s);
        for a in 0..self.s {
            for b in 0..self.s {
                m.set(a, b, self.entry(a, b));
            }
        }
        m
    }
}

pub fn token_kernel(s: usize, t: f64) -> Result<TokenKernel> {
    check_time(t)?;
    let sf = s as f64;
    let decay = (-t).exp();
    Ok(TokenKernel { t, s, p_stay: (1.0 + (sf - 1.0) * decay) / sf, p_switch: -(-t).exp_m1() / sf })
}

/// Token kernel computed by numerically exponentiating the token generator.
pub fn token_kernel_numerical(s: usize, t: f64) -> Result<Matrix> {
    check_time(t)?;
    Ok(expm(&token_generator(s).scale(t)))
}

/// Largest entrywise gap between the closed-form kernel and the numerical
/// matrix exponential.
pub fn closed_form_error(s: usize, t: f64) -> Result<f64> {
    Ok(token_kernel(s, t)?.matrix().max_abs_diff(&token_kernel_numerical(s, t)?))
}

/// Exact law `q_t` of the forward chain started from `q0`.
///
/// Applies the token kernel one axis at a time; along each axis the update is
/// `p_switch * fiber_sum + (p_stay - p_switch) * p(x)`.
pub fn forward_marginal(q0: &Pmf, t: f64) -> Result<Pmf> {
    let k = token_kernel(q0.space().s(), t)?;
    let space = *q0.space();
    if t == 0.0 {
        return Ok(q0.clone());
    }
    let s = space.s();
    let mut mass = q0.mass().to_vec();
    let diag = k.p_stay - k.p_switch;
    for stride in space.strides() {
        let block = stride * s;
        for start in (0..mass.len()).step_by(block) {
            for offset in 0..stride {
                let base = start + offset;
                let fiber_sum: f64 = (0..s).map(|a| mass[base + a * stride]).sum();
                for a in 0..s {
                    let v = &mut mass[base + a * stride];
                    *v = k.p_switch * fiber_sum + diag * *v;
                }
            }
        }
    }
    Pmf::from_weights(space, mass)
}

/// Draws `x_t` given `x_0` by resampling each token independently.
pub fn sample_forward<R: Rng + ?Sized>(space: &StateSpace, x0: &Sequence, t: f64, rng: &mut R) -> Result<Sequence> {
    space.check(x0)?;
    let k = token_kernel(space.s(), t)?;
    let s = space.s();
    let mut out = x0.clone();
    if t == 0.0 {
        return Ok(out);
    }
    for tok in out.tokens_mut() {
        if rng.random::<f64>() >= k.p_stay {
            // Uniform over the other S - 1 values.
            let mut b = rng.random_range(0..s - 1);
            if b >= *tok {
                b += 1;
            }
            *tok = b;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rate_entries() {
        let r = UniformRate::new(StateSpace::new(2, 3).unwrap());
        let x: Sequence = vec![0, 1].into();
        assert!((r.rate_entry(&x, &vec![2, 1].into()).unwrap() - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(r.rate_entry(&x, &vec![2, 2].into()).unwrap(), 0.0);
        let r2 = UniformRate::new(StateSpace::new(2, 2).unwrap());
        assert_eq!(r2.rate_entry(&vec![0, 0].into(), &vec![0, 0].into()).unwrap(), -1.0);
    }

    #[test]
    fn generator_rows_sum_to_zero() {
        let space = StateSpace::new(2, 3).unwrap();
        let r = UniformRate::new(space);
        for x in space.sequences().unwrap() {
            let sum: f64 = space.sequences().unwrap().map(|y| r.rate_entry(&x, &y).unwrap()).sum();
            assert!(sum.abs() < 1e-14);
        }
    }

    #[test]
    fn token_kernel_examples() {
        let k = token_kernel(5, 0.0).unwrap();
        assert_eq!((k.p_stay, k.p_switch), (1.0, 0.0));
        let k = token_kernel(2, 2f64.ln()).unwrap();
        assert!((k.p_stay - 0.75).abs() < 1e-15 && (k.p_switch - 0.25).abs() < 1e-15);
        let k = token_kernel(4, 50.0).unwrap();
        assert!((k.p_stay - 0.25).abs() < 1e-12);
        assert!(matches!(token_kernel(2, -1.0), Err(Error::InvalidTime(_))));
    }

    #[test]
    fn token_kernel_ln2_matches_matrix_exponential() {
        // Oracle: 2x2 generator exponentiated numerically.
        let m = token_kernel_numerical(2, 2f64.ln()).unwrap();
        assert!((m.get(0, 0) - 0.75).abs() < 1e-14);
        assert!((m.get(0, 1) - 0.25).abs() < 1e-14);
    }

    #[test]
    fn closed_form_matches_expm() {
        for s in [2, 4, 8] {
            for t in [0.1, 1.0, 5.0] {
                assert!(closed_form_error(s, t).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn kernel_invariants() {
        for s in [2, 3, 7] {
            for t in [0.0, 0.01, 1.0, 30.0] {
                let k = token_kernel(s, t).unwrap();
                assert!((k.p_stay + (s as f64 - 1.0) * k.p_switch - 1.0).abs() < 1e-14);
                assert!(k.p_stay >= 1.0 / s as f64 - 1e-15);
                assert!(k.p_switch <= 1.0 / s as f64 + 1e-15);
            }
        }
    }

    #[test]
    fn semigroup() {
        for s in [2, 5] {
            for a in [0.1, 0.5, 2.0] {
                for b in [0.1, 0.5, 2.0] {
                    let lhs = token_kernel(s, a).unwrap().matrix().matmul(&token_kernel(s, b).unwrap().matrix());
                    let rhs = token_kernel(s, a + b).unwrap().matrix();
                    assert!(lhs.max_abs_diff(&rhs) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn generator_is_derivative_at_zero() {
        let s = 3;
        let q = token_generator(s);
        let err = |h: f64| {
            let k = token_kernel(s, h).unwrap().matrix();
            let fd = k.add(&Matrix::identity(s).scale(-1.0)).scale(1.0 / h);
            fd.max_abs_diff(&q)
        };
        let ratio = err(1e-3) / err(1e-4);
        assert!((ratio - 10.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn marginal_examples() {
        let space = StateSpace::new(1, 2).unwrap();
        let q0 = Pmf::new(space, vec![0.9, 0.1]).unwrap();
        assert_eq!(forward_marginal(&q0, 0.0).unwrap(), q0);
        let qt = forward_marginal(&q0, 2f64.ln()).unwrap();
        assert!((qt.prob(0) - 0.7).abs() < 1e-15 && (qt.prob(1) - 0.3).abs() < 1e-15);
        let u = Pmf::uniform(StateSpace::new(3, 3).unwrap()).unwrap();
        let ut = forward_marginal(&u, 0.7).unwrap();
        assert!(ut.mass().iter().all(|m| (m - 1.0 / 27.0).abs() < 1e-16));
    }

    #[test]
    fn marginal_matches_brute_force_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (d, s) in [(1, 4), (2, 3), (3, 2), (3, 4)] {
            let space = StateSpace::new(d, s).unwrap();
            let w: Vec<f64> = (0..space.size().unwrap()).map(|_| rng.random::<f64>()).collect();
            let q0 = Pmf::from_weights(space, w).unwrap();
            for t in [0.05, 0.8, 3.0] {
                let k = token_kernel(s, t).unwrap();
                let fast = forward_marginal(&q0, t).unwrap();
                let seqs: Vec<Sequence> = space.sequences().unwrap().collect();
                for (yi, y) in seqs.iter().enumerate() {
                    let brute: f64 = seqs
                        .iter()
                        .enumerate()
                        .map(|(xi, x)| q0.prob(xi) * (0..d).map(|i| k.entry(x[i], y[i])).product::<f64>())
                        .sum();
                    assert!((brute - fast.prob(yi)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mixing_is_monotone() {
        let space = StateSpace::new(2, 3).unwrap();
        let q0 = Pmf::point(space, 4).unwrap();
        let u = Pmf::uniform(space).unwrap();
        let mut last = 1.0;
        for k in 0..40 {
            let tv = crate::tv_distance(&forward_marginal(&q0, 0.1 * k as f64).unwrap(), &u).unwrap();
            assert!(tv <= last + 1e-15);
            last = tv;
        }
    }

    #[test]
    fn sampling_limits() {
        let space = StateSpace::new(1, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0: Sequence = vec![0].into();
        assert_eq!(sample_forward(&space, &x0, 0.0, &mut rng).unwrap(), x0);
        let n = 100_000;
        let stays = (0..n).filter(|_| sample_forward(&space, &x0, 2f64.ln(), &mut rng).unwrap()[0] == 0).count();
        assert!((stays as f64 / n as f64 - 0.75).abs() < 0.01);

        let space = StateSpace::new(1, 4).unwrap();
        let mut hist = [0usize; 4];
        for _ in 0..n {
            hist[sample_forward(&space, &x0, 1e3, &mut rng).unwrap()[0]] += 1;
        }
        let expect = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        assert!(hist.iter().all(|&c| (c as f64 - expect).abs() < 3.0 * sigma), "{hist:?}");
    }
}
