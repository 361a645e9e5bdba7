//! Synthetic data distributions `q_0` on small enumerable spaces.

use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::state_space::{Pmf, StateSpace};

#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// Independent entries uniform in `[lo, hi]`, then normalized.
    UniformBand {
        lo: f64,
        hi: f64,
    },
    /// `q_0(x) = prod_i c_i(x^i | x^{i-h}, ..., x^{i-1})` with every
    /// conditional row drawn from a symmetric Dirichlet law.
    Autoregressive {
        order: usize,
        concentration: f64,
    },
    /// Mass on `support` distinct random sequences. Empty `weights` means
    /// equal weights.
    SingletonMixture {
        support: usize,
        weights: Vec<f64>,
    },
    File(PathBuf),
}

impl TargetSpec {
    pub fn build<R: Rng + ?Sized>(&self, space: StateSpace, rng: &mut R) -> Result<Pmf> {
        let n = space.size()?;
        match self {
            TargetSpec::UniformBand { lo, hi } => {
                if !(*lo > 0.0 && hi >= lo && hi.is_finite()) {
                    return Err(Error::InvalidConfig(format!("band [{lo}, {hi}] must satisfy 0 < lo <= hi")));
                }
                let w = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
                Pmf::from_weights(space, w)
            }
            TargetSpec::Autoregressive { order, concentration } => autoregressive(space, *order, *concentration, rng),
            TargetSpec::SingletonMixture { support, weights } => {
                if *support == 0 || *support > n {
                    return Err(Error::InvalidConfig(format!("support {support} outside 1..={n}")));
                }
                if !weights.is_empty() && weights.len() != *support {
                    return Err(Error::InvalidConfig(format!("{} weights for support {support}", weights.len())));
                }
                let mut mass = vec![0.0; n];
                for (k, idx) in sample_indices(rng, n, *support).into_iter().enumerate() {
                    mass[idx] = weights.get(k).copied().unwrap_or(1.0);
                }
                Pmf::from_weights(space, mass)
            }
            TargetSpec::File(path) => {
                let p = Pmf::read_text(BufReader::new(File::open(path)?))?;
                if *p.space() != space {
                    return Err(Error::SpecMismatch(format!(
                        "file holds d = {}, S = {}; expected d = {}, S = {}",
                        p.space().d(),
                        p.space().s(),
                        space.d(),
                        space.s()
                    )));
                }
                Ok(p)
            }
        }
    }
}

fn dirichlet_row<R: Rng + ?Sized>(gamma: &Gamma<f64>, s: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let row: Vec<f64> = (0..s).map(|_| gamma.sample(rng)).collect();
        let total: f64 = row.iter().sum();
        // Tiny concentrations can underflow every draw.
        if total > 0.0 {
            return row.into_iter().map(|v| v / total).collect();
        }
    }
}

fn autoregressive<R: Rng + ?Sized>(space: StateSpace, order: usize, concentration: f64, rng: &mut R) -> Result<Pmf> {
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(Error::InvalidConfig(format!("concentration {concentration} must be positive")));
    }
    let gamma = Gamma::new(concentration, 1.0).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let (d, s) = (space.d(), space.s());
    // tables[i][context * S + a], context = previous min(i, h) tokens in
    // little-endian order starting at x^{i-1}.
    let tables: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let contexts = s.pow(order.min(i) as u32);
            (0..contexts).flat_map(|_| dirichlet_row(&gamma, s, rng)).collect()
        })
        .collect();
    let mass = space
        .sequences()?
        .map(|x| {
            (0..d)
                .map(|i| {
                    let ctx = (1..=order.min(i)).fold((0, 1), |(c, m), lag| (c + x[i - lag] * m, m * s)).0;
                    tables[i][ctx * s + x[i]]
                })
                .product()
        })
        .collect();
    Pmf::new(space, mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn order_zero_is_a_product() {
        let space = StateSpace::new(3, 3).unwrap();
        let spec = TargetSpec::Autoregressive { order: 0, concentration: 1.0 };
        let p = spec.build(space, &mut seeded(1)).unwrap();
        let marginals: Vec<Vec<f64>> = (0..3).map(|i| p.token_marginal(i)).collect();
        for (idx, x) in space.sequences().unwrap().enumerate() {
            let prod: f64 = (0..3).map(|i| marginals[i][x[i]]).product();
            assert!((p.prob(idx) - prod).abs() < 1e-14);
        }
    }

    #[test]
    fn autoregressive_conditionals_depend_only_on_the_window() {
        let space = StateSpace::new(4, 2).unwrap();
        let spec = TargetSpec::Autoregressive { order: 1, concentration: 1.0 };
        let p = spec.build(space, &mut seeded(2)).unwrap();
        // Order 1: x^0 and x^2 are independent given x^1.
        let prob = |f: &dyn Fn(&crate::Sequence) -> bool| -> f64 {
            space.sequences().unwrap().enumerate().filter(|(_, x)| f(x)).map(|(i, _)| p.prob(i)).sum()
        };
        for (a, b, c) in [(0, 0, 0), (1, 0, 1), (0, 1, 1)] {
            let joint = prob(&|x| x[0] == a && x[1] == b && x[2] == c);
            let mid = prob(&|x| x[1] == b);
            let left = prob(&|x| x[0] == a && x[1] == b);
            let right = prob(&|x| x[1] == b && x[2] == c);
            assert!((joint * mid - left * right).abs() < 1e-14);
        }
    }

    #[test]
    fn singleton_mixture() {
        let space = StateSpace::new(3, 4).unwrap();
        let p = TargetSpec::SingletonMixture { support: 1, weights: vec![] }.build(space, &mut seeded(3)).unwrap();
        assert_eq!(p.mass().iter().filter(|m| **m > 0.0).count(), 1);
        let p = TargetSpec::SingletonMixture { support: 5, weights: vec![1.0, 2.0, 3.0, 4.0, 10.0] }
            .build(space, &mut seeded(3))
            .unwrap();
        assert_eq!(p.mass().iter().filter(|m| **m > 0.0).count(), 5);
        assert!(p.mass().iter().any(|m| (m - 0.5).abs() < 1e-15));
        let too_big = TargetSpec::SingletonMixture { support: 65, weights: vec![] };
        assert!(matches!(too_big.build(space, &mut seeded(3)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn builds_are_reproducible_and_valid() {
        let space = StateSpace::new(3, 3).unwrap();
        for spec in [
            TargetSpec::UniformBand { lo: 1.0, hi: 3.0 },
            TargetSpec::Autoregressive { order: 2, concentration: 0.5 },
            TargetSpec::SingletonMixture { support: 4, weights: vec![] },
        ] {
            let a = spec.build(space, &mut seeded(7)).unwrap();
            let b = spec.build(space, &mut seeded(7)).unwrap();
            assert_eq!(a, b);
            assert!(a.normalization_residual() < 1e-12);
            assert!(a.mass().iter().all(|m| *m >= 0.0));
        }
        let band = TargetSpec::UniformBand { lo: 1.0, hi: 3.0 }.build(space, &mut seeded(8)).unwrap();
        let (lo, hi) = band.mass().iter().fold((1.0f64, 0.0f64), |(l, h), m| (l.min(*m), h.max(*m)));
        assert!(hi / lo <= 3.0 + 1e-12);
    }

    #[test]
    fn file_round_trip() {
        let space = StateSpace::new(2, 3).unwrap();
        let p = TargetSpec::UniformBand { lo: 1.0, hi: 2.0 }.build(space, &mut seeded(9)).unwrap();
        let path = std::env::temp_dir().join(format!("gadd-target-{}.txt", std::process::id()));
        p.write_text(File::create(&path).unwrap()).unwrap();
        let q = TargetSpec::File(path.clone()).build(space, &mut seeded(0)).unwrap();
        assert!(crate::tv_distance(&p, &q).unwrap() < 1e-12);
        let other = StateSpace::new(3, 2).unwrap();
        assert!(TargetSpec::File(path.clone()).build(other, &mut seeded(0)).is_err());
        std::fs::remove_file(path).unwrap();
    }
}
