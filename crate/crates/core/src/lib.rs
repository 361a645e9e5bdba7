//! Gibbs-corrected sampling for uniform-rate discrete diffusion models.
//!
//! Sequences live in `[S]^d`. The forward process noises every token with a
//! uniform-rate chain; sampling runs the reverse chain with an Euler
//! predictor and, after each predictor step, a corrector at the current time.
//! The Gibbs corrector rebuilds single-token posteriors from concrete scores.
//!
//! On small spaces every transition has an exact kernel, so whole laws can be
//! pushed through a sampler and compared in total variation at machine
//! precision.
//!
//! ```
//! use gadd_core::corrector::{GibbsCorrectorConfig, Scan, Schedule};
//! use gadd_core::pipeline::{run_pushforward, CorrectorKind, SamplerConfig, TimeGrid};
//! use gadd_core::{ExactScore, Pmf, StateSpace};
//!
//! let space = StateSpace::new(2, 3).unwrap();
//! let q0 = Pmf::from_weights(space, (1..=9).map(f64::from).collect()).unwrap();
//! let oracle = ExactScore::new(q0);
//! let gibbs = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(2));
//! let cfg = SamplerConfig::euler(TimeGrid::build(4.0, 0.05, 0.3).unwrap())
//!     .with_corrector(CorrectorKind::Gibbs(gibbs));
//! let laws = run_pushforward(&cfg, &oracle).unwrap();
//! assert_eq!(laws.len(), cfg.grid.num_steps() + 1);
//! ```

// Negated comparisons are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corrector;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod forward;
pub mod kernel;
pub mod linalg;
pub mod pipeline;
pub mod predictor;
pub mod rng;
pub mod score;
pub mod state_space;
pub mod targets;

pub use error::{Error, Result};
pub use kernel::Kernel;
pub use score::{ExactScore, PerturbedScore, ScoreOracle};
pub use state_space::{hamming, neighbors, tv_distance, Pmf, Sequence, StateSpace};
