//! Fixtures shared by the benchmarks.

use gadd_core::rng::seeded;
use gadd_core::targets::TargetSpec;
use gadd_core::{ExactScore, StateSpace};

/// Second-order autoregressive target on `[s]^d`.
pub fn ar_target(d: usize, s: usize, seed: u64) -> ExactScore {
    let space = StateSpace::new(d, s).expect("small space");
    let spec = TargetSpec::Autoregressive { order: 2, concentration: 1.0 };
    ExactScore::new(spec.build(space, &mut seeded(seed)).expect("valid target"))
}
