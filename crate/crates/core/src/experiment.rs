//! Turning an NFE budget into a concrete sampler for each method, and
//! running it exactly or by simulation.

use std::fmt;
use std::str::FromStr;

use crate::corrector::{CorrectorStep, CtmcCorrectorConfig, GibbsCorrectorConfig, Schedule, ScorePolicy};
use crate::error::{Error, Result};
use crate::pipeline::{
    gibbs_chain_pushforward, run_gadd_sample, run_gibbs_chain, run_pushforward, CorrectorKind, NfeLedger,
    SamplerConfig, TimeGrid,
};
use crate::predictor::OverflowPolicy;
use crate::rng::{split_stream, SimRng};
use crate::score::ScoreOracle;
use crate::state_space::{Pmf, Sequence, StateSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Euler,
    Gadd,
    Ctmc,
    /// Plain Gibbs chain at `q_delta` from a uniform start.
    Gibbs,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Euler, Method::Gadd, Method::Ctmc, Method::Gibbs];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Gadd => "gadd",
            Method::Ctmc => "ctmc",
            Method::Gibbs => "gibbs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Parse(format!("unknown method {s:?}")))
    }
}

/// Where the corrector budget goes along the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Placement {
    /// Spread evenly over all outer steps, extra steps at the smallest times.
    #[default]
    Spread,
    /// Everything in the final loop at `t_0 = delta`.
    Final,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spread" => Ok(Placement::Spread),
            "final" => Ok(Placement::Final),
            other => Err(Error::Parse(format!("unknown placement {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    pub t_max: f64,
    pub delta: f64,
    /// Share of the budget spent on predictor steps by the corrected samplers.
    pub predictor_fraction: f64,
    pub placement: Placement,
    /// Gibbs settings; the schedule is replaced by the planner.
    pub gibbs: GibbsCorrectorConfig,
    /// Gibbs steps per corrector loop under stale scores.
    pub stale_steps: usize,
    pub ctmc_step: CorrectorStep,
    pub overflow: OverflowPolicy,
}

impl PlanOptions {
    pub fn new(t_max: f64, delta: f64, gibbs: GibbsCorrectorConfig) -> Self {
        Self {
            t_max,
            delta,
            predictor_fraction: 0.5,
            placement: Placement::Spread,
            gibbs,
            stale_steps: 40,
            ctmc_step: CorrectorStep::Relative(1.0),
            overflow: OverflowPolicy::Clamp,
        }
    }
}

/// A method configured to spend exactly a given number of evaluations.
#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Sampler(SamplerConfig),
    GibbsChain { t: f64, cfg: GibbsCorrectorConfig, steps: usize },
}

impl Plan {
    pub fn ledger(&self, s: usize) -> NfeLedger {
        match self {
            Plan::Sampler(cfg) => cfg.planned_ledger(s),
            Plan::GibbsChain { cfg, steps, .. } => {
                NfeLedger { predictor_calls: 0, corrector_calls: cfg.loop_nfe(*steps, s) }
            }
        }
    }
}

fn placed(placement: Placement, n: usize, budget: usize) -> Schedule {
    match placement {
        Placement::Spread => Schedule::spread(n, budget),
        Placement::Final => Schedule::PerStep(vec![budget]),
    }
}

fn split(nfe: usize, fraction: f64) -> Result<(usize, usize)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("predictor fraction {fraction} outside (0, 1]")));
    }
    let n = ((nfe as f64) * fraction).round() as usize;
    if n == 0 || n > nfe {
        return Err(Error::InvalidConfig(format!("budget {nfe} leaves no predictor steps at fraction {fraction}")));
    }
    Ok((n, nfe - n))
}

/// Configures `method` to use exactly `nfe` score evaluations.
pub fn plan(method: Method, nfe: usize, opts: &PlanOptions, space: &StateSpace) -> Result<Plan> {
    if nfe == 0 {
        return Err(Error::InvalidConfig("NFE budget must be positive".into()));
    }
    let s = space.s();
    let base = |n: usize| -> Result<SamplerConfig> {
        Ok(SamplerConfig::euler(TimeGrid::with_steps(opts.t_max, opts.delta, n)?).with_overflow(opts.overflow))
    };
    let cost = opts.gibbs.cost_per_query(s);
    let plan = match method {
        Method::Euler => Plan::Sampler(base(nfe)?),
        Method::Gadd => {
            let (n, budget) = split(nfe, opts.predictor_fraction)?;
            let schedule = match opts.gibbs.policy {
                ScorePolicy::Fresh => {
                    if budget % cost != 0 {
                        return Err(Error::InvalidConfig(format!(
                            "corrector budget {budget} is not a multiple of the per-step cost {cost}"
                        )));
                    }
                    placed(opts.placement, n, budget / cost)
                }
                ScorePolicy::Stale => {
                    let loops = budget / cost;
                    if budget % cost != 0 || loops > n {
                        return Err(Error::InvalidConfig(format!(
                            "corrector budget {budget} does not fit {n} stale loops of cost {cost}"
                        )));
                    }
                    // Loops go to the smallest times.
                    Schedule::PerStep((0..n).map(|k| if k < loops { opts.stale_steps } else { 0 }).collect())
                }
            };
            let gibbs = GibbsCorrectorConfig { schedule, ..opts.gibbs.clone() };
            Plan::Sampler(base(n)?.with_corrector(CorrectorKind::Gibbs(gibbs)))
        }
        Method::Ctmc => {
            let (n, budget) = split(nfe, opts.predictor_fraction)?;
            let ctmc = CtmcCorrectorConfig { step: opts.ctmc_step, schedule: placed(opts.placement, n, budget) };
            Plan::Sampler(base(n)?.with_corrector(CorrectorKind::Ctmc(ctmc)))
        }
        Method::Gibbs => {
            let fresh = GibbsCorrectorConfig { policy: ScorePolicy::Fresh, ..opts.gibbs.clone() };
            if !nfe.is_multiple_of(cost) {
                return Err(Error::InvalidConfig(format!(
                    "budget {nfe} is not a multiple of the per-step cost {cost}"
                )));
            }
            Plan::GibbsChain { t: opts.delta, cfg: fresh, steps: nfe / cost }
        }
    };
    if let Plan::Sampler(cfg) = &plan {
        cfg.validate(space)?;
    }
    debug_assert_eq!(plan.ledger(s).total(), nfe, "planner must spend the exact budget");
    Ok(plan)
}

/// Terminal law of a plan by exact pushforward.
pub fn terminal_law<O: ScoreOracle + ?Sized>(plan: &Plan, oracle: &O) -> Result<Pmf> {
    match plan {
        Plan::Sampler(cfg) => Ok(run_pushforward(cfg, oracle)?.pop().expect("initial law present").1),
        Plan::GibbsChain { t, cfg, steps } => {
            Ok(gibbs_chain_pushforward(*t, cfg, *steps, oracle)?.pop().expect("initial law present"))
        }
    }
}

/// Terminal samples of `n_chains` independent runs; chain `c` uses stream `c`.
pub fn terminal_samples<O: ScoreOracle + ?Sized>(
    plan: &Plan,
    oracle: &O,
    n_chains: usize,
    rng: &SimRng,
) -> Result<Vec<Sequence>> {
    (0..n_chains)
        .map(|c| {
            let mut r = split_stream(rng, c as u64);
            match plan {
                Plan::Sampler(cfg) => Ok(run_gadd_sample(cfg, oracle, &mut r)?.0),
                Plan::GibbsChain { t, cfg, steps } => Ok(run_gibbs_chain(*t, cfg, *steps, oracle, &mut r)?.0),
            }
        })
        .collect()
}
