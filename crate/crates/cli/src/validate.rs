//! Built-in invariant suite run by `gadd validate`.
//!
//! Every check builds its own small instance, so the report order and
//! results are fixed. Checks run sequentially.

use std::error::Error as StdError;
use std::fmt;
use std::str::FromStr;

use gadd_core::corrector::{
    ctmc_corrector_kernel, ctmc_corrector_rate, gibbs_kernel_exact, posterior_estimate, run_gibbs_loop, CorrectorStep,
    CtmcCorrectorConfig, EstimatorVariant, GibbsCorrectorConfig, Scan, Schedule, ScorePolicy,
};
use gadd_core::evaluation::{hellinger, hellinger_histogram, spectral_gap, tv_decay_rate, Reference};
use gadd_core::experiment::{plan, Method, Plan, PlanOptions};
use gadd_core::forward::{closed_form_error, forward_marginal, token_generator, token_kernel};
use gadd_core::kernel::DenseKernel;
use gadd_core::linalg::Matrix;
use gadd_core::pipeline::{
    run_euler_trajectory, run_gadd_trajectory, run_monte_carlo, run_pushforward, ClampMask, CorrectorKind,
    SamplerConfig, TimeGrid,
};
use gadd_core::predictor::{euler_step_kernel, euler_step_sample, EulerStep, OverflowPolicy};
use gadd_core::rng::{seeded, SimRng};
use gadd_core::score::{assumption1_error, PerturbedScore};
use gadd_core::{tv_distance, ExactScore, Kernel, Pmf, ScoreOracle, Sequence, StateSpace};
use rand::Rng;

use crate::commands::{decay_steps, least_likely_point, run_records, GlobalOpts};
use crate::config::Config;
use crate::records::to_csv;

type CheckResult = Result<String, Box<dyn StdError>>;
type CheckFn = fn(&Context) -> CheckResult;

/// Deliberate defects for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Adds a kernel whose first row sums to 0.9.
    BadKernelRow,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bad-kernel-row" => Ok(Fault::BadKernelRow),
            other => Err(format!("unknown fault {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Context {
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub module: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} [{}] {}: {}", self.module, self.name, self.detail)
    }
}

/// `(module, check name, check)` in report order.
pub const CHECKS: &[(&str, &str, CheckFn)] = &[
    ("state_space", "encode-decode-roundtrip", encode_decode_roundtrip),
    ("state_space", "tv-is-a-metric", tv_is_a_metric),
    ("state_space", "pmf-normalization", pmf_normalization),
    ("forward_process", "closed-form-kernel", closed_form_kernel),
    ("forward_process", "kernel-semigroup", kernel_semigroup),
    ("forward_process", "generator-consistency", generator_consistency),
    ("forward_process", "marginal-brute-force", marginal_brute_force),
    ("forward_process", "monotone-mixing", monotone_mixing),
    ("score_oracle", "score-consistency", score_consistency),
    ("score_oracle", "perturbed-score-range", perturbed_score_range),
    ("score_oracle", "exact-score-error-zero", exact_score_error_zero),
    ("score_oracle", "score-error-monotone-in-sigma", score_error_monotone),
    ("predictor", "kernel-rows-stochastic", kernel_rows_stochastic),
    ("predictor", "euler-local-error-second-order", euler_local_error),
    ("predictor", "euler-sampling-matches-kernel", euler_sampling_matches_kernel),
    ("corrector", "estimator-equivalence", estimator_equivalence),
    ("corrector", "gibbs-stationarity-detailed-balance", gibbs_stationarity),
    ("corrector", "gibbs-error-propagation", gibbs_error_propagation),
    ("corrector", "gibbs-contraction-product-target", gibbs_contraction_product),
    ("corrector", "gibbs-nfe-accounting", gibbs_nfe_accounting),
    ("corrector", "ctmc-generator-stationarity", ctmc_generator_stationarity),
    ("pipeline", "grid-invariant", grid_invariant),
    ("pipeline", "ledger-accounting", ledger_accounting),
    ("pipeline", "clamp-preserved", clamp_preserved),
    ("pipeline", "pushforward-matches-monte-carlo", pushforward_matches_monte_carlo),
    ("pipeline", "zero-corrector-reduces-to-euler", zero_corrector_reduces_to_euler),
    ("evaluation", "gap-estimators-agree", gap_estimators_agree),
    ("evaluation", "data-processing", data_processing),
    ("evaluation", "hellinger-bounds", hellinger_bounds),
    ("experiment_cli", "csv-deterministic", csv_deterministic),
    ("experiment_cli", "seed-override-recorded", seed_override_recorded),
    ("experiment_cli", "default-split-nfe-32", default_split_nfe_32),
    ("experiment_cli", "euler-sweep-monotone", euler_sweep_monotone),
];

pub fn run_suite(ctx: &Context) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .map(|&(module, name, check)| {
            let (passed, detail) = match check(ctx) {
                Ok(detail) => (true, detail),
                Err(e) => (false, e.to_string()),
            };
            CheckOutcome { name, module, passed, detail }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), Box<dyn StdError>> {
    if cond {
        Ok(())
    } else {
        Err(msg().into())
    }
}

fn random_pmf(space: StateSpace, rng: &mut SimRng) -> Result<Pmf, Box<dyn StdError>> {
    let w = (0..space.size()?).map(|_| rng.random::<f64>() + 0.02).collect();
    Ok(Pmf::from_weights(space, w)?)
}

fn random_oracle(d: usize, s: usize, seed: u64) -> Result<ExactScore, Box<dyn StdError>> {
    Ok(ExactScore::new(random_pmf(StateSpace::new(d, s)?, &mut seeded(seed))?))
}

fn product_pmf(space: StateSpace, marginals: &[Vec<f64>]) -> Result<Pmf, Box<dyn StdError>> {
    let w = space.sequences()?.map(|x| (0..space.d()).map(|i| marginals[i][x[i]]).product()).collect();
    Ok(Pmf::from_weights(space, w)?)
}

fn encode_decode_roundtrip(_: &Context) -> CheckResult {
    let mut total = 0;
    for (d, s) in [(4, 10), (13, 2), (2, 100), (6, 4), (1, 7)] {
        let space = StateSpace::new(d, s)?;
        for (idx, x) in space.sequences()?.enumerate() {
            ensure(space.encode(&x)? == idx && space.decode(idx)? == x, || format!("index {idx} on d={d}, S={s}"))?;
            total += 1;
        }
    }
    Ok(format!("{total} indices round-trip"))
}

fn tv_is_a_metric(_: &Context) -> CheckResult {
    let mut rng = seeded(1);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let space = StateSpace::new(2, 3)?;
        let (p, q, r) = (random_pmf(space, &mut rng)?, random_pmf(space, &mut rng)?, random_pmf(space, &mut rng)?);
        let (pq, qp, qr, pr) = (tv_distance(&p, &q)?, tv_distance(&q, &p)?, tv_distance(&q, &r)?, tv_distance(&p, &r)?);
        ensure((pq - qp).abs() <= 1e-12, || format!("asymmetric: {pq} vs {qp}"))?;
        ensure(pr <= pq + qr + 1e-12, || format!("triangle: {pr} > {pq} + {qr}"))?;
        ensure(tv_distance(&p, &p)? == 0.0 && pq >= 0.0, || "identity or sign".into())?;
        worst = worst.max(pr - pq - qr);
    }
    Ok(format!("200 triples, largest triangle slack {worst:.3e}"))
}

fn pmf_normalization(_: &Context) -> CheckResult {
    let mut rng = seeded(2);
    let space = StateSpace::new(3, 3)?;
    let samples: Vec<Sequence> = (0..100).map(|_| space.random_sequence(&mut rng)).collect();
    let q0 = random_pmf(space, &mut rng)?;
    let band = Pmf::from_weights(space, (0..27).map(|_| 1.0 + 2.0 * rng.random::<f64>()).collect())?;
    let built = [
        ("from_weights", q0.clone()),
        ("band", band),
        ("uniform", Pmf::uniform(space)?),
        ("point", Pmf::point(space, 5)?),
        ("empirical", Pmf::empirical(space, &samples)?),
        ("forward_marginal", forward_marginal(&q0, 0.7)?),
    ];
    for (name, p) in &built {
        let r = p.normalization_residual();
        ensure(r <= 1e-12, || format!("{name} residual {r:e}"))?;
    }
    Ok(format!("{} constructors within 1e-12", built.len()))
}

fn closed_form_kernel(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    for s in [2, 4, 8] {
        for t in [0.1, 1.0, 5.0] {
            worst = worst.max(closed_form_error(s, t)?);
        }
    }
    ensure(worst <= 1e-10, || format!("max entry gap {worst:e}"))?;
    Ok(format!("max entry gap {worst:.2e}"))
}

fn kernel_semigroup(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    for s in [2, 3, 5] {
        for a in [0.1, 0.5, 2.0] {
            for b in [0.1, 0.5, 2.0] {
                let lhs = token_kernel(s, a)?.matrix().matmul(&token_kernel(s, b)?.matrix());
                worst = worst.max(lhs.max_abs_diff(&token_kernel(s, a + b)?.matrix()));
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max entry gap {worst:e}"))?;
    Ok(format!("max entry gap {worst:.2e}"))
}

fn generator_consistency(_: &Context) -> CheckResult {
    let s = 4;
    let err = |h: f64| -> Result<f64, Box<dyn StdError>> {
        let diff = token_kernel(s, h)?.matrix().add(&Matrix::identity(s).scale(-1.0)).scale(1.0 / h);
        Ok(diff.max_abs_diff(&token_generator(s)))
    };
    let (e3, e4) = (err(1e-3)?, err(1e-4)?);
    let ratio = e3 / e4;
    ensure((8.0..=12.0).contains(&ratio), || format!("error ratio {ratio}"))?;
    Ok(format!("errors {e3:.2e} / {e4:.2e}, ratio {ratio:.2}"))
}

fn marginal_brute_force(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    for (d, s) in [(1, 4), (2, 3), (3, 2), (3, 4)] {
        let space = StateSpace::new(d, s)?;
        let q0 = random_pmf(space, &mut seeded(3 + d as u64))?;
        for t in [0.05, 0.8, 3.0] {
            let k = token_kernel(s, t)?;
            let fast = forward_marginal(&q0, t)?;
            let seqs: Vec<Sequence> = space.sequences()?.collect();
            for (xi, x) in seqs.iter().enumerate() {
                let slow: f64 = seqs
                    .iter()
                    .enumerate()
                    .map(|(zi, z)| q0.prob(zi) * (0..d).map(|i| k.entry(z[i], x[i])).product::<f64>())
                    .sum();
                worst = worst.max((slow - fast.prob(xi)).abs());
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max gap {worst:e}"))?;
    Ok(format!("max gap {worst:.2e}"))
}

fn monotone_mixing(_: &Context) -> CheckResult {
    let space = StateSpace::new(3, 3)?;
    let q0 = random_pmf(space, &mut seeded(4))?;
    let uni = Pmf::uniform(space)?;
    let mut prev = f64::INFINITY;
    for k in 0..=40 {
        let t = 0.125 * k as f64;
        let tv = tv_distance(&forward_marginal(&q0, t)?, &uni)?;
        ensure(tv <= prev + 1e-15, || format!("tv rose to {tv} at t = {t}"))?;
        prev = tv;
    }
    Ok(format!("41 times, final tv {prev:.2e}"))
}

fn score_consistency(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    for (d, s) in [(2, 3), (3, 4)] {
        let oracle = random_oracle(d, s, 5)?;
        for t in [0.2, 1.0] {
            for x in oracle.space().sequences()? {
                for i in 0..d {
                    let row = oracle.score_row(t, &x, i)?;
                    for (a, v) in row.iter().enumerate().filter(|(a, _)| *a != x[i]) {
                        let back = oracle.score_row(t, &x.with_token(i, a), i)?[x[i]];
                        worst = worst.max((v * back - 1.0).abs());
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max |s(y,x) s(x,y) - 1| = {worst:e}"))?;
    Ok(format!("max |s(y,x) s(x,y) - 1| = {worst:.2e}"))
}

fn perturbed_score_range(_: &Context) -> CheckResult {
    let m = 20.0;
    let oracle = PerturbedScore::new(random_oracle(3, 3, 6)?, m, 3.0, 9)?;
    let mut rng = seeded(7);
    for _ in 0..2000 {
        let x = oracle.space().random_sequence(&mut rng);
        let i = rng.random_range(0..3);
        let t = rng.random_range(0.01..4.0);
        for v in oracle.score_row(t, &x, i)? {
            ensure((1.0 / m..=m).contains(&v), || format!("entry {v} outside [1/M, M]"))?;
        }
    }
    Ok("2000 random queries inside [1/M, M]".into())
}

fn exact_score_error_zero(_: &Context) -> CheckResult {
    let exact = random_oracle(3, 3, 8)?;
    for t in [0.1, 1.0] {
        let qt = exact.marginal(t)?;
        let report = assumption1_error(&exact, &exact, t, &qt)?;
        ensure(report.aggregate == 0.0, || format!("error {} at t = {t}", report.aggregate))?;
    }
    Ok("exactly zero".into())
}

fn score_error_monotone(_: &Context) -> CheckResult {
    let exact = random_oracle(3, 3, 9)?;
    let t = 0.5;
    let qt = exact.marginal(t)?;
    let mut errs = Vec::new();
    for sigma in [0.0, 0.05, 0.1, 0.2] {
        let noisy = PerturbedScore::new(&exact, 1e6, sigma, 4)?;
        errs.push(assumption1_error(&noisy, &exact, t, &qt)?.aggregate);
    }
    ensure(errs.windows(2).all(|w| w[0] <= w[1]), || format!("errors {errs:?}"))?;
    Ok(format!("errors {:?}", errs.iter().map(|e| format!("{e:.3e}")).collect::<Vec<_>>()))
}

/// A named kernel and the law it is checked against.
type ZooEntry = (String, Kernel, Pmf);

/// Every kind of kernel the library builds, on one small instance.
fn kernel_zoo() -> Result<Vec<ZooEntry>, Box<dyn StdError>> {
    let oracle = random_oracle(3, 3, 10)?;
    let space = *oracle.space();
    let t = 0.6;
    let qt = (*oracle.marginal(t)?).clone();
    let random = GibbsCorrectorConfig::new(Scan::uniform_random(3), Schedule::Constant(1));
    let sys = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(1));
    let stale = sys.clone().with_policy(ScorePolicy::Stale);
    let gated = random.clone().with_threshold(Some(0.4));
    let mut out = vec![
        ("euler".into(), euler_step_kernel(&EulerStep::new(0.9, t)?, &oracle, OverflowPolicy::Strict)?, qt.clone()),
        (
            "euler-clamped-overflow".into(),
            euler_step_kernel(&EulerStep::new(3.0, 0.1)?, &oracle, OverflowPolicy::Clamp)?,
            qt.clone(),
        ),
        ("gibbs-random".into(), gibbs_kernel_exact(t, &random, &oracle)?, qt.clone()),
        ("gibbs-systematic".into(), gibbs_kernel_exact(t, &sys, &oracle)?, qt.clone()),
        ("gibbs-stale".into(), gibbs_kernel_exact(t, &stale, &oracle)?, qt.clone()),
        ("gibbs-threshold".into(), gibbs_kernel_exact(t, &gated, &oracle)?, qt.clone()),
        ("ctmc".into(), ctmc_corrector_kernel(t, 0.1, &oracle, OverflowPolicy::Strict)?, qt.clone()),
        ("clamp".into(), ClampMask::new(&space, vec![(1, 2)])?.kernel(&space)?, qt.clone()),
    ];
    for est in EstimatorVariant::ALL {
        let cfg = random.clone().with_estimator(est);
        let noisy = PerturbedScore::new(&oracle, 50.0, 0.3, 5)?;
        out.push((format!("gibbs-perturbed-{est:?}"), gibbs_kernel_exact(t, &cfg, &noisy)?, qt.clone()));
    }
    Ok(out)
}

fn kernel_rows_stochastic(ctx: &Context) -> CheckResult {
    let mut zoo = kernel_zoo()?;
    if ctx.fault == Some(Fault::BadKernelRow) {
        let mut data = DenseKernel::identity(4).data().to_vec();
        data[0] = 0.9;
        let p = Pmf::uniform(StateSpace::new(2, 2)?)?;
        zoo.push(("injected".into(), Kernel::Dense(DenseKernel::new(4, data)?), p));
    }
    for (name, k, _) in &zoo {
        let (err, min) = k.row_sum_error();
        ensure(err <= 1e-12 && min >= 0.0, || format!("{name}: row-sum error {err:e}, min entry {min:e}"))?;
    }
    Ok(format!("{} kernels", zoo.len()))
}

fn euler_local_error(_: &Context) -> CheckResult {
    let oracle = random_oracle(2, 3, 11)?;
    let t = 1.0;
    let qt = oracle.marginal(t)?;
    let err = |h: f64| -> Result<f64, Box<dyn StdError>> {
        let k = euler_step_kernel(&EulerStep::new(t, t - h)?, &oracle, OverflowPolicy::Strict)?;
        Ok(tv_distance(&k.push_pmf(&qt)?, &*oracle.marginal(t - h)?)?)
    };
    let errs = [err(0.1)?, err(0.05)?, err(0.025)?];
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    ensure(ratios.iter().all(|r| (3.0..=5.0).contains(r)), || format!("ratios {ratios:?}"))?;
    Ok(format!("halving ratios {:.2}, {:.2}", ratios[0], ratios[1]))
}

fn euler_sampling_matches_kernel(_: &Context) -> CheckResult {
    let oracle = random_oracle(2, 3, 12)?;
    let space = *oracle.space();
    let step = EulerStep::new(1.0, 0.6)?;
    let kernel = euler_step_kernel(&step, &oracle, OverflowPolicy::Strict)?;
    let x = Sequence::new(vec![1, 2]);
    let row = kernel.dense_row(space.encode(&x)?);
    let n = 100_000;
    let mut counts = vec![0usize; row.len()];
    let mut rng = seeded(13);
    for _ in 0..n {
        counts[space.encode(&euler_step_sample(&x, &step, &oracle, OverflowPolicy::Strict, &mut rng)?)?] += 1;
    }
    let mut worst: f64 = 0.0;
    for (p, c) in row.iter().zip(&counts) {
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        let z = if sd > 0.0 { (*c as f64 / n as f64 - p).abs() / sd } else { *c as f64 };
        worst = worst.max(z);
    }
    ensure(worst <= 3.0, || format!("deviation {worst:.2} sigma"))?;
    Ok(format!("{n} draws, largest deviation {worst:.2} sigma"))
}

fn estimator_equivalence(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (d, s) in [(2, 3), (3, 2), (3, 4)] {
        let oracle = random_oracle(d, s, 14)?;
        for t in [0.2, 1.0, 3.0] {
            let qt = oracle.marginal(t)?;
            for (idx, x) in oracle.space().sequences()?.enumerate() {
                for i in 0..d {
                    let truth = qt.conditional(idx, i)?;
                    for v in EstimatorVariant::ALL {
                        let est = posterior_estimate(&oracle, t, &x, i, v)?;
                        let gap = est.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                        worst = worst.max(gap);
                        count += 1;
                    }
                }
            }
        }
    }
    ensure(worst <= 1e-12, || format!("max gap {worst:e}"))?;
    Ok(format!("{count} estimates, max gap {worst:.2e}"))
}

fn gibbs_stationarity(_: &Context) -> CheckResult {
    let mut worst_tv: f64 = 0.0;
    let mut worst_db: f64 = 0.0;
    let shapes = [(1, 3), (2, 2), (2, 3), (3, 2), (3, 3), (4, 2), (4, 3)];
    for seed in 0..20u64 {
        let (d, s) = shapes[seed as usize % shapes.len()];
        let oracle = random_oracle(d, s, 100 + seed)?;
        let random = GibbsCorrectorConfig::new(Scan::uniform_random(d), Schedule::Constant(1));
        let sys = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(1));
        for t in [0.2, 1.0, 3.0] {
            let qt = oracle.marginal(t)?;
            let k = gibbs_kernel_exact(t, &random, &oracle)?;
            worst_tv = worst_tv.max(tv_distance(&k.push_pmf(&qt)?, &qt)?);
            worst_db = worst_db.max(k.detailed_balance_violation(qt.mass()));
            let k = gibbs_kernel_exact(t, &sys, &oracle)?;
            worst_tv = worst_tv.max(tv_distance(&k.push_pmf(&qt)?, &qt)?);
        }
    }
    ensure(worst_tv <= 1e-10 && worst_db <= 1e-10, || format!("tv {worst_tv:e}, balance {worst_db:e}"))?;
    Ok(format!("20 targets: tv {worst_tv:.2e}, detailed balance {worst_db:.2e}"))
}

fn gibbs_error_propagation(_: &Context) -> CheckResult {
    let mut worst_slack = f64::INFINITY;
    for seed in 0..10u64 {
        let (d, s) = if seed % 2 == 0 { (3, 3) } else { (4, 2) };
        let space = StateSpace::new(d, s)?;
        let exact = random_oracle(d, s, 200 + seed)?;
        let noisy = PerturbedScore::new(&exact, 50.0, 0.3, seed)?;
        let t = 0.5;
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(d), Schedule::Constant(1));
        let k = gibbs_kernel_exact(t, &cfg, &exact)?;
        let k_hat = gibbs_kernel_exact(t, &cfg, &noisy)?;
        let n = space.size()?;
        let row_tv: Vec<f64> = (0..n)
            .map(|x| {
                let (a, b) = (k.dense_row(x), k_hat.dense_row(x));
                0.5 * a.iter().zip(&b).map(|(u, v)| (u - v).abs()).sum::<f64>()
            })
            .collect();
        let mut p = Pmf::point(space, (seed as usize * 7) % n)?;
        let mut p_hat = p.clone();
        let mut eps: f64 = 0.0;
        for l in 1..=20 {
            eps = eps.max(p.mass().iter().zip(&row_tv).map(|(a, b)| a * b).sum());
            p = k.push_pmf(&p)?;
            p_hat = k_hat.push_pmf(&p_hat)?;
            let tv = tv_distance(&p, &p_hat)?;
            ensure(tv <= l as f64 * eps + 1e-10, || format!("seed {seed}, L = {l}: {tv} > {l} x {eps}"))?;
            worst_slack = worst_slack.min(l as f64 * eps - tv);
        }
    }
    Ok(format!("10 seeds, L <= 20, smallest slack {worst_slack:.2e}"))
}

fn gibbs_contraction_product(_: &Context) -> CheckResult {
    let mut report = Vec::new();
    for d in [2, 3, 4] {
        let space = StateSpace::new(d, 2)?;
        let marginals: Vec<Vec<f64>> = (0..d).map(|i| vec![0.2 + 0.15 * i as f64, 0.8 - 0.15 * i as f64]).collect();
        let oracle = ExactScore::new(product_pmf(space, &marginals)?);
        let t = 0.3;
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(d), Schedule::Constant(1));
        let k = gibbs_kernel_exact(t, &cfg, &oracle)?;
        let qt = oracle.marginal(t)?;
        let rho = spectral_gap(&k, &qt)?.rho;
        let want = 1.0 / d as f64;
        ensure((rho - want).abs() <= 0.1 * want, || format!("d = {d}: gap {rho}, want {want}"))?;
        let fit = tv_decay_rate(&k, &qt, &least_likely_point(&qt)?, decay_steps(rho))?.rho;
        ensure((fit - rho).abs() <= 0.15 * rho, || format!("d = {d}: fit {fit} vs eigen {rho}"))?;
        report.push(format!("d={d}: {rho:.4} / {fit:.4}"));
    }
    Ok(report.join(", "))
}

fn gibbs_nfe_accounting(_: &Context) -> CheckResult {
    let oracle = random_oracle(3, 3, 15)?;
    let mut rng = seeded(16);
    for scan in [Scan::uniform_random(3), Scan::Systematic] {
        for strict in [false, true] {
            let base = GibbsCorrectorConfig {
                strict_nfe: strict,
                estimator: EstimatorVariant::InverseSum,
                ..GibbsCorrectorConfig::new(scan.clone(), Schedule::Constant(0))
            };
            let cost = if strict { 3 } else { 1 };
            for (policy, steps, want) in [
                (ScorePolicy::Fresh, 7, 7 * cost),
                (ScorePolicy::Stale, 7, cost),
                (ScorePolicy::Fresh, 0, 0),
                (ScorePolicy::Stale, 0, 0),
            ] {
                let cfg = base.clone().with_policy(policy);
                let mut z = oracle.space().random_sequence(&mut rng);
                let got = run_gibbs_loop(&mut z, 0.5, &cfg, steps, &oracle, &mut rng, |_| {})?;
                ensure(got == want && cfg.loop_nfe(steps, 3) == want, || {
                    format!("{scan:?} {policy:?} strict={strict} L={steps}: charged {got}, want {want}")
                })?;
            }
        }
    }
    Ok("fresh charges L, stale charges 1 per loop".into())
}

fn ctmc_generator_stationarity(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    for (d, s) in [(1, 3), (2, 2), (2, 3), (3, 3)] {
        let oracle = random_oracle(d, s, 17)?;
        for t in [0.2, 1.0] {
            let qt = oracle.marginal(t)?;
            let seqs: Vec<Sequence> = oracle.space().sequences()?.collect();
            for y in &seqs {
                let mut r = 0.0;
                for (xi, x) in seqs.iter().enumerate() {
                    r += qt.prob(xi) * ctmc_corrector_rate(x, y, t, &oracle)?;
                }
                worst = worst.max(r.abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("residual {worst:e}"))?;
    Ok(format!("generator residual {worst:.2e}"))
}

fn grid_invariant(_: &Context) -> CheckResult {
    let mut rng = seeded(18);
    for _ in 0..500 {
        let t_max = rng.random_range(1.0..10.0);
        let delta = rng.random_range(1e-3..0.5);
        let kappa = rng.random_range(0.05..0.5);
        TimeGrid::build(t_max, delta, kappa)?.check_invariant()?;
        TimeGrid::with_steps(t_max, delta, rng.random_range(1..200))?.check_invariant()?;
    }
    Ok("1000 grids".into())
}

fn ledger_accounting(_: &Context) -> CheckResult {
    let oracle = random_oracle(2, 3, 19)?;
    let grid = TimeGrid::with_steps(4.0, 0.05, 6)?;
    let schedule = Schedule::PerStep(vec![3, 0, 2, 0, 1, 4]);
    let gibbs = GibbsCorrectorConfig::new(Scan::uniform_random(2), schedule.clone());
    let cases = [
        (CorrectorKind::None, 0),
        (CorrectorKind::Gibbs(gibbs.clone()), 10),
        (CorrectorKind::Gibbs(gibbs.with_policy(ScorePolicy::Stale)), 4),
        (CorrectorKind::Ctmc(CtmcCorrectorConfig { step: CorrectorStep::Relative(0.5), schedule }), 10),
    ];
    for (corrector, want) in cases {
        let cfg =
            SamplerConfig::euler(grid.clone()).with_corrector(corrector.clone()).with_overflow(OverflowPolicy::Clamp);
        let (_, ledger) = run_gadd_trajectory(&cfg, &oracle, &mut seeded(20))?;
        ensure(
            ledger.predictor_calls == 6 && ledger.corrector_calls == want && ledger == cfg.planned_ledger(3),
            || format!("{corrector:?}: {ledger:?}, want corrector calls {want}"),
        )?;
    }
    Ok("predictor N, fresh sum L_k, stale #{L_k > 0}".into())
}

fn clamp_preserved(_: &Context) -> CheckResult {
    let oracle = random_oracle(3, 3, 21)?;
    let space = *oracle.space();
    let mask = ClampMask::new(&space, vec![(0, 1), (2, 0)])?;
    let grid = TimeGrid::with_steps(4.0, 0.05, 5)?;
    let sched = Schedule::Constant(2);
    let correctors = [
        CorrectorKind::None,
        CorrectorKind::Gibbs(GibbsCorrectorConfig::new(Scan::uniform_random(3), sched.clone())),
        CorrectorKind::Gibbs(GibbsCorrectorConfig::new(Scan::Systematic, sched.clone())),
        CorrectorKind::Gibbs(
            GibbsCorrectorConfig::new(Scan::Systematic, sched.clone()).with_policy(ScorePolicy::Stale),
        ),
        CorrectorKind::Ctmc(CtmcCorrectorConfig { step: CorrectorStep::Relative(1.0), schedule: sched }),
    ];
    let mut states = 0;
    for corrector in correctors {
        let cfg = SamplerConfig::euler(grid.clone())
            .with_corrector(corrector)
            .with_clamp(Some(mask.clone()))
            .with_overflow(OverflowPolicy::Clamp);
        for chain in 0..50 {
            let (traj, _) = run_gadd_trajectory(&cfg, &oracle, &mut seeded(chain))?;
            for x in &traj {
                ensure(x[0] == 1 && x[2] == 0, || format!("clamped token moved: {:?}", x.tokens()))?;
                states += 1;
            }
        }
        if !matches!(&cfg.corrector, CorrectorKind::Gibbs(g) if g.policy == ScorePolicy::Stale) {
            let law = run_pushforward(&cfg, &oracle)?.pop().expect("terminal law").1;
            for (idx, x) in space.sequences()?.enumerate() {
                ensure(law.prob(idx) == 0.0 || (x[0] == 1 && x[2] == 0), || "pushforward leaks mass".into())?;
            }
        }
    }
    Ok(format!("{states} visited states respect the mask"))
}

fn pushforward_matches_monte_carlo(_: &Context) -> CheckResult {
    let oracle = random_oracle(2, 2, 22)?;
    let cfg = SamplerConfig::euler(TimeGrid::with_steps(4.0, 0.05, 8)?).with_overflow(OverflowPolicy::Clamp);
    let law = run_pushforward(&cfg, &oracle)?.pop().expect("terminal law").1;
    let mc = run_monte_carlo(&cfg, &oracle, 20_000, &seeded(23))?;
    let tv = tv_distance(&law, mc.empirical.as_ref().expect("enumerable"))?;
    ensure(tv < 0.02, || format!("tv {tv}"))?;
    Ok(format!("20000 chains, tv {tv:.4}"))
}

fn zero_corrector_reduces_to_euler(_: &Context) -> CheckResult {
    let oracle = random_oracle(3, 3, 24)?;
    let grid = TimeGrid::with_steps(5.0, 0.02, 12)?;
    let zero = GibbsCorrectorConfig::new(Scan::Systematic, Schedule::Constant(0));
    for seed in 0..20 {
        let (reference, ref_ledger) = run_euler_trajectory(&grid, &oracle, OverflowPolicy::Clamp, &mut seeded(seed))?;
        for corrector in [CorrectorKind::None, CorrectorKind::Gibbs(zero.clone())] {
            let cfg = SamplerConfig::euler(grid.clone()).with_corrector(corrector).with_overflow(OverflowPolicy::Clamp);
            let (traj, ledger) = run_gadd_trajectory(&cfg, &oracle, &mut seeded(seed))?;
            ensure(traj == reference && ledger == ref_ledger, || format!("seed {seed} diverged"))?;
        }
    }
    Ok("20 seeds, identical trajectories and ledgers".into())
}

fn gap_estimators_agree(_: &Context) -> CheckResult {
    let mut worst: f64 = 0.0;
    for (k, (d, s)) in [(2, 2), (2, 3), (3, 2), (3, 3)].into_iter().enumerate() {
        let oracle = random_oracle(d, s, 25 + k as u64)?;
        let t = 0.5;
        let cfg = GibbsCorrectorConfig::new(Scan::uniform_random(d), Schedule::Constant(1));
        let kernel = gibbs_kernel_exact(t, &cfg, &oracle)?;
        let qt = oracle.marginal(t)?;
        let eigen = spectral_gap(&kernel, &qt)?.rho;
        let fit = tv_decay_rate(&kernel, &qt, &least_likely_point(&qt)?, decay_steps(eigen))?.rho;
        let rel = (fit - eigen).abs() / eigen;
        ensure(rel <= 0.15, || format!("d={d}, S={s}: eigen {eigen}, fit {fit}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("largest relative gap {worst:.3}"))
}

fn data_processing(_: &Context) -> CheckResult {
    let mut rng = seeded(26);
    let zoo = kernel_zoo()?;
    for (name, k, _) in &zoo {
        let space = StateSpace::new(3, 3)?;
        for _ in 0..20 {
            let (p, q) = (random_pmf(space, &mut rng)?, random_pmf(space, &mut rng)?);
            let before = tv_distance(&p, &q)?;
            let after = tv_distance(&k.push_pmf(&p)?, &k.push_pmf(&q)?)?;
            ensure(after <= before + 1e-12, || format!("{name}: {after} > {before}"))?;
        }
    }
    Ok(format!("{} kernels x 20 pairs", zoo.len()))
}

fn hellinger_bounds(_: &Context) -> CheckResult {
    let mut rng = seeded(27);
    let space = StateSpace::new(3, 4)?;
    for _ in 0..100 {
        let (p, q) = (random_pmf(space, &mut rng)?, random_pmf(space, &mut rng)?);
        let (hp, hq) = (p.pooled_token_histogram(), q.pooled_token_histogram());
        let h = hellinger(&hp, &hq)?;
        let tv = 0.5 * hp.iter().zip(&hq).map(|(a, b)| (a - b).abs()).sum::<f64>();
        ensure((0.0..=1.0).contains(&h) && h * h <= tv + 1e-12, || format!("h = {h}, tv = {tv}"))?;
    }
    let samples: Vec<Sequence> = (0..500).map(|_| space.random_sequence(&mut rng)).collect();
    let q = random_pmf(space, &mut rng)?;
    let h = hellinger_histogram(&samples, Reference::Law(&q), 4)?;
    let same = hellinger_histogram(&samples, Reference::Samples(&samples), 4)?;
    ensure((0.0..=1.0).contains(&h) && same == 0.0, || format!("h = {h}, self = {same}"))?;
    Ok("100 pairs inside [0, 1] with h^2 <= tv".into())
}

const SMALL_CONFIG: &str = r#"
[target]
kind = "ar"
d = 3
s = 2
[sampler]
methods = ["euler", "gadd", "ctmc", "gibbs"]
nfe = [4, 8]
"#;

fn strip_wallclock(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

fn csv_deterministic(_: &Context) -> CheckResult {
    for extra in [vec![], vec!["eval.mode=monte-carlo".to_string(), "eval.chains=300".to_string()]] {
        let cfg = Config::from_toml_str(SMALL_CONFIG, &extra)?;
        let a = strip_wallclock(&to_csv(&run_records(&cfg, &cfg.sampler.nfe)?)?);
        let b = strip_wallclock(&to_csv(&run_records(&cfg, &cfg.sampler.nfe)?)?);
        ensure(a == b, || format!("runs differ with {extra:?}"))?;
    }
    Ok("exact and Monte Carlo runs repeat byte for byte".into())
}

fn seed_override_recorded(_: &Context) -> CheckResult {
    let mut cfg = Config::from_toml_str(SMALL_CONFIG, &[])?;
    GlobalOpts { seed: Some(77), ..Default::default() }.apply(&mut cfg);
    let rows = run_records(&cfg, &[4])?;
    ensure(!rows.is_empty() && rows.iter().all(|r| r.seed == 77), || "seed not recorded".into())?;
    let base = run_records(&Config::from_toml_str(SMALL_CONFIG, &[])?, &[4])?;
    ensure(base.iter().zip(&rows).any(|(a, b)| a.tv != b.tv), || "seed override had no effect".into())?;
    Ok(format!("{} rows carry seed 77", rows.len()))
}

fn default_split_nfe_32(_: &Context) -> CheckResult {
    let space = StateSpace::new(4, 3)?;
    for scan in [Scan::Systematic, Scan::uniform_random(4)] {
        for policy in [ScorePolicy::Fresh, ScorePolicy::Stale] {
            let gibbs = GibbsCorrectorConfig::new(scan.clone(), Schedule::Constant(0)).with_policy(policy);
            let opts = PlanOptions::new(6.0, 0.01, gibbs);
            let Plan::Sampler(cfg) = plan(Method::Gadd, 32, &opts, &space)? else {
                return Err("GADD did not plan a sampler".into());
            };
            let ledger = cfg.planned_ledger(3);
            ensure(cfg.grid.num_steps() == 16 && ledger.predictor_calls == 16 && ledger.total() == 32, || {
                format!("{policy:?}: {} steps, ledger {ledger:?}", cfg.grid.num_steps())
            })?;
        }
    }
    Ok("16 predictor steps and 16 corrector evaluations".into())
}

fn euler_sweep_monotone(_: &Context) -> CheckResult {
    let cfg = Config::from_toml_str(
        "[target]\nkind = \"uniform-band\"\nd = 2\ns = 2\n[sampler]\nmethods = [\"euler\"]\n",
        &[],
    )?;
    let nfe = [4, 8, 16, 32, 64, 128];
    let rows = run_records(&cfg, &nfe)?;
    let tvs: Vec<f64> = rows.iter().map(|r| r.tv).collect();
    ensure(tvs.windows(2).all(|w| w[1] <= w[0] + 1e-12), || format!("tv {tvs:?}"))?;
    Ok(format!("tv {:.2e} down to {:.2e}", tvs[0], tvs[tvs.len() - 1]))
}
