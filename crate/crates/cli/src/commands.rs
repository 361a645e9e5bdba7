//! The experiment commands, usable in-process as well as from `main`.

use std::path::PathBuf;
use std::time::Instant;

use gadd_core::corrector::{gibbs_kernel_exact, GibbsCorrectorConfig, Scan, Schedule};
use gadd_core::evaluation::{hellinger_histogram, hellinger_laws, spectral_gap, tv_decay_rate, Reference};
use gadd_core::experiment::{plan, terminal_law, terminal_samples, Method, Plan};
use gadd_core::pipeline::TimeGrid;
use gadd_core::rng::{hash_words, seeded};
use gadd_core::{tv_distance, ExactScore, PerturbedScore, Pmf, ScoreOracle};
use serde::Serialize;

use crate::chart::render_svg;
use crate::config::{Config, EvalMode, ReferenceName, ScoreName};
use crate::records::{emit, to_csv, ExperimentRecord};
use crate::CliError;

/// Flags shared by every command.
#[derive(Debug, Clone, Default)]
pub struct GlobalOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub sets: Vec<String>,
    /// `Some(None)`: chart next to the CSV or at `output.chart`.
    pub chart: Option<Option<PathBuf>>,
}

impl GlobalOpts {
    /// Loads the config and folds in `--seed` and `--out`.
    pub fn load(&self) -> Result<Config, CliError> {
        let path = self.config.as_deref().ok_or_else(|| CliError::Config("this command needs --config PATH".into()))?;
        let mut cfg = Config::load(path, &self.sets)?;
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut Config) {
        if let Some(seed) = self.seed {
            cfg.sampler.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output.csv = Some(out.clone());
        }
        if let Some(Some(chart)) = &self.chart {
            cfg.output.chart = Some(chart.clone());
        }
    }

    fn chart_path(&self, cfg: &Config) -> Result<Option<PathBuf>, CliError> {
        match (&self.chart, &cfg.output.chart, &cfg.output.csv) {
            (None, None, _) => Ok(None),
            (_, Some(p), _) => Ok(Some(p.clone())),
            (Some(_), None, Some(csv)) => Ok(Some(csv.with_extension("svg"))),
            (Some(_), None, None) => Err(CliError::Config("--chart needs a path, output.chart or --out".into())),
        }
    }
}

/// The data distribution and the oracle the samplers query.
pub struct Problem {
    pub q0: Pmf,
    pub exact: ExactScore,
    perturbation: Option<(f64, f64, u64)>,
}

impl Problem {
    pub fn build(cfg: &Config) -> Result<Self, CliError> {
        let space = cfg.space()?;
        let q0 = cfg.target_spec()?.build(space, &mut seeded(cfg.target_seed()))?;
        let perturbation = match cfg.eval.score {
            ScoreName::Exact => None,
            ScoreName::Perturbed => Some((cfg.eval.score_bound, cfg.eval.score_sigma, cfg.eval.score_seed)),
        };
        Ok(Self { exact: ExactScore::new(q0.clone()), q0, perturbation })
    }

    pub fn oracle(&self) -> Result<Box<dyn ScoreOracle + '_>, CliError> {
        Ok(match self.perturbation {
            None => Box::new(&self.exact),
            Some((m, sigma, seed)) => Box::new(PerturbedScore::new(&self.exact, m, sigma, seed)?),
        })
    }

    pub fn reference(&self, cfg: &Config, delta: f64) -> Result<Pmf, CliError> {
        Ok(match cfg.eval.reference {
            ReferenceName::QDelta => (*self.exact.marginal(delta)?).clone(),
            ReferenceName::Q0 => self.q0.clone(),
        })
    }
}

/// Plans every (method, budget) pair up front so infeasible budgets fail
/// before any computation.
pub fn plan_all(cfg: &Config, nfe: &[usize]) -> Result<Vec<(Method, usize, Plan)>, CliError> {
    cfg.validate()?;
    let space = cfg.space()?;
    let opts = cfg.plan_options()?;
    let mut out = Vec::new();
    for method in cfg.methods() {
        for &n in nfe {
            let p =
                plan(method, n, &opts, &space).map_err(|e| CliError::Config(format!("{method} at NFE {n}: {e}")))?;
            out.push((method, n, p));
        }
    }
    Ok(out)
}

/// One record per (method, budget), methods outermost.
pub fn run_records(cfg: &Config, nfe: &[usize]) -> Result<Vec<ExperimentRecord>, CliError> {
    let plans = plan_all(cfg, nfe)?;
    let (_, delta) = cfg.horizon()?;
    let problem = Problem::build(cfg)?;
    let oracle = problem.oracle()?;
    let reference = problem.reference(cfg, delta)?;
    let s = reference.space().s();
    let seed = cfg.sampler.seed;
    let mut records = Vec::with_capacity(plans.len());
    for (method, n, p) in &plans {
        log::info!("{method} at NFE {n}");
        let start = Instant::now();
        let (tv, hellinger) = match cfg.eval.mode {
            EvalMode::Exact => {
                let law = terminal_law(p, &oracle)?;
                let h = if cfg.eval.hellinger { Some(hellinger_laws(&law, &reference)?) } else { None };
                (tv_distance(&law, &reference)?, h)
            }
            EvalMode::MonteCarlo => {
                let rng = seeded(hash_words([seed, method_index(*method), *n as u64]));
                let samples = terminal_samples(p, &oracle, cfg.eval.chains, &rng)?;
                let empirical = Pmf::empirical(*reference.space(), &samples)?;
                let h = if cfg.eval.hellinger {
                    Some(hellinger_histogram(&samples, Reference::Law(&reference), s)?)
                } else {
                    None
                };
                (tv_distance(&empirical, &reference)?, h)
            }
        };
        records.push(ExperimentRecord {
            method: method.name().to_string(),
            seed,
            nfe: *n,
            tv,
            hellinger,
            wallclock_ns: u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX),
        });
    }
    Ok(records)
}

fn method_index(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).unwrap_or(0) as u64
}

fn write_outputs(opts: &GlobalOpts, cfg: &Config, records: &[ExperimentRecord]) -> Result<(), CliError> {
    let chart = opts.chart_path(cfg)?;
    let bytes = to_csv(records)?;
    emit(&bytes, cfg.output.csv.as_deref())?;
    if let Some(path) = chart {
        std::fs::write(&path, render_svg(records))
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

pub fn cmd_run(opts: &GlobalOpts) -> Result<(), CliError> {
    let cfg = opts.load()?;
    let records = run_records(&cfg, &cfg.sampler.nfe)?;
    write_outputs(opts, &cfg, &records)
}

pub fn cmd_sweep_nfe(opts: &GlobalOpts, nfe: &[usize]) -> Result<(), CliError> {
    let mut cfg = opts.load()?;
    if !nfe.is_empty() {
        cfg.sampler.nfe = nfe.to_vec();
    }
    let records = run_records(&cfg, &cfg.sampler.nfe)?;
    write_outputs(opts, &cfg, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionRow {
    pub seed: u64,
    pub time: f64,
    pub rho_eigen: f64,
    pub rho_tv_fit: Option<f64>,
}

/// Spectral gap of the random-scan Gibbs kernel at each time, with the
/// tv-decay fit alongside. A systematic scan in the config is replaced by the
/// uniform random scan, since the estimators need a reversible kernel.
pub fn contraction_rows(cfg: &Config, times: &[f64]) -> Result<Vec<ContractionRow>, CliError> {
    let problem = Problem::build(cfg)?;
    let mut gibbs = cfg.gibbs()?;
    if gibbs.scan == Scan::Systematic {
        gibbs.scan = Scan::uniform_random(cfg.target.d);
    }
    let gibbs = GibbsCorrectorConfig { schedule: Schedule::Constant(1), ..gibbs };
    let oracle = problem.oracle()?;
    times
        .iter()
        .map(|&t| {
            let kernel = gibbs_kernel_exact(t, &gibbs, &oracle)?;
            let target = problem.exact.marginal(t)?;
            let eigen = spectral_gap(&kernel, &target)?.rho;
            let steps = decay_steps(eigen);
            let init = least_likely_point(&target)?;
            let fit = tv_decay_rate(&kernel, &target, &init, steps).ok().map(|e| e.rho);
            Ok(ContractionRow { seed: cfg.sampler.seed, time: t, rho_eigen: eigen, rho_tv_fit: fit })
        })
        .collect()
}

/// Enough steps to bring TV from 1 to about 1e-9 at rate `rho`.
pub fn decay_steps(rho: f64) -> usize {
    if !(rho > 0.0 && rho < 1.0) {
        return 10;
    }
    ((1e-9f64).ln() / (1.0 - rho).ln()).ceil().clamp(10.0, 20_000.0) as usize
}

/// Point mass on the least likely state, which loads the slow modes.
pub fn least_likely_point(target: &Pmf) -> Result<Pmf, CliError> {
    let idx = target.mass().iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    Ok(Pmf::point(*target.space(), idx)?)
}

pub fn cmd_contraction(opts: &GlobalOpts, time: Option<f64>) -> Result<(), CliError> {
    let cfg = opts.load()?;
    cfg.validate()?;
    let (t_max, delta) = cfg.horizon()?;
    let times = match time.or(cfg.eval.time) {
        Some(t) if t > 0.0 && t.is_finite() => vec![t],
        Some(t) => return Err(CliError::Config(format!("contraction time {t} must be positive"))),
        None => {
            let grid = TimeGrid::with_steps(t_max, delta, 8)?;
            grid.points().iter().rev().copied().collect()
        }
    };
    let rows = contraction_rows(&cfg, &times)?;
    emit(&to_csv(&rows)?, cfg.output.csv.as_deref())
}

pub fn cmd_target_dump(opts: &GlobalOpts) -> Result<(), CliError> {
    let cfg = opts.load()?;
    cfg.space()?;
    let problem = Problem::build(&cfg)?;
    let mut bytes = Vec::new();
    problem.q0.write_text(&mut bytes)?;
    emit(&bytes, cfg.output.csv.as_deref())
}
