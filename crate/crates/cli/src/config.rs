//! Experiment configuration: a sectioned TOML file plus `--set` overrides.

use std::path::{Path, PathBuf};

use gadd_core::corrector::{
    Anchor, CorrectorStep, EstimatorVariant, GibbsCorrectorConfig, Scan, Schedule, ScorePolicy,
};
use gadd_core::experiment::{Method, Placement, PlanOptions};
use gadd_core::pipeline::default_horizon;
use gadd_core::predictor::OverflowPolicy;
use gadd_core::targets::TargetSpec;
use gadd_core::StateSpace;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub target: TargetSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub corrector: CorrectorSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    UniformBand,
    Ar,
    Mixture,
    File,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub kind: TargetKind,
    pub d: usize,
    pub s: usize,
    /// Falls back to the run seed.
    pub seed: Option<u64>,
    #[serde(default = "defaults::order")]
    pub order: usize,
    #[serde(default = "defaults::one")]
    pub concentration: f64,
    #[serde(default = "defaults::one")]
    pub lo: f64,
    #[serde(default = "defaults::three")]
    pub hi: f64,
    /// Defaults to `d`.
    pub support: Option<usize>,
    #[serde(default)]
    pub weights: Vec<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    /// Accuracy level that sets the default horizon.
    #[serde(default = "defaults::eps")]
    pub eps: f64,
    pub t_max: Option<f64>,
    pub delta: Option<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { eps: defaults::eps(), t_max: None, delta: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Euler,
    Gadd,
    Ctmc,
    Gibbs,
}

impl From<MethodName> for Method {
    fn from(m: MethodName) -> Self {
        match m {
            MethodName::Euler => Method::Euler,
            MethodName::Gadd => Method::Gadd,
            MethodName::Ctmc => Method::Ctmc,
            MethodName::Gibbs => Method::Gibbs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementName {
    Spread,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowName {
    Strict,
    Clamp,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "defaults::methods")]
    pub methods: Vec<MethodName>,
    #[serde(default = "defaults::nfe")]
    pub nfe: Vec<usize>,
    #[serde(default = "defaults::half")]
    pub predictor_fraction: f64,
    #[serde(default = "defaults::placement")]
    pub placement: PlacementName,
    #[serde(default = "defaults::overflow")]
    pub overflow: OverflowName,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            methods: defaults::methods(),
            nfe: defaults::nfe(),
            predictor_fraction: defaults::half(),
            placement: defaults::placement(),
            overflow: defaults::overflow(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanName {
    Systematic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Fresh,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    Anchor,
    InverseSum,
    Averaged,
    SumNormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepMode {
    Relative,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectorSection {
    #[serde(default = "defaults::scan")]
    pub scan: ScanName,
    /// Random-scan position weights; uniform when absent.
    pub weights: Option<Vec<f64>>,
    #[serde(default = "defaults::policy")]
    pub policy: PolicyName,
    #[serde(default = "defaults::estimator")]
    pub estimator: EstimatorName,
    /// Anchor token for the anchor estimator; the current token when absent.
    pub anchor: Option<usize>,
    pub threshold: Option<f64>,
    #[serde(default)]
    pub strict_nfe: bool,
    #[serde(default = "defaults::stale_steps")]
    pub stale_steps: usize,
    #[serde(default = "defaults::one")]
    pub ctmc_step: f64,
    #[serde(default = "defaults::step_mode")]
    pub ctmc_step_mode: StepMode,
}

impl Default for CorrectorSection {
    fn default() -> Self {
        Self {
            scan: defaults::scan(),
            weights: None,
            policy: defaults::policy(),
            estimator: defaults::estimator(),
            anchor: None,
            threshold: None,
            strict_nfe: false,
            stale_steps: defaults::stale_steps(),
            ctmc_step: 1.0,
            ctmc_step_mode: defaults::step_mode(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreName {
    Exact,
    Perturbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceName {
    /// The forward marginal at the terminal time.
    QDelta,
    /// The data distribution itself.
    Q0,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "defaults::mode")]
    pub mode: EvalMode,
    #[serde(default = "defaults::chains")]
    pub chains: usize,
    #[serde(default = "defaults::score")]
    pub score: ScoreName,
    #[serde(default = "defaults::score_bound")]
    pub score_bound: f64,
    #[serde(default)]
    pub score_sigma: f64,
    #[serde(default)]
    pub score_seed: u64,
    #[serde(default = "defaults::reference")]
    pub reference: ReferenceName,
    /// Adds the pooled-histogram Hellinger column.
    #[serde(default = "defaults::yes")]
    pub hellinger: bool,
    /// Time for the `contraction` command; a gap profile over the grid when absent.
    pub time: Option<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            mode: defaults::mode(),
            chains: defaults::chains(),
            score: defaults::score(),
            score_bound: defaults::score_bound(),
            score_sigma: 0.0,
            score_seed: 0,
            reference: defaults::reference(),
            hellinger: true,
            time: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<PathBuf>,
    pub chart: Option<PathBuf>,
}

mod defaults {
    use super::*;

    pub fn order() -> usize {
        2
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn three() -> f64 {
        3.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn half() -> f64 {
        0.5
    }
    pub fn eps() -> f64 {
        0.1
    }
    pub fn methods() -> Vec<MethodName> {
        vec![MethodName::Euler, MethodName::Gadd]
    }
    pub fn nfe() -> Vec<usize> {
        vec![16, 32, 64]
    }
    pub fn placement() -> PlacementName {
        PlacementName::Spread
    }
    pub fn overflow() -> OverflowName {
        OverflowName::Clamp
    }
    pub fn scan() -> ScanName {
        ScanName::Systematic
    }
    pub fn policy() -> PolicyName {
        PolicyName::Fresh
    }
    pub fn estimator() -> EstimatorName {
        EstimatorName::Anchor
    }
    pub fn stale_steps() -> usize {
        40
    }
    pub fn step_mode() -> StepMode {
        StepMode::Relative
    }
    pub fn mode() -> EvalMode {
        EvalMode::Exact
    }
    pub fn chains() -> usize {
        10_000
    }
    pub fn score() -> ScoreName {
        ScoreName::Exact
    }
    pub fn score_bound() -> f64 {
        1e6
    }
    pub fn reference() -> ReferenceName {
        ReferenceName::QDelta
    }
}

/// Parses `section.key=value`, reading the value as a TOML literal when it
/// is one and as a bare string otherwise.
pub fn parse_override(raw: &str) -> Result<(String, String, toml::Value), CliError> {
    let (path, value) = raw
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {raw:?} is not of the form section.key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| CliError::Config(format!("override key {path:?} is not of the form section.key")))?;
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((section.to_string(), key.to_string(), parsed))
}

impl Config {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse error: {e}")))?;
        for raw in overrides {
            let (section, key, value) = parse_override(raw)?;
            let entry = table.entry(section.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(CliError::Config(format!("{section} is not a section")));
            };
            sec.insert(key, value);
        }
        toml::Value::Table(table).try_into().map_err(|e| CliError::Config(format!("config error: {e}")))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn space(&self) -> Result<StateSpace, CliError> {
        StateSpace::new(self.target.d, self.target.s).map_err(config_err)
    }

    pub fn target_seed(&self) -> u64 {
        self.target.seed.unwrap_or(self.sampler.seed)
    }

    pub fn target_spec(&self) -> Result<TargetSpec, CliError> {
        let t = &self.target;
        Ok(match t.kind {
            TargetKind::UniformBand => TargetSpec::UniformBand { lo: t.lo, hi: t.hi },
            TargetKind::Ar => TargetSpec::Autoregressive { order: t.order, concentration: t.concentration },
            TargetKind::Mixture => {
                TargetSpec::SingletonMixture { support: t.support.unwrap_or(t.d), weights: t.weights.clone() }
            }
            TargetKind::File => TargetSpec::File(
                t.path.clone().ok_or_else(|| CliError::Config("file target needs target.path".into()))?,
            ),
        })
    }

    /// `(T, delta)`: explicit values win over the accuracy-based defaults.
    pub fn horizon(&self) -> Result<(f64, f64), CliError> {
        let space = self.space()?;
        let (t_def, d_def) = default_horizon(&space, self.grid.eps).map_err(config_err)?;
        let t_max = self.grid.t_max.unwrap_or(t_def);
        let delta = self.grid.delta.unwrap_or(d_def);
        if !(delta > 0.0 && t_max > delta && t_max.is_finite()) {
            return Err(CliError::Config(format!("need 0 < delta < T, got delta = {delta}, T = {t_max}")));
        }
        Ok((t_max, delta))
    }

    pub fn gibbs(&self) -> Result<GibbsCorrectorConfig, CliError> {
        let c = &self.corrector;
        let d = self.target.d;
        let scan = match c.scan {
            ScanName::Systematic => Scan::Systematic,
            ScanName::Random => match &c.weights {
                Some(w) => Scan::Random { weights: w.clone() },
                None => Scan::uniform_random(d),
            },
        };
        let estimator = match c.estimator {
            EstimatorName::Anchor => EstimatorVariant::AnchorRatio(match c.anchor {
                Some(b) => Anchor::Token(b),
                None => Anchor::Current,
            }),
            EstimatorName::InverseSum => EstimatorVariant::InverseSum,
            EstimatorName::Averaged => EstimatorVariant::AveragedRatio,
            EstimatorName::SumNormalized => EstimatorVariant::SumNormalized,
        };
        let cfg = GibbsCorrectorConfig {
            scan,
            schedule: Schedule::Constant(0),
            estimator,
            policy: match c.policy {
                PolicyName::Fresh => ScorePolicy::Fresh,
                PolicyName::Stale => ScorePolicy::Stale,
            },
            threshold: c.threshold,
            strict_nfe: c.strict_nfe,
        };
        cfg.validate(&self.space()?).map_err(config_err)?;
        Ok(cfg)
    }

    pub fn plan_options(&self) -> Result<PlanOptions, CliError> {
        let (t_max, delta) = self.horizon()?;
        let mut opts = PlanOptions::new(t_max, delta, self.gibbs()?);
        opts.predictor_fraction = self.sampler.predictor_fraction;
        opts.placement = match self.sampler.placement {
            PlacementName::Spread => Placement::Spread,
            PlacementName::Final => Placement::Final,
        };
        opts.stale_steps = self.corrector.stale_steps;
        opts.ctmc_step = match self.corrector.ctmc_step_mode {
            StepMode::Relative => CorrectorStep::Relative(self.corrector.ctmc_step),
            StepMode::Fixed => CorrectorStep::Fixed(self.corrector.ctmc_step),
        };
        if !(self.corrector.ctmc_step > 0.0) {
            return Err(CliError::Config("corrector.ctmc_step must be positive".into()));
        }
        opts.overflow = match self.sampler.overflow {
            OverflowName::Strict => OverflowPolicy::Strict,
            OverflowName::Clamp => OverflowPolicy::Clamp,
        };
        Ok(opts)
    }

    pub fn methods(&self) -> Vec<Method> {
        self.sampler.methods.iter().map(|&m| m.into()).collect()
    }

    /// Semantic checks that do not need any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        self.space()?;
        self.target_spec()?;
        self.plan_options()?;
        if self.sampler.methods.is_empty() {
            return Err(CliError::Config("sampler.methods is empty".into()));
        }
        if self.sampler.nfe.is_empty() || self.sampler.nfe.contains(&0) {
            return Err(CliError::Config("sampler.nfe must list positive budgets".into()));
        }
        if self.eval.mode == EvalMode::MonteCarlo && self.eval.chains == 0 {
            return Err(CliError::Config("eval.chains must be positive".into()));
        }
        if self.eval.score == ScoreName::Perturbed && !(self.eval.score_bound > 1.0 && self.eval.score_sigma >= 0.0) {
            return Err(CliError::Config("perturbed scores need score_bound > 1 and score_sigma >= 0".into()));
        }
        Ok(())
    }
}

fn config_err(e: gadd_core::Error) -> CliError {
    CliError::Config(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[target]\nkind = \"ar\"\nd = 3\ns = 2\n";

    #[test]
    fn minimal_config_fills_defaults() {
        let c = Config::from_toml_str(MINIMAL, &[]).unwrap();
        assert_eq!(c.sampler.nfe, vec![16, 32, 64]);
        assert_eq!(c.corrector.scan, ScanName::Systematic);
        assert_eq!(c.eval.mode, EvalMode::Exact);
        c.validate().unwrap();
    }

    #[test]
    fn overrides_apply_and_create_sections() {
        let sets =
            vec!["sampler.nfe=[8, 16]".to_string(), "corrector.scan=random".to_string(), "grid.eps = 0.05".to_string()];
        let c = Config::from_toml_str(MINIMAL, &sets).unwrap();
        assert_eq!(c.sampler.nfe, vec![8, 16]);
        assert_eq!(c.corrector.scan, ScanName::Random);
        assert_eq!(c.grid.eps, 0.05);
    }

    #[test]
    fn bad_inputs_are_config_errors() {
        assert!(Config::from_toml_str("[target\n", &[]).is_err());
        assert!(Config::from_toml_str(&format!("{MINIMAL}typo = 1\n"), &[]).is_err());
        assert!(Config::from_toml_str(MINIMAL, &["nodot=1".into()]).is_err());
        assert!(Config::from_toml_str(MINIMAL, &["target.kind=unknown".into()]).is_err());
        let c = Config::from_toml_str(MINIMAL, &["grid.delta=50".into()]).unwrap();
        assert!(c.validate().is_err());
        let c =
            Config::from_toml_str(MINIMAL, &["corrector.weights=[0.5, 0.5]".into(), "corrector.scan=random".into()])
                .unwrap();
        assert!(c.validate().is_err());
    }
}
