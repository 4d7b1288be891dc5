//! Experiment configuration files.
//!
//! Configs are TOML documents with five flat sections. Every hyper-parameter
//! accepts either a scalar or an explicit list; lists span the grid.
//!
//! ```toml
//! [objective]
//! kind = "quadratic"            # quadratic | geman_mcclure | counter_example
//! a = [0.1, 0.55, 1.0]          # quadratic: Hessian diagonal
//! b = 0.0                       # quadratic: minimizer (scalar broadcasts)
//! # c = [1.0, 1.0]              # geman_mcclure: term weights
//! # l = 1.0                     # counter_example: curvature
//!
//! [noise]
//! kind = "gaussian"             # gaussian | three_point | student_t
//! sigma = 1.0                   # scalar or per-coordinate list
//! alpha = 4.0
//! # spike = 2.0                 # three_point: spike / sigma ratio
//! # dof = 6.0                   # student_t: degrees of freedom
//! batch = 1
//!
//! [optimizer]
//! families = ["local_sgdm", "minibatch_sgdm"]
//! eta = [0.05, 0.1]
//! beta1 = 0.9
//! beta2 = 0.999
//! lambda = 1.0
//! workers = 4
//! local_steps = 8
//! rounds = 20
//! x0 = 1.0
//! minibatch_clip = "average"    # average | per_sample
//!
//! [clip]
//! mode = "coordinate"           # coordinate | global | off
//! rho = inf
//!
//! [seeds]
//! count = 10                    # or: list = [3, 7, 11]
//! base = 0
//!
//! [output]
//! dir = "out"
//! metric = "final_gap"          # final_gap | xhat_gap | best_gap | moreau_avg | peak_consensus
//! quantile = 0.9
//! tune = "min_median"           # min_median | none
//! # gamma = 0.5                 # Moreau parameter, default lambda / L
//! prox_tol = 1e-8
//! ```

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::clip::{ClipMode, ClipRule};
use crate::noise::{GradientOracle, NoiseKind, NoiseModel};
use crate::objective::Objective;
use crate::optim::{Family, MinibatchClip, OptimizerConfig};
use crate::vector::Vector;

/// A scalar or a list of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(vs) => vs.clone(),
        }
    }
}

impl<T> From<T> for OneOrMany<T> {
    fn from(v: T) -> Self {
        OneOrMany::One(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKindSpec {
    Quadratic,
    GemanMcclure,
    CounterExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<OneOrMany<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    /// Dimension used to broadcast scalar coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindSpec {
    Gaussian,
    ThreePoint,
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKindSpec,
    pub sigma: OneOrMany<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spike: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dof: Option<f64>,
    #[serde(default = "default_one")]
    pub batch: usize,
}

fn default_alpha() -> f64 {
    4.0
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinibatchClipSpec {
    #[default]
    Average,
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub families: OneOrMany<String>,
    pub eta: OneOrMany<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: OneOrMany<f64>,
    #[serde(default = "default_beta2")]
    pub beta2: OneOrMany<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: OneOrMany<f64>,
    pub workers: OneOrMany<usize>,
    pub local_steps: OneOrMany<usize>,
    pub rounds: OneOrMany<usize>,
    pub x0: OneOrMany<f64>,
    #[serde(default)]
    pub minibatch_clip: MinibatchClipSpec,
    #[serde(default)]
    pub parallel_workers: bool,
}

fn default_beta1() -> OneOrMany<f64> {
    OneOrMany::One(0.9)
}

fn default_beta2() -> OneOrMany<f64> {
    OneOrMany::One(0.999)
}

fn default_lambda() -> OneOrMany<f64> {
    OneOrMany::One(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipModeSpec {
    #[default]
    Coordinate,
    Global,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipSpec {
    #[serde(default)]
    pub mode: ClipModeSpec,
    #[serde(default = "default_rho")]
    pub rho: OneOrMany<f64>,
}

fn default_rho() -> OneOrMany<f64> {
    OneOrMany::One(f64::INFINITY)
}

impl Default for ClipSpec {
    fn default() -> Self {
        Self { mode: ClipModeSpec::Coordinate, rho: default_rho() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryMetric {
    /// `f(x_bar_R) - f_*` at the final averaged iterate.
    #[default]
    FinalGap,
    /// Gap at the exponentially weighted average of the `z` sequence.
    XhatGap,
    BestGap,
    /// `lambda` times the mean Moreau-gradient norm over the run.
    MoreauAvg,
    PeakConsensus,
}

impl SummaryMetric {
    pub fn name(self) -> &'static str {
        match self {
            SummaryMetric::FinalGap => "final_gap",
            SummaryMetric::XhatGap => "xhat_gap",
            SummaryMetric::BestGap => "best_gap",
            SummaryMetric::MoreauAvg => "moreau_avg",
            SummaryMetric::PeakConsensus => "peak_consensus",
        }
    }
}

impl fmt::Display for SummaryMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuneRule {
    #[default]
    MinMedian,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub metric: SummaryMetric,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default)]
    pub tune: TuneRule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default = "default_prox_tol")]
    pub prox_tol: f64,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_quantile() -> f64 {
    0.9
}

fn default_prox_tol() -> f64 {
    crate::diagnostics::DEFAULT_PROX_TOL
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            metric: SummaryMetric::default(),
            quantile: default_quantile(),
            tune: TuneRule::default(),
            gamma: None,
            prox_tol: default_prox_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub noise: NoiseSpec,
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub clip: ClipSpec,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// One point of the hyper-parameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub config: OptimizerConfig,
}

fn field_err(field: &str, msg: impl fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{field}: {msg}"))
}

fn nonempty<T: Clone>(field: &str, v: &OneOrMany<T>) -> Result<Vec<T>, HarnessError> {
    let vs = v.to_vec();
    if vs.is_empty() {
        return Err(field_err(field, "list must not be empty"));
    }
    Ok(vs)
}

/// Expands a scalar to `dim` copies or checks a list's length.
fn broadcast(field: &str, v: &OneOrMany<f64>, dim: Option<usize>) -> Result<Vec<f64>, HarnessError> {
    match (v, dim) {
        (OneOrMany::One(x), Some(d)) => Ok(vec![*x; d]),
        (OneOrMany::One(x), None) => Ok(vec![*x]),
        (OneOrMany::Many(xs), Some(d)) if xs.len() != d => {
            Err(field_err(field, format!("expected {d} entries, found {}", xs.len())))
        }
        (OneOrMany::Many(xs), _) if xs.is_empty() => Err(field_err(field, "list must not be empty")),
        (OneOrMany::Many(xs), _) => Ok(xs.clone()),
    }
}

fn vector(field: &str, xs: Vec<f64>) -> Result<Vector, HarnessError> {
    Vector::new(xs).map_err(|e| field_err(field, e))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Dimension implied by the explicit lists in the config.
    fn dim(&self) -> Result<usize, HarnessError> {
        let o = &self.objective;
        if o.kind == ObjectiveKindSpec::CounterExample {
            return Ok(1);
        }
        let lists = [
            ("objective.a", o.a.as_ref()),
            ("objective.b", o.b.as_ref()),
            ("objective.c", o.c.as_ref()),
            ("noise.sigma", Some(&self.noise.sigma)),
            ("optimizer.x0", Some(&self.optimizer.x0)),
        ];
        let mut dim = o.dim;
        for (field, v) in lists {
            if let Some(OneOrMany::Many(xs)) = v {
                match dim {
                    None => dim = Some(xs.len()),
                    Some(d) if d != xs.len() => {
                        return Err(field_err(field, format!("expected {d} entries, found {}", xs.len())))
                    }
                    _ => {}
                }
            }
        }
        dim.filter(|&d| d > 0).ok_or_else(|| field_err("objective.dim", "cannot infer dimension; give a list or `dim`"))
    }

    pub fn build_objective(&self) -> Result<Objective, HarnessError> {
        let d = Some(self.dim()?);
        let o = &self.objective;
        let missing = |f: &str| field_err(f, "required for this objective kind");
        let obj = match o.kind {
            ObjectiveKindSpec::Quadratic => {
                let a = vector("objective.a", broadcast("objective.a", o.a.as_ref().ok_or_else(|| missing("objective.a"))?, d)?)?;
                let b = match &o.b {
                    Some(b) => vector("objective.b", broadcast("objective.b", b, d)?)?,
                    None => Vector::zeros(a.dim()),
                };
                Objective::quadratic(a, b)
            }
            ObjectiveKindSpec::GemanMcclure => {
                let c = vector("objective.c", broadcast("objective.c", o.c.as_ref().ok_or_else(|| missing("objective.c"))?, d)?)?;
                Objective::geman_mcclure(c)
            }
            ObjectiveKindSpec::CounterExample => Objective::counter_example(o.l.ok_or_else(|| missing("objective.l"))?),
        };
        obj.map_err(|e| field_err("objective", e))
    }

    pub fn build_noise(&self) -> Result<NoiseModel, HarnessError> {
        let d = Some(self.dim()?);
        let n = &self.noise;
        let sigma = vector("noise.sigma", broadcast("noise.sigma", &n.sigma, d)?)?;
        let kind = match n.kind {
            NoiseKindSpec::Gaussian => NoiseKind::Gaussian,
            NoiseKindSpec::ThreePoint => NoiseKind::ThreePoint { spike: n.spike.ok_or_else(|| field_err("noise.spike", "required for three_point"))? },
            NoiseKindSpec::StudentT => NoiseKind::StudentT { dof: n.dof.ok_or_else(|| field_err("noise.dof", "required for student_t"))? },
        };
        NoiseModel::new(kind, sigma, n.alpha).map_err(|e| field_err("noise", e))
    }

    pub fn build_oracle(&self) -> Result<GradientOracle, HarnessError> {
        GradientOracle::new(self.build_objective()?, self.build_noise()?, self.noise.batch).map_err(|e| field_err("noise.batch", e))
    }

    pub fn x0(&self) -> Result<Vector, HarnessError> {
        vector("optimizer.x0", broadcast("optimizer.x0", &self.optimizer.x0, Some(self.dim()?))?)
    }

    pub fn seeds(&self) -> Result<Vec<u64>, HarnessError> {
        let s = &self.seeds;
        let seeds = match (&s.list, s.count) {
            (Some(_), Some(_)) => return Err(field_err("seeds", "give either `list` or `count`, not both")),
            (Some(list), None) => list.clone(),
            (None, Some(count)) => {
                let base = s.base.unwrap_or(0);
                (0..count as u64).map(|i| base + i).collect()
            }
            (None, None) => return Err(field_err("seeds", "one of `list` or `count` is required")),
        };
        if seeds.is_empty() {
            return Err(field_err("seeds", "seed list is empty"));
        }
        Ok(seeds)
    }

    pub fn families(&self) -> Result<Vec<Family>, HarnessError> {
        nonempty("optimizer.families", &self.optimizer.families)?
            .iter()
            .map(|f| f.parse::<Family>().map_err(|e| field_err("optimizer.families", e)))
            .collect()
    }

    /// The grid in a fixed nesting order: family, M, K, R, eta, rho, beta1, beta2, lambda.
    pub fn grid(&self) -> Result<Vec<GridPoint>, HarnessError> {
        let o = &self.optimizer;
        let families = self.families()?;
        let etas = nonempty("optimizer.eta", &o.eta)?;
        let beta1s = nonempty("optimizer.beta1", &o.beta1)?;
        let beta2s = nonempty("optimizer.beta2", &o.beta2)?;
        let lambdas = nonempty("optimizer.lambda", &o.lambda)?;
        let workers = nonempty("optimizer.workers", &o.workers)?;
        let local_steps = nonempty("optimizer.local_steps", &o.local_steps)?;
        let rounds = nonempty("optimizer.rounds", &o.rounds)?;
        let rhos = nonempty("clip.rho", &self.clip.rho)?;
        let mode = match self.clip.mode {
            ClipModeSpec::Coordinate => ClipMode::Coordinate,
            ClipModeSpec::Global => ClipMode::Global,
            ClipModeSpec::Off => ClipMode::Off,
        };
        let minibatch_clip = match o.minibatch_clip {
            MinibatchClipSpec::Average => MinibatchClip::Average,
            MinibatchClipSpec::PerSample => MinibatchClip::PerSample,
        };
        let mut points = Vec::new();
        for &family in &families {
            for &m in &workers {
                for &k in &local_steps {
                    for &r in &rounds {
                        for &eta in &etas {
                            for &rho in &rhos {
                                for &b1 in &beta1s {
                                    for &b2 in &beta2s {
                                        for &lam in &lambdas {
                                            let clip = ClipRule::new(mode, rho).map_err(|e| field_err("clip.rho", e))?;
                                            let mut cfg = OptimizerConfig::new(family, eta, m, k, r)
                                                .with_betas(b1, b2)
                                                .with_lambda(lam)
                                                .with_clip(clip)
                                                .with_parallel_workers(o.parallel_workers);
                                            cfg.minibatch_clip = minibatch_clip;
                                            cfg.validate().map_err(|e| field_err("optimizer", e))?;
                                            points.push(GridPoint { index: points.len(), config: cfg });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(points)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.build_oracle()?;
        self.x0()?;
        self.seeds()?;
        self.grid()?;
        let q = self.output.quantile;
        if !(q > 0.0 && q < 1.0) {
            return Err(field_err("output.quantile", format!("must lie in (0, 1), got {q}")));
        }
        if let Some(g) = self.output.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(field_err("output.gamma", format!("must be positive, got {g}")));
            }
        }
        if !(self.output.prox_tol > 0.0) {
            return Err(field_err("output.prox_tol", "must be positive"));
        }
        Ok(())
    }
}
