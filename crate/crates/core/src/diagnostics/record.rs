use std::fmt;
use std::str::FromStr;

use super::moreau::{moreau_grad, DEFAULT_PROX_TOL};
use super::z::ZTracker;
use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::optim::{FinalState, Observer, OptimizerConfig, StepView, WorkerState};
use crate::vector::{worker_mean, Vector};

/// Largest pairwise Euclidean distance between worker iterates.
pub fn consensus_error(workers: &[WorkerState]) -> Result<f64> {
    if workers.is_empty() {
        return Err(Error::Empty("worker list"));
    }
    let mut worst = 0.0f64;
    for (i, a) in workers.iter().enumerate() {
        for b in &workers[i + 1..] {
            worst = worst.max(a.x.distance(&b.x)?);
        }
    }
    Ok(worst)
}

/// Diagnostics at one `(r, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEntry {
    pub round: usize,
    pub step: usize,
    pub mean_x: Vector,
    pub mean_z: Vector,
    /// `f(z_bar) - f_*`
    pub f_gap: f64,
    pub consensus_err: f64,
    /// `||grad f_gamma^{H_r}(z_bar)||^2_{H_r^{-1}}`
    pub moreau_grad_nsq: f64,
    /// `||grad f(z_bar)||^2`
    pub grad_nsq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    FGap,
    ConsensusErr,
    MoreauGradNsq,
    GradNsq,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::FGap, Metric::ConsensusErr, Metric::MoreauGradNsq, Metric::GradNsq];

    pub fn name(self) -> &'static str {
        match self {
            Metric::FGap => "f_gap",
            Metric::ConsensusErr => "consensus_err",
            Metric::MoreauGradNsq => "moreau_grad_nsq",
            Metric::GradNsq => "grad_nsq",
        }
    }

    pub fn of(self, e: &TrajectoryEntry) -> f64 {
        match self {
            Metric::FGap => e.f_gap,
            Metric::ConsensusErr => e.consensus_err,
            Metric::MoreauGradNsq => e.moreau_grad_nsq,
            Metric::GradNsq => e.grad_nsq,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::InvalidParameter {
            name: "metric",
            reason: format!("unknown metric `{s}`"),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub config: OptimizerConfig,
    pub entries: Vec<TrajectoryEntry>,
    /// Averaged iterate after the last communication.
    pub final_x: Vector,
    pub final_f_gap: f64,
    /// Smallest `f_gap` seen, including the final iterate.
    pub best_f_gap: f64,
    /// Gap at the exponentially weighted average of `z_bar` (strongly convex case only).
    pub xhat_f_gap: Option<f64>,
    /// Effective `lambda` of the run.
    pub lambda: f64,
}

impl TrajectoryRecord {
    pub fn series(&self, metric: Metric) -> Vec<f64> {
        self.entries.iter().map(|e| metric.of(e)).collect()
    }

    /// `lambda / t * sum_{j<t} ||grad f_gamma^{H_r}(z_bar_j)||^2_{H_r^{-1}}` for every prefix.
    pub fn running_moreau_average(&self) -> Vec<f64> {
        let mut sum = 0.0;
        self.entries
            .iter()
            .enumerate()
            .map(|(i, e)| {
                sum += e.moreau_grad_nsq;
                self.lambda * sum / (i + 1) as f64
            })
            .collect()
    }

    pub fn peak(&self, metric: Metric) -> f64 {
        self.entries.iter().map(|e| metric.of(e)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecorderSettings {
    /// Moreau parameter; `None` means `lambda / L`.
    pub gamma: Option<f64>,
    pub prox_tol: f64,
}

impl Default for RecorderSettings {
    fn default() -> Self {
        Self { gamma: None, prox_tol: DEFAULT_PROX_TOL }
    }
}

/// Observer that evaluates every diagnostic along a run.
#[derive(Debug)]
pub struct TrajectoryRecorder<'a> {
    objective: &'a Objective,
    config: OptimizerConfig,
    seed: u64,
    settings: RecorderSettings,
    z: ZTracker,
    entries: Vec<TrajectoryEntry>,
}

impl<'a> TrajectoryRecorder<'a> {
    pub fn new(objective: &'a Objective, config: &OptimizerConfig, seed: u64, settings: RecorderSettings) -> Self {
        let beta1 = config.hyper().beta1;
        Self { objective, config: config.clone(), seed, settings, z: ZTracker::new(beta1), entries: Vec::new() }
    }
}

impl Observer for TrajectoryRecorder<'_> {
    type Output = TrajectoryRecord;

    fn observe(&mut self, view: &StepView<'_>) -> Result<()> {
        let xs: Vec<Vector> = view.workers.iter().map(|w| w.x.clone()).collect();
        let zs = self.z.advance(&xs, view.step == 0)?;
        let mean_x = worker_mean(&xs)?;
        let mean_z = worker_mean(&zs)?;
        let k = self.objective.constants();
        let gamma = self.settings.gamma.unwrap_or(view.hyper.lambda / k.l);
        let moreau = moreau_grad(self.objective, &mean_z, view.precond, gamma, self.settings.prox_tol)?;
        self.entries.push(TrajectoryEntry {
            round: view.round,
            step: view.step,
            f_gap: self.objective.eval(&mean_z)? - k.f_star,
            consensus_err: consensus_error(view.workers)?,
            moreau_grad_nsq: moreau.weighted_norm_sq,
            grad_nsq: self.objective.grad(&mean_z)?.norm_sq(),
            mean_x,
            mean_z,
        });
        Ok(())
    }

    fn finish(self, last: &FinalState) -> Result<TrajectoryRecord> {
        let final_x = last.cluster.mean_x()?;
        let k = self.objective.constants();
        let final_f_gap = self.objective.eval(&final_x)? - k.f_star;
        let best_f_gap = self.entries.iter().map(|e| e.f_gap).fold(final_f_gap, f64::min);
        let xhat_f_gap = match weighted_average_point(&self.entries, last.hyper.eta, k.mu) {
            Some(x) => Some(self.objective.eval(&x?)? - k.f_star),
            None => None,
        };
        Ok(TrajectoryRecord {
            seed: self.seed,
            config: self.config,
            entries: self.entries,
            final_x,
            final_f_gap,
            best_f_gap,
            xhat_f_gap,
            lambda: last.hyper.lambda,
        })
    }
}

/// `sum_j q^{T-j} z_bar_j / sum_j q^{T-j}` with `q = 1 - eta mu / 2`, over
/// the `T` recorded steps. `None` unless `0 < q < 1`.
fn weighted_average_point(entries: &[TrajectoryEntry], eta: f64, mu: f64) -> Option<Result<Vector>> {
    let q = 1.0 - 0.5 * eta * mu;
    if !(q > 0.0 && q < 1.0) || entries.is_empty() {
        return None;
    }
    let d = entries[0].mean_z.dim();
    let t = entries.len();
    let mut acc = vec![0.0; d];
    let mut total = 0.0;
    // scaled by q^{-1} so the newest weight is exactly 1
    for (j, e) in entries.iter().enumerate() {
        let w = q.powi((t - 1 - j) as i32);
        total += w;
        for (a, z) in acc.iter_mut().zip(e.mean_z.iter()) {
            *a += w * z;
        }
    }
    Some(Vector::new(acc.into_iter().map(|a| a / total).collect()))
}
