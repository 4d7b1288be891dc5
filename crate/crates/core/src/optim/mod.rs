//! Local Adam / Local SGDM engines, their minibatch baselines, and the
//! synchronization step shared by all of them.

mod appendix_d;
mod engine;

pub use appendix_d::{appendix_d_experiment, AppendixDOutcome};
pub use engine::{minibatch_step, run, FinalState, Observer, StepView};

use std::fmt;
use std::str::FromStr;

use crate::clip::ClipRule;
use crate::error::{Error, Result};
use crate::vector::{worker_mean, DiagPrecond, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    LocalAdam,
    LocalSgdm,
    MinibatchAdam,
    MinibatchSgdm,
    PlainSgd,
}

impl Family {
    pub const ALL: [Family; 5] =
        [Family::LocalAdam, Family::LocalSgdm, Family::MinibatchAdam, Family::MinibatchSgdm, Family::PlainSgd];

    pub fn is_minibatch(self) -> bool {
        matches!(self, Family::MinibatchAdam | Family::MinibatchSgdm)
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LocalAdam => "local_adam",
            Family::LocalSgdm => "local_sgdm",
            Family::MinibatchAdam => "minibatch_adam",
            Family::MinibatchSgdm => "minibatch_sgdm",
            Family::PlainSgd => "plain_sgd",
        }
    }

    /// The minibatch baseline spending the same budget, if any.
    pub fn minibatch_counterpart(self) -> Option<Family> {
        match self {
            Family::LocalAdam => Some(Family::MinibatchAdam),
            Family::LocalSgdm => Some(Family::MinibatchSgdm),
            _ => None,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL.into_iter().find(|f| f.name() == s).ok_or_else(|| Error::InvalidParameter {
            name: "family",
            reason: format!("unknown optimizer family `{s}`"),
        })
    }
}

/// Where minibatch baselines clip: once on the averaged gradient, or on each
/// sample before averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MinibatchClip {
    #[default]
    Average,
    PerSample,
}

/// The step-size and moment parameters actually used by the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub clip: ClipRule,
    pub workers: usize,
    pub local_steps: usize,
    pub rounds: usize,
    pub family: Family,
    pub minibatch_clip: MinibatchClip,
    /// Run the worker loops of a round on the rayon pool.
    pub parallel_workers: bool,
}

impl OptimizerConfig {
    pub fn new(family: Family, eta: f64, workers: usize, local_steps: usize, rounds: usize) -> Self {
        Self {
            eta,
            beta1: 0.9,
            beta2: 0.999,
            lambda: 1.0,
            clip: ClipRule::off(),
            workers,
            local_steps,
            rounds,
            family,
            minibatch_clip: MinibatchClip::Average,
            parallel_workers: false,
        }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_clip(mut self, clip: ClipRule) -> Self {
        self.clip = clip;
        self
    }

    pub fn with_family(mut self, family: Family) -> Self {
        self.family = family;
        self
    }

    pub fn with_parallel_workers(mut self, on: bool) -> Self {
        self.parallel_workers = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(Error::InvalidParameter { name, reason });
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be finite and nonnegative, got {}", self.eta));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", format!("must lie in [0, 1), got {}", self.beta1));
        }
        if !(self.beta2 > 0.0 && self.beta2 <= 1.0) {
            return bad("beta2", format!("must lie in (0, 1], got {}", self.beta2));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be positive, got {}", self.lambda));
        }
        for (name, v) in [("workers", self.workers), ("local_steps", self.local_steps), ("rounds", self.rounds)] {
            if v == 0 {
                return bad(name, "must be at least 1".into());
            }
        }
        Ok(())
    }

    /// SGDM families run the Adam update with `beta2 = 1, lambda = 1`; plain
    /// SGD additionally drops momentum.
    pub fn hyper(&self) -> Hyper {
        let base = Hyper { eta: self.eta, beta1: self.beta1, beta2: self.beta2, lambda: self.lambda };
        match self.family {
            Family::LocalAdam | Family::MinibatchAdam => base,
            Family::LocalSgdm | Family::MinibatchSgdm => Hyper { beta2: 1.0, lambda: 1.0, ..base },
            Family::PlainSgd => Hyper { beta1: 0.0, beta2: 1.0, lambda: 1.0, ..base },
        }
    }

    /// Gradient evaluations per worker, `K R`.
    pub fn gradient_calls_per_worker(&self) -> usize {
        self.local_steps * self.rounds
    }

    /// Gradient evaluations across the cluster, `K M R`.
    pub fn total_gradient_calls(&self) -> usize {
        self.local_steps * self.workers * self.rounds
    }

    /// Optimizer steps between two communications.
    pub fn steps_per_round(&self) -> usize {
        if self.family.is_minibatch() {
            1
        } else {
            self.local_steps
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerState {
    pub x: Vector,
    pub u: Vector,
    pub v: Vector,
}

impl WorkerState {
    pub fn at(x0: Vector) -> Self {
        let d = x0.dim();
        Self { x: x0, u: Vector::zeros(d), v: Vector::zeros(d) }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.u.is_finite() && self.v.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterState {
    pub workers: Vec<WorkerState>,
    pub round: usize,
    /// Second moment shared by all workers after the last communication.
    pub averaged_v: Vector,
}

impl ClusterState {
    pub fn new(x0: Vector, workers: usize) -> Self {
        let d = x0.dim();
        Self { workers: vec![WorkerState::at(x0); workers], round: 0, averaged_v: Vector::zeros(d) }
    }

    /// `H_r = diag(sqrt(v_r + lambda^2))` frozen at the start of the round.
    pub fn round_precond(&self, lambda: f64) -> Result<DiagPrecond> {
        DiagPrecond::from_second_moment(&self.averaged_v, lambda)
    }

    pub fn mean_x(&self) -> Result<Vector> {
        worker_mean(self.workers.iter().map(|w| &w.x))
    }
}

/// One Adam-style update without bias correction:
/// `u' = b1 u + (1-b1) g`, `v' = b2 v + (1-b2) g^2`, `x' = x - eta u' / sqrt(v' + lambda^2)`.
pub fn local_step(w: &WorkerState, ghat: &Vector, hyper: &Hyper) -> Result<WorkerState> {
    ghat.check_dim(w.x.dim())?;
    let Hyper { eta, beta1, beta2, lambda } = *hyper;
    let lambda_sq = lambda * lambda;
    let d = w.x.dim();
    let (mut x, mut u, mut v) = (Vec::with_capacity(d), Vec::with_capacity(d), Vec::with_capacity(d));
    for i in 0..d {
        let g = ghat[i];
        let ui = beta1 * w.u[i] + (1.0 - beta1) * g;
        let vi = beta2 * w.v[i] + (1.0 - beta2) * g * g;
        x.push(w.x[i] - eta * ui / (vi + lambda_sq).sqrt());
        u.push(ui);
        v.push(vi);
    }
    Ok(WorkerState { x: Vector::from_raw(x), u: Vector::from_raw(u), v: Vector::from_raw(v) })
}

/// Replaces every worker's `(x, u, v)` by the worker mean and records the
/// new common second moment.
pub fn communicate(cs: &ClusterState) -> Result<ClusterState> {
    let x = worker_mean(cs.workers.iter().map(|w| &w.x))?;
    let u = worker_mean(cs.workers.iter().map(|w| &w.u))?;
    let v = worker_mean(cs.workers.iter().map(|w| &w.v))?;
    let shared = WorkerState { x, u, v: v.clone() };
    Ok(ClusterState { workers: vec![shared; cs.workers.len()], round: cs.round + 1, averaged_v: v })
}
