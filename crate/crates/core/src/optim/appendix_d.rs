use rayon::prelude::*;

use super::{local_step, Hyper, WorkerState};
use crate::clip::ClipRule;
use crate::error::{Error, Result};
use crate::noise::{adversarial_noise_appendix_d, AdversarialSetup, RngStream};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixDOutcome {
    pub trials: usize,
    pub failures: usize,
    pub failure_rate: f64,
    /// Binomial standard error of `failure_rate`.
    pub std_err: f64,
    pub spike: f64,
    /// `1 / A^alpha` when the adversary is active, else 0.
    pub analytic_rate: f64,
}

/// Runs SGD (optionally clipped) on `f(x) = L x^2 / 2` against the
/// adversarial final-step noise and counts trials ending with
/// `f(x_T) - f_* >= eps`. Trial `i` draws from stream `(seed, i, 0, t)`.
pub fn appendix_d_experiment(setup: &AdversarialSetup, clip: &ClipRule, n_trials: usize, seed: u64) -> Result<AppendixDOutcome> {
    setup.validate()?;
    if setup.eta > 1.0 / setup.l {
        return Err(Error::InvalidParameter {
            name: "eta",
            reason: format!("must satisfy eta <= 1/L = {}, got {}", 1.0 / setup.l, setup.eta),
        });
    }
    if n_trials == 0 {
        return Err(Error::InvalidParameter { name: "n_trials", reason: "must be at least 1".into() });
    }
    let hyper = Hyper { eta: setup.eta, beta1: 0.0, beta2: 1.0, lambda: 1.0 };
    let trial = |i: usize| -> Result<bool> {
        let mut w = WorkerState::at(Vector::from_raw(vec![setup.x0]));
        for t in 0..setup.total_steps {
            let xi = adversarial_noise_appendix_d(t, setup, RngStream::new(seed, i as u64, 0, t as u64))?;
            let g = Vector::from_raw(vec![setup.l * w.x[0] - setup.sigma * xi]);
            w = local_step(&w, &clip.apply(&g), &hyper)?;
        }
        Ok(0.5 * setup.l * w.x[0] * w.x[0] >= setup.eps)
    };
    let outcomes: Vec<Result<bool>> = (0..n_trials).into_par_iter().map(trial).collect();
    let mut failures = 0usize;
    for o in outcomes {
        failures += o? as usize;
    }
    let rate = failures as f64 / n_trials as f64;
    let active = setup.sigma > 0.0 && setup.contraction_reaches_target();
    let spike = if setup.sigma > 0.0 { setup.spike() } else { 0.0 };
    Ok(AppendixDOutcome {
        trials: n_trials,
        failures,
        failure_rate: rate,
        std_err: (rate * (1.0 - rate) / n_trials as f64).sqrt(),
        spike,
        analytic_rate: if active { spike.powf(-setup.alpha) } else { 0.0 },
    })
}
