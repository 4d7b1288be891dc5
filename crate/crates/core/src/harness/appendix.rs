use std::fmt::Write as _;

use super::HarnessError;
use crate::clip::ClipRule;
use crate::noise::AdversarialSetup;
use crate::optim::{appendix_d_experiment, AppendixDOutcome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixDParams {
    pub eps: f64,
    pub l: f64,
    pub eta: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub x0: f64,
    /// `None` picks the smallest `T` whose deterministic contraction lands strictly inside the target.
    pub steps: Option<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Clipping level as a multiple of `sigma`.
    pub rho_factor: f64,
}

impl Default for AppendixDParams {
    fn default() -> Self {
        Self { eps: 0.5, l: 1.0, eta: 0.5, sigma: 2.0, alpha: 4.0, x0: 4.0, steps: None, trials: 100_000, seed: 0, rho_factor: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppendixDReport {
    pub params: AppendixDParams,
    pub steps: usize,
    pub rho: f64,
    pub unclipped: AppendixDOutcome,
    pub clipped: AppendixDOutcome,
    /// Binomial standard error at the analytic rate.
    pub analytic_std_err: f64,
}

impl AppendixDReport {
    pub fn unclipped_matches_analytic(&self) -> bool {
        (self.unclipped.failure_rate - self.unclipped.analytic_rate).abs() <= 3.0 * self.analytic_std_err
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(
            s,
            "eps={} L={} eta={} sigma={} alpha={} x0={} T={} trials={} spike={}",
            p.eps, p.l, p.eta, p.sigma, p.alpha, p.x0, self.steps, p.trials, self.unclipped.spike
        );
        let _ = writeln!(s, "{:<18} {:>10} {:>12} {:>12} {:>12}", "run", "failures", "rate", "std_err", "analytic");
        for (name, o) in [("sgd", &self.unclipped), (&*format!("clipped rho={}", self.rho), &self.clipped)] {
            let _ = writeln!(
                s,
                "{:<18} {:>10} {:>12.4e} {:>12.2e} {:>12.4e}",
                name, o.failures, o.failure_rate, o.std_err, o.analytic_rate
            );
        }
        s
    }
}

fn smallest_steps(p: &AppendixDParams) -> usize {
    let target = (2.0 * p.eps / p.l).sqrt();
    let c = (1.0 - p.eta * p.l).abs();
    let mut t = 1;
    let mut r = c * p.x0.abs();
    while r >= target && t < 1_000_000 {
        r *= c;
        t += 1;
    }
    t
}

/// SGD with and without coordinate clipping on the adversarial quadratic.
pub fn run_appendix_d(params: AppendixDParams) -> Result<AppendixDReport, HarnessError> {
    if !(params.rho_factor > 0.0) {
        return Err(HarnessError::Config(format!("rho_factor: must be positive, got {}", params.rho_factor)));
    }
    if !(params.eta <= 1.0 / params.l) {
        return Err(HarnessError::Config(format!("eta: must satisfy eta <= 1/L = {}, got {}", 1.0 / params.l, params.eta)));
    }
    let steps = params.steps.unwrap_or_else(|| smallest_steps(&params));
    let setup = AdversarialSetup {
        total_steps: steps,
        x0: params.x0,
        eta: params.eta,
        l: params.l,
        sigma: params.sigma,
        eps: params.eps,
        alpha: params.alpha,
    };
    let unclipped = appendix_d_experiment(&setup, &ClipRule::off(), params.trials, params.seed)?;
    let rho = params.rho_factor * params.sigma;
    let clip = if rho > 0.0 { ClipRule::coordinate(rho)? } else { ClipRule::off() };
    let clipped = appendix_d_experiment(&setup, &clip, params.trials, params.seed)?;
    let p = unclipped.analytic_rate;
    let analytic_std_err = (p * (1.0 - p) / params.trials as f64).sqrt();
    Ok(AppendixDReport { params, steps, rho, unclipped, clipped, analytic_std_err })
}
