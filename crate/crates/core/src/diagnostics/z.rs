use crate::error::{Error, Result};
use crate::vector::{worker_mean, Vector};

/// `(x_new - beta1 x_prev) / (1 - beta1)`. At round boundaries `x_prev` is
/// the averaged iterate, otherwise the worker's own previous iterate.
pub fn z_update(x_new: &Vector, x_prev: &Vector, beta1: f64) -> Result<Vector> {
    if !(0.0..1.0).contains(&beta1) {
        return Err(Error::InvalidParameter { name: "beta1", reason: format!("must lie in [0, 1), got {beta1}") });
    }
    let c = 1.0 - beta1;
    x_new.zip_map(x_prev, |a, b| (a - beta1 * b) / c)
}

/// Tracks the per-worker `z` sequence along a run.
#[derive(Debug, Clone)]
pub struct ZTracker {
    beta1: f64,
    prev_x: Option<Vec<Vector>>,
    prev_mean: Option<Vector>,
}

impl ZTracker {
    pub fn new(beta1: f64) -> Self {
        Self { beta1, prev_x: None, prev_mean: None }
    }

    /// Per-worker `z` for the iterates `xs` at step `k` of a round. The first
    /// call returns the iterates themselves (`z_0 = x_0`).
    pub fn advance(&mut self, xs: &[Vector], at_round_boundary: bool) -> Result<Vec<Vector>> {
        let zs = match (&self.prev_x, &self.prev_mean) {
            (Some(prev), Some(prev_mean)) => {
                if prev.len() != xs.len() {
                    return Err(Error::Shape(format!("worker count changed from {} to {}", prev.len(), xs.len())));
                }
                xs.iter()
                    .zip(prev)
                    .map(|(x, p)| z_update(x, if at_round_boundary { prev_mean } else { p }, self.beta1))
                    .collect::<Result<Vec<_>>>()?
            }
            _ => xs.to_vec(),
        };
        self.prev_mean = Some(worker_mean(xs)?);
        self.prev_x = Some(xs.to_vec());
        Ok(zs)
    }

    /// `z` after the final communication, from the averaged iterate.
    pub fn terminal(&self, x_final: &Vector) -> Result<Vector> {
        match &self.prev_mean {
            Some(prev) => z_update(x_final, prev, self.beta1),
            None => Ok(x_final.clone()),
        }
    }
}
