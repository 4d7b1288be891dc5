use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::vector::{weighted_norm_sq, DiagPrecond, Vector};

/// Default inner tolerance for the prox point.
pub const DEFAULT_PROX_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct MoreauGrad {
    /// `H (z - y) / gamma`
    pub grad: Vector,
    /// `||grad||^2_{H^{-1}}`
    pub weighted_norm_sq: f64,
    /// The prox point `y`.
    pub prox: Vector,
    /// `f(y) + ||z - y||_H^2 / (2 gamma)`
    pub envelope: f64,
}

/// Admissible `gamma` range `[lambda / L, lambda / (2 tau)]`; the upper end
/// is infinite for convex objectives.
pub fn gamma_window(obj: &Objective, lambda: f64) -> (f64, f64) {
    let k = obj.constants();
    let hi = if k.tau > 0.0 { lambda / (2.0 * k.tau) } else { f64::INFINITY };
    (lambda / k.l, hi)
}

/// Gradient of the `H`-weighted Moreau envelope at `z`.
pub fn moreau_grad(obj: &Objective, z: &Vector, h: &DiagPrecond, gamma: f64, tol: f64) -> Result<MoreauGrad> {
    let y = obj.prox(z, h, gamma, tol)?;
    let diff = z.sub(&y)?;
    let grad = h.apply(&diff)?.scale(1.0 / gamma);
    let wn = weighted_norm_sq(&grad, h, true)?;
    let envelope = obj.eval(&y)? + weighted_norm_sq(&diff, h, false)? / (2.0 * gamma);
    if !envelope.is_finite() {
        return Err(Error::NonFinite { index: 0, value: envelope });
    }
    Ok(MoreauGrad { grad, weighted_norm_sq: wn, prox: y, envelope })
}
