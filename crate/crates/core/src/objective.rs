//! Synthetic test objectives with analytically known constants.

use crate::error::{Error, Result};
use crate::vector::{DiagPrecond, Vector};

/// Iteration cap for the inner prox solver.
pub const PROX_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    /// `f(x) = 1/2 sum_i a_i (x_i - b_i)^2`
    Quadratic { a: Vector, b: Vector },
    /// `f(x) = sum_i c_i x_i^2 / (1 + x_i^2)`
    GemanMcClure { c: Vector },
    /// `f(x) = L x^2 / 2` on the real line.
    CounterExample { l: f64 },
}

/// Smoothness, convexity and optimum data for an objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    pub l: f64,
    pub mu: f64,
    pub tau: f64,
    pub f_star: f64,
    pub x_star: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    kind: ObjectiveKind,
    constants: Constants,
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be positive and finite, got {v}") })
    }
}

/// Second derivative of `t^2 / (1 + t^2)`.
fn gm_curvature(t: f64) -> f64 {
    let s = 1.0 + t * t;
    2.0 * (1.0 - 3.0 * t * t) / (s * s * s)
}

/// Most negative value of `gm_curvature`, found by a dense grid followed by
/// golden-section refinement around the best grid point.
fn gm_min_curvature() -> f64 {
    const GRID: usize = 20_000;
    const SPAN: f64 = 10.0;
    let step = SPAN / GRID as f64;
    let (best_i, _) = (0..=GRID)
        .map(|i| (i, gm_curvature(i as f64 * step)))
        .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
    let mut lo = (best_i as f64 - 1.0).max(0.0) * step;
    let mut hi = (best_i as f64 + 1.0) * step;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - g * (hi - lo);
        let b = lo + g * (hi - lo);
        if gm_curvature(a) < gm_curvature(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    gm_curvature(0.5 * (lo + hi)).min(0.0)
}

impl Objective {
    pub fn quadratic(a: Vector, b: Vector) -> Result<Self> {
        b.check_dim(a.dim())?;
        for &ai in a.iter() {
            if !(ai >= 0.0) {
                return Err(Error::InvalidParameter {
                    name: "a",
                    reason: format!("Hessian diagonal must be nonnegative, got {ai}"),
                });
            }
        }
        let l = a.iter().copied().fold(0.0, f64::max);
        positive("a", l)?;
        let mu = a.iter().copied().fold(f64::INFINITY, f64::min);
        let constants = Constants { l, mu, tau: 0.0, f_star: 0.0, x_star: Some(b.clone()) };
        Ok(Self { kind: ObjectiveKind::Quadratic { a, b }, constants })
    }

    pub fn geman_mcclure(c: Vector) -> Result<Self> {
        for &ci in c.iter() {
            positive("c", ci)?;
        }
        let c_max = c.iter().copied().fold(0.0, f64::max);
        let l = 2.0 * c_max;
        let tau = c_max * gm_min_curvature().abs();
        let constants =
            Constants { l, mu: 0.0, tau, f_star: 0.0, x_star: Some(Vector::zeros(c.dim())) };
        Ok(Self { kind: ObjectiveKind::GemanMcClure { c }, constants })
    }

    pub fn counter_example(l: f64) -> Result<Self> {
        positive("L", l)?;
        let constants = Constants { l, mu: l, tau: 0.0, f_star: 0.0, x_star: Some(Vector::zeros(1)) };
        Ok(Self { kind: ObjectiveKind::CounterExample { l }, constants })
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ObjectiveKind::Quadratic { a, .. } => a.dim(),
            ObjectiveKind::GemanMcClure { c } => c.dim(),
            ObjectiveKind::CounterExample { .. } => 1,
        }
    }

    pub fn eval(&self, x: &Vector) -> Result<f64> {
        x.check_dim(self.dim())?;
        let xs = x.as_slice();
        Ok(match &self.kind {
            ObjectiveKind::Quadratic { a, b } => {
                0.5 * xs
                    .iter()
                    .zip(a.iter().zip(b.iter()))
                    .map(|(&xi, (&ai, &bi))| ai * (xi - bi) * (xi - bi))
                    .sum::<f64>()
            }
            ObjectiveKind::GemanMcClure { c } => {
                xs.iter().zip(c.iter()).map(|(&xi, &ci)| ci * xi * xi / (1.0 + xi * xi)).sum()
            }
            ObjectiveKind::CounterExample { l } => 0.5 * l * xs[0] * xs[0],
        })
    }

    pub fn grad(&self, x: &Vector) -> Result<Vector> {
        x.check_dim(self.dim())?;
        let xs = x.as_slice();
        let g = match &self.kind {
            ObjectiveKind::Quadratic { a, b } => xs
                .iter()
                .zip(a.iter().zip(b.iter()))
                .map(|(&xi, (&ai, &bi))| ai * (xi - bi))
                .collect(),
            ObjectiveKind::GemanMcClure { c } => xs
                .iter()
                .zip(c.iter())
                .map(|(&xi, &ci)| {
                    let s = 1.0 + xi * xi;
                    2.0 * ci * xi / (s * s)
                })
                .collect(),
            ObjectiveKind::CounterExample { l } => vec![l * xs[0]],
        };
        Ok(Vector::from_raw(g))
    }

    /// Minimizer of `f(y) + ||y - z||_H^2 / (2 gamma)`.
    ///
    /// Quadratics use the closed form. Other objectives run gradient descent
    /// with step `1 / (L + max(H)/gamma)` from `y = z` until the stationarity
    /// residual `||grad f(y) + H(y - z)/gamma||` drops to `tol`.
    pub fn prox(&self, z: &Vector, h: &DiagPrecond, gamma: f64, tol: f64) -> Result<Vector> {
        z.check_dim(self.dim())?;
        h.diag().check_dim(self.dim())?;
        positive("gamma", gamma)?;
        positive("tol", tol)?;
        let inv_gamma = 1.0 / gamma;
        let required = 2.0 * self.constants.tau / h.min_diag();
        if inv_gamma < required {
            return Err(Error::GammaCondition { inv_gamma, required });
        }
        let hd = h.diag().as_slice();
        match &self.kind {
            ObjectiveKind::Quadratic { a, b } => {
                let y = z
                    .iter()
                    .zip(hd)
                    .zip(a.iter().zip(b.iter()))
                    .map(|((&zi, &hi), (&ai, &bi))| (hi * zi * inv_gamma + ai * bi) / (ai + hi * inv_gamma))
                    .collect();
                Ok(Vector::from_raw(y))
            }
            ObjectiveKind::CounterExample { l } => {
                let y = hd[0] * z[0] * inv_gamma / (l + hd[0] * inv_gamma);
                Ok(Vector::from_raw(vec![y]))
            }
            ObjectiveKind::GemanMcClure { .. } => {
                let step = 1.0 / (self.constants.l + h.max_diag() * inv_gamma);
                let mut y = z.clone();
                let mut residual = f64::INFINITY;
                for _ in 0..PROX_MAX_ITERS {
                    let r = self.prox_residual(&y, z, h, gamma)?;
                    residual = r.norm();
                    if residual <= tol {
                        return Ok(y);
                    }
                    for (yi, ri) in y.as_mut_slice().iter_mut().zip(r.iter()) {
                        *yi -= step * ri;
                    }
                }
                Err(Error::ProxNotConverged { iterations: PROX_MAX_ITERS, residual })
            }
        }
    }

    /// `grad f(y) + H(y - z)/gamma`, the gradient of the prox subproblem.
    pub fn prox_residual(&self, y: &Vector, z: &Vector, h: &DiagPrecond, gamma: f64) -> Result<Vector> {
        let g = self.grad(y)?;
        let pull = h.apply(&y.sub(z)?)?;
        g.zip_map(&pull, |gi, pi| gi + pi / gamma)
    }
}
