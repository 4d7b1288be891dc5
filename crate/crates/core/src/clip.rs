//! Gradient clipping rules and the Monte-Carlo clipping-bias check.

use crate::error::{Error, Result};
use crate::noise::{MeanAccumulator, NoiseModel, RngStream};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClipMode {
    #[default]
    Coordinate,
    Global,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipRule {
    mode: ClipMode,
    rho: f64,
}

impl ClipRule {
    /// `rho` may be `f64::INFINITY`, which disables clipping.
    pub fn new(mode: ClipMode, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::InvalidParameter { name: "rho", reason: format!("must be positive, got {rho}") });
        }
        Ok(Self { mode, rho })
    }

    pub fn coordinate(rho: f64) -> Result<Self> {
        Self::new(ClipMode::Coordinate, rho)
    }

    pub fn off() -> Self {
        Self { mode: ClipMode::Off, rho: f64::INFINITY }
    }

    pub fn mode(&self) -> ClipMode {
        self.mode
    }

    /// Effective threshold; `+inf` when clipping is off.
    pub fn rho(&self) -> f64 {
        match self.mode {
            ClipMode::Off => f64::INFINITY,
            _ => self.rho,
        }
    }

    pub fn is_active(&self) -> bool {
        self.rho().is_finite()
    }

    pub fn apply(&self, g: &Vector) -> Vector {
        clip(g, self)
    }
}

/// Scalar coordinate clip `sgn(x) min(|x|, rho)`.
pub fn clip_scalar(x: f64, rho: f64) -> f64 {
    x.clamp(-rho, rho)
}

pub fn clip(g: &Vector, rule: &ClipRule) -> Vector {
    let rho = rule.rho();
    if rho.is_infinite() {
        return g.clone();
    }
    match rule.mode {
        ClipMode::Coordinate => g.map(|x| clip_scalar(x, rho)),
        ClipMode::Global => {
            let n = g.norm();
            if n <= rho {
                g.clone()
            } else {
                g.scale(rho / n)
            }
        }
        ClipMode::Off => g.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipBias {
    pub estimate: f64,
    pub std_err: f64,
    pub bound: f64,
}

/// `(2 sigma)^alpha / rho^(alpha - 1)`
pub fn clip_bias_bound(sigma: f64, rho: f64, alpha: f64) -> f64 {
    (2.0 * sigma).powf(alpha) / rho.powf(alpha - 1.0)
}

/// Estimates `|E clip(X, rho) - x|` for `X = center + noise` with a scalar
/// noise model, alongside the bound above.
///
/// Requires `|center| <= rho / 2` and `rho >= 3 sigma`.
pub fn clip_bias_check(
    model: &NoiseModel,
    center: f64,
    rho: f64,
    n_draws: usize,
    stream: RngStream,
) -> Result<ClipBias> {
    model.sigma().check_dim(1)?;
    let sigma = model.sigma()[0];
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidParameter { name: "rho", reason: format!("must be positive and finite, got {rho}") });
    }
    if center.abs() > rho / 2.0 {
        return Err(Error::Hypothesis(format!("|x| <= rho/2 fails: |{center}| > {}", rho / 2.0)));
    }
    if rho < 3.0 * sigma {
        return Err(Error::Hypothesis(format!("rho >= 3 sigma fails: {rho} < {}", 3.0 * sigma)));
    }
    if n_draws < 2 {
        return Err(Error::InvalidParameter { name: "n_draws", reason: "need at least 2 draws".into() });
    }
    let mut rng = stream.rng();
    let mut acc = MeanAccumulator::default();
    for _ in 0..n_draws {
        let x = center + model.sample(&mut rng)[0];
        acc.push(clip_scalar(x, rho) - center);
    }
    Ok(ClipBias {
        estimate: acc.mean().abs(),
        std_err: acc.std_err(),
        bound: clip_bias_bound(sigma, rho, model.alpha()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseKind;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    #[test]
    fn clip_examples() {
        let r = ClipRule::coordinate(1.0).unwrap();
        assert_eq!(clip(&v(&[5.0, -2.0, 0.5]), &r), v(&[1.0, -1.0, 0.5]));
        let small = v(&[0.9, -1.0, 0.0]);
        assert_eq!(clip(&small, &r), small);
        let g = ClipRule::new(ClipMode::Global, 2.5).unwrap();
        assert_eq!(clip(&v(&[3.0, 4.0]), &g), v(&[1.5, 2.0]));
        assert_eq!(clip(&v(&[3.0, 4.0]), &ClipRule::off()), v(&[3.0, 4.0]));
        let inf = ClipRule::coordinate(f64::INFINITY).unwrap();
        assert!(!inf.is_active());
        assert_eq!(clip(&v(&[1e300, -1e300]), &inf), v(&[1e300, -1e300]));
    }

    #[test]
    fn rejects_nonpositive_rho() {
        assert!(ClipRule::coordinate(0.0).is_err());
        assert!(ClipRule::coordinate(-1.0).is_err());
        assert!(ClipRule::coordinate(f64::NAN).is_err());
    }

    #[test]
    fn bias_check_examples() {
        let tp = NoiseModel::new(NoiseKind::ThreePoint { spike: 2.0 }, v(&[1.0]), 4.0).unwrap();
        let r = clip_bias_check(&tp, 1.0, 3.0, 10_000, RngStream::aux(0, 0)).unwrap();
        assert!((r.bound - 16.0 / 27.0).abs() < 1e-15);

        let g = NoiseModel::new(NoiseKind::Gaussian, v(&[1.0]), 4.0).unwrap();
        let r = clip_bias_check(&g, 0.0, 3.0, 100_000, RngStream::aux(0, 1)).unwrap();
        assert!(r.estimate <= 4.0 * r.std_err, "{r:?}");

        let bounds: Vec<f64> = [3.0, 6.0, 12.0, 24.0].iter().map(|&rho| clip_bias_bound(1.0, rho, 4.0)).collect();
        assert!(bounds.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn bias_check_hypotheses() {
        let g = NoiseModel::new(NoiseKind::Gaussian, v(&[1.0]), 4.0).unwrap();
        let e = clip_bias_check(&g, 0.0, 2.0, 100, RngStream::aux(0, 0)).unwrap_err();
        assert!(matches!(e, Error::Hypothesis(ref m) if m.contains("rho >= 3 sigma")));
        let e = clip_bias_check(&g, 2.0, 3.0, 100, RngStream::aux(0, 0)).unwrap_err();
        assert!(matches!(e, Error::Hypothesis(ref m) if m.contains("rho/2")));
    }

    proptest! {
        #[test]
        fn coordinate_clip_properties(
            xs in prop::collection::vec(-1e6f64..1e6, 1..12),
            rho in 1e-3f64..1e3,
        ) {
            let r = ClipRule::coordinate(rho).unwrap();
            let g = v(&xs);
            let c = clip(&g, &r);
            prop_assert!(c.norm_inf() <= rho);
            prop_assert_eq!(clip(&c, &r), c.clone());
            for (ci, gi) in c.iter().zip(g.iter()) {
                prop_assert!(ci.signum() == gi.signum() || *ci == 0.0);
            }
        }

        #[test]
        fn scalar_clip_nonexpansive(a in -1e4f64..1e4, b in -1e4f64..1e4, rho in 1e-3f64..1e3) {
            prop_assert!((clip_scalar(a, rho) - clip_scalar(b, rho)).abs() <= (a - b).abs());
        }

        #[test]
        fn global_clip_norm_bound(xs in prop::collection::vec(-1e3f64..1e3, 1..8), rho in 1e-2f64..1e2) {
            let r = ClipRule::new(ClipMode::Global, rho).unwrap();
            let c = clip(&v(&xs), &r);
            prop_assert!(c.norm() <= rho * (1.0 + 1e-12));
            prop_assert_eq!(clip(&c, &r).norm() <= rho * (1.0 + 1e-12), true);
        }
    }

    #[test]
    fn clipped_deviation_is_bounded() {
        let model = NoiseModel::new(NoiseKind::StudentT { dof: 5.0 }, v(&[2.0]), 4.0).unwrap();
        let rho = 3.0;
        let mut rng = RngStream::aux(4, 4).rng();
        let samples: Vec<f64> = (0..50_000).map(|_| clip_scalar(0.5 + model.sample(&mut rng)[0], rho)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!(samples.iter().all(|s| (s - mean).abs() <= 2.0 * rho));
    }
}
