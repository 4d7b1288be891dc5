//! Stochastic gradient oracles with certified alpha-moment noise.
//!
//! Every noise model draws a unit variable `xi` with `E|xi|^alpha = 1` and
//! scales it per coordinate by `sigma_i`, so `E|noise_i|^alpha = sigma_i^alpha`
//! holds with equality for all three kinds.

mod stream;

pub use stream::RngStream;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian,
    /// `xi = ±spike` with probability `1 / (2 spike^alpha)` each, else 0.
    ThreePoint { spike: f64 },
    StudentT { dof: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    sigma: Vector,
    alpha: f64,
    /// Multiplier turning the raw draw into a unit-alpha-moment draw.
    unit_scale: f64,
}

/// `E|N(0,1)|^p`
fn gaussian_abs_moment(p: f64) -> f64 {
    (0.5 * p * 2f64.ln() + ln_gamma(0.5 * (p + 1.0)) - 0.5 * std::f64::consts::PI.ln()).exp()
}

/// `E|T_nu|^p`, finite only for `p < nu`.
fn student_abs_moment(p: f64, nu: f64) -> f64 {
    (0.5 * p * nu.ln() + ln_gamma(0.5 * (p + 1.0)) + ln_gamma(0.5 * (nu - p))
        - 0.5 * std::f64::consts::PI.ln()
        - ln_gamma(0.5 * nu))
        .exp()
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, sigma: Vector, alpha: f64) -> Result<Self> {
        if !(alpha >= 2.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("moment order must be finite and at least 2, got {alpha}"),
            });
        }
        if let Some(&s) = sigma.iter().find(|&&s| s < 0.0) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("scales must be nonnegative, got {s}"),
            });
        }
        let unit_scale = match kind {
            NoiseKind::Gaussian => gaussian_abs_moment(alpha).powf(-1.0 / alpha),
            NoiseKind::ThreePoint { spike } => {
                if !(spike >= 1.0 && spike.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "spike",
                        reason: format!("three-point spike must be at least 1, got {spike}"),
                    });
                }
                1.0
            }
            NoiseKind::StudentT { dof } => {
                if !(dof > alpha && dof.is_finite()) {
                    return Err(Error::InvalidParameter {
                        name: "dof",
                        reason: format!("degrees of freedom {dof} must exceed alpha = {alpha}"),
                    });
                }
                student_abs_moment(alpha, dof).powf(-1.0 / alpha)
            }
        };
        Ok(Self { kind, sigma, alpha, unit_scale })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn sigma(&self) -> &Vector {
        &self.sigma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn is_silent(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }

    /// Probability of each nonzero outcome of the three-point law.
    pub fn three_point_tail(spike: f64, alpha: f64) -> f64 {
        0.5 * spike.powf(-alpha)
    }

    fn draw_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Gaussian => {
                let n: f64 = StandardNormal.sample(rng);
                n * self.unit_scale
            }
            NoiseKind::ThreePoint { spike } => {
                let p = Self::three_point_tail(spike, self.alpha);
                let u: f64 = rng.random();
                if u < p {
                    -spike
                } else if u >= 1.0 - p {
                    spike
                } else {
                    0.0
                }
            }
            NoiseKind::StudentT { dof } => {
                let t: f64 = StudentT::new(dof).expect("dof validated").sample(rng);
                t * self.unit_scale
            }
        }
    }

    /// One noise vector, coordinates drawn in ascending order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector {
        Vector::from_raw(self.sigma.iter().map(|&s| s * self.draw_unit(rng)).collect())
    }

    /// Analytic `E|noise_i|^p` per coordinate.
    pub fn abs_moment(&self, p: f64) -> Result<Vector> {
        let unit = match self.kind {
            NoiseKind::Gaussian => self.unit_scale.powf(p) * gaussian_abs_moment(p),
            NoiseKind::ThreePoint { spike } => spike.powf(p - self.alpha),
            NoiseKind::StudentT { dof } => {
                if p >= dof {
                    return Err(Error::InvalidParameter {
                        name: "p",
                        reason: format!("moment of order {p} is infinite for dof {dof}"),
                    });
                }
                self.unit_scale.powf(p) * student_abs_moment(p, dof)
            }
        };
        Ok(self.sigma.map(|s| s.powf(p) * unit))
    }

    /// Exact `E||X||^4` for one noise vector with independent coordinates.
    pub fn fourth_norm_moment(&self) -> Result<f64> {
        let m2 = self.abs_moment(2.0)?;
        let m4 = self.abs_moment(4.0)?;
        let s2: f64 = m2.iter().sum();
        let cross: f64 = s2 * s2 - m2.iter().map(|v| v * v).sum::<f64>();
        Ok(m4.iter().sum::<f64>() + cross)
    }
}

/// Objective plus noise plus batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOracle {
    objective: Objective,
    noise: NoiseModel,
    batch: usize,
}

impl GradientOracle {
    pub fn new(objective: Objective, noise: NoiseModel, batch: usize) -> Result<Self> {
        noise.sigma().check_dim(objective.dim())?;
        if batch == 0 {
            return Err(Error::InvalidParameter { name: "batch", reason: "must be at least 1".into() });
        }
        Ok(Self { objective, noise, batch })
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// `grad f(x)` plus the mean of `batch` i.i.d. noise draws from `stream`.
    pub fn sample_gradient(&self, x: &Vector, stream: RngStream) -> Result<Vector> {
        let mut g = self.objective.grad(x)?;
        if self.noise.is_silent() {
            return Ok(g);
        }
        let mut rng = stream.rng();
        let mut acc = vec![0.0; self.dim()];
        for _ in 0..self.batch {
            let n = self.noise.sample(&mut rng);
            for (a, v) in acc.iter_mut().zip(n.iter()) {
                *a += v;
            }
        }
        let inv = 1.0 / self.batch as f64;
        for (gi, a) in g.as_mut_slice().iter_mut().zip(acc) {
            *gi += a * inv;
        }
        Ok(g)
    }
}

/// Monte-Carlo mean with its standard error, per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: Vector,
    pub std_err: Vector,
}

/// Running mean / variance accumulator (Welford).
#[derive(Debug, Clone, Default)]
pub struct MeanAccumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl MeanAccumulator {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std_err(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

pub const MIN_MOMENT_DRAWS: usize = 10_000;

/// Monte-Carlo estimate of `E|noise_i|^alpha` per coordinate.
pub fn alpha_moment_estimate(
    model: &NoiseModel,
    alpha: f64,
    n_draws: usize,
    stream: RngStream,
) -> Result<MomentEstimate> {
    if n_draws < MIN_MOMENT_DRAWS {
        return Err(Error::InvalidParameter {
            name: "n_draws",
            reason: format!("need at least {MIN_MOMENT_DRAWS}, got {n_draws}"),
        });
    }
    let mut rng = stream.rng();
    let mut accs = vec![MeanAccumulator::default(); model.dim()];
    for _ in 0..n_draws {
        let n = model.sample(&mut rng);
        for (acc, &v) in accs.iter_mut().zip(n.iter()) {
            acc.push(v.abs().powf(alpha));
        }
    }
    Ok(MomentEstimate {
        mean: Vector::from_raw(accs.iter().map(MeanAccumulator::mean).collect()),
        std_err: Vector::from_raw(accs.iter().map(MeanAccumulator::std_err).collect()),
    })
}

/// Spike magnitude `A = max{2 sqrt(2 eps / L) / (eta sigma), 1}` of the
/// adversarial final-step noise.
pub fn appendix_d_spike(eps: f64, l: f64, eta: f64, sigma: f64) -> f64 {
    (2.0 * (2.0 * eps / l).sqrt() / (eta * sigma)).max(1.0)
}

/// Parameters of the one-dimensional adversarial SGD instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialSetup {
    pub total_steps: usize,
    pub x0: f64,
    pub eta: f64,
    pub l: f64,
    pub sigma: f64,
    pub eps: f64,
    pub alpha: f64,
}

impl AdversarialSetup {
    pub fn validate(&self) -> Result<()> {
        let positive = [("eta", self.eta), ("L", self.l), ("eps", self.eps)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter { name, reason: format!("must be positive, got {v}") });
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "sigma",
                reason: format!("must be nonnegative, got {}", self.sigma),
            });
        }
        if !(self.alpha >= 2.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be at least 2, got {}", self.alpha),
            });
        }
        if self.total_steps == 0 {
            return Err(Error::InvalidParameter { name: "T", reason: "must be at least 1".into() });
        }
        if !self.x0.is_finite() {
            return Err(Error::InvalidParameter { name: "x0", reason: "must be finite".into() });
        }
        Ok(())
    }

    /// `(1 - eta L)^T |x0| <= sqrt(2 eps / L)`: the deterministic part already
    /// reaches the target, so the adversary switches on.
    pub fn contraction_reaches_target(&self) -> bool {
        (1.0 - self.eta * self.l).abs().powi(self.total_steps as i32) * self.x0.abs()
            <= (2.0 * self.eps / self.l).sqrt()
    }

    pub fn spike(&self) -> f64 {
        appendix_d_spike(self.eps, self.l, self.eta, self.sigma)
    }
}

/// The unit noise `xi_t` of the adversarial instance; the stochastic gradient
/// is `L x_t - sigma xi_t`.
pub fn adversarial_noise_appendix_d(t: usize, setup: &AdversarialSetup, stream: RngStream) -> Result<f64> {
    setup.validate()?;
    if t >= setup.total_steps {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("step {t} out of range for T = {}", setup.total_steps),
        });
    }
    if t + 1 < setup.total_steps || setup.sigma == 0.0 || !setup.contraction_reaches_target() {
        return Ok(0.0);
    }
    let a = setup.spike();
    let p = NoiseModel::three_point_tail(a, setup.alpha);
    let u: f64 = stream.rng().random();
    Ok(if u < p {
        -a
    } else if u >= 1.0 - p {
        a
    } else {
        0.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn models(sigma: &[f64], alpha: f64) -> Vec<NoiseModel> {
        vec![
            NoiseModel::new(NoiseKind::Gaussian, v(sigma), alpha).unwrap(),
            NoiseModel::new(NoiseKind::ThreePoint { spike: 2.0 }, v(sigma), alpha).unwrap(),
            NoiseModel::new(NoiseKind::StudentT { dof: alpha + 2.0 }, v(sigma), alpha).unwrap(),
        ]
    }

    #[test]
    fn silent_oracle_returns_exact_gradient() {
        let obj = Objective::quadratic(v(&[1.0, 2.0]), v(&[0.5, -1.0])).unwrap();
        let x = v(&[3.0, -0.25]);
        for model in models(&[0.0, 0.0], 4.0) {
            let oracle = GradientOracle::new(obj.clone(), model, 3).unwrap();
            let g = oracle.sample_gradient(&x, RngStream::new(1, 0, 0, 0)).unwrap();
            assert_eq!(g, obj.grad(&x).unwrap());
        }
    }

    #[test]
    fn three_point_outcomes_and_frequencies() {
        let model = NoiseModel::new(NoiseKind::ThreePoint { spike: 2.0 }, v(&[1.0]), 4.0).unwrap();
        assert_eq!(NoiseModel::three_point_tail(2.0, 4.0), 1.0 / 32.0);
        let mut rng = RngStream::aux(5, 0).rng();
        let n = 200_000;
        let (mut neg, mut zero, mut pos) = (0usize, 0usize, 0usize);
        for _ in 0..n {
            match model.sample(&mut rng)[0] {
                x if x == -2.0 => neg += 1,
                x if x == 0.0 => zero += 1,
                x if x == 2.0 => pos += 1,
                other => panic!("unexpected draw {other}"),
            }
        }
        let p = 1.0 / 32.0;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((neg as f64 / n as f64 - p).abs() < 4.0 * se);
        assert!((pos as f64 / n as f64 - p).abs() < 4.0 * se);
        assert_eq!(neg + zero + pos, n);
    }

    #[test]
    fn batch_second_moment_scales_with_batch() {
        let obj = Objective::quadratic(v(&[1.0]), v(&[0.0])).unwrap();
        let model = NoiseModel::new(NoiseKind::Gaussian, v(&[2.0]), 2.0).unwrap();
        let oracle = GradientOracle::new(obj, model, 4).unwrap();
        let x = v(&[0.0]);
        let mut acc = MeanAccumulator::default();
        for i in 0..100_000 {
            let g = oracle.sample_gradient(&x, RngStream::new(9, i, 0, 0)).unwrap();
            acc.push(g[0] * g[0]);
        }
        assert!((acc.mean() - 1.0).abs() < 0.05, "second moment {}", acc.mean());
    }

    #[test]
    fn moment_estimate_examples() {
        let tp = NoiseModel::new(NoiseKind::ThreePoint { spike: 2.0 }, v(&[1.0]), 4.0).unwrap();
        let est = alpha_moment_estimate(&tp, 4.0, 200_000, RngStream::aux(1, 1)).unwrap();
        assert!((est.mean[0] - 1.0).abs() <= 3.0 * est.std_err[0], "{est:?}");

        let g = NoiseModel::new(NoiseKind::Gaussian, v(&[1.0]), 2.0).unwrap();
        let est = alpha_moment_estimate(&g, 2.0, 100_000, RngStream::aux(1, 2)).unwrap();
        assert!((est.mean[0] - 1.0).abs() < 0.02);

        let silent = NoiseModel::new(NoiseKind::StudentT { dof: 6.0 }, v(&[0.0, 0.0]), 4.0).unwrap();
        let est = alpha_moment_estimate(&silent, 4.0, 10_000, RngStream::aux(1, 3)).unwrap();
        assert_eq!(est.mean.as_slice(), &[0.0, 0.0]);

        assert!(alpha_moment_estimate(&g, 2.0, 10, RngStream::aux(1, 4)).is_err());
    }

    #[test]
    fn zero_mean_and_moment_certificate() {
        let sigma = [0.5, 1.0, 2.0];
        for (i, model) in models(&sigma, 4.0).into_iter().enumerate() {
            let mut rng = RngStream::aux(21, i as u64).rng();
            let mut means = vec![MeanAccumulator::default(); 3];
            for _ in 0..100_000 {
                let n = model.sample(&mut rng);
                for (a, &x) in means.iter_mut().zip(n.iter()) {
                    a.push(x);
                }
            }
            for a in &means {
                assert!(a.mean().abs() <= 4.0 * a.std_err(), "{model:?}: mean {}", a.mean());
            }
            let est = alpha_moment_estimate(&model, 4.0, 100_000, RngStream::aux(22, i as u64)).unwrap();
            for j in 0..3 {
                let bound = sigma[j].powi(4);
                let m = est.mean[j];
                assert!(m <= bound * (1.0 + 4.0 * est.std_err[j] / m), "{model:?}: {m} vs {bound}");
            }
        }
    }

    #[test]
    fn analytic_moments_are_normalized() {
        for model in models(&[1.5, 0.0], 4.0) {
            let m = model.abs_moment(4.0).unwrap();
            assert!((m[0] - 1.5f64.powi(4)).abs() < 1e-12 * 1.5f64.powi(4), "{model:?}");
            assert_eq!(m[1], 0.0);
        }
        let g = NoiseModel::new(NoiseKind::Gaussian, v(&[1.0]), 2.0).unwrap();
        assert!((g.abs_moment(2.0).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((g.abs_moment(4.0).unwrap()[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn constructor_validation() {
        assert!(NoiseModel::new(NoiseKind::StudentT { dof: 4.0 }, v(&[1.0]), 4.0).is_err());
        assert!(NoiseModel::new(NoiseKind::ThreePoint { spike: 0.5 }, v(&[1.0]), 4.0).is_err());
        assert!(NoiseModel::new(NoiseKind::Gaussian, v(&[-1.0]), 4.0).is_err());
        assert!(NoiseModel::new(NoiseKind::Gaussian, v(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn reproducible_draws() {
        let obj = Objective::geman_mcclure(v(&[1.0, 1.0])).unwrap();
        let model = NoiseModel::new(NoiseKind::StudentT { dof: 6.0 }, v(&[1.0, 2.0]), 4.0).unwrap();
        let oracle = GradientOracle::new(obj, model, 2).unwrap();
        let x = v(&[0.3, 0.4]);
        let s = RngStream::new(3, 2, 1, 0);
        assert_eq!(oracle.sample_gradient(&x, s).unwrap(), oracle.sample_gradient(&x, s).unwrap());
    }

    fn setup(sigma: f64, x0: f64) -> AdversarialSetup {
        AdversarialSetup { total_steps: 20, x0, eta: 0.5, l: 1.0, sigma, eps: 0.5, alpha: 4.0 }
    }

    #[test]
    fn adversarial_noise_cases() {
        let s = setup(2.0, 1.0);
        assert_eq!(s.spike(), 2.0);
        assert_eq!(NoiseModel::three_point_tail(s.spike(), 4.0), 1.0 / 32.0);
        for t in 0..19 {
            assert_eq!(adversarial_noise_appendix_d(t, &s, RngStream::new(0, 0, 0, t as u64)).unwrap(), 0.0);
        }
        let mut hits = 0;
        for trial in 0..20_000u64 {
            let xi = adversarial_noise_appendix_d(19, &s, RngStream::new(0, trial, 0, 19)).unwrap();
            assert!(xi == 0.0 || xi.abs() == 2.0);
            hits += (xi != 0.0) as usize;
        }
        assert!(hits > 0);

        // far start: contraction does not reach the target, adversary stays off
        let far = setup(2.0, 1e9);
        assert!(!far.contraction_reaches_target());
        for trial in 0..1000u64 {
            assert_eq!(adversarial_noise_appendix_d(19, &far, RngStream::new(0, trial, 0, 19)).unwrap(), 0.0);
        }

        let mut bad = setup(2.0, 1.0);
        bad.eta = -1.0;
        assert!(adversarial_noise_appendix_d(0, &bad, RngStream::new(0, 0, 0, 0)).is_err());
    }
}
