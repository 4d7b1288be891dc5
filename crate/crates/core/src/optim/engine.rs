use rayon::prelude::*;

use super::{communicate, local_step, ClusterState, Hyper, MinibatchClip, OptimizerConfig, WorkerState};
use crate::error::{Error, Result};
use crate::noise::{GradientOracle, RngStream};
use crate::vector::{worker_mean, DiagPrecond, Vector};

/// Snapshot handed to an [`Observer`] before step `k` of round `r`.
#[derive(Debug)]
pub struct StepView<'a> {
    pub round: usize,
    pub step: usize,
    /// Steps per round for this family (`K` for local methods, 1 for minibatch).
    pub steps_per_round: usize,
    /// Worker states `(x_{r,k}, u_{r,k-1}, v_{r,k-1})`.
    pub workers: &'a [WorkerState],
    /// Round-frozen preconditioner `H_r`.
    pub precond: &'a DiagPrecond,
    pub hyper: &'a Hyper,
}

/// Receives a view of the cluster at every `(r, k)` and builds an output
/// from the final state.
pub trait Observer {
    type Output;

    fn observe(&mut self, view: &StepView<'_>) -> Result<()>;

    fn finish(self, last: &FinalState) -> Result<Self::Output>;
}

/// Cluster state after the last communication.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalState {
    pub cluster: ClusterState,
    pub hyper: Hyper,
}

impl Observer for () {
    type Output = FinalState;

    fn observe(&mut self, _: &StepView<'_>) -> Result<()> {
        Ok(())
    }

    fn finish(self, last: &FinalState) -> Result<FinalState> {
        Ok(last.clone())
    }
}

fn advance_worker(
    w: &WorkerState,
    m: usize,
    r: usize,
    k: usize,
    oracle: &GradientOracle,
    cfg: &OptimizerConfig,
    hyper: &Hyper,
    seed: u64,
) -> Result<WorkerState> {
    let g = oracle.sample_gradient(&w.x, RngStream::new(seed, m as u64, r as u64, k as u64))?;
    let next = local_step(w, &cfg.clip.apply(&g), hyper)?;
    if !next.is_finite() {
        return Err(Error::Diverged { round: r, step: k, worker: m });
    }
    Ok(next)
}

fn local_round(cs: &mut ClusterState, r: usize, k: usize, oracle: &GradientOracle, cfg: &OptimizerConfig, hyper: &Hyper, seed: u64) -> Result<()> {
    let results: Vec<Result<WorkerState>> = if cfg.parallel_workers {
        cs.workers
            .par_iter()
            .enumerate()
            .map(|(m, w)| advance_worker(w, m, r, k, oracle, cfg, hyper, seed))
            .collect()
    } else {
        cs.workers
            .iter()
            .enumerate()
            .map(|(m, w)| advance_worker(w, m, r, k, oracle, cfg, hyper, seed))
            .collect()
    };
    for (slot, res) in cs.workers.iter_mut().zip(results) {
        *slot = res?;
    }
    Ok(())
}

/// One minibatch round: `K M` gradients at the common iterate, averaged,
/// then a single shared update. Worker `m`'s `k`-th sample uses the stream
/// `(seed, m, r, k)`, the same one a local worker would consume.
pub fn minibatch_step(cs: &ClusterState, oracle: &GradientOracle, cfg: &OptimizerConfig, seed: u64) -> Result<ClusterState> {
    if !cfg.family.is_minibatch() {
        return Err(Error::InvalidParameter {
            name: "family",
            reason: format!("{} is not a minibatch family", cfg.family),
        });
    }
    let hyper = cfg.hyper();
    let r = cs.round;
    let common = &cs.workers[0];
    let mut samples = Vec::with_capacity(cfg.workers * cfg.local_steps);
    for m in 0..cfg.workers {
        for k in 0..cfg.local_steps {
            let g = oracle.sample_gradient(&common.x, RngStream::new(seed, m as u64, r as u64, k as u64))?;
            samples.push(match cfg.minibatch_clip {
                MinibatchClip::Average => g,
                MinibatchClip::PerSample => cfg.clip.apply(&g),
            });
        }
    }
    let mean = worker_mean(&samples)?;
    let ghat = match cfg.minibatch_clip {
        MinibatchClip::Average => cfg.clip.apply(&mean),
        MinibatchClip::PerSample => mean,
    };
    let next = local_step(common, &ghat, &hyper)?;
    if !next.is_finite() {
        return Err(Error::Diverged { round: r, step: 0, worker: 0 });
    }
    Ok(ClusterState { workers: vec![next.clone(); cs.workers.len()], round: r + 1, averaged_v: next.v })
}

/// Runs `R` rounds from `x0`. The observer sees every `(r, k)` before the
/// step is taken. Results depend only on `(cfg, oracle, x0, seed)`.
pub fn run<O: Observer>(cfg: &OptimizerConfig, oracle: &GradientOracle, x0: &Vector, seed: u64, mut observer: O) -> Result<O::Output> {
    cfg.validate()?;
    x0.check_dim(oracle.dim())?;
    if !x0.is_finite() {
        return Err(Error::Diverged { round: 0, step: 0, worker: 0 });
    }
    let hyper = cfg.hyper();
    let mut cs = ClusterState::new(x0.clone(), cfg.workers);
    let steps = cfg.steps_per_round();
    for r in 0..cfg.rounds {
        let precond = cs.round_precond(hyper.lambda)?;
        if cfg.family.is_minibatch() {
            observer.observe(&StepView { round: r, step: 0, steps_per_round: steps, workers: &cs.workers, precond: &precond, hyper: &hyper })?;
            cs = minibatch_step(&cs, oracle, cfg, seed)?;
        } else {
            for k in 0..steps {
                observer.observe(&StepView { round: r, step: k, steps_per_round: steps, workers: &cs.workers, precond: &precond, hyper: &hyper })?;
                local_round(&mut cs, r, k, oracle, cfg, &hyper, seed)?;
            }
            cs = communicate(&cs)?;
        }
    }
    observer.finish(&FinalState { cluster: cs, hyper })
}

#[cfg(test)]
mod tests {
    use super::super::Family;
    use super::*;
    use crate::clip::ClipRule;
    use crate::noise::{NoiseKind, NoiseModel};
    use crate::objective::Objective;

    fn v(xs: &[f64]) -> Vector {
        Vector::new(xs.to_vec()).unwrap()
    }

    fn quad_oracle(d: usize, sigma: f64) -> GradientOracle {
        let a: Vec<f64> = (0..d).map(|i| 0.1 + 0.9 * i as f64 / (d.max(2) - 1) as f64).collect();
        let obj = Objective::quadratic(v(&a), Vector::zeros(d)).unwrap();
        let noise = NoiseModel::new(NoiseKind::Gaussian, Vector::filled(d, sigma), 4.0).unwrap();
        GradientOracle::new(obj, noise, 1).unwrap()
    }

    /// Records every worker state at every (r, k).
    #[derive(Default)]
    struct Tape(Vec<(usize, usize, Vec<WorkerState>)>);

    impl Observer for Tape {
        type Output = (Vec<(usize, usize, Vec<WorkerState>)>, FinalState);

        fn observe(&mut self, view: &StepView<'_>) -> Result<()> {
            self.0.push((view.round, view.step, view.workers.to_vec()));
            Ok(())
        }

        fn finish(self, last: &FinalState) -> Result<Self::Output> {
            Ok((self.0, last.clone()))
        }
    }

    #[test]
    fn one_step_gradient_descent_converges_exactly() {
        let obj = Objective::quadratic(v(&[2.0]), v(&[0.0])).unwrap();
        let noise = NoiseModel::new(NoiseKind::Gaussian, v(&[0.0]), 4.0).unwrap();
        let oracle = GradientOracle::new(obj, noise, 1).unwrap();
        let cfg = OptimizerConfig::new(Family::LocalSgdm, 0.5, 1, 1, 1).with_betas(0.0, 0.999);
        let out = run(&cfg, &oracle, &v(&[1.0]), 0, ()).unwrap();
        assert_eq!(out.cluster.workers[0].x, v(&[0.0]));
    }

    #[test]
    fn zero_learning_rate_keeps_iterate() {
        let oracle = quad_oracle(3, 1.0);
        let x0 = v(&[1.0, -1.0, 2.0]);
        for family in Family::ALL {
            let cfg = OptimizerConfig::new(family, 0.0, 3, 4, 5);
            let (tape, last) = run(&cfg, &oracle, &x0, 1, Tape::default()).unwrap();
            for (_, _, ws) in &tape {
                assert!(ws.iter().all(|w| w.x == x0));
            }
            assert!(last.cluster.workers.iter().all(|w| w.x == x0));
        }
    }

    #[test]
    fn parallel_and_sequential_workers_agree() {
        let oracle = quad_oracle(4, 1.0);
        let x0 = Vector::filled(4, 1.0);
        for family in [Family::LocalAdam, Family::LocalSgdm] {
            let cfg = OptimizerConfig::new(family, 0.05, 6, 5, 4).with_clip(ClipRule::coordinate(2.0).unwrap());
            let a = run(&cfg, &oracle, &x0, 17, Tape::default()).unwrap();
            let b = run(&cfg.clone().with_parallel_workers(true), &oracle, &x0, 17, Tape::default()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn consensus_restored_at_round_boundary() {
        let oracle = quad_oracle(3, 2.0);
        let cfg = OptimizerConfig::new(Family::LocalAdam, 0.1, 4, 6, 5);
        let (tape, last) = run(&cfg, &oracle, &Vector::filled(3, 1.0), 3, Tape::default()).unwrap();
        for (_, k, ws) in &tape {
            if *k == 0 {
                assert!(ws.windows(2).all(|p| p[0] == p[1]));
            }
        }
        assert!(last.cluster.workers.windows(2).all(|p| p[0] == p[1]));
        assert!(tape.iter().any(|(_, k, ws)| *k > 0 && ws[0].x != ws[1].x));
    }

    #[test]
    fn divergence_is_reported_with_coordinates() {
        let obj = Objective::quadratic(v(&[1.0]), v(&[0.0])).unwrap();
        let noise = NoiseModel::new(NoiseKind::Gaussian, v(&[0.0]), 4.0).unwrap();
        let oracle = GradientOracle::new(obj, noise, 1).unwrap();
        let cfg = OptimizerConfig::new(Family::PlainSgd, 3.0, 2, 50, 200);
        let err = run(&cfg, &oracle, &v(&[1.0]), 0, ()).unwrap_err();
        assert!(matches!(err, Error::Diverged { worker: 0, .. }), "{err:?}");
    }

    #[test]
    fn minibatch_rejects_local_family() {
        let oracle = quad_oracle(2, 1.0);
        let cfg = OptimizerConfig::new(Family::LocalAdam, 0.1, 2, 2, 2);
        let cs = ClusterState::new(Vector::zeros(2), 2);
        assert!(minibatch_step(&cs, &oracle, &cfg, 0).is_err());
    }

    #[test]
    fn noiseless_minibatch_is_deterministic_step() {
        let oracle = quad_oracle(3, 0.0);
        let x0 = v(&[1.0, 2.0, -1.0]);
        let cfg = OptimizerConfig::new(Family::MinibatchAdam, 0.1, 3, 4, 1).with_betas(0.9, 0.99);
        let out = run(&cfg, &oracle, &x0, 5, ()).unwrap();
        let g = oracle.objective().grad(&x0).unwrap();
        let expect = local_step(&WorkerState::at(x0), &g, &cfg.hyper()).unwrap();
        let got = &out.cluster.workers[0];
        for (a, b) in [(&got.x, &expect.x), (&got.u, &expect.u), (&got.v, &expect.v)] {
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() <= 1e-14 * b[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn single_minibatch_step_matches_plain_sgd() {
        let oracle = quad_oracle(3, 1.0);
        let x0 = v(&[1.0, 2.0, -1.0]);
        let mb = OptimizerConfig::new(Family::MinibatchSgdm, 0.2, 1, 1, 1).with_betas(0.0, 1.0);
        let sgd = OptimizerConfig::new(Family::PlainSgd, 0.2, 1, 1, 1);
        let a = run(&mb, &oracle, &x0, 9, ()).unwrap();
        let b = run(&sgd, &oracle, &x0, 9, ()).unwrap();
        assert_eq!(a.cluster.workers[0].x, b.cluster.workers[0].x);
    }

    #[test]
    fn bounded_step_under_clipping() {
        let obj = Objective::quadratic(v(&[1.0, 1.0]), v(&[0.0, 0.0])).unwrap();
        let noise = NoiseModel::new(NoiseKind::StudentT { dof: 5.0 }, v(&[10.0, 10.0]), 4.0).unwrap();
        let oracle = GradientOracle::new(obj, noise, 1).unwrap();
        let rho = 0.5;
        let cfg = OptimizerConfig::new(Family::LocalAdam, 0.3, 3, 8, 6)
            .with_betas(0.9, 0.95)
            .with_lambda(0.5)
            .with_clip(ClipRule::coordinate(rho).unwrap());
        let (tape, _) = run(&cfg, &oracle, &v(&[5.0, -5.0]), 2, Tape::default()).unwrap();
        let max_move = cfg.eta * rho / cfg.lambda;
        for pair in tape.windows(2) {
            let (_, k1, ref after) = pair[1];
            if k1 == 0 {
                continue;
            }
            for (w0, w1) in pair[0].2.iter().zip(after) {
                assert!(w1.u.norm_inf() <= rho);
                for i in 0..2 {
                    assert!((w1.x[i] - w0.x[i]).abs() <= max_move * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn second_moment_unrolls() {
        // v_{r,k} = b2^{k+1} v_r + (1-b2) sum_j b2^{k-j} ghat_j^2, recomputed by replaying the oracle
        let oracle = quad_oracle(2, 1.0);
        let rho = 1.5;
        let cfg = OptimizerConfig::new(Family::LocalAdam, 0.05, 2, 5, 3)
            .with_betas(0.8, 0.9)
            .with_clip(ClipRule::coordinate(rho).unwrap());
        let seed = 4;
        let (tape, last) = run(&cfg, &oracle, &v(&[1.0, 1.0]), seed, Tape::default()).unwrap();
        let b2 = cfg.beta2;
        let mut v_round = Vector::zeros(2);
        for r in 0..cfg.rounds {
            let mut ends = Vec::new();
            for m in 0..cfg.workers {
                let mut acc = [0.0f64; 2];
                for k in 0..cfg.local_steps {
                    let x = &tape[r * cfg.local_steps + k].2[m].x;
                    let g = oracle.sample_gradient(x, RngStream::new(seed, m as u64, r as u64, k as u64)).unwrap();
                    let gh = cfg.clip.apply(&g);
                    for i in 0..2 {
                        acc[i] = b2 * acc[i] + (1.0 - b2) * gh[i] * gh[i];
                    }
                    let unrolled: Vec<f64> =
                        (0..2).map(|i| b2.powi(k as i32 + 1) * v_round[i] + acc[i]).collect();
                    let recorded = if k + 1 < cfg.local_steps {
                        tape[r * cfg.local_steps + k + 1].2[m].v.clone()
                    } else {
                        ends.push(unrolled.clone());
                        continue;
                    };
                    for i in 0..2 {
                        assert!((recorded[i] - unrolled[i]).abs() <= 1e-14, "r={r} k={k} m={m}");
                    }
                }
            }
            let mean: Vec<f64> = (0..2).map(|i| ends.iter().map(|e| e[i]).sum::<f64>() / ends.len() as f64).collect();
            v_round = Vector::new(mean).unwrap();
            let next_v = if r + 1 < cfg.rounds { &tape[(r + 1) * cfg.local_steps].2[0].v } else { &last.cluster.averaged_v };
            for i in 0..2 {
                assert!((next_v[i] - v_round[i]).abs() <= 1e-14);
            }
        }
    }
}
