use localsim::diagnostics::{aggregate_quantile, nearest_rank, Metric, RecorderSettings, TrajectoryRecord, TrajectoryRecorder};
use localsim::harness::{trajectory_csv, ExperimentConfig};
use localsim::noise::{GradientOracle, NoiseKind, NoiseModel};
use localsim::objective::Objective;
use localsim::optim::{run, Family, OptimizerConfig};
use localsim::Vector;
use proptest::prelude::*;

fn records(family: Family, k: usize, r: usize, seeds: u64) -> Vec<TrajectoryRecord> {
    let obj = Objective::quadratic(Vector::new(vec![0.3, 1.0]).unwrap(), Vector::zeros(2)).unwrap();
    let noise = NoiseModel::new(NoiseKind::Gaussian, Vector::filled(2, 0.5), 4.0).unwrap();
    let oracle = GradientOracle::new(obj, noise, 1).unwrap();
    let cfg = OptimizerConfig::new(family, 0.1, 3, k, r);
    (0..seeds)
        .map(|s| {
            let rec = TrajectoryRecorder::new(oracle.objective(), &cfg, s, RecorderSettings::default());
            run(&cfg, &oracle, &Vector::filled(2, 2.0), s, rec).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quantile_band_is_columnwise_nearest_rank(k in 1usize..5, r in 1usize..5, seeds in 2u64..7, q in 0.05f64..0.95) {
        let recs = records(Family::LocalAdam, k, r, seeds);
        let band = aggregate_quantile(&recs, Metric::FGap, q).unwrap();
        prop_assert_eq!(band.len(), k * r);
        for (i, &b) in band.iter().enumerate() {
            let col: Vec<f64> = recs.iter().map(|rec| rec.entries[i].f_gap).collect();
            prop_assert_eq!(b, nearest_rank(&col, q).unwrap());
        }
        let hi = aggregate_quantile(&recs, Metric::FGap, (q + 0.04).min(0.99)).unwrap();
        prop_assert!(band.iter().zip(&hi).all(|(a, b)| a <= b));
    }

    #[test]
    fn csv_rows_match_step_count(k in 1usize..6, r in 1usize..6, minibatch in any::<bool>()) {
        let family = if minibatch { Family::MinibatchSgdm } else { Family::LocalSgdm };
        let rec = records(family, k, r, 1).remove(0);
        let text = String::from_utf8(trajectory_csv(&rec).unwrap()).unwrap();
        let expected = if minibatch { r } else { k * r };
        prop_assert_eq!(text.lines().count(), expected + 1);
    }

    #[test]
    fn config_round_trip(
        etas in prop::collection::vec(1e-4f64..1.0, 1..4),
        rhos in prop::collection::vec(prop_oneof![Just(f64::INFINITY), 0.1f64..10.0], 1..3),
        workers in 1usize..9,
        seeds in prop::collection::vec(any::<u64>(), 1..5),
        sigma in prop::collection::vec(0.0f64..3.0, 3),
    ) {
        let text = format!(
            "[objective]\nkind = \"geman_mcclure\"\nc = 1.0\n\n[noise]\nkind = \"student_t\"\nsigma = {sigma:?}\ndof = 7.5\n\n\
             [optimizer]\nfamilies = [\"local_adam\", \"minibatch_adam\"]\neta = {etas:?}\nworkers = {workers}\nlocal_steps = 2\nrounds = 3\nx0 = 0.5\n\n\
             [clip]\nrho = [{}]\n\n[seeds]\nlist = {seeds:?}\n",
            rhos.iter().map(|r| if r.is_finite() { format!("{r:?}") } else { "inf".into() }).collect::<Vec<_>>().join(", ")
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&cfg, &again);
        prop_assert_eq!(cfg.grid().unwrap().len(), 2 * etas.len() * rhos.len());
    }
}
