use mixreg_core::boost::{
    boost_fit, cross_validate_mstop, fold_assignment, standardize_columns, INTERCEPT_ID,
};
use mixreg_core::estimate::{total_loss, Loss};
use mixreg_core::models::{make_samos_gb, CovariateCatalog};
use mixreg_core::{BoostConfig, Frame, ModelSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn problem(n: usize, seed: u64) -> (ModelSpec, Frame, Vec<f64>) {
    let catalog = CovariateCatalog::new(&["t2m", "pr"]).unwrap();
    let spec = make_samos_gb(&catalog, Loss::Crps).unwrap().spec;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<(String, Vec<f64>)> = catalog
        .all_ids()
        .into_iter()
        .map(|id| (id, (0..n).map(|_| rng.sample(StandardNormal)).collect()))
        .collect();
    let design = Frame::from_columns(cols).unwrap();
    let x = design.require("t2m.mean").unwrap();
    let y: Vec<f64> = x
        .iter()
        .map(|v| 0.5 + 0.8 * v + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (design, y, _) = standardize_columns(&design, &y).unwrap();
    (spec, design, y)
}

fn config(m_stop: usize) -> BoostConfig {
    BoostConfig {
        step_length: 0.1,
        m_stop,
        cv_folds: 3,
        seed: 4,
    }
}

#[test]
fn training_loss_never_increases() {
    let (spec, design, y) = problem(200, 1);
    let state = boost_fit(&spec, &design, &y, &config(300)).unwrap();
    let mut prev = state.start_loss;
    for s in &state.steps {
        assert!(s.loss_after < prev);
        assert_eq!(s.loss_before, prev);
        prev = s.loss_after;
    }
    let replayed = total_loss(
        &spec,
        &state.coefficients_at(state.steps.len()),
        &design,
        &y,
    )
    .unwrap();
    assert!((replayed - prev).abs() < 1e-9 * prev.abs());
}

#[test]
fn signal_covariate_is_picked_first() {
    let (spec, design, y) = problem(300, 2);
    let state = boost_fit(&spec, &design, &y, &config(40)).unwrap();
    let first_slope = state.steps.iter().find(|s| s.covariate.is_some()).unwrap();
    let p = &spec.predictors[first_slope.predictor];
    assert_eq!(p.covariates[first_slope.covariate.unwrap()], "t2m.mean");
}

#[test]
fn boosting_is_reproducible() {
    let (spec, design, y) = problem(150, 3);
    let a = boost_fit(&spec, &design, &y, &config(100)).unwrap();
    let b = boost_fit(&spec, &design, &y, &config(100)).unwrap();
    assert_eq!(a, b);
    let ca = cross_validate_mstop(&spec, &design, &y, &config(100)).unwrap();
    let cb = cross_validate_mstop(&spec, &design, &y, &config(100)).unwrap();
    assert_eq!(ca, cb);
    assert!((1..=100).contains(&ca.m_opt));
    assert!(ca
        .validation_loss
        .iter()
        .all(|v| *v >= ca.validation_loss[ca.m_opt - 1]));
}

#[test]
fn too_few_rows_for_cross_validation() {
    let (spec, design, y) = problem(20, 5);
    assert!(cross_validate_mstop(&spec, &design, &y, &config(10)).is_err());
}

#[test]
fn coefficient_paths_csv() {
    let (spec, design, y) = problem(120, 6);
    let state = boost_fit(&spec, &design, &y, &config(25)).unwrap();
    let mut buf = Vec::new();
    state.write_paths(&mut buf, Some("st01")).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(
        rows.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "station_id",
            "iteration",
            "predictor_id",
            "covariate_id",
            "coefficient"
        ]
    );
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    let initial = spec
        .predictors
        .iter()
        .map(|p| p.covariates.len() + usize::from(p.has_intercept))
        .sum::<usize>();
    assert_eq!(records.len(), initial + 25);
    assert!(records[..initial]
        .iter()
        .all(|r| &r[1] == "0" && r[4].parse::<f64>().unwrap() == 0.0));
    assert!(records.iter().any(|r| &r[3] == INTERCEPT_ID));
    let last = &records[records.len() - 1];
    assert_eq!(&last[1], "25");
    let final_coeffs = state.coefficients_at(25).flatten(&spec);
    assert!(final_coeffs.contains(&last[4].parse::<f64>().unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn folds_partition_rows_evenly(n in 10usize..500, folds in 2usize..11, seed in any::<u64>()) {
        prop_assume!(folds <= n);
        let f = fold_assignment(n, folds, seed);
        prop_assert_eq!(f.len(), n);
        let mut counts = vec![0usize; folds];
        for &k in &f {
            counts[k] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(f, fold_assignment(n, folds, seed));
    }

    #[test]
    fn every_step_changes_one_coefficient_by_nu_rho(seed in 0u64..1000) {
        let (spec, design, y) = problem(80, seed);
        let state = boost_fit(&spec, &design, &y, &config(30)).unwrap();
        for (m, s) in state.steps.iter().enumerate() {
            let a = state.coefficients_at(m).flatten(&spec);
            let b = state.coefficients_at(m + 1).flatten(&spec);
            let changed: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
            prop_assert_eq!(changed.len(), 1);
            prop_assert_eq!(s.delta, 0.1 * s.rho);
        }
    }
}

/// Four ensemble variables whose columns share a common factor with loading `rho`.
fn correlated_design(n: usize, rho: f64, rng: &mut ChaCha8Rng) -> (ModelSpec, Frame) {
    let catalog = CovariateCatalog::new(&["t2m", "pr", "sh", "tcc"]).unwrap();
    let spec = make_samos_gb(&catalog, Loss::Crps).unwrap().spec;
    let common: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let own = (1.0 - rho * rho).sqrt();
    let cols: Vec<(String, Vec<f64>)> = catalog
        .all_ids()
        .into_iter()
        .map(|id| {
            let col = (0..n)
                .map(|i| rho * common[i] + own * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (id, col)
        })
        .collect();
    (spec, Frame::from_columns(cols).unwrap())
}

#[test]
fn pure_noise_stops_early() {
    let m_stop = 2000;
    let early = (0..20u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (spec, design) = correlated_design(300, 0.0, &mut rng);
            let y: Vec<f64> = (0..300).map(|_| rng.sample(StandardNormal)).collect();
            let (design, y, _) = standardize_columns(&design, &y).unwrap();
            let cfg = BoostConfig {
                step_length: 0.05,
                m_stop,
                cv_folds: 10,
                seed,
            };
            cross_validate_mstop(&spec, &design, &y, &cfg)
                .unwrap()
                .m_opt
                * 20
                <= m_stop
        })
        .count();
    assert!(early >= 18, "{early}/20 runs stopped within 5% of m_stop");
}

#[test]
fn small_steps_reach_lower_validation_loss() {
    let better = (0..20u64)
        .filter(|&seed| {
            let n = 500;
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let (spec, design) = correlated_design(n, 0.5, &mut rng);
            let c = |id: &str| design.require(id).unwrap().to_vec();
            let (a, b, d, s) = (c("t2m.mean"), c("t2m.ctrl"), c("sh.mean"), c("t2m.sd"));
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let sd = 0.5 * (0.3 * s[i]).exp();
                    0.6 * a[i] + 0.3 * b[i] + 0.2 * d[i] + sd * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let (design, y, _) = standardize_columns(&design, &y).unwrap();
            let best = |step_length: f64, m_stop: usize| {
                let cfg = BoostConfig {
                    step_length,
                    m_stop,
                    cv_folds: 3,
                    seed,
                };
                let cv = cross_validate_mstop(&spec, &design, &y, &cfg).unwrap();
                cv.validation_loss[cv.m_opt - 1]
            };
            best(0.05, 1500) < best(1.0, 100)
        })
        .count();
    assert!(better >= 16, "ν = 0.05 won on {better}/20 seeds");
}
