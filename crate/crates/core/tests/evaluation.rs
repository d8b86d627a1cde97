mod common;

use std::sync::Mutex;

use chrono::{NaiveDate, Weekday};
use freeway_dlm::eval::is_peak;
use freeway_dlm::{
    evaluate, generate_synthetic, grid_search, identity_transitions, improvement_rate, mape, mixing_transitions,
    period_masks_builtin, Config, Days, DlmPredictor, FieldPredictor, Freeway, Hyperparams, InitialSpeeds,
    InstantaneousPredictor, Matrix, Model, PostProcess, Result, SensorLayout, SyntheticSpec, TimeGrid, TripPlan,
};
use proptest::prelude::*;

fn synthetic(m: usize, steps: usize, days: usize, sigma: f64, identity: bool, seed: u64) -> Days {
    let grid = TimeGrid::new(360, 5, steps).unwrap();
    let layout = SensorLayout::uniform(m, 8.0).unwrap();
    let transitions = if identity {
        identity_transitions(m, steps - 1)
    } else {
        mixing_transitions(m, steps - 1, 0.3, seed).unwrap()
    };
    let mut spec = SyntheticSpec::new(grid, layout, transitions);
    spec.num_days = days;
    spec.sigma = sigma;
    spec.seed = seed;
    spec.initial = InitialSpeeds::Uniform { low: 35.0, high: 65.0 };
    generate_synthetic(&spec).unwrap().0
}

/// Looks the observed prefix up in the held-out set and returns the truth.
struct Oracle<'a> {
    test: &'a Days,
}

impl FieldPredictor<f64> for Oracle<'_> {
    fn name(&self) -> &str {
        "oracle"
    }

    fn forecast(&self, observed: &Matrix<f64>, until: usize) -> Result<Matrix<f64>> {
        let now = observed.cols() - 1;
        let day = self
            .test
            .days()
            .iter()
            .find(|d| d.prefix(now) == *observed)
            .expect("observed prefix matches a test day");
        Ok(day.values().columns_range(now + 1, until + 1))
    }
}

/// Records every call and checks it sees only the past.
struct Spy<'a> {
    test: &'a Days,
    calls: Mutex<Vec<(usize, usize)>>,
}

impl FieldPredictor<f64> for Spy<'_> {
    fn name(&self) -> &str {
        "spy"
    }

    fn forecast(&self, observed: &Matrix<f64>, until: usize) -> Result<Matrix<f64>> {
        let now = observed.cols() - 1;
        let hits = self.test.days().iter().filter(|d| d.prefix(now) == *observed).count();
        assert!(hits >= 1);
        self.calls.lock().unwrap().push((now, until));
        InstantaneousPredictor.forecast(observed, until)
    }
}

fn config(horizons: Vec<u32>, freeway: Freeway) -> Config {
    let (peak, off) = period_masks_builtin(freeway);
    Config {
        horizons,
        masks: vec![peak, off],
        ..Default::default()
    }
}

#[test]
fn identity_dynamics_predict_perfectly() {
    let train = synthetic(4, 20, 10, 0.0, true, 1);
    let test = synthetic(4, 20, 3, 0.0, true, 2);
    let model = Model::fit_batch(&train, Hyperparams::new(0.0, 1.0).unwrap()).unwrap();
    let dlm = DlmPredictor::new(&model, PostProcess::default());
    let report = evaluate(&[&dlm, &InstantaneousPredictor], &test, &config(vec![0, 15], Freeway::I5S)).unwrap();
    for h in [0, 15] {
        assert!(report.mape("dlm", h, "all").unwrap() < 1e-9);
        assert!(report.mape("inst", h, "all").unwrap() < 1e-9);
    }
    assert_eq!(report.unevaluable, 0);
}

#[test]
fn the_truth_improves_by_one() {
    let test = synthetic(3, 24, 4, 2.0, false, 3);
    let oracle = Oracle { test: &test };
    let report = evaluate(&[&oracle, &InstantaneousPredictor], &test, &config(vec![0, 30], Freeway::I210E)).unwrap();
    for h in [0, 30] {
        assert_eq!(report.mape("oracle", h, "all"), Some(0.0));
        assert!(report.mape("inst", h, "all").unwrap() > 0.0);
        assert_eq!(report.improvement("oracle", h, "all"), Some(1.0));
    }
}

#[test]
fn predictors_never_see_the_future() {
    let test = synthetic(3, 16, 3, 1.0, false, 4);
    let spy = Spy {
        test: &test,
        calls: Mutex::new(Vec::new()),
    };
    let cfg = Config {
        horizons: vec![0, 10],
        plan: TripPlan {
            routes: vec![],
            now_indices: Some(vec![2, 5, 9, 5]),
        },
        baseline: None,
        ..Default::default()
    };
    let report = evaluate(&[&spy], &test, &cfg).unwrap();
    let mut calls = spy.calls.into_inner().unwrap();
    calls.sort_unstable();
    // one forecast per day and current index
    assert_eq!(calls.len(), 9);
    assert!(calls.iter().all(|&(now, until)| until == 15 && [2, 5, 9].contains(&now)));
    let nows: Vec<usize> = report.records.iter().map(|r| r.now_index).collect();
    assert!(nows.iter().all(|n| [2, 5, 9].contains(n)));
}

#[test]
fn dlm_beats_frozen_field_on_mixing_data() {
    let all = synthetic(5, 30, 50, 1.0, false, 5);
    let train = all.with_days(all.days()[..40].to_vec()).unwrap();
    let test = all.with_days(all.days()[40..].to_vec()).unwrap();
    let model = Model::fit_batch(&train, Hyperparams::new(1.0, 1.0).unwrap()).unwrap();
    let dlm = DlmPredictor::new(&model, PostProcess::default());
    let report = evaluate(&[&dlm, &InstantaneousPredictor], &test, &config(vec![0], Freeway::I5S)).unwrap();
    let (d, i) = (report.mape("dlm", 0, "all").unwrap(), report.mape("inst", 0, "all").unwrap());
    assert!(d < i, "dlm {d} vs inst {i}");
    assert!(report.improvement("dlm", 0, "all").unwrap() > 0.0);
}

#[test]
fn singleton_grid_search() {
    let train = synthetic(3, 12, 8, 1.0, false, 6);
    let val = synthetic(3, 12, 3, 1.0, false, 7);
    let cfg = config(vec![0], Freeway::I5S);
    let table = grid_search(&train, &val, &[1.0], &[0.99], &cfg, &PostProcess::default(), Some("peak")).unwrap();
    assert_eq!((table.rhos.len(), table.lambdas.len()), (1, 1));
    let best = table.best.unwrap();
    assert_eq!((best.rho, best.lambda), (1.0, 0.99));
    assert_eq!(Some(best.mape), table.mape[0][0]);
    assert!(grid_search(&train, &val, &[], &[1.0], &cfg, &PostProcess::default(), None).is_err());
    assert!(grid_search(&train, &val, &[1.0], &[1.0], &cfg, &PostProcess::default(), Some("rush")).is_err());
}

#[test]
fn rank_deficient_cells_stay_empty() {
    let train = synthetic(5, 10, 3, 1.0, false, 8);
    let val = synthetic(5, 10, 2, 1.0, false, 9);
    let cfg = config(vec![0], Freeway::I5S);
    let table = grid_search(&train, &val, &[0.0, 1.0], &[1.0], &cfg, &PostProcess::default(), None).unwrap();
    assert_eq!(table.mape[0][0], None);
    assert!(table.mape[1][0].is_some());
    assert_eq!(table.best.unwrap().rho, 1.0);
}

#[test]
fn stationary_data_prefers_no_forgetting() {
    let train = synthetic(3, 14, 40, 2.0, false, 10);
    let val = synthetic(3, 14, 10, 2.0, false, 11);
    let table = grid_search(
        &train,
        &val,
        &[1.0],
        &[1.0, 0.9, 0.7],
        &config(vec![0], Freeway::I5S),
        &PostProcess::default(),
        None,
    )
    .unwrap();
    assert_eq!(table.best.unwrap().lambda, 1.0, "{:?}", table.mape);
}

#[test]
fn masks_partition_service_hours() {
    for fw in [Freeway::I5S, Freeway::I210E] {
        let (peak, off) = period_masks_builtin(fw);
        for day in freeway_dlm::ALL_DAYS {
            for minute in 0..24 * 60 {
                let (p, o) = (peak.contains(day, minute), off.contains(day, minute));
                assert!(!(p && o));
                assert_eq!(p || o, (360..=1260).contains(&minute), "{fw:?} {day} {minute}");
                assert_eq!(p, is_peak(fw, day, minute));
            }
        }
    }
}

#[test]
fn mask_spot_checks() {
    let cases = [
        (Freeway::I5S, Weekday::Mon, 6 * 60, true),
        (Freeway::I5S, Weekday::Mon, 10 * 60, false),
        (Freeway::I5S, Weekday::Fri, 18 * 60 + 55, true),
        (Freeway::I5S, Weekday::Sat, 8 * 60, false),
        (Freeway::I210E, Weekday::Sat, 13 * 60, true),
        (Freeway::I210E, Weekday::Sun, 15 * 60, false),
        (Freeway::I210E, Weekday::Wed, 20 * 60, false),
        (Freeway::I210E, Weekday::Tue, 9 * 60, false),
    ];
    for (fw, day, minute, want) in cases {
        assert_eq!(is_peak(fw, day, minute), want, "{fw:?} {day} {minute}");
    }
    let dated = synthetic(2, 4, 1, 0.0, true, 0);
    assert_eq!(dated.days()[0].date(), NaiveDate::from_ymd_opt(2012, 1, 1));
}

proptest! {
    #[test]
    fn mape_ignores_order(mut apes in proptest::collection::vec(0.0f64..200.0, 1..40), seed in any::<u64>()) {
        let before = mape(&apes).unwrap();
        use rand::seq::SliceRandom;
        apes.shuffle(&mut common::rng(seed));
        prop_assert!((mape(&apes).unwrap() - before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn improvement_falls_as_the_method_worsens(i in 0.1f64..50.0, a in 0.0f64..100.0, b in 0.0f64..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(improvement_rate(lo, i).unwrap() >= improvement_rate(hi, i).unwrap());
        prop_assert!(improvement_rate(lo, i).unwrap() <= 1.0);
        if hi > i {
            prop_assert!(improvement_rate(hi, i).unwrap() < 0.0);
        }
    }
}
