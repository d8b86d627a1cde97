mod common;

use std::fmt::Write as _;

use freeway_dlm::{
    evaluate, generate_synthetic, identity_transitions, load_dataset, load_layout, load_partial_day, mixing_transitions,
    split_dataset, write_dataset, write_layout, DatasetSchema, Days32, DlmError, DlmPredictor, Field32,
    Hyperparams, InstantaneousPredictor, Layout, MilepostOrder, Model32, PostProcess32, SyntheticSpec, TimeGrid,
};
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, body).unwrap();
    p
}

/// Three sensors, six steps, two days; `skip` cells of day b are left out.
fn speeds_csv(skip: &[(usize, usize)]) -> String {
    let mut s = String::from("day,sensor_id,time_index,speed_mph\n");
    for day in ["2012-05-02", "2012-05-01"] {
        for (i, id) in ["u", "v", "w"].iter().enumerate() {
            for k in 0..6 {
                if day == "2012-05-01" && skip.contains(&(i, k)) {
                    continue;
                }
                writeln!(s, "{day},{id},{k},{}", 40 + 5 * i + k).unwrap();
            }
        }
    }
    s
}

const LAYOUT: &str = "sensor_id,milepost_miles\nw,12.5\nu,3.0\nv,7.25\n";

#[test]
fn files_load_in_milepost_and_date_order() {
    let dir = tempfile::tempdir().unwrap();
    let speeds = write(&dir, "s.csv", &speeds_csv(&[(1, 0), (1, 3), (2, 5)]));
    let layout = write(&dir, "l.csv", LAYOUT);
    let grid = TimeGrid::new(360, 5, 6).unwrap();
    let report = load_dataset::<f64>(&speeds, &layout, &DatasetSchema::default(), grid).unwrap();
    let set = &report.dayset;
    assert_eq!(set.layout().ids(), ["u", "v", "w"]);
    assert_eq!(set.layout().positions(), [3.0, 7.25, 12.5]);
    let ids: Vec<&str> = set.days().iter().map(|d| d.day_id()).collect();
    assert_eq!(ids, ["2012-05-01", "2012-05-02"]);
    assert_eq!(report.imputed_cells, 3);
    let first = &set.days()[0];
    // sensor v: edge copies the nearest value, interior interpolates
    assert_eq!(first.values()[(1, 0)], 46.0);
    assert_eq!(first.values()[(1, 3)], 48.0);
    assert_eq!(first.values()[(2, 5)], 54.0);
    assert!(!first.is_observed(1, 3));
    assert!(report.rejected.is_empty());
}

#[test]
fn sparse_days_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let skip: Vec<(usize, usize)> = (0..6).map(|k| (0, k)).collect();
    let speeds = write(&dir, "s.csv", &speeds_csv(&skip));
    let layout = write(&dir, "l.csv", LAYOUT);
    let grid = TimeGrid::new(360, 5, 6).unwrap();
    let report = load_dataset::<f64>(&speeds, &layout, &DatasetSchema::default(), grid).unwrap();
    assert_eq!(report.dayset.len(), 1);
    assert_eq!(report.rejected[0].day_id, "2012-05-01");
    assert!((report.rejected[0].missing_fraction - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn malformed_rows_name_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let layout = write(&dir, "l.csv", LAYOUT);
    let grid = TimeGrid::new(360, 5, 6).unwrap();
    let schema = DatasetSchema::default();
    for bad in ["2012-05-01,u,2,fast", "2012-05-01,x,2,50", "2012-05-01,u,2,-3", "2012-05-01,u,two,50"] {
        let body = format!("day,sensor_id,time_index,speed_mph\n2012-05-01,u,1,50\n{bad}\n");
        let speeds = write(&dir, "s.csv", &body);
        match load_dataset::<f64>(&speeds, &layout, &schema, grid) {
            Err(DlmError::Parse { line, .. }) => assert_eq!(line, 3, "{bad}"),
            other => panic!("{bad}: {other:?}"),
        }
    }
    let empty = write(&dir, "e.csv", "");
    assert!(load_dataset::<f64>(&empty, &layout, &schema, grid).is_err());
}

#[test]
fn decreasing_mileposts_flip_the_axis() {
    let dir = tempfile::tempdir().unwrap();
    let layout = write(&dir, "l.csv", LAYOUT);
    let schema = DatasetSchema {
        milepost_order: MilepostOrder::Decreasing,
        ..Default::default()
    };
    let l: Layout = load_layout(&layout, &schema).unwrap();
    assert_eq!(l.ids(), ["w", "v", "u"]);
    assert_eq!(l.positions(), [0.0, 5.25, 9.5]);
}

#[test]
fn written_synthetic_days_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let grid = TimeGrid::new(360, 5, 8).unwrap();
    let mut spec = SyntheticSpec::new(grid, Layout::uniform(3, 6.0).unwrap(), mixing_transitions(3, 7, 0.2, 1).unwrap());
    spec.num_days = 4;
    spec.sigma = 0.5;
    let (set, _) = generate_synthetic::<f64>(&spec).unwrap();
    let (sp, lp) = (dir.path().join("s.csv"), dir.path().join("l.csv"));
    write_dataset(&sp, &set).unwrap();
    write_layout(&lp, set.layout()).unwrap();
    let back = load_dataset::<f64>(&sp, &lp, &DatasetSchema::default(), grid).unwrap().dayset;
    assert_eq!(back, set);
    let (id, partial) = load_partial_day::<f64>(&sp, set.layout(), &DatasetSchema::default(), &grid, 3, Some("2012-01-02")).unwrap();
    assert_eq!(id, "2012-01-02");
    assert_eq!(partial, set.days()[1].prefix(3));
}

#[test]
fn noiseless_synthesis_follows_the_transitions() {
    let m = 4;
    let grid = TimeGrid::new(360, 5, 12).unwrap();
    let hs = mixing_transitions::<f64>(m, 11, 0.5, 3).unwrap();
    let mut spec = SyntheticSpec::new(grid, Layout::uniform(m, 9.0).unwrap(), hs.clone());
    spec.num_days = 3;
    let (set, truth) = generate_synthetic(&spec).unwrap();
    assert_eq!(truth, hs);
    for day in set.days() {
        for (k, h) in hs.iter().enumerate() {
            let want = h.mul_vec(&day.velocity_at(k));
            let got = day.velocity_at(k + 1);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() <= 1e-12 * b.abs());
            }
        }
    }
}

#[test]
fn single_precision_pipeline() {
    let grid = TimeGrid::new(360, 5, 20).unwrap();
    let layout = freeway_dlm::Layout32::uniform(4, 10.0).unwrap();
    let mut spec = SyntheticSpec::new(grid, layout.clone(), identity_transitions::<f32>(4, 19));
    spec.num_days = 12;
    spec.sigma = 0.5;
    let (all, _): (Days32, _) = generate_synthetic(&spec).unwrap();
    let (train, _, test) = split_dataset(&all, (0.5, 0.25, 0.25)).unwrap();
    let model = Model32::fit_batch(&train, Hyperparams::new(1.0f32, 0.99).unwrap()).unwrap();
    let dlm = DlmPredictor::new(&model, PostProcess32::default());
    let cfg = freeway_dlm::Config32 {
        horizons: vec![0, 15],
        ..Default::default()
    };
    let report = evaluate(&[&dlm, &InstantaneousPredictor], &test, &cfg).unwrap();
    let mape = report.mape("dlm", 15, "all").unwrap();
    assert!(mape.is_finite() && mape < 10.0);
    let field = Field32::on_grid(&grid, 0, &layout, test.days()[0].values().clone()).unwrap();
    assert_eq!(field.values().cols(), 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_concatenate_to_the_whole(n in 3usize..60, a in 0.1f64..0.8, b in 0.05f64..0.5) {
        prop_assume!(a + b < 0.95);
        let mut r = common::rng(n as u64);
        let set = common::random_set(&mut r, 2, n, 3);
        if let Ok((x, y, z)) = split_dataset(&set, (a, b, 1.0 - a - b)) {
            let joined: Vec<_> = x.days().iter().chain(y.days()).chain(z.days()).cloned().collect();
            prop_assert_eq!(joined.as_slice(), set.days());
            prop_assert!(!x.is_empty() && !y.is_empty() && !z.is_empty());
        }
    }
}
