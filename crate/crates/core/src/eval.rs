//! Travel-time accuracy: APE/MAPE, horizon sweeps over test days, and
//! hyper-parameter grid search.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::Weekday;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{knn_forecast, KnnConfig};
use crate::dlm::{DlmModel, Hyperparams};
use crate::domain::{DaySet, DayVelocityMatrix, PeriodMask, PeriodWindow, TimeGrid, ALL_DAYS, WEEKDAYS};
use crate::error::{DlmError, Result};
use crate::ingest::csv_io;
use crate::linalg::Matrix;
use crate::predict::{predict_steps, PostProcessParams};
use crate::scalar::Real;
use crate::traveltime::{interpolate_field, travel_time, GriddedField};

/// Absolute percentage error, in percent.
pub fn ape<T: Real>(actual: T, predicted: T) -> Result<T> {
    if !(actual > T::zero() && actual.is_finite() && predicted.is_finite()) {
        return Err(DlmError::Parameter(format!(
            "APE needs a positive actual travel time and a finite prediction (got {actual}, {predicted})"
        )));
    }
    Ok(T::of(100.0) * ((actual - predicted) / actual).abs())
}

/// Arithmetic mean of APEs.
pub fn mape<T: Real>(apes: &[T]) -> Result<T> {
    if apes.is_empty() {
        return Err(DlmError::Data("MAPE of an empty record set".into()));
    }
    Ok(apes.iter().copied().sum::<T>() / T::of_usize(apes.len()))
}

/// `1 - mape_method / mape_inst`; negative when the method is worse.
pub fn improvement_rate<T: Real>(mape_method: T, mape_inst: T) -> Result<T> {
    if !(mape_inst > T::zero() && mape_inst.is_finite()) {
        return Err(DlmError::Parameter(format!(
            "improvement rate needs a positive baseline MAPE, got {mape_inst}"
        )));
    }
    Ok(T::one() - mape_method / mape_inst)
}

/// Anything that forecasts the rest of a day from what has been seen so far.
pub trait FieldPredictor<T: Real>: Sync {
    fn name(&self) -> &str;

    /// `observed` holds columns `0..=now`; the result holds columns
    /// `now + 1 ..= until`.
    fn forecast(&self, observed: &Matrix<T>, until: usize) -> Result<Matrix<T>>;

    /// Rejects test sets the predictor cannot serve.
    fn check(&self, _test: &DaySet<T>) -> Result<()> {
        Ok(())
    }
}

pub struct DlmPredictor<'a, T> {
    pub model: &'a DlmModel<T>,
    pub post: PostProcessParams<T>,
    pub label: String,
}

impl<'a, T: Real> DlmPredictor<'a, T> {
    pub fn new(model: &'a DlmModel<T>, post: PostProcessParams<T>) -> Self {
        Self {
            model,
            post,
            label: "dlm".into(),
        }
    }
}

impl<T: Real> FieldPredictor<T> for DlmPredictor<'_, T> {
    fn name(&self) -> &str {
        &self.label
    }

    fn forecast(&self, observed: &Matrix<T>, until: usize) -> Result<Matrix<T>> {
        let now = observed.cols() - 1;
        let v = observed.column(now);
        Ok(predict_steps(self.model, &v, now, until - now, &self.post)?.values)
    }

    fn check(&self, test: &DaySet<T>) -> Result<()> {
        if test.grid() != self.model.grid() || test.layout().len() != self.model.num_sensors() {
            return Err(DlmError::Dimension("model grid or sensor count differs from the test set".into()));
        }
        Ok(())
    }
}

/// Freezes the latest observation.
pub struct InstantaneousPredictor;

impl<T: Real> FieldPredictor<T> for InstantaneousPredictor {
    fn name(&self) -> &str {
        "inst"
    }

    fn forecast(&self, observed: &Matrix<T>, until: usize) -> Result<Matrix<T>> {
        let now = observed.cols() - 1;
        Ok(Matrix::from_fn(observed.rows(), until - now, |i, _| observed[(i, now)]))
    }
}

pub struct KnnPredictor<'a, T> {
    pub train: &'a DaySet<T>,
    pub cfg: KnnConfig,
}

impl<T: Real> FieldPredictor<T> for KnnPredictor<'_, T> {
    fn name(&self) -> &str {
        "knn"
    }

    fn forecast(&self, observed: &Matrix<T>, until: usize) -> Result<Matrix<T>> {
        knn_forecast(self.train, observed, until, &self.cfg)
    }

    fn check(&self, test: &DaySet<T>) -> Result<()> {
        if test.grid() != self.train.grid() || test.layout().len() != self.train.layout().len() {
            return Err(DlmError::Dimension("k-NN training grid or sensor count differs from the test set".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Route<T> {
    pub origin: T,
    pub destination: T,
}

/// Which trips to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripPlan<T> {
    /// Empty means the full corridor, first sensor to last.
    pub routes: Vec<Route<T>>,
    /// Current-time indices; `None` means every index.
    pub now_indices: Option<Vec<usize>>,
}

impl<T> Default for TripPlan<T> {
    fn default() -> Self {
        Self {
            routes: Vec::new(),
            now_indices: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripSpec<T> {
    pub now_index: usize,
    pub horizon_minutes: u32,
    pub departure_index: usize,
    pub origin: T,
    pub destination: T,
}

impl<T: Real> TripPlan<T> {
    /// Trips on `grid` whose departure (`now + h`) leaves at least one grid
    /// step before the end of the day.
    pub fn trips(&self, grid: &TimeGrid, first: T, last: T, horizons: &[u32]) -> Result<Vec<TripSpec<T>>> {
        let routes = if self.routes.is_empty() {
            vec![Route {
                origin: first,
                destination: last,
            }]
        } else {
            self.routes.clone()
        };
        let steps: Vec<usize> = horizons
            .iter()
            .map(|&h| {
                grid.steps_in(h).ok_or_else(|| {
                    DlmError::Parameter(format!("horizon {h} min is not a multiple of the {} min step", grid.step_minutes()))
                })
            })
            .collect::<Result<_>>()?;
        let last_index = grid.last_index();
        let nows: Vec<usize> = match &self.now_indices {
            Some(v) => {
                let mut v = v.clone();
                v.sort_unstable();
                v.dedup();
                v
            }
            None => (0..last_index).collect(),
        };
        let mut out = Vec::new();
        for &now in &nows {
            grid.check_index(now)?;
            for (&h, &s) in horizons.iter().zip(&steps) {
                let departure = now + s;
                if departure >= last_index {
                    continue;
                }
                for r in &routes {
                    out.push(TripSpec {
                        now_index: now,
                        horizon_minutes: h,
                        departure_index: departure,
                        origin: r.origin,
                        destination: r.destination,
                    });
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig<T> {
    pub horizons: Vec<u32>,
    /// "all" is always reported in addition to these.
    pub masks: Vec<PeriodMask>,
    pub plan: TripPlan<T>,
    pub delta_x: T,
    /// Predictor name improvement rates are measured against.
    pub baseline: Option<String>,
}

impl<T: Real> Default for EvalConfig<T> {
    fn default() -> Self {
        Self {
            horizons: vec![0, 15, 30, 60],
            masks: Vec::new(),
            plan: TripPlan::default(),
            delta_x: T::of(0.01),
            baseline: Some("inst".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub day_id: String,
    pub predictor: String,
    pub now_index: usize,
    pub horizon_minutes: u32,
    pub departure_index: usize,
    pub departure_minute: u32,
    pub origin: f64,
    pub destination: f64,
    pub actual_minutes: f64,
    /// `None` when the trip ran off the end of the predicted field.
    pub predicted_minutes: Option<f64>,
    pub ape: Option<f64>,
    pub masks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub predictor: String,
    pub horizon_minutes: u32,
    pub mask: String,
    pub count: usize,
    pub unevaluable: usize,
    pub mape: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub predictor: String,
    pub horizon_minutes: u32,
    pub mask: String,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<TripRecord>,
    pub aggregates: Vec<Aggregate>,
    pub improvements: Vec<Improvement>,
    /// Trips skipped because the ground truth itself ends before arrival.
    pub truth_unavailable: usize,
    pub unevaluable: usize,
}

pub const ALL_MASK: &str = "all";

impl EvalReport {
    pub fn aggregate(&self, predictor: &str, horizon: u32, mask: &str) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.predictor == predictor && a.horizon_minutes == horizon && a.mask == mask)
    }

    pub fn mape(&self, predictor: &str, horizon: u32, mask: &str) -> Option<f64> {
        self.aggregate(predictor, horizon, mask).and_then(|a| a.mape)
    }

    pub fn improvement(&self, predictor: &str, horizon: u32, mask: &str) -> Option<f64> {
        self.improvements
            .iter()
            .find(|a| a.predictor == predictor && a.horizon_minutes == horizon && a.mask == mask)
            .and_then(|a| a.rate)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per trip record.
    pub fn write_records_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record([
            "day",
            "predictor",
            "now_index",
            "horizon_minutes",
            "departure_index",
            "departure_minute",
            "origin_miles",
            "destination_miles",
            "actual_minutes",
            "predicted_minutes",
            "ape_percent",
            "masks",
        ])
        .map_err(|e| csv_io(path, e))?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.day_id.clone(),
                r.predictor.clone(),
                r.now_index.to_string(),
                r.horizon_minutes.to_string(),
                r.departure_index.to_string(),
                r.departure_minute.to_string(),
                r.origin.to_string(),
                r.destination.to_string(),
                r.actual_minutes.to_string(),
                opt(r.predicted_minutes),
                opt(r.ape),
                r.masks.join(";"),
            ])
            .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| DlmError::io(path, e))
    }
}

fn mask_names<T: Real>(day: &DayVelocityMatrix<T>, minute: u32, masks: &[PeriodMask]) -> Result<Vec<String>> {
    let mut names = vec![ALL_MASK.to_string()];
    for mask in masks {
        let inside = mask.contains_day_minute(day, minute).ok_or_else(|| {
            DlmError::Data(format!(
                "day `{}` has no calendar date, so mask `{}` cannot classify it",
                day.day_id(),
                mask.name
            ))
        })?;
        if inside {
            names.push(mask.name.clone());
        }
    }
    Ok(names)
}

fn evaluate_day<T: Real>(
    predictors: &[&dyn FieldPredictor<T>],
    test: &DaySet<T>,
    day: &DayVelocityMatrix<T>,
    trips: &[TripSpec<T>],
    cfg: &EvalConfig<T>,
) -> Result<(Vec<TripRecord>, usize)> {
    let grid = test.grid();
    let layout = test.layout();
    let last = grid.last_index();
    let truth = interpolate_field(GriddedField::on_grid(grid, 0, layout, day.values().clone())?);
    let mut records = Vec::new();
    let mut truth_unavailable = 0;
    let mut fields: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for trip in trips {
        let t_dep: T = grid.minute_at(trip.departure_index);
        let actual = match travel_time(&truth, t_dep, trip.origin, trip.destination, cfg.delta_x) {
            Ok(a) => a,
            Err(DlmError::HorizonExceeded { .. }) => {
                truth_unavailable += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        if !fields.contains_key(&trip.now_index) {
            // predictions are causal, so forecasting straight to the end of the
            // grid gives the same field as any shorter request that succeeds
            let observed = day.prefix(trip.now_index);
            let now_col = observed.column(trip.now_index);
            let mut built = Vec::with_capacity(predictors.len());
            for p in predictors {
                let forecast = p.forecast(&observed, last)?;
                if forecast.shape() != (layout.len(), last - trip.now_index) {
                    return Err(DlmError::Dimension(format!(
                        "predictor `{}` returned a {}x{} forecast",
                        p.name(),
                        forecast.rows(),
                        forecast.cols()
                    )));
                }
                let mut cols = vec![now_col.clone()];
                cols.extend((0..forecast.cols()).map(|j| forecast.column(j)));
                let values = Matrix::from_columns(&cols)?;
                built.push(interpolate_field(GriddedField::on_grid(grid, trip.now_index, layout, values)?));
            }
            fields.insert(trip.now_index, built);
        }
        let minute = grid.minute_at_u32(trip.departure_index);
        let masks = mask_names(day, minute, &cfg.masks)?;
        for (p, field) in predictors.iter().zip(&fields[&trip.now_index]) {
            let predicted = match travel_time(field, t_dep, trip.origin, trip.destination, cfg.delta_x) {
                Ok(v) => Some(v.to_f64_lossy()),
                Err(DlmError::HorizonExceeded { .. }) => None,
                Err(e) => return Err(e),
            };
            let ape = predicted
                .map(|v| ape(actual.to_f64_lossy(), v))
                .transpose()?;
            records.push(TripRecord {
                day_id: day.day_id().to_string(),
                predictor: p.name().to_string(),
                now_index: trip.now_index,
                horizon_minutes: trip.horizon_minutes,
                departure_index: trip.departure_index,
                departure_minute: minute,
                origin: trip.origin.to_f64_lossy(),
                destination: trip.destination.to_f64_lossy(),
                actual_minutes: actual.to_f64_lossy(),
                predicted_minutes: predicted,
                ape,
                masks: masks.clone(),
            });
        }
        // drop fields no later trip needs
        fields.retain(|&now, _| now >= trip.now_index);
    }
    Ok((records, truth_unavailable))
}

/// Sweeps every test day, trip, and horizon. Predictors only ever see the
/// test day's columns up to the current index.
pub fn evaluate<T: Real>(predictors: &[&dyn FieldPredictor<T>], test: &DaySet<T>, cfg: &EvalConfig<T>) -> Result<EvalReport> {
    if predictors.is_empty() {
        return Err(DlmError::Parameter("evaluation needs at least one predictor".into()));
    }
    if !(cfg.delta_x > T::zero()) {
        return Err(DlmError::Parameter(format!("space increment must be positive, got {}", cfg.delta_x)));
    }
    let mut names: Vec<&str> = predictors.iter().map(|p| p.name()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(DlmError::Parameter("predictor names must be unique".into()));
    }
    for p in predictors {
        p.check(test)?;
    }
    let layout = test.layout();
    if layout.len() < 2 {
        return Err(DlmError::Parameter("travel-time evaluation needs at least 2 sensors".into()));
    }
    let trips = cfg
        .plan
        .trips(test.grid(), layout.first_position(), layout.last_position(), &cfg.horizons)?;
    let per_day: Vec<(Vec<TripRecord>, usize)> = test
        .days()
        .par_iter()
        .map(|day| evaluate_day(predictors, test, day, &trips, cfg))
        .collect::<Result<_>>()?;
    let mut records = Vec::new();
    let mut truth_unavailable = 0;
    for (r, t) in per_day {
        records.extend(r);
        truth_unavailable += t;
    }
    Ok(summarize(records, truth_unavailable, predictors, cfg))
}

fn summarize<T: Real>(
    records: Vec<TripRecord>,
    truth_unavailable: usize,
    predictors: &[&dyn FieldPredictor<T>],
    cfg: &EvalConfig<T>,
) -> EvalReport {
    let mask_list: Vec<String> = std::iter::once(ALL_MASK.to_string())
        .chain(cfg.masks.iter().map(|m| m.name.clone()))
        .collect();
    let mut aggregates = Vec::new();
    for p in predictors {
        for &h in &cfg.horizons {
            for mask in &mask_list {
                let group = records
                    .iter()
                    .filter(|r| r.predictor == p.name() && r.horizon_minutes == h && r.masks.contains(mask));
                let (mut apes, mut unevaluable) = (Vec::new(), 0);
                for r in group {
                    match r.ape {
                        Some(a) => apes.push(a),
                        None => unevaluable += 1,
                    }
                }
                aggregates.push(Aggregate {
                    predictor: p.name().to_string(),
                    horizon_minutes: h,
                    mask: mask.clone(),
                    count: apes.len(),
                    unevaluable,
                    mape: mape(&apes).ok(),
                });
            }
        }
    }
    let mut improvements = Vec::new();
    if let Some(base) = &cfg.baseline {
        for a in &aggregates {
            if &a.predictor == base {
                continue;
            }
            let reference = aggregates
                .iter()
                .find(|b| &b.predictor == base && b.horizon_minutes == a.horizon_minutes && b.mask == a.mask);
            if let Some(b) = reference {
                let rate = match (a.mape, b.mape) {
                    (Some(m), Some(i)) => improvement_rate(m, i).ok(),
                    _ => None,
                };
                improvements.push(Improvement {
                    predictor: a.predictor.clone(),
                    horizon_minutes: a.horizon_minutes,
                    mask: a.mask.clone(),
                    rate,
                });
            }
        }
    }
    let unevaluable = records.iter().filter(|r| r.ape.is_none()).count();
    EvalReport {
        records,
        aggregates,
        improvements,
        truth_unavailable,
        unevaluable,
    }
}

/// Validation MAPE per `(rho, lambda)`, rho along rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchTable {
    pub rhos: Vec<f64>,
    pub lambdas: Vec<f64>,
    /// `None` where fitting failed (rank deficiency at `rho = 0`) or no trip
    /// fell in the selection mask.
    pub mape: Vec<Vec<Option<f64>>>,
    pub best: Option<GridCell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rho: f64,
    pub lambda: f64,
    pub mape: f64,
}

/// Regularization values searched by default.
pub const DEFAULT_RHOS: [f64; 12] = [0.0, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0, 3000.0, 10000.0];
/// Forgetting factors searched by default.
pub const DEFAULT_LAMBDAS: [f64; 5] = [1.0, 0.999, 0.995, 0.99, 0.95];

/// Fits one model per pair on `train` and scores the DLM on `val`, pooling
/// every configured horizon. Only records inside mask `select` count, or all
/// records when `select` is `None`.
pub fn grid_search<T: Real>(
    train: &DaySet<T>,
    val: &DaySet<T>,
    rhos: &[T],
    lambdas: &[T],
    cfg: &EvalConfig<T>,
    post: &PostProcessParams<T>,
    select: Option<&str>,
) -> Result<GridSearchTable> {
    if rhos.is_empty() || lambdas.is_empty() {
        return Err(DlmError::Parameter("grid search needs non-empty rho and lambda sets".into()));
    }
    if let Some(name) = select {
        if name != ALL_MASK && !cfg.masks.iter().any(|m| m.name == name) {
            return Err(DlmError::Parameter(format!("selection mask `{name}` is not configured")));
        }
    }
    let hyper: Vec<Hyperparams<T>> = rhos
        .iter()
        .flat_map(|&r| lambdas.iter().map(move |&l| Hyperparams::new(r, l)))
        .collect::<Result<_>>()?;
    let scoring = EvalConfig {
        baseline: None,
        ..cfg.clone()
    };
    let mask = select.unwrap_or(ALL_MASK);
    let cells: Vec<Option<f64>> = hyper
        .par_iter()
        .map(|&h| {
            let model = match DlmModel::fit_batch(train, h) {
                Ok(m) => m,
                Err(DlmError::RankDeficient { k }) => {
                    log::warn!("rho = {}, lambda = {}: rank deficient at k = {k}", h.regularization, h.forgetting);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let dlm = DlmPredictor::new(&model, *post);
            let report = evaluate(&[&dlm as &dyn FieldPredictor<T>], val, &scoring)?;
            let apes: Vec<f64> = report
                .records
                .iter()
                .filter(|r| r.masks.iter().any(|m| m == mask))
                .filter_map(|r| r.ape)
                .collect();
            Ok(mape(&apes).ok())
        })
        .collect::<Result<_>>()?;
    let rhos: Vec<f64> = rhos.iter().map(|r| r.to_f64_lossy()).collect();
    let lambdas: Vec<f64> = lambdas.iter().map(|l| l.to_f64_lossy()).collect();
    let mape: Vec<Vec<Option<f64>>> = cells.chunks(lambdas.len()).map(|c| c.to_vec()).collect();
    let mut best: Option<GridCell> = None;
    for (i, row) in mape.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = *cell {
                if best.is_none_or(|b| v < b.mape) {
                    best = Some(GridCell {
                        rho: rhos[i],
                        lambda: lambdas[j],
                        mape: v,
                    });
                }
            }
        }
    }
    Ok(GridSearchTable {
        rhos,
        lambdas,
        mape,
        best,
    })
}

impl GridSearchTable {
    /// rho rows by lambda columns; failed cells are empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header = vec!["rho\\lambda".to_string()];
        header.extend(self.lambdas.iter().map(|l| l.to_string()));
        w.write_record(&header).map_err(|e| csv_io(path, e))?;
        for (rho, row) in self.rhos.iter().zip(&self.mape) {
            let mut rec = vec![rho.to_string()];
            rec.extend(row.iter().map(|c| c.map(|v| format!("{v:.3}")).unwrap_or_default()));
            w.write_record(&rec).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| DlmError::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Freeway {
    I5S,
    I210E,
}

impl std::str::FromStr for Freeway {
    type Err = DlmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "i5s" => Ok(Freeway::I5S),
            "i210e" => Ok(Freeway::I210E),
            _ => Err(DlmError::Parameter(format!("unknown freeway `{s}` (expected i5s or i210e)"))),
        }
    }
}

const SERVICE_START: u32 = 6 * 60;
const SERVICE_END: u32 = 21 * 60;

/// `(peak, off-peak)`. Windows start inclusive and end exclusive; off-peak is
/// the rest of 6 AM to 9 PM (9 PM itself included).
pub fn period_masks_builtin(freeway: Freeway) -> (PeriodMask, PeriodMask) {
    let hours = |a: u32, b: u32| (a * 60, b * 60);
    let peak_windows: Vec<PeriodWindow> = match freeway {
        Freeway::I5S => [hours(6, 10), hours(15, 19)]
            .iter()
            .map(|&(s, e)| PeriodWindow::new(&WEEKDAYS, s, e))
            .collect(),
        Freeway::I210E => {
            let (s, e) = hours(13, 20);
            vec![PeriodWindow::new(&ALL_DAYS[..6], s, e)]
        }
    };
    let service = PeriodWindow {
        days: ALL_DAYS.to_vec(),
        start_minute: SERVICE_START,
        end_minute: SERVICE_END,
        end_inclusive: true,
    };
    let peak = PeriodMask::new("peak", peak_windows.clone(), vec![]);
    let offpeak = PeriodMask::new("offpeak", vec![service], peak_windows);
    (peak, offpeak)
}

/// `true` for weekday/minute pairs in the peak mask of `freeway`.
pub fn is_peak(freeway: Freeway, day: Weekday, minute: u32) -> bool {
    period_masks_builtin(freeway).0.contains(day, minute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::SensorLayout;

    #[test]
    fn metric_examples() {
        assert_eq!(ape(20.0, 18.0).unwrap(), 10.0);
        assert_eq!(ape(7.0, 7.0).unwrap(), 0.0);
        assert!((ape(10.0f64, 13.0).unwrap() - 30.0).abs() < 1e-12);
        assert!(ape(0.0, 1.0).is_err());
        assert_eq!(mape(&[10.0, 20.0]).unwrap(), 15.0);
        assert_eq!(mape(&[7.5]).unwrap(), 7.5);
        assert!(mape::<f64>(&[]).is_err());
        assert!((improvement_rate(4.4f64, 10.0).unwrap() - 0.56).abs() < 1e-12);
        assert_eq!(improvement_rate(3.0, 3.0).unwrap(), 0.0);
        assert!(improvement_rate(11.0, 10.0).unwrap() < 0.0);
        assert!(improvement_rate(1.0, 0.0).is_err());
    }

    #[test]
    fn builtin_masks() {
        use Weekday::*;
        assert!(is_peak(Freeway::I5S, Tue, 8 * 60));
        assert!(!is_peak(Freeway::I5S, Sat, 8 * 60));
        assert!(!is_peak(Freeway::I210E, Sun, 15 * 60));
        assert!(is_peak(Freeway::I210E, Sat, 15 * 60));
        let (peak, off) = period_masks_builtin(Freeway::I5S);
        for day in ALL_DAYS {
            for minute in (SERVICE_START..=SERVICE_END).step_by(5) {
                assert_ne!(peak.contains(day, minute), off.contains(day, minute));
            }
        }
        assert!("I210-E".parse::<Freeway>().is_ok());
        assert!("i405".parse::<Freeway>().is_err());
    }

    #[test]
    fn trip_generation() {
        let grid = TimeGrid::new(360, 5, 10).unwrap();
        let plan = TripPlan::<f64>::default();
        let trips = plan.trips(&grid, 0.0, 3.0, &[0, 15]).unwrap();
        // h = 0: now 0..=8; h = 15: now 0..=5
        assert_eq!(trips.len(), 9 + 6);
        assert!(trips.iter().all(|t| t.departure_index < 9));
        assert!(plan.trips(&grid, 0.0, 3.0, &[7]).is_err());
    }

    struct Spy;

    impl FieldPredictor<f64> for Spy {
        fn name(&self) -> &str {
            "spy"
        }

        fn forecast(&self, observed: &Matrix<f64>, until: usize) -> Result<Matrix<f64>> {
            InstantaneousPredictor.forecast(observed, until)
        }
    }

    #[test]
    fn constant_day_is_exact_for_instantaneous() {
        let grid = TimeGrid::new(360, 5, 13).unwrap();
        let layout = SensorLayout::uniform(3, 2.0).unwrap();
        let day = DayVelocityMatrix::new("2012-01-03", Matrix::from_fn(3, 13, |i, _| 50.0 + 5.0 * i as f64)).unwrap();
        let test = DaySet::new(grid, layout, vec![day]).unwrap();
        let (peak, off) = period_masks_builtin(Freeway::I5S);
        let cfg = EvalConfig {
            horizons: vec![0, 15],
            masks: vec![peak, off],
            ..Default::default()
        };
        let report = evaluate(&[&InstantaneousPredictor, &Spy], &test, &cfg).unwrap();
        assert_eq!(report.mape("inst", 0, ALL_MASK), Some(0.0));
        assert_eq!(report.mape("spy", 15, "peak"), Some(0.0));
        assert_eq!(report.mape("spy", 15, "offpeak"), None);
        assert_eq!(report.improvement("spy", 0, ALL_MASK), None);
        assert!(report.records.iter().all(|r| r.masks.len() == 2));
    }
}
