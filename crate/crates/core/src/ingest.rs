//! CSV datasets, chronological splits, and synthetic corridors.
//!
//! Speed files hold one row per observed cell:
//!
//! ```text
//! day,sensor_id,time_index,speed_mph
//! 2012-01-03,715898,0,64.2
//! ```
//!
//! Layout files map sensor ids to mileposts:
//!
//! ```text
//! sensor_id,milepost_miles
//! 715898,0.0
//! ```
//!
//! Time is carried as a grid index rather than a timestamp, so no time zone
//! conversion happens here. An empty `speed_mph` field counts as missing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{DaySet, DayVelocityMatrix, SensorLayout, TimeGrid};
use crate::error::{DlmError, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Direction of increasing milepost relative to travel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MilepostOrder {
    /// Mileposts grow in the direction of travel.
    #[default]
    Increasing,
    /// Mileposts shrink along travel; positions become `max - milepost`.
    Decreasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub day_column: String,
    pub sensor_column: String,
    pub time_index_column: String,
    pub speed_column: String,
    pub layout_sensor_column: String,
    pub layout_milepost_column: String,
    pub milepost_order: MilepostOrder,
    /// Days missing more than this fraction of cells are rejected.
    pub max_missing_fraction: f64,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            day_column: "day".into(),
            sensor_column: "sensor_id".into(),
            time_index_column: "time_index".into(),
            speed_column: "speed_mph".into(),
            layout_sensor_column: "sensor_id".into(),
            layout_milepost_column: "milepost_miles".into(),
            milepost_order: MilepostOrder::Increasing,
            max_missing_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedDay {
    pub day_id: String,
    pub missing_fraction: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport<T> {
    pub dayset: DaySet<T>,
    pub rejected: Vec<RejectedDay>,
    pub imputed_cells: usize,
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> DlmError {
    DlmError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| DlmError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn column_positions(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
    names: &[&str],
) -> Result<Vec<usize>> {
    let headers = reader.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    if headers.is_empty() {
        return Err(parse_error(path, 1, "empty file (missing header)"));
    }
    names
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| parse_error(path, 1, format!("missing column `{name}`")))
        })
        .collect()
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Sensor layout ordered by position along the direction of travel.
pub fn load_layout<T: Real>(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<SensorLayout<T>> {
    let path = path.as_ref();
    let mut reader = open_csv(path)?;
    let cols = column_positions(
        &mut reader,
        path,
        &[&schema.layout_sensor_column, &schema.layout_milepost_column],
    )?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record_line(&record);
        let id = record.get(cols[0]).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_error(path, line, "empty sensor id"));
        }
        let milepost: f64 = record
            .get(cols[1])
            .unwrap_or("")
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad milepost for sensor `{id}`")))?;
        if !milepost.is_finite() {
            return Err(parse_error(path, line, format!("non-finite milepost for sensor `{id}`")));
        }
        rows.push((id, milepost));
    }
    if rows.is_empty() {
        return Err(parse_error(path, 1, "layout file has no sensors"));
    }
    if schema.milepost_order == MilepostOrder::Decreasing {
        let max = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        for r in &mut rows {
            r.1 = max - r.1;
        }
    }
    rows.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (ids, positions): (Vec<_>, Vec<_>) = rows.into_iter().map(|(id, p)| (id, T::of(p))).unzip();
    SensorLayout::new(ids, positions)
}

/// Raw cells per day id, row-major `M x columns`.
type CellTable<T> = BTreeMap<String, Vec<Option<T>>>;

fn read_cells<T: Real>(
    path: &Path,
    schema: &DatasetSchema,
    layout: &SensorLayout<T>,
    columns: usize,
    grid: &TimeGrid,
) -> Result<CellTable<T>> {
    let mut reader = open_csv(path)?;
    let cols = column_positions(
        &mut reader,
        path,
        &[
            &schema.day_column,
            &schema.sensor_column,
            &schema.time_index_column,
            &schema.speed_column,
        ],
    )?;
    let sensor_index: HashMap<&str, usize> = layout.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let m = layout.len();
    let mut table: CellTable<T> = BTreeMap::new();
    let mut skipped_future = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record_line(&record);
        let field = |c: usize| record.get(c).unwrap_or("");
        let day = field(cols[0]);
        if day.is_empty() {
            return Err(parse_error(path, line, "empty day"));
        }
        let sensor = field(cols[1]);
        let i = *sensor_index.get(sensor).ok_or_else(|| {
            parse_error(path, line, format!("unknown sensor id `{sensor}` (not present in layout)"))
        })?;
        let k: usize = field(cols[2])
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad time index `{}`", field(cols[2]))))?;
        if k > grid.last_index() {
            return Err(parse_error(
                path,
                line,
                format!("time index {k} outside grid 0..={}", grid.last_index()),
            ));
        }
        let raw = field(cols[3]);
        let speed = if raw.is_empty() {
            None
        } else {
            let v: f64 = raw.parse().map_err(|_| parse_error(path, line, format!("bad speed `{raw}`")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(parse_error(path, line, format!("speed {v} must be finite and positive")));
            }
            Some(T::of(v))
        };
        if k >= columns {
            skipped_future += 1;
            continue;
        }
        let cells = table.entry(day.to_string()).or_insert_with(|| vec![None; m * columns]);
        let cell = &mut cells[i * columns + k];
        if cell.is_some() {
            return Err(parse_error(path, line, format!("duplicate cell for day {day}, sensor {sensor}, index {k}")));
        }
        *cell = speed;
    }
    if skipped_future > 0 {
        log::info!("{}: ignored {skipped_future} cells past index {}", path.display(), columns - 1);
    }
    Ok(table)
}

/// Fills gaps along one sensor's row: linear between observations, nearest
/// value before the first and after the last. `None` if nothing was observed.
pub fn impute_row<T: Real>(row: &[Option<T>]) -> Option<Vec<T>> {
    let known: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_some()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut out = vec![T::zero(); row.len()];
    for j in 0..row.len() {
        out[j] = match row[j] {
            Some(v) => v,
            None if j < first => row[first].unwrap(),
            None if j > last => row[last].unwrap(),
            None => {
                let hi = known[known.partition_point(|&q| q < j)];
                let lo = known[known.partition_point(|&q| q < j) - 1];
                let (a, b) = (row[lo].unwrap(), row[hi].unwrap());
                let w = T::of_usize(j - lo) / T::of_usize(hi - lo);
                a + (b - a) * w
            }
        };
    }
    Some(out)
}

fn assemble_day<T: Real>(
    id: String,
    cells: &[Option<T>],
    m: usize,
    columns: usize,
) -> std::result::Result<DayVelocityMatrix<T>, String> {
    let mut values = Vec::with_capacity(m * columns);
    for i in 0..m {
        let row = &cells[i * columns..(i + 1) * columns];
        values.extend(impute_row(row).ok_or_else(|| format!("sensor {i} has no observations"))?);
    }
    let observed = cells.iter().map(Option::is_some).collect();
    let matrix = Matrix::from_row_major(m, columns, values).map_err(|e| e.to_string())?;
    DayVelocityMatrix::with_mask(id, matrix, observed).map_err(|e| e.to_string())
}

/// One day per distinct day id, in id order; ISO dates therefore come out
/// chronologically.
pub fn load_dataset<T: Real>(
    speed_file: impl AsRef<Path>,
    layout_file: impl AsRef<Path>,
    schema: &DatasetSchema,
    grid: TimeGrid,
) -> Result<LoadReport<T>> {
    let layout = load_layout(layout_file, schema)?;
    load_dataset_with_layout(speed_file, layout, schema, grid)
}

pub fn load_dataset_with_layout<T: Real>(
    speed_file: impl AsRef<Path>,
    layout: SensorLayout<T>,
    schema: &DatasetSchema,
    grid: TimeGrid,
) -> Result<LoadReport<T>> {
    if !(0.0..=1.0).contains(&schema.max_missing_fraction) {
        return Err(DlmError::Parameter("max missing fraction must be in [0, 1]".into()));
    }
    let path = speed_file.as_ref();
    let m = layout.len();
    let columns = grid.num_steps();
    let table = read_cells(path, schema, &layout, columns, &grid)?;
    let total = (m * columns) as f64;
    let mut days = Vec::new();
    let mut rejected = Vec::new();
    let mut imputed_cells = 0;
    for (id, cells) in table {
        let missing = cells.iter().filter(|c| c.is_none()).count();
        let fraction = missing as f64 / total;
        if fraction > schema.max_missing_fraction {
            log::warn!("rejecting day {id}: {:.1}% of cells missing", 100.0 * fraction);
            rejected.push(RejectedDay {
                day_id: id,
                missing_fraction: fraction,
                reason: format!("more than {}% of cells missing", 100.0 * schema.max_missing_fraction),
            });
            continue;
        }
        match assemble_day(id.clone(), &cells, m, columns) {
            Ok(day) => {
                imputed_cells += missing;
                days.push(day);
            }
            Err(reason) => {
                log::warn!("rejecting day {id}: {reason}");
                rejected.push(RejectedDay {
                    day_id: id,
                    missing_fraction: fraction,
                    reason,
                });
            }
        }
    }
    Ok(LoadReport {
        dayset: DaySet::new(grid, layout, days)?,
        rejected,
        imputed_cells,
    })
}

/// The first `now_index + 1` columns of one day, for forecasting from a
/// partially observed day. Cells past `now_index` are ignored. With several
/// days in the file, `day` selects one.
pub fn load_partial_day<T: Real>(
    path: impl AsRef<Path>,
    layout: &SensorLayout<T>,
    schema: &DatasetSchema,
    grid: &TimeGrid,
    now_index: usize,
    day: Option<&str>,
) -> Result<(String, Matrix<T>)> {
    grid.check_index(now_index)?;
    let path = path.as_ref();
    let columns = now_index + 1;
    let mut table = read_cells(path, schema, layout, columns, grid)?;
    let id = match day {
        Some(d) => d.to_string(),
        None if table.len() == 1 => table.keys().next().unwrap().clone(),
        None if table.is_empty() => return Err(DlmError::Data(format!("{}: no cells up to index {now_index}", path.display()))),
        None => {
            return Err(DlmError::Data(format!(
                "{} holds {} days; select one",
                path.display(),
                table.len()
            )));
        }
    };
    let cells = table
        .remove(&id)
        .ok_or_else(|| DlmError::Data(format!("day `{id}` not found in {}", path.display())))?;
    let day = assemble_day(id.clone(), &cells, layout.len(), columns).map_err(DlmError::Data)?;
    Ok((id, day.values().clone()))
}

/// Writes measured cells only, so reloading reproduces the masks.
pub fn write_dataset<T: Real>(path: impl AsRef<Path>, dayset: &DaySet<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["day", "sensor_id", "time_index", "speed_mph"]).map_err(|e| csv_io(path, e))?;
    for day in dayset.days() {
        for (i, id) in dayset.layout().ids().iter().enumerate() {
            for k in 0..day.num_steps() {
                if day.is_observed(i, k) {
                    let v = day.values()[(i, k)];
                    w.write_record([day.day_id(), id, &k.to_string(), &v.to_string()])
                        .map_err(|e| csv_io(path, e))?;
                }
            }
        }
    }
    w.flush().map_err(|e| DlmError::io(path, e))
}

pub fn write_layout<T: Real>(path: impl AsRef<Path>, layout: &SensorLayout<T>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["sensor_id", "milepost_miles"]).map_err(|e| csv_io(path, e))?;
    for (id, p) in layout.ids().iter().zip(layout.positions()) {
        w.write_record([id.as_str(), &p.to_string()]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| DlmError::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> DlmError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DlmError::io(path, io),
        other => DlmError::Data(format!("{}: {other:?}", path.display())),
    }
}

/// Contiguous chronological split; train gets the earliest days.
///
/// Train and validation sizes are `round(fraction * n)`; test takes the rest.
pub fn split_dataset<T: Real>(dayset: &DaySet<T>, fractions: (f64, f64, f64)) -> Result<(DaySet<T>, DaySet<T>, DaySet<T>)> {
    let (a, b, c) = fractions;
    if ![a, b, c].iter().all(|f| f.is_finite() && *f > 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(DlmError::Parameter(format!(
            "split fractions must be positive and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = dayset.len();
    if n < 3 {
        return Err(DlmError::Data(format!("cannot split {n} days three ways")));
    }
    let n_train = (a * n as f64).round() as usize;
    let n_val = (b * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(DlmError::Data(format!(
            "fractions ({a}, {b}, {c}) leave an empty part of {n} days"
        )));
    }
    let days = dayset.days();
    Ok((
        dayset.with_days(days[..n_train].to_vec())?,
        dayset.with_days(days[n_train..n_train + n_val].to_vec())?,
        dayset.with_days(days[n_train + n_val..].to_vec())?,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSpeeds {
    /// Each sensor independently uniform on `[low, high]` mph.
    Uniform { low: f64, high: f64 },
    Fixed(Vec<f64>),
}

impl Default for InitialSpeeds {
    fn default() -> Self {
        InitialSpeeds::Uniform { low: 20.0, high: 70.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec<T> {
    pub grid: TimeGrid,
    pub layout: SensorLayout<T>,
    /// `H_0 .. H_{K-1}`.
    pub transitions: Vec<Matrix<T>>,
    pub num_days: usize,
    pub initial: InitialSpeeds,
    /// Noise standard deviation, mph.
    pub sigma: f64,
    pub seed: u64,
    /// Date of the first day; later days follow consecutively. Without one,
    /// days are labelled `synthetic-0000`, `synthetic-0001`, ...
    pub start_date: Option<NaiveDate>,
    pub spectral_bound: f64,
    /// Any simulated speed outside `(0, sanity_bound]` fails generation.
    pub sanity_bound: f64,
}

impl<T: Real> SyntheticSpec<T> {
    pub fn new(grid: TimeGrid, layout: SensorLayout<T>, transitions: Vec<Matrix<T>>) -> Self {
        Self {
            grid,
            layout,
            transitions,
            num_days: 10,
            initial: InitialSpeeds::default(),
            sigma: 0.0,
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2012, 1, 1),
            spectral_bound: 1.0,
            sanity_bound: 200.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.layout.len();
        if self.transitions.len() != self.grid.last_index() {
            return Err(DlmError::Dimension(format!(
                "{} transitions for a grid with {} intervals",
                self.transitions.len(),
                self.grid.last_index()
            )));
        }
        if let Some(k) = self.transitions.iter().position(|h| h.shape() != (m, m) || !h.all_finite()) {
            return Err(DlmError::Dimension(format!("transition {k} is not a finite {m}x{m} matrix")));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(DlmError::Parameter(format!("noise sigma must be >= 0, got {}", self.sigma)));
        }
        if self.num_days == 0 {
            return Err(DlmError::Parameter("at least one synthetic day is required".into()));
        }
        match &self.initial {
            InitialSpeeds::Uniform { low, high } if !(0.0 < *low && low <= high && high.is_finite()) => {
                return Err(DlmError::Parameter(format!("bad initial speed range [{low}, {high}]")));
            }
            InitialSpeeds::Fixed(v) if v.len() != m || v.iter().any(|x| !(x.is_finite() && *x > 0.0)) => {
                return Err(DlmError::Parameter(format!("fixed initial speeds must be {m} positive values")));
            }
            _ => {}
        }
        for (k, h) in self.transitions.iter().enumerate() {
            let r = spectral_radius_estimate(h);
            if r > self.spectral_bound * (1.0 + 1e-6) {
                return Err(DlmError::Unstable(format!(
                    "spectral radius of H_{k} is about {r:.6}, above the bound {}",
                    self.spectral_bound
                )));
            }
        }
        Ok(())
    }
}

/// Spectral radius estimated from the growth of `||H^n||_F` between
/// `n = 2^19` and `n = 2^20`, using normalized repeated squaring. Exact for
/// multiples of orthogonal matrices; the error for defective ones is of order
/// `log(n) / n`.
pub fn spectral_radius_estimate<T: Real>(h: &Matrix<T>) -> f64 {
    let mut a = h.cast::<f64>();
    let c = a.frobenius_norm();
    if c == 0.0 {
        return 0.0;
    }
    a = a.scaled(1.0 / c);
    // log ||H^(2^i)||_F
    let mut log_norm = c.ln();
    let mut previous = log_norm;
    for _ in 0..SQUARINGS {
        a = a.matmul(&a);
        let c = a.frobenius_norm();
        if c == 0.0 {
            return 0.0;
        }
        a = a.scaled(1.0 / c);
        previous = log_norm;
        log_norm = 2.0 * log_norm + c.ln();
    }
    ((log_norm - previous) / f64::from(1u32 << (SQUARINGS - 1))).exp()
}

const SQUARINGS: u32 = 20;

/// Simulates `v_{k+1} = H_k v_k + n` for each day. Day `d` draws from its own
/// ChaCha8 stream, so every day is reproducible on its own.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec<T>) -> Result<(DaySet<T>, Vec<Matrix<T>>)> {
    spec.validate()?;
    let m = spec.layout.len();
    let steps = spec.grid.num_steps();
    let noise = Normal::new(0.0, spec.sigma).map_err(|e| DlmError::Parameter(e.to_string()))?;
    let mut days = Vec::with_capacity(spec.num_days);
    for d in 0..spec.num_days {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(d as u64);
        let mut v: Vec<T> = match &spec.initial {
            InitialSpeeds::Uniform { low, high } => (0..m).map(|_| T::of(rng.random_range(*low..=*high))).collect(),
            InitialSpeeds::Fixed(x) => x.iter().map(|&x| T::of(x)).collect(),
        };
        let mut values = Matrix::zeros(m, steps);
        values.set_column(0, &v);
        for k in 0..steps - 1 {
            v = spec.transitions[k].mul_vec(&v);
            if spec.sigma > 0.0 {
                for x in &mut v {
                    *x = *x + T::of(noise.sample(&mut rng));
                }
            }
            if let Some(x) = v.iter().find(|x| !(**x > T::zero() && x.to_f64_lossy() <= spec.sanity_bound)) {
                return Err(DlmError::Unstable(format!(
                    "day {d} reached {x} mph at index {}, outside (0, {}]",
                    k + 1,
                    spec.sanity_bound
                )));
            }
            values.set_column(k + 1, &v);
        }
        let id = match spec.start_date {
            Some(start) => start
                .checked_add_days(Days::new(d as u64))
                .ok_or_else(|| DlmError::Parameter("synthetic dates overflow".into()))?
                .format("%Y-%m-%d")
                .to_string(),
            None => format!("synthetic-{d:04}"),
        };
        days.push(DayVelocityMatrix::new(id, values)?);
    }
    Ok((DaySet::new(spec.grid, spec.layout.clone(), days)?, spec.transitions.clone()))
}

pub fn identity_transitions<T: Real>(m: usize, count: usize) -> Vec<Matrix<T>> {
    vec![Matrix::identity(m); count]
}

pub fn constant_transitions<T: Real>(h: &Matrix<T>, count: usize) -> Vec<Matrix<T>> {
    vec![h.clone(); count]
}

/// `(1 - alpha) I + alpha W_k` with `W_k` random, non-negative and
/// row-stochastic. Rows sum to one, so positive speeds stay positive and the
/// spectral radius is exactly 1.
pub fn mixing_transitions<T: Real>(m: usize, count: usize, alpha: f64, seed: u64) -> Result<Vec<Matrix<T>>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(DlmError::Parameter(format!("mixing weight must be in [0, 1], got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut h = Matrix::<f64>::zeros(m, m);
            for i in 0..m {
                let w: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
                let total: f64 = w.iter().sum();
                for j in 0..m {
                    h[(i, j)] = alpha * w[j] / total;
                }
                h[(i, i)] += 1.0 - alpha;
            }
            h.cast()
        })
        .collect())
}
