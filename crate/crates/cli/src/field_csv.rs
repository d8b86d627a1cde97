//! Gridded fields as CSV: one row per sensor, one column per time index.
//!
//! ```text
//! sensor_id,milepost_miles,12,13,14
//! s0,0,61.2,60.8,59.9
//! ```

use std::path::Path;

use freeway_dlm::{DlmError, Field, Layout, Matrix, TimeGrid};

use crate::CliError;

pub fn write_field(path: &Path, layout: &Layout, first_index: usize, values: &Matrix<f64>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["sensor_id".to_string(), "milepost_miles".to_string()];
    header.extend((0..values.cols()).map(|j| (first_index + j).to_string()));
    w.write_record(&header).map_err(io)?;
    for (i, (id, x)) in layout.ids().iter().zip(layout.positions()).enumerate() {
        let mut row = vec![id.clone(), x.to_string()];
        row.extend(values.row(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn parse_error(path: &Path, line: u64, message: String) -> CliError {
    CliError::Lib(DlmError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

/// Reads a field whose time-index columns refer to `grid`.
pub fn read_field(path: &Path, grid: &TimeGrid) -> Result<Field, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| parse_error(path, 1, e.to_string()))?
        .clone();
    if headers.len() < 4 || &headers[0] != "sensor_id" || &headers[1] != "milepost_miles" {
        return Err(parse_error(
            path,
            1,
            "header must be sensor_id,milepost_miles followed by at least two time indices".into(),
        ));
    }
    let times = headers
        .iter()
        .skip(2)
        .map(|h| {
            let k: usize = h.parse().map_err(|_| parse_error(path, 1, format!("bad time index `{h}`")))?;
            Ok(grid.minute_at::<f64>(k))
        })
        .collect::<Result<Vec<f64>, CliError>>()?;
    let (mut ids, mut positions, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| parse_error(path, e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |s: &str| s.parse::<f64>().map_err(|_| parse_error(path, line, format!("bad number `{s}`")));
        ids.push(record[0].to_string());
        positions.push(num(&record[1])?);
        rows.push(record.iter().skip(2).map(num).collect::<Result<Vec<_>, _>>()?);
    }
    let layout = Layout::new(ids, positions)?;
    let values = Matrix::from_rows(&rows)?;
    Ok(Field::new(times, layout.positions().to_vec(), values)?)
}
