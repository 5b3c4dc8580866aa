//! CSV ingestion: header row, comma separated, no missing values.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use qut_core::model::{GlmFamily, ProblemInstance};

use crate::CliError;

pub struct Table {
    pub names: Vec<String>,
    /// Row-major values.
    pub rows: Vec<Vec<f64>>,
}

pub fn read_csv(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::usage(format!("malformed CSV header: {e}")))?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(CliError::usage("CSV header has empty column names"));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::usage(format!("malformed CSV: {e}")))?;
        let row = record
            .iter()
            .zip(&names)
            .map(|(field, name)| {
                if field.is_empty() {
                    return Err(CliError::usage(format!("missing value in row {} column '{name}'", i + 1)));
                }
                field
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| CliError::usage(format!("non-numeric value '{field}' in row {} column '{name}'", i + 1)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CliError::usage("CSV has no data rows"));
    }
    Ok(Table { names, rows })
}

impl Table {
    /// Column index from a header name or a 1-based position.
    pub fn column(&self, key: &str) -> Result<usize, CliError> {
        if let Some(i) = self.names.iter().position(|n| n == key) {
            return Ok(i);
        }
        match key.parse::<usize>() {
            Ok(k) if k >= 1 && k <= self.names.len() => Ok(k - 1),
            _ => Err(CliError::usage(format!("no column '{key}' in the CSV header"))),
        }
    }

    fn matrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), cols.len(), |i, j| self.rows[i][cols[j]])
    }
}

/// A problem instance together with the names of its columns.
pub struct Dataset {
    pub instance: ProblemInstance,
    pub x0_names: Vec<String>,
    pub x_names: Vec<String>,
}

pub struct Layout<'a> {
    pub response_col: &'a str,
    pub x0_cols: &'a [String],
    pub intercept: bool,
    pub family: GlmFamily,
}

pub fn load(path: &Path, layout: &Layout) -> Result<Dataset, CliError> {
    let table = read_csv(path)?;
    let response = table.column(layout.response_col)?;
    let mut x0_cols = Vec::new();
    for key in layout.x0_cols {
        let c = table.column(key)?;
        if c == response || x0_cols.contains(&c) {
            return Err(CliError::usage(format!("column '{key}' is used twice")));
        }
        x0_cols.push(c);
    }
    let x_cols: Vec<usize> = (0..table.names.len()).filter(|c| *c != response && !x0_cols.contains(c)).collect();
    if x_cols.is_empty() {
        return Err(CliError::usage("no penalized columns left in the CSV"));
    }
    let n = table.rows.len();
    let mut y = DVector::from_fn(n, |i, _| table.rows[i][response]);
    if let GlmFamily::BinomialScaled { trials } = layout.family {
        let m = f64::from(trials);
        if let Some(v) = y.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v > m) {
            return Err(CliError::usage(format!("binomial counts must be integers in [0, {trials}], found {v}")));
        }
        y /= m;
    }
    let mut x0_names = Vec::new();
    let mut x0 = DMatrix::zeros(n, 0);
    if layout.intercept {
        x0_names.push("(intercept)".to_owned());
        x0 = DMatrix::from_element(n, 1, 1.0);
    }
    if !x0_cols.is_empty() {
        let extra = table.matrix(&x0_cols);
        let k = x0.ncols();
        x0 = x0.resize_horizontally(k + extra.ncols(), 0.0);
        x0.columns_mut(k, extra.ncols()).copy_from(&extra);
        x0_names.extend(x0_cols.iter().map(|&c| table.names[c].clone()));
    }
    let instance = ProblemInstance::new(x0, table.matrix(&x_cols), y, layout.family).map_err(CliError::from)?;
    Ok(Dataset { instance, x0_names, x_names: x_cols.iter().map(|&c| table.names[c].clone()).collect() })
}
