//! Dataset ingestion and preprocessing.
//!
//! Inputs are mapped affinely so that the training range of every column
//! becomes `[-0.5, 0.5]`; the feature domain is that box widened by a margin
//! factor, `U_d = 0.5 · margin`. The basis functions vanish on the domain
//! boundary, so the margin keeps training points away from it.

use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_MARGIN: f64 = 1.25;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    column_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidInput(
                "a dataset needs at least one row and one input column".into(),
            ));
        }
        if y.len() != x.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if let Some(names) = &column_names {
            if names.len() != x.ncols() {
                return Err(Error::ShapeMismatch(format!(
                    "{} column names for {} input columns",
                    names.len(),
                    x.ncols()
                )));
            }
        }
        for n in 0..x.nrows() {
            if !y[n].is_finite() || x.row(n).iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {n} has a non-finite value")));
            }
        }
        Ok(Self { x, y, column_names })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    /// True when every target is exactly `-1` or `+1`.
    pub fn has_binary_labels(&self) -> bool {
        self.y.iter().all(|v| *v == 1.0 || *v == -1.0)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(indices);
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i]));
        Self::new(x, y, self.column_names.clone())
    }
}

/// Which CSV column holds the target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetColumn {
    Name(String),
    Index(usize),
    Last,
}

impl std::str::FromStr for TargetColumn {
    type Err = std::convert::Infallible;

    /// A bare non-negative integer is a zero-based index, anything else a
    /// header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Self::Index(i),
            Err(_) => Self::Name(s.to_string()),
        })
    }
}

impl std::fmt::Display for TargetColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Name(n) => write!(f, "'{n}'"),
            Self::Index(i) => write!(f, "#{i}"),
            Self::Last => f.write_str("last"),
        }
    }
}

/// Reads a numeric CSV file; every column except `target` becomes an input.
pub fn load_csv(path: impl AsRef<Path>, target: &TargetColumn, has_header: bool) -> Result<Dataset> {
    let table = read_table(path.as_ref(), has_header)?;
    let target_index = match (target, &table.headers) {
        (TargetColumn::Index(i), _) => *i,
        (TargetColumn::Last, _) => table.width - 1,
        (TargetColumn::Name(name), Some(h)) => h
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(target.to_string()))?,
        (TargetColumn::Name(_), None) => return Err(Error::MissingColumn(target.to_string())),
    };
    if target_index >= table.width {
        return Err(Error::MissingColumn(target.to_string()));
    }
    if table.width < 2 {
        return Err(Error::InvalidInput(
            "need at least one input column besides the target".into(),
        ));
    }
    let rows = table.values.len() / table.width;
    let mut values = Vec::with_capacity(rows * (table.width - 1));
    let mut targets = Vec::with_capacity(rows);
    for row in table.values.chunks(table.width) {
        for (j, v) in row.iter().enumerate() {
            if j == target_index {
                targets.push(*v);
            } else {
                values.push(*v);
            }
        }
    }
    let x = DMatrix::from_row_slice(rows, table.width - 1, &values);
    let names = table.headers.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|(j, _)| *j != target_index)
            .map(|(_, n)| n)
            .collect()
    });
    Dataset::new(x, DVector::from_vec(targets), names)
}

/// Reads a numeric CSV file in which every column is an input.
pub fn load_inputs_csv(path: impl AsRef<Path>, has_header: bool) -> Result<DMatrix<f64>> {
    let table = read_table(path.as_ref(), has_header)?;
    Ok(DMatrix::from_row_slice(
        table.values.len() / table.width,
        table.width,
        &table.values,
    ))
}

struct Table {
    headers: Option<Vec<String>>,
    width: usize,
    /// Row-major.
    values: Vec<f64>,
}

fn read_table(path: &Path, has_header: bool) -> Result<Table> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(file);

    let headers: Option<Vec<String>> = if has_header {
        let h = reader.headers().map_err(|e| csv_error(e, 1))?;
        Some(h.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut width = headers.as_ref().map(Vec::len);
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            csv_error(e, line)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse {
                line,
                message: format!("expected {w} fields, found {}", record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                message: format!("field {j} is not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("field {j} is not finite: {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    let width = width.unwrap_or(0);
    if values.is_empty() || width == 0 {
        return Err(Error::InvalidInput(format!("{} has no data rows", path.display())));
    }
    Ok(Table {
        headers,
        width,
        values,
    })
}

fn csv_error(e: csv::Error, line: u64) -> Error {
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Affine input map and target standardization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub input_min: Vec<f64>,
    pub input_max: Vec<f64>,
    pub margin: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

/// Scaled inputs plus the number of entries clipped into the domain.
#[derive(Debug, Clone)]
pub struct ScaledInputs {
    pub x: DMatrix<f64>,
    pub clipped: usize,
}

/// Fits the input map (and target statistics) on training data only.
pub fn fit_scaler(train: &Dataset, margin: f64) -> Result<Scaler> {
    if !(margin > 1.0 && margin.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "margin must be finite and greater than 1, got {margin}"
        )));
    }
    let x = train.x();
    let input_min = x.column_iter().map(|c| c.min()).collect();
    let input_max = x.column_iter().map(|c| c.max()).collect();
    let (mean, std) = mean_and_std(train.y().as_slice());
    Ok(Scaler {
        input_min,
        input_max,
        margin,
        target_mean: mean,
        target_std: std,
    })
}

impl Scaler {
    pub fn dims(&self) -> usize {
        self.input_min.len()
    }

    /// Feature-domain half width `0.5 · margin`, shared by all dimensions.
    pub fn half_width(&self) -> f64 {
        0.5 * self.margin
    }

    pub fn half_widths(&self) -> Vec<f64> {
        vec![self.half_width(); self.dims()]
    }

    /// Drops target standardization (classification).
    pub fn with_identity_targets(mut self) -> Self {
        self.target_mean = 0.0;
        self.target_std = 1.0;
        self
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<ScaledInputs> {
        apply_scaler(self, x)
    }
}

/// Maps raw inputs into the feature domain, clipping to `[-U, U]`.
pub fn apply_scaler(scaler: &Scaler, x: &DMatrix<f64>) -> Result<ScaledInputs> {
    if x.ncols() != scaler.dims() {
        return Err(Error::DimensionMismatch {
            expected: scaler.dims(),
            found: x.ncols(),
        });
    }
    let u = scaler.half_width();
    let mut clipped = 0;
    let mut out = x.clone();
    for (d, mut col) in out.column_iter_mut().enumerate() {
        let (lo, hi) = (scaler.input_min[d], scaler.input_max[d]);
        let span = hi - lo;
        for v in col.iter_mut() {
            let s = if span > 0.0 { (*v - lo) / span - 0.5 } else { 0.0 };
            *v = if s < -u {
                clipped += 1;
                -u
            } else if s > u {
                clipped += 1;
                u
            } else {
                s
            };
        }
    }
    Ok(ScaledInputs { x: out, clipped })
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Returns `(standardized, mean, std)`. A zero std yields centered values.
pub fn standardize_targets(y: &DVector<f64>) -> (DVector<f64>, f64, f64) {
    let (mean, std) = mean_and_std(y.as_slice());
    let divisor = if std > 0.0 { std } else { 1.0 };
    (y.map(|v| (v - mean) / divisor), mean, std)
}

pub fn destandardize(pred: &DVector<f64>, mean: f64, std: f64) -> DVector<f64> {
    let factor = if std > 0.0 { std } else { 1.0 };
    pred.map(|v| v * factor + mean)
}

/// Mean over columns of the population standard deviation of each column.
pub fn mean_column_std(x: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    let total: f64 = x
        .column_iter()
        .map(|c| mean_and_std(c.as_slice()).1)
        .sum();
    total / x.ncols() as f64
}

/// Seeded permutation split into `⌈fN⌉` training and `N − ⌈fN⌉` test
/// indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    // Absorb representation error such as 0.7 · 10 = 7.000000000000001.
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidParameter(format!(
            "splitting {n} rows with fraction {train_fraction} leaves one side empty"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), train_fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
