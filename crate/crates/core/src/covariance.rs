//! Data ingestion, standardization, and the sample covariance matrix.
//!
//! Downstream structure detection thresholds covariance magnitudes against a
//! common scale, so the CLI standardizes by default: each column is centered
//! and divided by its maximum-likelihood standard deviation (divisor n, not
//! n−1 — the same convention the block log-likelihood uses). Callers that
//! deliberately work on raw covariances can skip [`standardize`]; every
//! operation here is well-defined either way.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Variance at or below this is treated as a constant column.
pub const CONSTANT_COLUMN_FLOOR: f64 = 1e-12;

/// An n×p data matrix: rows are observations, columns are named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    names: Vec<String>,
}

impl DataMatrix {
    /// Build a data matrix, validating shape agreement and entry finiteness.
    pub fn new(values: Array2<f64>, names: Vec<String>) -> Result<Self> {
        if values.ncols() == 0 {
            return Err(Error::InvalidData("data must have at least one column".into()));
        }
        if values.nrows() == 0 {
            return Err(Error::InvalidData("data must have at least one row".into()));
        }
        if names.len() != values.ncols() {
            return Err(Error::InvalidData(format!(
                "{} variable names for {} columns",
                names.len(),
                values.ncols()
            )));
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
        }
        Ok(Self { values, names })
    }

    /// Number of observations (rows).
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of variables (columns).
    pub fn p(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Restrict to the given column indices (in the given order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        for &c in cols {
            if c >= self.p() {
                return Err(Error::InvalidData(format!(
                    "column index {c} out of range for p = {}",
                    self.p()
                )));
            }
        }
        let values = self.values.select(ndarray::Axis(1), cols);
        let names = cols.iter().map(|&c| self.names[c].clone()).collect();
        Ok(Self { values, names })
    }

    /// Read a data matrix from CSV: first row variable names, every later row
    /// one observation. Missing or non-numeric fields are rejected, never
    /// imputed.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect();
        if names.is_empty() {
            return Err(Error::InvalidData("empty header row".into()));
        }
        let p = names.len();
        let mut rows: Vec<f64> = Vec::new();
        let mut n = 0usize;
        for (row_idx, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != p {
                return Err(Error::InvalidData(format!(
                    "row {row_idx} has {} fields, expected {p}",
                    record.len()
                )));
            }
            for (col, field) in record.iter().enumerate() {
                if field.is_empty() {
                    return Err(Error::InvalidData(format!(
                        "missing value at row {row_idx}, column {col} ({})",
                        names[col]
                    )));
                }
                let v: f64 = field.parse().map_err(|_| {
                    Error::InvalidData(format!(
                        "unparseable value {field:?} at row {row_idx}, column {col} ({})",
                        names[col]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::NonFinite { row: row_idx, col });
                }
                rows.push(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::InvalidData("no observation rows".into()));
        }
        let values = Array2::from_shape_vec((n, p), rows)
            .expect("row-major buffer matches recorded shape");
        Self::new(values, names)
    }

    /// Read a data matrix from a CSV file.
    pub fn from_csv_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    /// Write the matrix as CSV in the same layout `from_csv_reader` accepts.
    pub fn to_csv_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.names)?;
        for row in self.values.rows() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            wtr.write_record(&fields)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.to_csv_writer(std::io::BufWriter::new(file))
    }
}

/// A p×p symmetric covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix {
    values: Array2<f64>,
}

impl CovMatrix {
    /// Wrap a matrix after checking squareness, finiteness, and symmetry
    /// (entry pairs must agree within 1e-12 relative to the largest entry).
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::InvalidData(format!(
                "covariance must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let mut max_abs = 0.0_f64;
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            max_abs = max_abs.max(v.abs());
        }
        let tol = 1e-12 * max_abs.max(1.0);
        for i in 0..values.nrows() {
            for j in 0..i {
                if (values[[i, j]] - values[[j, i]]).abs() > tol {
                    return Err(Error::InvalidData(format!(
                        "asymmetric covariance at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    /// Number of variables.
    pub fn p(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Largest absolute off-diagonal entry (0 for p = 1).
    pub fn max_abs_offdiag(&self) -> f64 {
        let p = self.p();
        let mut m = 0.0_f64;
        for i in 0..p {
            for j in 0..i {
                m = m.max(self.values[[i, j]].abs());
            }
        }
        m
    }

    /// Dense submatrix on the given indices (in the given order).
    pub fn submatrix(&self, idx: &[usize]) -> Array2<f64> {
        let k = idx.len();
        Array2::from_shape_fn((k, k), |(a, b)| self.values[[idx[a], idx[b]]])
    }
}

/// Center each column and scale it to unit MLE variance (divisor n).
///
/// Fails with [`Error::ConstantColumn`] on the first column whose MLE variance
/// is at or below [`CONSTANT_COLUMN_FLOOR`].
pub fn standardize(x: &DataMatrix) -> Result<DataMatrix> {
    let n = x.n();
    let p = x.p();
    let mut out = x.values.clone();
    for j in 0..p {
        let mut col = out.column_mut(j);
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
        let var = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
        if var <= CONSTANT_COLUMN_FLOOR {
            return Err(Error::ConstantColumn { index: j });
        }
        let sd = var.sqrt();
        col.mapv_inplace(|v| v / sd);
    }
    Ok(DataMatrix {
        values: out,
        names: x.names.clone(),
    })
}

/// Sample covariance S = (1/n)·XᶜᵀXᶜ with columns centered first (MLE, divisor
/// n). For standardized input the diagonal is 1. The result is symmetrized
/// exactly by averaging the two computed halves.
pub fn sample_covariance(x: &DataMatrix) -> CovMatrix {
    let n = x.n();
    let p = x.p();
    let mut centered = x.values.clone();
    for j in 0..p {
        let mut col = centered.column_mut(j);
        let mean = col.sum() / n as f64;
        col.mapv_inplace(|v| v - mean);
    }
    let mut s = centered.t().dot(&centered);
    s.mapv_inplace(|v| v / n as f64);
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (s[[i, j]] + s[[j, i]]);
            s[[i, j]] = m;
            s[[j, i]] = m;
        }
    }
    CovMatrix { values: s }
}

/// Column means of a data matrix (helper shared by tests and diagnostics).
pub fn column_means(x: &DataMatrix) -> Array1<f64> {
    let n = x.n() as f64;
    x.values.sum_axis(ndarray::Axis(0)) / n
}
