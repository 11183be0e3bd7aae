//! Covariate ingestion and standardization.

use std::io::Read;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Raw covariate measurements for `2n` subjects by `p` continuous columns,
/// with optional per-subject categorical stratum labels. Rows are subjects
/// in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateMatrix<F> {
    rows: usize,
    cols: usize,
    values: Vec<F>, // row-major
    strata: Option<Vec<String>>,
}

impl<F: Real> CovariateMatrix<F> {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<F>,
        strata: Option<Vec<String>>,
    ) -> Result<Self> {
        if rows < 2 || rows % 2 != 0 {
            return Err(Error::Shape(format!(
                "subject count must be even and at least 2, got {rows}"
            )));
        }
        if cols == 0 {
            return Err(Error::Shape("at least one covariate column required".into()));
        }
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {rows}x{cols} = {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Shape(format!(
                "non-finite covariate at row {}, column {}",
                bad / cols + 1,
                bad % cols + 1
            )));
        }
        if let Some(s) = &strata {
            if s.len() != rows {
                return Err(Error::Shape(format!(
                    "{} stratum labels for {rows} subjects",
                    s.len()
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            values,
            strata,
        })
    }

    /// Single-column matrix, convenient in tests and for `p = 1` methods.
    pub fn from_column(values: Vec<F>) -> Result<Self> {
        let rows = values.len();
        Self::new(rows, 1, values, None)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Arm size `n` (half the subjects).
    pub fn arm_size(&self) -> usize {
        self.rows / 2
    }

    pub fn get(&self, row: usize, col: usize) -> F {
        self.values[row * self.cols + col]
    }

    pub fn strata(&self) -> Option<&[String]> {
        self.strata.as_deref()
    }

    /// The submatrix holding only `subjects`, without stratum labels.
    pub fn select_rows(&self, subjects: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(subjects.len() * self.cols);
        for &i in subjects {
            for j in 0..self.cols {
                values.push(self.get(i, j));
            }
        }
        Self::new(subjects.len(), self.cols, values, None)
    }
}

/// Covariates standardized column-wise so that each column sums to 0 and has
/// sum of squares `2n - 1` (sample standard deviation 1 with divisor
/// `2n - 1`). Stored column-major: balance sweeps walk columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StandardizedCovariates<F> {
    rows: usize,
    cols: usize,
    z: Vec<F>, // column-major
    means: Vec<F>,
    sds: Vec<F>,
}

impl<F: Real> StandardizedCovariates<F> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn arm_size(&self) -> usize {
        self.rows / 2
    }

    pub fn get(&self, row: usize, col: usize) -> F {
        self.z[col * self.rows + row]
    }

    /// One standardized column as a contiguous slice.
    pub fn column(&self, col: usize) -> &[F] {
        &self.z[col * self.rows..(col + 1) * self.rows]
    }

    /// Original column means.
    pub fn means(&self) -> &[F] {
        &self.means
    }

    /// Original column standard deviations (divisor `2n - 1`).
    pub fn sds(&self) -> &[F] {
        &self.sds
    }

    /// Reinterprets standardized values as a raw matrix (used when a
    /// routine wants to re-standardize a subset of subjects).
    pub fn to_matrix(&self) -> CovariateMatrix<F> {
        let mut values = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                values.push(self.get(i, j));
            }
        }
        CovariateMatrix::new(self.rows, self.cols, values, None)
            .expect("standardized values form a valid matrix")
    }
}

/// Column-wise standardization `z = (x - mean) / sd` with sd divisor
/// `2n - 1`, so that every column of `z` sums to 0 and has sum of squares
/// exactly `2n - 1`.
pub fn standardize<F: Real>(x: &CovariateMatrix<F>) -> Result<StandardizedCovariates<F>> {
    let rows = x.rows();
    let cols = x.cols();
    let denom = F::from_usize(rows - 1).unwrap();
    let mut z = vec![F::zero(); rows * cols];
    let mut means = Vec::with_capacity(cols);
    let mut sds = Vec::with_capacity(cols);
    for j in 0..cols {
        let mean = (0..rows).map(|i| x.get(i, j)).sum::<F>() / F::from_usize(rows).unwrap();
        let ss = (0..rows)
            .map(|i| {
                let d = x.get(i, j) - mean;
                d * d
            })
            .sum::<F>();
        let sd = (ss / denom).sqrt();
        if !(sd > F::zero()) {
            return Err(Error::DegenerateCovariate { column: j + 1 });
        }
        for i in 0..rows {
            z[j * rows + i] = (x.get(i, j) - mean) / sd;
        }
        means.push(mean);
        sds.push(sd);
    }
    Ok(StandardizedCovariates {
        rows,
        cols,
        z,
        means,
        sds,
    })
}

/// Reads covariates from CSV. The header must name the numeric columns
/// `x1..xp`; an optional `stratum` column carries categorical labels.
/// UTF-8, "." decimal separator, comma delimiter.
pub fn load_covariates<F: Real, R: Read>(reader: R) -> Result<CovariateMatrix<F>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv_reader
        .headers()
        .map_err(|e| Error::Parse(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Error::Parse("empty input".into()));
    }

    let mut x_columns: Vec<(usize, usize)> = Vec::new(); // (covariate index, csv position)
    let mut stratum_col: Option<usize> = None;
    for (pos, name) in headers.iter().enumerate() {
        let name = name.trim();
        if name == "stratum" {
            if stratum_col.is_some() {
                return Err(Error::Parse("duplicate stratum column".into()));
            }
            stratum_col = Some(pos);
        } else if let Some(idx) = name
            .strip_prefix('x')
            .and_then(|tail| tail.parse::<usize>().ok())
            .filter(|&idx| idx >= 1)
        {
            x_columns.push((idx, pos));
        } else {
            return Err(Error::Parse(format!(
                "unexpected column {name:?}; expected x1..xp or stratum"
            )));
        }
    }
    if x_columns.is_empty() {
        return Err(Error::Parse("no covariate columns x1..xp found".into()));
    }
    x_columns.sort_unstable();
    let p = x_columns.len();
    for (want, &(got, _)) in (1..=p).zip(x_columns.iter()) {
        if got != want {
            return Err(Error::Parse(format!(
                "covariate columns must be named x1..x{p} without gaps; found x{got}"
            )));
        }
    }

    let mut values: Vec<F> = Vec::new();
    let mut strata: Vec<String> = Vec::new();
    let mut rows = 0usize;
    for (line, record) in csv_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        for &(idx, pos) in &x_columns {
            let cell = record.get(pos).ok_or_else(|| {
                Error::Parse(format!("row {}: missing column x{idx}", line + 2))
            })?;
            let parsed: f64 = cell.trim().parse().map_err(|_| {
                Error::Parse(format!(
                    "row {}: non-numeric value {cell:?} in column x{idx}",
                    line + 2
                ))
            })?;
            values.push(F::of(parsed));
        }
        if let Some(pos) = stratum_col {
            let cell = record
                .get(pos)
                .ok_or_else(|| Error::Parse(format!("row {}: missing stratum", line + 2)))?;
            strata.push(cell.trim().to_string());
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse("no data rows".into()));
    }
    CovariateMatrix::new(rows, p, values, stratum_col.map(|_| strata))
}
