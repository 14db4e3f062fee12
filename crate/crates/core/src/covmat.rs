//! Covariance matrices: validation, estimation, synthetic anchors and
//! Gaussian sampling, plus the CSV formats used by the command-line tool.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;

/// Relative asymmetry tolerated when accepting a matrix.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Pivot tolerance (relative to the largest variance) for sampling factors.
pub const SAMPLING_TOL: f64 = 1e-10;

/// A symmetric square matrix of asset covariances.
///
/// Construction validates shape, finiteness and symmetry, then stores the
/// exactly symmetrized matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    values: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl CovarianceMatrix {
    pub fn new(values: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        let (rows, cols) = values.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(Error::LabelMismatch {
                    expected: rows,
                    got: l.len(),
                });
            }
        }
        let scale = values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..rows {
            for j in (i + 1)..rows {
                let diff = (values[(i, j)] - values[(j, i)]).abs();
                if diff > SYMMETRY_TOL * scale {
                    return Err(Error::NotSymmetric { i, j, diff });
                }
            }
        }
        let mut values = values;
        linalg::symmetrize(&mut values);
        Ok(CovarianceMatrix { values, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        for r in rows {
            if r.len() != n {
                return Err(Error::NotSquare { rows: n, cols: r.len() });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat), None)
    }

    /// Wraps a matrix already known to be exactly symmetric.
    pub(crate) fn from_symmetric(values: DMatrix<f64>) -> Self {
        debug_assert_eq!(values.nrows(), values.ncols());
        CovarianceMatrix { values, labels: None }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_symmetric(DMatrix::identity(n, n))
    }

    /// Unit-diagonal matrix with every off-diagonal entry equal to `rho`.
    pub fn equicorrelation(n: usize, rho: f64) -> Self {
        Self::from_symmetric(DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho }))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::LabelMismatch {
                expected: self.dim(),
                got: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.values.diagonal()
    }

    /// `c * self`, labels kept.
    pub fn scaled(&self, c: f64) -> Self {
        CovarianceMatrix {
            values: &self.values * c,
            labels: self.labels.clone(),
        }
    }

    /// Errors unless every variance is strictly positive.
    pub fn require_positive_diagonal(&self) -> Result<()> {
        match (0..self.dim()).find(|&i| !(self.values[(i, i)] > 0.0)) {
            Some(i) => Err(Error::ZeroVariance(i)),
            None => Ok(()),
        }
    }
}

/// A `T x n` panel of per-period asset returns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    values: DMatrix<f64>,
    labels: Option<Vec<String>>,
}

impl ReturnsPanel {
    pub fn new(values: DMatrix<f64>, labels: Option<Vec<String>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != values.ncols() {
                return Err(Error::LabelMismatch {
                    expected: values.ncols(),
                    got: l.len(),
                });
            }
        }
        Ok(ReturnsPanel { values, labels })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(t, n, &flat), None)
    }

    pub fn periods(&self) -> usize {
        self.values.nrows()
    }

    pub fn assets(&self) -> usize {
        self.values.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }
}

/// Demeaned sample covariance with divisor `T - 1`.
pub fn empirical_covariance(samples: &ReturnsPanel) -> Result<CovarianceMatrix> {
    let x = samples.matrix();
    let (t, n) = x.shape();
    if t < 2 {
        return Err(Error::TooFewSamples(t));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let means: Vec<f64> = (0..n).map(|j| x.column(j).sum() / t as f64).collect();
    let centered = DMatrix::from_fn(t, n, |r, c| x[(r, c)] - means[c]);
    let denom = (t - 1) as f64;
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let ci = centered.column(i);
        for j in i..n {
            let v = ci.dot(&centered.column(j)) / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut out = CovarianceMatrix::from_symmetric(cov);
    out.labels = samples.labels.clone();
    Ok(out)
}

/// Equicorrelation anchor with unit variances and constant off-diagonal `rho`.
///
/// With `variance_jitter = Some(s)` each variance is additionally scaled by an
/// independent lognormal factor `exp(s * z)`, keeping the correlation
/// structure intact. The random stream is only consumed in that case.
pub fn rand_symm_cov<R: Rng + ?Sized>(
    dim: usize,
    rho: f64,
    variance_jitter: Option<f64>,
    rng: &mut R,
) -> Result<CovarianceMatrix> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    if !rho.is_finite() {
        return Err(Error::InvalidRho { rho, dim });
    }
    if dim > 1 {
        let lower = -1.0 / (dim as f64 - 1.0);
        if !(rho > lower && rho < 1.0) {
            return Err(Error::InvalidRho { rho, dim });
        }
    }
    let base = CovarianceMatrix::equicorrelation(dim, rho);
    match variance_jitter {
        None => Ok(base),
        Some(s) => {
            let sd: Vec<f64> = (0..dim)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (0.5 * s * z).exp()
                })
                .collect();
            let m = DMatrix::from_fn(dim, dim, |i, j| base.values[(i, j)] * sd[i] * sd[j]);
            Ok(CovarianceMatrix::from_symmetric(m))
        }
    }
}

/// `count` i.i.d. zero-mean Gaussian draws with covariance `cov`.
///
/// Uses a semidefinite Cholesky factor, so singular (rank-deficient)
/// covariances are sampled exactly on their support.
pub fn sample_gaussian<R: Rng + ?Sized>(cov: &CovarianceMatrix, count: usize, rng: &mut R) -> Result<ReturnsPanel> {
    let n = cov.dim();
    let l = linalg::semidefinite_cholesky(cov.matrix(), SAMPLING_TOL)?;
    let mut z = DMatrix::<f64>::zeros(count, n);
    for r in 0..count {
        for c in 0..n {
            z[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let x = z * l.transpose();
    ReturnsPanel::new(x, cov.labels.clone())
}

/// True iff every eigenvalue of `cov` exceeds `tol`.
pub fn is_positive_definite(cov: &CovarianceMatrix, tol: f64) -> bool {
    linalg::min_eigen_exceeds(cov.matrix(), tol)
}

// ---------------------------------------------------------------------------
// CSV formats

type Records = (Option<Vec<String>>, Vec<Vec<f64>>);

fn parse_records<R: Read>(reader: R) -> Result<Records> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut labels = None;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if idx == 0 => labels = Some(rec.iter().map(str::to_owned).collect()),
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", idx + 1))),
        }
    }
    Ok((labels, rows))
}

/// Reads a covariance matrix: an optional header row of labels, then `n`
/// rows of `n` comma-separated decimals.
pub fn read_matrix_csv<R: Read>(reader: R) -> Result<CovarianceMatrix> {
    let (labels, rows) = parse_records(reader)?;
    if rows.is_empty() {
        return Err(Error::Parse("empty matrix".into()));
    }
    let cov = CovarianceMatrix::from_rows(&rows)?;
    match labels {
        Some(l) => cov.with_labels(l),
        None => Ok(cov),
    }
}

pub fn read_matrix_file(path: &Path) -> Result<CovarianceMatrix> {
    read_matrix_csv(std::fs::File::open(path)?)
}

/// Reads a returns panel: a header row of labels, then `T` data rows.
pub fn read_panel_csv<R: Read>(reader: R) -> Result<ReturnsPanel> {
    let (labels, rows) = parse_records(reader)?;
    let panel = ReturnsPanel::from_rows(&rows)?;
    match labels {
        Some(l) => ReturnsPanel::new(panel.values, Some(l)),
        None => Ok(panel),
    }
}

pub fn read_panel_file(path: &Path) -> Result<ReturnsPanel> {
    read_panel_csv(std::fs::File::open(path)?)
}

pub fn write_matrix_csv<W: Write>(cov: &CovarianceMatrix, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if let Some(l) = cov.labels() {
        w.write_record(l)?;
    }
    for row in cov.values.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_csv<W: Write>(panel: &ReturnsPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let labels = panel
        .labels()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| (0..panel.assets()).map(|i| format!("a{i}")).collect());
    w.write_record(&labels)?;
    for row in panel.values.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}
