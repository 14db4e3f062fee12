//! Closed-form minimum-variance portfolios and the fitness measures used to
//! split capital between groups.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmat::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::linalg::{SymSolver, DEFAULT_RCOND};
use crate::shrinkage::{self, ShrinkageConfig};

/// Relative size below which a normalizer is treated as zero.
const NORMALIZER_TOL: f64 = 1e-12;

/// Portfolio weights over `n` assets.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: DVector<f64>,
    labels: Option<Vec<String>>,
}

impl WeightVector {
    pub fn new(values: DVector<f64>) -> Self {
        WeightVector { values, labels: None }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn with_labels(mut self, labels: Option<Vec<String>>) -> Self {
        self.labels = labels;
        self
    }

    /// `1/n` on every asset.
    pub fn equal(n: usize) -> Self {
        Self::new(DVector::from_element(n, 1.0 / n as f64))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub fn vector(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.values
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// `Q^-1 b` together with its portfolio reading: `values = weights / fitness`,
/// where `weights` is the minimum-variance portfolio under `b' w = 1` and
/// `fitness` is its variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSolution {
    pub values: DVector<f64>,
    pub fitness: f64,
    pub weights: WeightVector,
}

/// Inverse investment fitness of a (sub-)covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessKind {
    /// Variance of the sub-portfolio chosen by the recursion below.
    SubportfolioVariance,
    /// Variance of the unconstrained minimum-variance portfolio.
    MinvarVariance,
    /// Variance of the weakly shrunk minimum-variance portfolio.
    WeakMinvarVariance,
    /// Sum of squared variances. Ignores correlation entirely; kept only to
    /// reproduce the classic failure of diagonal allocation rules.
    DiagSumSquares,
}

impl std::str::FromStr for FitnessKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subportfolio_variance" => Ok(Self::SubportfolioVariance),
            "minvar_variance" => Ok(Self::MinvarVariance),
            "weak_minvar_variance" => Ok(Self::WeakMinvarVariance),
            "diag_sum_squares" => Ok(Self::DiagSumSquares),
            other => Err(Error::InvalidConfig(format!("unknown fitness '{other}'"))),
        }
    }
}

pub(crate) fn min_var_raw(m: &DMatrix<f64>, rcond: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let x = SymSolver::new(m, rcond)?.solve_vec(&DVector::from_element(n, 1.0))?;
    let s = x.sum();
    let scale = x.iter().map(|v| v.abs()).sum::<f64>();
    if !(s.abs() > NORMALIZER_TOL * scale) {
        return Err(Error::ZeroNormalizer);
    }
    Ok(x / s)
}

/// `Sigma^-1 1 / (1' Sigma^-1 1)`, by linear solve.
pub fn min_var_unit(cov: &CovarianceMatrix) -> Result<WeightVector> {
    min_var_unit_with(cov, DEFAULT_RCOND)
}

pub fn min_var_unit_with(cov: &CovarianceMatrix, rcond: f64) -> Result<WeightVector> {
    let w = min_var_raw(cov.matrix(), rcond)?;
    Ok(WeightVector::new(w).with_labels(cov.labels().map(<[String]>::to_vec)))
}

pub(crate) fn min_var_general_raw(q: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<ScaledSolution> {
    if b.len() != q.nrows() {
        return Err(Error::DimensionMismatch {
            expected: q.nrows(),
            got: b.len(),
        });
    }
    let values = SymSolver::new(q, rcond)?.solve_vec(b)?;
    let quad = b.dot(&values);
    if !(quad.abs() > NORMALIZER_TOL * b.norm() * values.norm()) {
        return Err(Error::DegenerateConstraint);
    }
    let weights = WeightVector::new(&values / quad);
    Ok(ScaledSolution {
        values,
        fitness: 1.0 / quad,
        weights,
    })
}

/// Minimum variance subject to `b' w = 1`.
pub fn min_var_general(q: &CovarianceMatrix, b: &DVector<f64>) -> Result<ScaledSolution> {
    min_var_general_raw(q.matrix(), b, DEFAULT_RCOND)
}

pub(crate) fn quad_form(m: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    w.dot(&(m * w))
}

/// `w' Sigma w`.
pub fn portfolio_variance(cov: &CovarianceMatrix, w: &WeightVector) -> Result<f64> {
    if cov.dim() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            got: w.len(),
        });
    }
    Ok(quad_form(cov.matrix(), w.vector()))
}

/// Settings consumed by the fitness and terminal-portfolio evaluations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EvalSettings {
    pub rcond: f64,
    pub shrinkage: ShrinkageConfig,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            rcond: DEFAULT_RCOND,
            shrinkage: ShrinkageConfig::default(),
        }
    }
}

pub(crate) fn fitness_raw(
    m: &DMatrix<f64>,
    kind: FitnessKind,
    child_weights: Option<&DVector<f64>>,
    settings: &EvalSettings,
) -> Result<f64> {
    match kind {
        FitnessKind::SubportfolioVariance => {
            let w = child_weights.ok_or(Error::MissingChildWeights)?;
            if w.len() != m.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: m.nrows(),
                    got: w.len(),
                });
            }
            Ok(quad_form(m, w))
        }
        FitnessKind::MinvarVariance => {
            let n = m.nrows();
            let x = SymSolver::new(m, settings.rcond)?.solve_vec(&DVector::from_element(n, 1.0))?;
            let s = x.sum();
            if !(s.abs() > NORMALIZER_TOL * x.iter().map(|v| v.abs()).sum::<f64>()) {
                return Err(Error::ZeroNormalizer);
            }
            Ok(1.0 / s)
        }
        FitnessKind::WeakMinvarVariance => {
            let shrunk = shrinkage::weak_shrink_raw(m, &settings.shrinkage, settings.rcond)?;
            Ok(quad_form(m, &shrunk.weights))
        }
        FitnessKind::DiagSumSquares => Ok(m.diagonal().iter().map(|v| v * v).sum()),
    }
}

/// Inverse fitness `nu` of `cov`. `child_weights` is required for
/// [`FitnessKind::SubportfolioVariance`] and ignored otherwise.
pub fn fitness(cov: &CovarianceMatrix, kind: FitnessKind, child_weights: Option<&WeightVector>) -> Result<f64> {
    fitness_raw(
        cov.matrix(),
        kind,
        child_weights.map(WeightVector::vector),
        &EvalSettings::default(),
    )
}
