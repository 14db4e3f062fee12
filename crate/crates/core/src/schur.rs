//! Block splitting and the Schur-complement augmentations.
//!
//! For a split `Sigma = [[A, B], [C, D]]` with `C = B'`:
//!
//! * complement   `A^c(g) = A - g B D^-1 C`
//! * b-vector     `b_A(l) = 1 - l B D^-1 1`
//! * intra matrix `A'' = A^c / (b_A b_A')` (elementwise division)
//! * inter matrix `A'  = ((A^c)^-1 o (b_A b_A'))^-1` (elementwise product in
//!   the precision domain)
//!
//! and symmetrically on the D side. At `g = l = 1` the pieces reassemble
//! `Sigma^-1 1` through block inversion: `Sigma^-1 1 = [(A^c)^-1 b_A ; (D^c)^-1 b_D]`
//! with `b_D = 1 - C A^-1 1`.
//!
//! Every inverse-times-matrix product is a linear solve.

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::covmat::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::linalg::{self, SymSolver, DEFAULT_RCOND};

/// Numerical floors shared by the augmentation and the allocator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Minimum eigenvalue a capped complement must exceed, relative to the
    /// mean variance of the raw block.
    pub eps_pd: f64,
    /// Floor on `|b_i|` before dividing by it.
    pub eps_b: f64,
    /// Reciprocal-condition floor for every linear solve.
    pub rcond: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps_pd: 1e-8,
            eps_b: 1e-6,
            rcond: DEFAULT_RCOND,
        }
    }
}

const BISECTION_RESOLUTION: f64 = 1e-6;
const BISECTION_MAX_ITERS: usize = 40;

/// Which diagonal block an operation targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    A,
    D,
}

/// Blend weights: `gamma_c` on the complement, `gamma_b` on the b-vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPair {
    pub gamma_c: f64,
    pub gamma_b: f64,
}

impl GammaPair {
    pub fn new(gamma_c: f64, gamma_b: f64) -> Result<Self> {
        for g in [gamma_c, gamma_b] {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::GammaOutOfRange(g));
            }
        }
        Ok(GammaPair { gamma_c, gamma_b })
    }

    /// Same value for both knobs.
    pub fn uniform(gamma: f64) -> Result<Self> {
        Self::new(gamma, gamma)
    }

    pub const ZERO: GammaPair = GammaPair {
        gamma_c: 0.0,
        gamma_b: 0.0,
    };
    pub const ONE: GammaPair = GammaPair {
        gamma_c: 1.0,
        gamma_b: 1.0,
    };

    pub fn is_zero(&self) -> bool {
        self.gamma_c == 0.0 && self.gamma_b == 0.0
    }

    pub fn scaled(&self, factor: f64) -> GammaPair {
        GammaPair {
            gamma_c: self.gamma_c * factor,
            gamma_b: self.gamma_b * factor,
        }
    }
}

impl Default for GammaPair {
    fn default() -> Self {
        GammaPair::ONE
    }
}

/// A bisection of a square matrix at index `k` into `A` (k x k), `B`
/// (k x (n-k)), `C = B'` and `D` ((n-k) x (n-k)). Blocks are views.
#[derive(Debug, Clone, Copy)]
pub struct BlockSplit<'a> {
    parent: &'a DMatrix<f64>,
    k: usize,
}

impl<'a> BlockSplit<'a> {
    pub fn new(parent: &'a DMatrix<f64>, k: usize) -> Result<Self> {
        let n = parent.nrows();
        if n != parent.ncols() {
            return Err(Error::NotSquare {
                rows: n,
                cols: parent.ncols(),
            });
        }
        if k == 0 || k >= n {
            return Err(Error::BadIndex { k, n });
        }
        Ok(BlockSplit { parent, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.parent.nrows()
    }

    pub fn a(&self) -> DMatrixView<'a, f64> {
        self.parent.view((0, 0), (self.k, self.k))
    }

    pub fn b(&self) -> DMatrixView<'a, f64> {
        self.parent.view((0, self.k), (self.k, self.n() - self.k))
    }

    pub fn c(&self) -> DMatrixView<'a, f64> {
        self.parent.view((self.k, 0), (self.n() - self.k, self.k))
    }

    pub fn d(&self) -> DMatrixView<'a, f64> {
        let m = self.n() - self.k;
        self.parent.view((self.k, self.k), (m, m))
    }

    /// The block itself, its off-diagonal coupling to the other block
    /// (rows = this side), and the other block.
    fn parts(&self, side: Side) -> (DMatrixView<'a, f64>, DMatrixView<'a, f64>, DMatrixView<'a, f64>) {
        match side {
            Side::A => (self.a(), self.b(), self.d()),
            Side::D => (self.d(), self.c(), self.a()),
        }
    }

    /// The rows of a full-length vector belonging to `side`.
    fn side_rows(&self, v: &DVector<f64>, side: Side) -> DVector<f64> {
        match side {
            Side::A => v.rows(0, self.k).into_owned(),
            Side::D => v.rows(self.k, self.n() - self.k).into_owned(),
        }
    }

    fn other(side: Side) -> Side {
        match side {
            Side::A => Side::D,
            Side::D => Side::A,
        }
    }
}

/// `split(cov, k)` over a validated covariance matrix.
pub fn split(cov: &CovarianceMatrix, k: usize) -> Result<BlockSplit<'_>> {
    BlockSplit::new(cov.matrix(), k)
}

/// Everything the allocator needs from one side of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SideAugmentation {
    pub complement: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Intra-group matrix handed down the recursion.
    pub intra: DMatrix<f64>,
    /// Inter-group matrix handed to the fitness.
    pub inter: DMatrix<f64>,
}

/// Complement and b-vector for one side, sharing a single factorization of
/// the opposite block. `carry` is the full-length constraint vector (all
/// ones when `None`).
pub(crate) fn complement_and_b(
    split: &BlockSplit<'_>,
    side: Side,
    gammas: GammaPair,
    carry: Option<&DVector<f64>>,
    rcond: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (own, coupling, opposite) = split.parts(side);
    let ones;
    let carry = match carry {
        Some(c) => {
            if c.len() != split.n() {
                return Err(Error::DimensionMismatch {
                    expected: split.n(),
                    got: c.len(),
                });
            }
            c
        }
        None => {
            ones = DVector::from_element(split.n(), 1.0);
            &ones
        }
    };
    let own_carry = split.side_rows(carry, side);
    if gammas.is_zero() {
        return Ok((own.into_owned(), own_carry));
    }
    let other_carry = split.side_rows(carry, BlockSplit::other(side));
    let m = opposite.nrows();
    // RHS = [coupling' | other_carry]
    let mut rhs = DMatrix::<f64>::zeros(m, coupling.nrows() + 1);
    rhs.view_mut((0, 0), (m, coupling.nrows()))
        .copy_from(&coupling.transpose());
    rhs.set_column(coupling.nrows(), &other_carry);
    let solved = SymSolver::new(&opposite.into_owned(), rcond)?.solve_mat(&rhs)?;
    let x = solved.columns(0, coupling.nrows());
    let y = solved.column(coupling.nrows());

    let complement = if gammas.gamma_c == 0.0 {
        own.into_owned()
    } else {
        let mut c = own.into_owned() - (coupling * x) * gammas.gamma_c;
        linalg::symmetrize(&mut c);
        c
    };
    let b = if gammas.gamma_b == 0.0 {
        own_carry
    } else {
        own_carry - (coupling * y) * gammas.gamma_b
    };
    Ok((complement, b))
}

fn check_b(b: &DVector<f64>, eps_b: f64) -> Result<()> {
    match b.iter().position(|v| !(v.abs() >= eps_b)) {
        Some(index) => Err(Error::DegenerateBVector {
            index,
            value: b[index],
            floor: eps_b,
        }),
        None => Ok(()),
    }
}

pub(crate) fn intra_from(complement: &DMatrix<f64>, b: &DVector<f64>, eps_b: f64) -> Result<DMatrix<f64>> {
    check_b(b, eps_b)?;
    let n = complement.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| complement[(i, j)] / (b[i] * b[j])))
}

pub(crate) fn inter_from(complement: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> Result<DMatrix<f64>> {
    let n = complement.nrows();
    let identity = DMatrix::<f64>::identity(n, n);
    let mut precision = SymSolver::new(complement, rcond)?.solve_mat(&identity)?;
    linalg::symmetrize(&mut precision);
    let weighted = DMatrix::from_fn(n, n, |i, j| precision[(i, j)] * b[i] * b[j]);
    let mut inter = SymSolver::new(&weighted, rcond)?.solve_mat(&identity)?;
    linalg::symmetrize(&mut inter);
    Ok(inter)
}

/// All augmented matrices for one side. At zero gammas every output is the
/// raw block (and `b` is all ones) without any arithmetic.
pub fn augment_side(
    split: &BlockSplit<'_>,
    side: Side,
    gammas: GammaPair,
    tol: &Tolerances,
) -> Result<SideAugmentation> {
    let (complement, b) = complement_and_b(split, side, gammas, None, tol.rcond)?;
    if gammas.is_zero() {
        return Ok(SideAugmentation {
            intra: complement.clone(),
            inter: complement.clone(),
            complement,
            b,
        });
    }
    let intra = intra_from(&complement, &b, tol.eps_b)?;
    let inter = inter_from(&complement, &b, tol.rcond)?;
    Ok(SideAugmentation {
        complement,
        b,
        intra,
        inter,
    })
}

/// `A - g B D^-1 C` (A side) or `D - g C A^-1 B` (D side).
pub fn schur_complement(split: &BlockSplit<'_>, side: Side, gamma_c: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&gamma_c) {
        return Err(Error::GammaOutOfRange(gamma_c));
    }
    let gammas = GammaPair { gamma_c, gamma_b: 0.0 };
    complement_and_b(split, side, gammas, None, DEFAULT_RCOND).map(|(c, _)| c)
}

/// `carry_top - g B D^-1 carry_bottom` (A side) or
/// `carry_bottom - g C A^-1 carry_top` (D side). `carry` defaults to ones.
pub fn b_vector(
    split: &BlockSplit<'_>,
    side: Side,
    gamma_b: f64,
    carry: Option<&DVector<f64>>,
) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&gamma_b) {
        return Err(Error::GammaOutOfRange(gamma_b));
    }
    let gammas = GammaPair { gamma_c: 0.0, gamma_b };
    complement_and_b(split, side, gammas, carry, DEFAULT_RCOND).map(|(_, b)| b)
}

/// `A^c / (b b')` elementwise.
pub fn augment_intra(split: &BlockSplit<'_>, side: Side, gammas: GammaPair) -> Result<DMatrix<f64>> {
    let tol = Tolerances::default();
    let (complement, b) = complement_and_b(split, side, gammas, None, tol.rcond)?;
    if gammas.is_zero() {
        return Ok(complement);
    }
    intra_from(&complement, &b, tol.eps_b)
}

/// `((A^c)^-1 o (b b'))^-1`.
pub fn augment_inter(split: &BlockSplit<'_>, side: Side, gammas: GammaPair) -> Result<DMatrix<f64>> {
    let tol = Tolerances::default();
    let (complement, b) = complement_and_b(split, side, gammas, None, tol.rcond)?;
    if gammas.is_zero() {
        return Ok(complement);
    }
    inter_from(&complement, &b, tol.rcond)
}

/// Largest `g` in `[0, 1]` keeping `A^c(g)` positive definite (minimum
/// eigenvalue above `eps_pd` times the block's mean variance) and every
/// `b(g)` entry at least `eps_b`. Bisection; returns 0 when even the raw
/// block fails or the opposite block cannot be solved.
pub fn max_feasible_gamma(split: &BlockSplit<'_>, side: Side, tol: &Tolerances) -> f64 {
    let (own, coupling, opposite) = split.parts(side);
    let own = own.into_owned();
    let m = opposite.nrows();
    let mut rhs = DMatrix::<f64>::zeros(m, coupling.nrows() + 1);
    rhs.view_mut((0, 0), (m, coupling.nrows()))
        .copy_from(&coupling.transpose());
    rhs.set_column(coupling.nrows(), &DVector::from_element(m, 1.0));
    let solved = match SymSolver::new(&opposite.into_owned(), tol.rcond).and_then(|s| s.solve_mat(&rhs)) {
        Ok(s) => s,
        Err(_) => return 0.0,
    };
    let reduction = coupling * solved.columns(0, coupling.nrows());
    let pull = coupling * solved.column(coupling.nrows());
    let floor = tol.eps_pd * own.trace() / own.nrows() as f64;

    let feasible = |g: f64| {
        if pull.iter().any(|p| !(1.0 - g * p >= tol.eps_b)) {
            return false;
        }
        let mut c = &own - &reduction * g;
        linalg::symmetrize(&mut c);
        linalg::min_eigen_exceeds(&c, floor)
    };

    if feasible(1.0) {
        return 1.0;
    }
    if !feasible(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..BISECTION_MAX_ITERS {
        if hi - lo <= BISECTION_RESOLUTION {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
