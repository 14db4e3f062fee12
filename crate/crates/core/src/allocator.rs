//! The recursive top-down allocator.
//!
//! Each call bisects the (seriated) covariance at `k = ceil(n/2)`, hands the
//! intra-group matrices down the recursion and splits capital between the two
//! halves in proportion `1/nu(A') : 1/nu(D')`. With both gammas at zero the
//! augmented matrices are the raw blocks and the scheme is classic HRP; at
//! gamma one, in debiased mode with minimum-variance fitness, the result is
//! the exact minimum-variance portfolio.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmat::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::par;
use crate::portfolio::{self, EvalSettings, FitnessKind, ScaledSolution, WeightVector};
use crate::schur::{self, BlockSplit, GammaPair, Side, SideAugmentation, Tolerances};
use crate::seriation::{self, Permutation, SeriationMethod};
use crate::shrinkage::{self, ShrinkageConfig};

/// How the augmented matrices enter the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Raw blocks only; gammas are forced to zero.
    Hrp,
    /// Concatenate `(1/nu) w(A'')` as written.
    SchurLiteral,
    /// Divide each child portfolio by its b-vector before the `1/nu`
    /// scaling. Recovers `Sigma^-1 1` exactly at gamma one.
    #[default]
    SchurDebiased,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hrp" => Ok(Self::Hrp),
            "schur_literal" => Ok(Self::SchurLiteral),
            "schur_debiased" => Ok(Self::SchurDebiased),
            other => Err(Error::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

/// Portfolio used once a block is no larger than the terminal size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMethod {
    #[default]
    Minvar,
    WeakMinvar,
    EqualWeight,
    InverseVariance,
}

impl std::str::FromStr for TerminalMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minvar" => Ok(Self::Minvar),
            "weak_minvar" => Ok(Self::WeakMinvar),
            "equal_weight" => Ok(Self::EqualWeight),
            "inverse_variance" => Ok(Self::InverseVariance),
            other => Err(Error::InvalidConfig(format!("unknown terminal method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationConfig {
    pub gammas: GammaPair,
    pub mode: Mode,
    pub fitness: FitnessKind,
    pub terminal: TerminalMethod,
    pub terminal_size: usize,
    pub seriation: SeriationMethod,
    /// Multiply the user gammas by the largest feasible gamma at each split.
    pub adaptive_cap: bool,
    pub tolerances: Tolerances,
    pub shrinkage: ShrinkageConfig,
}

impl Default for AllocationConfig {
    fn default() -> Self {
        AllocationConfig {
            gammas: GammaPair::ONE,
            mode: Mode::SchurDebiased,
            fitness: FitnessKind::MinvarVariance,
            terminal: TerminalMethod::Minvar,
            terminal_size: 5,
            seriation: SeriationMethod::SingleLinkage,
            adaptive_cap: true,
            tolerances: Tolerances::default(),
            shrinkage: ShrinkageConfig::default(),
        }
    }
}

impl AllocationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.terminal_size == 0 {
            return Err(Error::InvalidConfig("terminal size must be at least 1".into()));
        }
        GammaPair::new(self.gammas.gamma_c, self.gammas.gamma_b)?;
        Ok(())
    }

    /// Gammas actually used: zero in HRP mode.
    pub fn effective_gammas(&self) -> GammaPair {
        match self.mode {
            Mode::Hrp => GammaPair::ZERO,
            _ => self.gammas,
        }
    }

    fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            rcond: self.tolerances.rcond,
            shrinkage: self.shrinkage,
        }
    }
}

/// What happened at one bisection. Offsets are in seriated coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitDiagnostic {
    pub depth: usize,
    pub offset: usize,
    pub size: usize,
    pub k: usize,
    /// Feasibility cap applied to the user gammas (1 when not capping).
    pub cap: f64,
    pub gamma_c: f64,
    pub gamma_b: f64,
    pub nu_a: f64,
    pub nu_d: f64,
    pub b_a_min: f64,
    pub b_a_max: f64,
    pub b_d_min: f64,
    pub b_d_max: f64,
    /// Times the gammas were halved after a failed augmentation.
    pub retries: usize,
    /// Augmentation abandoned for this split; raw blocks used.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationReport {
    pub weights: WeightVector,
    pub splits: Vec<SplitDiagnostic>,
    pub permutation: Permutation,
    /// `w' Sigma w` of the returned weights under the input matrix.
    pub portfolio_variance: f64,
}

const MAX_RETRIES: usize = 5;

struct Engine<'c> {
    cfg: &'c AllocationConfig,
    settings: EvalSettings,
    gammas: GammaPair,
}

type Subtree = (DVector<f64>, Vec<SplitDiagnostic>);

impl Engine<'_> {
    fn terminal(&self, m: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = m.nrows();
        match self.cfg.terminal {
            TerminalMethod::Minvar => portfolio::min_var_raw(m, self.settings.rcond),
            TerminalMethod::WeakMinvar => {
                Ok(shrinkage::weak_shrink_raw(m, &self.settings.shrinkage, self.settings.rcond)?.weights)
            }
            TerminalMethod::EqualWeight => Ok(DVector::from_element(n, 1.0 / n as f64)),
            TerminalMethod::InverseVariance => {
                let inv = m.diagonal().map(|v| 1.0 / v);
                normalize(inv)
            }
        }
    }

    fn augment(&self, split: &BlockSplit<'_>, gammas: GammaPair) -> Result<(SideAugmentation, SideAugmentation)> {
        let tol = &self.cfg.tolerances;
        let a = schur::augment_side(split, Side::A, gammas, tol)?;
        let d = schur::augment_side(split, Side::D, gammas, tol)?;
        Ok((a, d))
    }

    fn recurse(&self, m: &DMatrix<f64>, offset: usize, depth: usize) -> Result<Subtree> {
        let n = m.nrows();
        if n <= self.cfg.terminal_size {
            return Ok((self.terminal(m)?, Vec::new()));
        }
        let k = n.div_ceil(2);
        let split = BlockSplit::new(m, k)?;

        let cap = if !self.gammas.is_zero() && self.cfg.adaptive_cap {
            let tol = &self.cfg.tolerances;
            schur::max_feasible_gamma(&split, Side::A, tol).min(schur::max_feasible_gamma(&split, Side::D, tol))
        } else {
            1.0
        };
        let mut gammas = if cap == 1.0 {
            self.gammas
        } else {
            self.gammas.scaled(cap)
        };
        let mut retries = 0;
        let mut fell_back = false;
        let (aug_a, aug_d) = loop {
            match self.augment(&split, gammas) {
                Ok(pair) => break pair,
                Err(e) if is_retriable(&e) && !gammas.is_zero() => {
                    if retries < MAX_RETRIES {
                        retries += 1;
                        gammas = gammas.scaled(0.5);
                    } else {
                        fell_back = true;
                        gammas = GammaPair::ZERO;
                    }
                    log::debug!("split at depth {depth}, offset {offset}: {e}; retrying with {gammas:?}");
                }
                Err(e) => return Err(e),
            }
        };

        let ((wa, diag_a), (wd, diag_d)) = {
            let (ra, rd) = par::join(
                || self.recurse(&aug_a.intra, offset, depth + 1),
                || self.recurse(&aug_d.intra, offset + k, depth + 1),
            );
            (ra?, rd?)
        };

        let nu_a = portfolio::fitness_raw(&aug_a.inter, self.cfg.fitness, Some(&wa), &self.settings)?;
        let nu_d = portfolio::fitness_raw(&aug_d.inter, self.cfg.fitness, Some(&wd), &self.settings)?;

        let (top, bottom) = match self.cfg.mode {
            Mode::Hrp | Mode::SchurLiteral => (&wa / nu_a, &wd / nu_d),
            Mode::SchurDebiased => (wa.component_div(&aug_a.b) / nu_a, wd.component_div(&aug_d.b) / nu_d),
        };
        let mut combined = DVector::zeros(n);
        combined.rows_mut(0, k).copy_from(&top);
        combined.rows_mut(k, n - k).copy_from(&bottom);
        let weights = normalize(combined)?;

        let (b_a_min, b_a_max) = extrema(&aug_a.b);
        let (b_d_min, b_d_max) = extrema(&aug_d.b);
        let mut diagnostics = Vec::with_capacity(1 + diag_a.len() + diag_d.len());
        diagnostics.push(SplitDiagnostic {
            depth,
            offset,
            size: n,
            k,
            cap,
            gamma_c: gammas.gamma_c,
            gamma_b: gammas.gamma_b,
            nu_a,
            nu_d,
            b_a_min,
            b_a_max,
            b_d_min,
            b_d_max,
            retries,
            fell_back,
        });
        diagnostics.extend(diag_a);
        diagnostics.extend(diag_d);
        Ok((weights, diagnostics))
    }
}

fn is_retriable(e: &Error) -> bool {
    matches!(e, Error::DegenerateBVector { .. } | Error::Singular { .. })
}

fn extrema(v: &DVector<f64>) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

fn normalize(v: DVector<f64>) -> Result<DVector<f64>> {
    let s = v.sum();
    let scale = v.iter().map(|x| x.abs()).sum::<f64>();
    if !s.is_finite() || !(s.abs() > 1e-12 * scale) {
        return Err(Error::ZeroNormalizer);
    }
    Ok(v / s)
}

/// Hierarchical allocation of `cov` under `config`.
pub fn allocate(cov: &CovarianceMatrix, config: &AllocationConfig) -> Result<AllocationReport> {
    config.validate()?;
    let n = cov.dim();
    if n == 0 {
        return Err(Error::InvalidConfig("empty covariance matrix".into()));
    }
    cov.require_positive_diagonal()?;

    let permutation = seriation::seriate(cov, config.seriation)?;
    let permuted = if permutation.is_identity() {
        cov.clone()
    } else {
        seriation::apply_permutation(cov, &permutation)?
    };
    let engine = Engine {
        cfg: config,
        settings: config.eval_settings(),
        gammas: config.effective_gammas(),
    };
    let (w, splits) = engine.recurse(permuted.matrix(), 0, 0)?;
    let w = normalize(w)?;
    let weights = seriation::unpermute_weights(&WeightVector::new(w), &permutation)?
        .with_labels(cov.labels().map(<[String]>::to_vec));
    let portfolio_variance = portfolio::portfolio_variance(cov, &weights)?;
    Ok(AllocationReport {
        weights,
        splits,
        permutation,
        portfolio_variance,
    })
}

fn exact_rec(
    q: &DMatrix<f64>,
    b: &DVector<f64>,
    gammas: GammaPair,
    m: usize,
    k: usize,
    rcond: f64,
) -> Result<DVector<f64>> {
    let n = q.nrows();
    if n <= m {
        return crate::linalg::SymSolver::new(q, rcond)?.solve_vec(b);
    }
    let split = BlockSplit::new(q, k)?;
    let (ac, ba) = schur::complement_and_b(&split, Side::A, gammas, Some(b), rcond)?;
    let (dc, bd) = schur::complement_and_b(&split, Side::D, gammas, Some(b), rcond)?;
    let (top, bottom) = par::join(
        || exact_rec(&ac, &ba, gammas, m, ac.nrows().div_ceil(2), rcond),
        || exact_rec(&dc, &bd, gammas, m, dc.nrows().div_ceil(2), rcond),
    );
    let (top, bottom) = (top?, bottom?);
    let mut out = DVector::zeros(n);
    out.rows_mut(0, k).copy_from(&top);
    out.rows_mut(k, n - k).copy_from(&bottom);
    Ok(out)
}

/// Constraint-propagation recursion: `Q^-1 b` assembled from recursive
/// solves on complements. Exact at gamma one.
pub fn allocate_exact(cov: &CovarianceMatrix, b: &DVector<f64>, gammas: GammaPair, m: usize) -> Result<ScaledSolution> {
    allocate_exact_at(cov, b, gammas, m, cov.dim().div_ceil(2))
}

/// As [`allocate_exact`] with the top-level split at `root_k` (midpoint
/// splits below).
pub fn allocate_exact_at(
    cov: &CovarianceMatrix,
    b: &DVector<f64>,
    gammas: GammaPair,
    m: usize,
    root_k: usize,
) -> Result<ScaledSolution> {
    if m == 0 {
        return Err(Error::InvalidConfig("terminal size must be at least 1".into()));
    }
    GammaPair::new(gammas.gamma_c, gammas.gamma_b)?;
    let n = cov.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if n > m && (root_k == 0 || root_k >= n) {
        return Err(Error::BadIndex { k: root_k, n });
    }
    let values = exact_rec(cov.matrix(), b, gammas, m, root_k, crate::linalg::DEFAULT_RCOND)?;
    let quad = b.dot(&values);
    if !(quad.abs() > 1e-12 * b.norm() * values.norm()) {
        return Err(Error::DegenerateConstraint);
    }
    let weights = WeightVector::new(&values / quad).with_labels(cov.labels().map(<[String]>::to_vec));
    Ok(ScaledSolution {
        values,
        fitness: 1.0 / quad,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg(mode: Mode, gamma: f64, fitness: FitnessKind, m: usize) -> AllocationConfig {
        AllocationConfig {
            gammas: GammaPair::uniform(gamma).unwrap(),
            mode,
            fitness,
            terminal: TerminalMethod::Minvar,
            terminal_size: m,
            seriation: SeriationMethod::Identity,
            ..AllocationConfig::default()
        }
    }

    fn assert_weights(w: &WeightVector, expected: &[f64], tol: f64) {
        for (a, b) in w.as_slice().iter().zip(expected) {
            assert!((a - b).abs() <= tol, "{:?} vs {:?}", w.as_slice(), expected);
        }
    }

    #[test]
    fn hrp_breaks_symmetry() {
        let c = CovarianceMatrix::equicorrelation(3, 0.5);
        let r = allocate(&c, &cfg(Mode::Hrp, 1.0, FitnessKind::SubportfolioVariance, 1)).unwrap();
        assert_weights(&r.weights, &[2.0 / 7.0, 2.0 / 7.0, 3.0 / 7.0], 1e-12);
        assert_eq!(r.splits[0].gamma_c, 0.0);
    }

    #[test]
    fn hrp_closed_form_in_rho() {
        for rho in [-0.3, 0.1, 0.5, 0.8] {
            let c = CovarianceMatrix::equicorrelation(3, rho);
            let r = allocate(&c, &cfg(Mode::Hrp, 0.0, FitnessKind::SubportfolioVariance, 1)).unwrap();
            let s = 3.0 + rho;
            assert_weights(&r.weights, &[1.0 / s, 1.0 / s, (1.0 + rho) / s], 1e-12);
        }
    }

    #[test]
    fn debiased_restores_equal_weights() {
        let c = CovarianceMatrix::equicorrelation(3, 0.5);
        let r = allocate(&c, &cfg(Mode::SchurDebiased, 1.0, FitnessKind::MinvarVariance, 1)).unwrap();
        assert_weights(&r.weights, &[1.0 / 3.0; 3], 1e-10);
        assert_eq!(r.splits[0].cap, 1.0);
    }

    #[test]
    fn literal_mode_vector() {
        let c = CovarianceMatrix::equicorrelation(3, 0.5);
        let r = allocate(&c, &cfg(Mode::SchurLiteral, 1.0, FitnessKind::MinvarVariance, 1)).unwrap();
        assert_weights(&r.weights, &[0.375, 0.375, 0.25], 1e-10);
    }

    #[test]
    fn identity_gives_equal_weights_everywhere() {
        for mode in [Mode::Hrp, Mode::SchurLiteral, Mode::SchurDebiased] {
            for gamma in [0.0, 0.4, 1.0] {
                let r = allocate(
                    &CovarianceMatrix::identity(7),
                    &cfg(mode, gamma, FitnessKind::MinvarVariance, 2),
                )
                .unwrap();
                assert_weights(&r.weights, &[1.0 / 7.0; 7], 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_fitness_ignores_correlation() {
        // correlated pair plus an independent asset: diagonal fitness splits
        // the pair's capital as if it were uncorrelated
        let c = CovarianceMatrix::from_rows(&[vec![1.0, 0.6, 0.0], vec![0.6, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let r = allocate(&c, &cfg(Mode::Hrp, 0.0, FitnessKind::DiagSumSquares, 1)).unwrap();
        // nu(A) = 2, nu(D) = 1 with A split evenly
        assert_weights(&r.weights, &[1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0], 1e-12);
        let mv = portfolio::min_var_unit(&c).unwrap();
        assert!((mv.get(2) - 0.5).abs() > 0.05);
    }

    #[test]
    fn terminal_methods() {
        let c = CovarianceMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 4.0]]).unwrap();
        let mut config = cfg(Mode::Hrp, 0.0, FitnessKind::MinvarVariance, 5);
        config.terminal = TerminalMethod::InverseVariance;
        assert_weights(&allocate(&c, &config).unwrap().weights, &[0.8, 0.2], 1e-15);
        config.terminal = TerminalMethod::EqualWeight;
        assert_weights(&allocate(&c, &config).unwrap().weights, &[0.5, 0.5], 1e-15);
        config.terminal = TerminalMethod::Minvar;
        let mv = portfolio::min_var_unit(&c).unwrap();
        assert_weights(&allocate(&c, &config).unwrap().weights, mv.as_slice(), 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let c = CovarianceMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert_eq!(
            allocate(&c, &AllocationConfig::default()).unwrap_err(),
            Error::ZeroVariance(1)
        );
        let zero_m = AllocationConfig {
            terminal_size: 0,
            ..AllocationConfig::default()
        };
        assert!(allocate(&CovarianceMatrix::identity(2), &zero_m).is_err());
        let big_gamma = AllocationConfig {
            gammas: GammaPair {
                gamma_c: 1.5,
                gamma_b: 1.0,
            },
            ..AllocationConfig::default()
        };
        assert!(allocate(&CovarianceMatrix::identity(2), &big_gamma).is_err());
    }

    #[test]
    fn degenerate_b_triggers_fallback() {
        // b_A[0] = 1 - B D^-1 1 = 0 at gamma one; capping disabled
        let c = CovarianceMatrix::from_rows(&[vec![2.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 1.0]]).unwrap();
        let mut config = cfg(Mode::SchurDebiased, 1.0, FitnessKind::MinvarVariance, 1);
        config.adaptive_cap = false;
        let r = allocate(&c, &config).unwrap();
        assert_eq!(r.splits[0].retries, 1);
        assert_relative_eq!(r.splits[0].gamma_c, 0.5);
        assert!(!r.splits[0].fell_back);
        assert_relative_eq!(r.weights.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_recursion_recovers_inverse() {
        let c = crate::testdata::unstable_four_asset();
        let ones = DVector::from_element(4, 1.0);
        let s = allocate_exact(&c, &ones, GammaPair::ONE, 1).unwrap();
        let expected = [-9.008, -6.871, 8.749, 8.130];
        assert_weights(&s.weights, &expected, 1e-3);
        let direct = c.matrix().clone().try_inverse().unwrap() * &ones;
        // nearly singular: entries of Sigma^-1 1 are ~4e7
        assert_relative_eq!(s.values, direct, max_relative = 1e-6);
    }

    #[test]
    fn exact_block_diagonal_is_gamma_free() {
        let c = CovarianceMatrix::from_rows(&[
            vec![1.0, 0.3, 0.0, 0.0],
            vec![0.3, 2.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.5, -0.4],
            vec![0.0, 0.0, -0.4, 1.0],
        ])
        .unwrap();
        let ones = DVector::from_element(4, 1.0);
        // single split: only the root coupling is affected by gamma
        let g0 = allocate_exact(&c, &ones, GammaPair::ZERO, 2).unwrap();
        let g1 = allocate_exact(&c, &ones, GammaPair::ONE, 2).unwrap();
        assert_eq!(g0.values, g1.values);
    }

    #[test]
    fn exact_rejects_bad_root_split() {
        let c = CovarianceMatrix::identity(4);
        let ones = DVector::from_element(4, 1.0);
        assert!(matches!(
            allocate_exact_at(&c, &ones, GammaPair::ONE, 1, 4),
            Err(Error::BadIndex { .. })
        ));
    }

    #[test]
    fn config_json_round_trip() {
        let c = AllocationConfig {
            mode: Mode::SchurLiteral,
            terminal_size: 3,
            ..AllocationConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<AllocationConfig>(&s).unwrap(), c);
        let partial: AllocationConfig = serde_json::from_str(r#"{"mode": "hrp"}"#).unwrap();
        assert_eq!(partial.mode, Mode::Hrp);
        assert_eq!(partial.terminal_size, 5);
        assert!(serde_json::from_str::<AllocationConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
