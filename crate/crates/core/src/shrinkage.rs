//! "Weak" adaptive shrinkage: damp the off-diagonal covariance by a factor
//! `xi` chosen so that the long-only clip of the shrunk minimum-variance
//! portfolio has the smallest variance under the *original* matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmat::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::linalg::DEFAULT_RCOND;
use crate::par;
use crate::portfolio::{min_var_raw, quad_form, WeightVector};

pub const DEFAULT_GRID_STEP: f64 = 0.005;

/// Golden-section iterations used by the local refinement.
const REFINE_ITERS: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShrinkageConfig {
    /// Spacing of the coarse `xi` grid over `[0, 1]`.
    pub grid_step: f64,
    /// Refine the grid minimum by golden-section search within one step.
    pub refine: bool,
}

impl Default for ShrinkageConfig {
    fn default() -> Self {
        ShrinkageConfig {
            grid_step: DEFAULT_GRID_STEP,
            refine: true,
        }
    }
}

/// One evaluated point of the clipped-variance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub xi: f64,
    /// `None` when the shrunk matrix could not be solved at this `xi`.
    pub clipped_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShrinkageResult {
    pub xi: f64,
    pub shrunk: CovarianceMatrix,
    /// Minimum-variance weights of `shrunk`; may carry small shorts.
    pub weights: WeightVector,
    /// Variance of the clipped weights under the original matrix.
    pub clipped_variance: f64,
    /// Grid evaluations in ascending `xi`.
    pub curve: Vec<CurvePoint>,
    /// Grid points skipped because the solve failed there.
    pub skipped: Vec<(f64, Error)>,
}

/// Multiply every off-diagonal entry by `xi`; the diagonal is untouched.
pub fn scale_off_diagonal(cov: &CovarianceMatrix, xi: f64) -> Result<CovarianceMatrix> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(Error::XiOutOfRange(xi));
    }
    let out = scale_raw(cov.matrix(), xi);
    let out = CovarianceMatrix::new(out, cov.labels().map(<[String]>::to_vec))?;
    Ok(out)
}

pub(crate) fn scale_raw(m: &DMatrix<f64>, xi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(
        m.nrows(),
        m.ncols(),
        |i, j| if i == j { m[(i, j)] } else { xi * m[(i, j)] },
    )
}

/// Zero the short positions and rescale the rest to sum to one.
pub fn long_only_clip(weights: &WeightVector) -> Result<WeightVector> {
    let clipped = clip_raw(weights.vector())?;
    Ok(WeightVector::new(clipped).with_labels(weights.labels().map(<[String]>::to_vec)))
}

pub(crate) fn clip_raw(w: &DVector<f64>) -> Result<DVector<f64>> {
    let kept = w.map(|v| if v > 0.0 { v } else { 0.0 });
    let total = kept.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::AllNonPositive);
    }
    Ok(kept / total)
}

pub(crate) struct RawShrink {
    pub xi: f64,
    pub weights: DVector<f64>,
    pub clipped_variance: f64,
    pub curve: Vec<CurvePoint>,
    pub skipped: Vec<(f64, Error)>,
}

fn grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidGridStep(step));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() < 1e-9 {
        let n = n as usize;
        Ok((0..=n).map(|i| i as f64 / n as f64).collect())
    } else {
        let n = (1.0 / step).floor() as usize;
        let mut g: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
        if *g.last().unwrap() < 1.0 {
            g.push(1.0);
        }
        Ok(g)
    }
}

fn evaluate(m: &DMatrix<f64>, xi: f64, rcond: f64) -> Result<(DVector<f64>, f64)> {
    let w = min_var_raw(&scale_raw(m, xi), rcond)?;
    let clipped = clip_raw(&w)?;
    Ok((w, quad_form(m, &clipped)))
}

pub(crate) fn weak_shrink_raw(m: &DMatrix<f64>, cfg: &ShrinkageConfig, rcond: f64) -> Result<RawShrink> {
    let xs = grid(cfg.grid_step)?;
    let evals = par::map_collect(&xs, |&xi| evaluate(m, xi, rcond));

    let mut curve = Vec::with_capacity(xs.len());
    let mut skipped = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, (xi, ev)) in xs.iter().zip(&evals).enumerate() {
        match ev {
            Ok((_, v)) => {
                curve.push(CurvePoint {
                    xi: *xi,
                    clipped_variance: Some(*v),
                });
                // strict comparison: ties resolve to the smaller xi
                if best.is_none_or(|(_, bv)| *v < bv) {
                    best = Some((i, *v));
                }
            }
            Err(e) => {
                curve.push(CurvePoint {
                    xi: *xi,
                    clipped_variance: None,
                });
                skipped.push((*xi, e.clone()));
            }
        }
    }
    let (bi, mut best_v) = best.ok_or(Error::NoFeasibleXi)?;
    let mut best_xi = xs[bi];
    let mut best_w = evals[bi].as_ref().map(|(w, _)| w.clone()).expect("feasible grid point");

    if cfg.refine {
        let lo = if bi > 0 { xs[bi - 1] } else { xs[bi] };
        let hi = if bi + 1 < xs.len() { xs[bi + 1] } else { xs[bi] };
        if let Some((xi, w, v)) = golden_section(m, lo, hi, rcond) {
            if v < best_v {
                best_xi = xi;
                best_w = w;
                best_v = v;
            }
        }
    }

    Ok(RawShrink {
        xi: best_xi,
        weights: best_w,
        clipped_variance: best_v,
        curve,
        skipped,
    })
}

fn golden_section(m: &DMatrix<f64>, mut a: f64, mut b: f64, rcond: f64) -> Option<(f64, DVector<f64>, f64)> {
    if !(b > a) {
        return None;
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let f = |x: f64| evaluate(m, x, rcond).map(|(_, v)| v).unwrap_or(f64::INFINITY);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..REFINE_ITERS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = if fc <= fd { c } else { d };
    evaluate(m, x, rcond).ok().map(|(w, v)| (x, w, v))
}

/// Weak shrinkage with the given coarse grid step and default refinement.
pub fn weak_shrink(cov: &CovarianceMatrix, grid_step: f64) -> Result<ShrinkageResult> {
    weak_shrink_with(
        cov,
        &ShrinkageConfig {
            grid_step,
            ..ShrinkageConfig::default()
        },
    )
}

pub fn weak_shrink_with(cov: &CovarianceMatrix, cfg: &ShrinkageConfig) -> Result<ShrinkageResult> {
    let raw = weak_shrink_raw(cov.matrix(), cfg, DEFAULT_RCOND)?;
    let labels = cov.labels().map(<[String]>::to_vec);
    let shrunk = scale_off_diagonal(cov, raw.xi)?;
    Ok(ShrinkageResult {
        xi: raw.xi,
        shrunk,
        weights: WeightVector::new(raw.weights).with_labels(labels),
        clipped_variance: raw.clipped_variance,
        curve: raw.curve,
        skipped: raw.skipped,
    })
}
