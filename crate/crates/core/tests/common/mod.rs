#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use schur_alloc::CovarianceMatrix;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Well-conditioned random covariance: `X X' / n + I`, with random
/// per-asset volatilities in [0.5, 2].
pub fn random_pd<R: Rng>(n: usize, rng: &mut R) -> CovarianceMatrix {
    let x = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let base = &x * x.transpose() / n as f64 + DMatrix::identity(n, n);
    let sd: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let m = DMatrix::from_fn(n, n, |i, j| base[(i, j)] * sd[i] * sd[j]);
    CovarianceMatrix::new(m, None).unwrap()
}

/// Normalized `Sigma^-1 1` by dense inversion.
pub fn min_var_dense(cov: &CovarianceMatrix) -> Vec<f64> {
    let inv = cov.matrix().clone().try_inverse().unwrap();
    let raw = inv.row_sum().transpose();
    let s = raw.sum();
    raw.iter().map(|v| v / s).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn write_csv(dir: &std::path::Path, name: &str, rows: &[Vec<f64>]) -> std::path::PathBuf {
    let path = dir.join(name);
    let text: String = rows
        .iter()
        .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",") + "\n")
        .collect();
    std::fs::write(&path, text).unwrap();
    path
}

pub const UNSTABLE_FOUR: [[f64; 4]; 4] = [
    [1.09948514, -1.02926114, 0.22402055, 0.10727343],
    [-1.02926114, 2.54302628, 1.05338531, -0.12481515],
    [0.22402055, 1.05338531, 1.79162765, -0.78962956],
    [0.10727343, -0.12481515, -0.78962956, 0.86316527],
];

pub fn unstable_four() -> CovarianceMatrix {
    CovarianceMatrix::from_rows(&UNSTABLE_FOUR.map(|r| r.to_vec())).unwrap()
}
