//! Fixed matrices shared by unit tests.

use crate::covmat::CovarianceMatrix;

/// Four assets whose minimum-variance portfolio carries large offsetting
/// positions.
pub(crate) fn unstable_four_asset() -> CovarianceMatrix {
    CovarianceMatrix::from_rows(&[
        vec![1.09948514, -1.02926114, 0.22402055, 0.10727343],
        vec![-1.02926114, 2.54302628, 1.05338531, -0.12481515],
        vec![0.22402055, 1.05338531, 1.79162765, -0.78962956],
        vec![0.10727343, -0.12481515, -0.78962956, 0.86316527],
    ])
    .unwrap()
}

/// Two equicorrelated blocks (rho 0.8 within, 0 across) interleaved by
/// parity, with unequal variances.
pub(crate) fn interleaved_blocks(n: usize) -> CovarianceMatrix {
    let sd: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let rho = if i == j {
                        1.0
                    } else if i % 2 == j % 2 {
                        0.8
                    } else {
                        0.0
                    };
                    rho * sd[i] * sd[j]
                })
                .collect()
        })
        .collect();
    CovarianceMatrix::from_rows(&rows).unwrap()
}
