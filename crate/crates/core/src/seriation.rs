//! Asset reordering ahead of bisection: single-linkage clustering on the
//! correlation distance, read out as the dendrogram leaf order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covmat::CovarianceMatrix;
use crate::error::{Error, Result};
use crate::portfolio::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriationMethod {
    #[default]
    SingleLinkage,
    Identity,
}

impl std::str::FromStr for SeriationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single_linkage" => Ok(Self::SingleLinkage),
            "identity" => Ok(Self::Identity),
            other => Err(Error::InvalidConfig(format!("unknown seriation '{other}'"))),
        }
    }
}

/// `order[position] = original index`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::InvalidConfig(format!("not a permutation of 0..{n}: {order:?}")));
            }
            seen[i] = true;
        }
        Ok(Permutation { order })
    }

    pub fn identity(n: usize) -> Self {
        Permutation {
            order: (0..n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(p, &i)| p == i)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.len()];
        for (pos, &i) in self.order.iter().enumerate() {
            inv[i] = pos;
        }
        Permutation { order: inv }
    }

    /// `self` applied after `first`: position p maps to `first[self[p]]`.
    pub fn compose(&self, first: &Permutation) -> Permutation {
        Permutation {
            order: self.order.iter().map(|&i| first.order[i]).collect(),
        }
    }
}

/// `d_ij = sqrt((1 - rho_ij) / 2)`.
pub fn correlation_distance(cov: &CovarianceMatrix) -> Result<DMatrix<f64>> {
    cov.require_positive_diagonal()?;
    let m = cov.matrix();
    let n = cov.dim();
    let sd: Vec<f64> = (0..n).map(|i| m[(i, i)].sqrt()).collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            let rho = (m[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            (0.5 * (1.0 - rho)).sqrt()
        }
    }))
}

struct Cluster {
    leaves: Vec<usize>,
    height: f64,
    variance: f64,
}

/// Orientation when merging two clusters: larger first, then the one that
/// formed lower in the tree, then lower total variance, then the lower
/// original index. Only the last key depends on input order.
fn comes_first(x: &Cluster, y: &Cluster) -> bool {
    if x.leaves.len() != y.leaves.len() {
        return x.leaves.len() > y.leaves.len();
    }
    if x.height != y.height {
        return x.height < y.height;
    }
    if x.variance != y.variance {
        return x.variance < y.variance;
    }
    x.leaves[0] < y.leaves[0]
}

fn single_linkage_order(cov: &CovarianceMatrix) -> Result<Vec<usize>> {
    let n = cov.dim();
    let mut dist = correlation_distance(cov)?;
    let mut slots: Vec<Option<Cluster>> = (0..n)
        .map(|i| {
            Some(Cluster {
                leaves: vec![i],
                height: 0.0,
                variance: cov.get(i, i),
            })
        })
        .collect();
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..n {
            if slots[i].is_none() {
                continue;
            }
            for j in (i + 1)..n {
                if slots[j].is_none() {
                    continue;
                }
                let d = dist[(i, j)];
                if best.is_none_or(|(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let (i, j, d) = best.expect("at least two active clusters");
        let ci = slots[i].take().unwrap();
        let cj = slots[j].take().unwrap();
        let (first, second) = if comes_first(&ci, &cj) { (ci, cj) } else { (cj, ci) };
        let variance = first.variance + second.variance;
        let mut leaves = first.leaves;
        leaves.extend(second.leaves);
        slots[i] = Some(Cluster {
            leaves,
            height: d,
            variance,
        });
        for k in 0..n {
            if k != i && slots[k].is_some() {
                let merged = dist[(i, k)].min(dist[(j, k)]);
                dist[(i, k)] = merged;
                dist[(k, i)] = merged;
            }
        }
    }
    Ok(slots.into_iter().flatten().next().map(|c| c.leaves).unwrap_or_default())
}

/// Leaf order that places similar assets next to each other.
pub fn seriate(cov: &CovarianceMatrix, method: SeriationMethod) -> Result<Permutation> {
    match method {
        SeriationMethod::Identity => Ok(Permutation::identity(cov.dim())),
        SeriationMethod::SingleLinkage if cov.dim() <= 1 => Ok(Permutation::identity(cov.dim())),
        SeriationMethod::SingleLinkage => Ok(Permutation {
            order: single_linkage_order(cov)?,
        }),
    }
}

/// `P Sigma P'`: entry `(r, s)` of the result is `Sigma[order[r], order[s]]`.
pub fn apply_permutation(cov: &CovarianceMatrix, p: &Permutation) -> Result<CovarianceMatrix> {
    if p.len() != cov.dim() {
        return Err(Error::DimensionMismatch {
            expected: cov.dim(),
            got: p.len(),
        });
    }
    let o = p.order();
    let m = cov.matrix();
    let out = CovarianceMatrix::from_symmetric(DMatrix::from_fn(o.len(), o.len(), |r, s| m[(o[r], o[s])]));
    match cov.labels() {
        Some(l) => out.with_labels(o.iter().map(|&i| l[i].clone()).collect()),
        None => Ok(out),
    }
}

/// Map weights computed in permuted coordinates back to the original order.
pub fn unpermute_weights(w: &WeightVector, p: &Permutation) -> Result<WeightVector> {
    if p.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: p.len(),
        });
    }
    let mut out = DVector::zeros(w.len());
    for (pos, &i) in p.order().iter().enumerate() {
        out[i] = w.get(pos);
    }
    Ok(WeightVector::new(out))
}

/// Express original-order weights in permuted coordinates.
pub fn permute_weights(w: &WeightVector, p: &Permutation) -> Result<WeightVector> {
    if p.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: p.len(),
        });
    }
    Ok(WeightVector::new(DVector::from_iterator(
        w.len(),
        p.order().iter().map(|&i| w.get(i)),
    )))
}
