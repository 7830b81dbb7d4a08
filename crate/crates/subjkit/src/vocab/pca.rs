//! Principal component analysis via the sample covariance matrix and a
//! Jacobi eigendecomposition. All fitting runs in f64; narrowing to f32 is
//! the index's business, not PCA's.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{jacobi_eigh, Mat};

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("k must be in 1..={max}, got {k}")]
    KTooLarge { k: usize, max: usize },
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("rows have inconsistent width: expected {expected}, got {got}")]
    RaggedRows { expected: usize, got: usize },
    #[error("vector has dimension {got}, basis expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("all rows are identical; there is no variance to decompose")]
    DegenerateData,
    #[error("inputs contain non-finite values")]
    NonFinite,
}

/// A fitted projection: subtract `mean`, then apply `components` (k rows of
/// length `dim_in`, orthonormal, ordered by explained variance).
#[derive(Debug, Clone, Serialize)]
pub struct PcaBasis {
    pub k: usize,
    pub dim_in: usize,
    pub mean: Vec<f64>,
    /// Row-major, `k * dim_in`. Each row's largest-magnitude entry is
    /// non-negative, which pins the otherwise arbitrary sign.
    pub components: Vec<f64>,
    /// Top-k eigenvalues of the sample covariance (n-1 denominator).
    pub explained_variance: Vec<f64>,
}

impl PcaBasis {
    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i * self.dim_in..(i + 1) * self.dim_in]
    }

    /// Projects one vector into the k-dimensional basis.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, PcaError> {
        if v.len() != self.dim_in {
            return Err(PcaError::DimensionMismatch {
                expected: self.dim_in,
                got: v.len(),
            });
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        Ok((0..self.k)
            .map(|i| crate::linalg::dot(self.component(i), &centered))
            .collect())
    }
}

/// Fits a k-component PCA on `rows`. `k` may not exceed `min(n - 1, dim)`:
/// beyond that the covariance has no further directions to offer.
pub fn fit_pca(rows: &[Vec<f64>], k: usize) -> Result<PcaBasis, PcaError> {
    let n = rows.len();
    if n < 2 {
        return Err(PcaError::TooFewRows(n));
    }
    let dim = rows[0].len();
    for row in rows {
        if row.len() != dim {
            return Err(PcaError::RaggedRows {
                expected: dim,
                got: row.len(),
            });
        }
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PcaError::NonFinite);
    }
    let max_k = (n - 1).min(dim);
    if k == 0 || k > max_k {
        return Err(PcaError::KTooLarge { k, max: max_k });
    }

    let mut mean = vec![0.0; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let spread = centered
        .iter()
        .flatten()
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    if spread < 1e-12 {
        return Err(PcaError::DegenerateData);
    }

    let mut cov = Mat::zeros(dim, dim);
    for row in &centered {
        for i in 0..dim {
            for j in i..dim {
                cov[(i, j)] += row[i] * row[j];
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..dim {
        for j in i..dim {
            cov[(i, j)] /= denom;
            cov[(j, i)] = cov[(i, j)];
        }
    }

    let (eigenvalues, eigenvectors) = jacobi_eigh(&cov);
    let mut components = Vec::with_capacity(k * dim);
    for c in 0..k {
        let mut col = eigenvectors.column(c);
        let lead = col
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.abs()
                    .partial_cmp(&b.1.abs())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(b.0.cmp(&a.0))
            })
            .map(|(_, &v)| v)
            .unwrap_or(0.0);
        if lead < 0.0 {
            for v in &mut col {
                *v = -*v;
            }
        }
        components.extend_from_slice(&col);
    }
    let explained_variance: Vec<f64> = eigenvalues[..k].iter().map(|&v| v.max(0.0)).collect();

    Ok(PcaBasis {
        k,
        dim_in: dim,
        mean,
        components,
        explained_variance,
    })
}
