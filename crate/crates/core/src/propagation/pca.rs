use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::PropagationError;

/// Principal-component projection. `basis` rows are unit eigenvectors of the
/// sample covariance, in order of decreasing eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub mean: Vec<f64>,
    pub basis: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

// cumulative ratios of equal eigenvalues land a few ulps either side of the target
const RATIO_SLACK: f64 = 1e-12;

impl Projection {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.basis.len()
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, PropagationError> {
        if v.len() != self.dim() {
            return Err(PropagationError::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(self
            .basis
            .iter()
            .map(|row| row.iter().zip(v).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect())
    }
}

/// Fits a projection keeping the fewest leading components whose share of
/// total variance reaches `variance_target`.
pub fn fit_projection(vectors: &[Vec<f64>], variance_target: f64) -> Result<Projection, PropagationError> {
    if vectors.len() < 2 {
        return Err(PropagationError::TooFewVectors(vectors.len()));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(PropagationError::InvalidParameter(format!(
            "variance target {variance_target} outside (0, 1]"
        )));
    }
    let d = vectors[0].len();
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(PropagationError::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(PropagationError::NonFinite);
    }
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(PropagationError::ZeroVariance);
    }

    let mut basis = Vec::new();
    let mut ratios = Vec::new();
    let mut cumulative = 0.0;
    for (&i, &value) in order.iter().zip(&values) {
        let mut row: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // sign convention: largest-magnitude entry positive
        let pivot = row
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            row.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(row);
        ratios.push(value / total);
        cumulative += value / total;
        if cumulative >= variance_target - RATIO_SLACK {
            break;
        }
    }
    Ok(Projection {
        mean,
        basis,
        explained_variance_ratio: ratios,
    })
}
