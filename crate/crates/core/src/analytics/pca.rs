use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal-component projection of a set of flattened weight vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Coordinates on the first two principal directions, one row per input.
    pub coords: Vec<[f64; 2]>,
    /// Eigenvalues of the centered Gram matrix (squared singular values),
    /// largest first.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    /// Total squared distance between the centered inputs and their
    /// reconstruction from the top `k` components.
    pub fn reconstruction_error(&self, k: usize) -> f64 {
        self.eigenvalues.iter().skip(k).map(|l| l.max(0.0)).sum()
    }
}

/// Projects each vector onto the top two principal directions of the set.
///
/// Works through the `n x n` Gram matrix of the centered vectors, so the cost
/// does not grow with the (large) parameter dimension beyond forming it.
pub fn pca_weights(vectors: &[Vec<f64>]) -> Result<Pca> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} snapshots, need at least 3")));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("weight vectors differ in dimension".into()));
    }
    let mut centered = vectors.to_vec();
    for j in 0..dim {
        let m = vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64;
        for v in &mut centered {
            v[j] -= m;
        }
    }
    let gram = DMatrix::from_fn(n, n, |i, j| {
        centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();

    let mut coords = vec![[0.0; 2]; n];
    for (c, &k) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[k].max(0.0);
        let u = eig.eigenvectors.column(k);
        // Fix the sign so the largest-magnitude loading is positive.
        let pivot = (0..n).max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs())).unwrap();
        let sign = if u[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            coords[i][c] = sign * u[i] * lambda.sqrt();
        }
    }
    Ok(Pca { coords, eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_share_coordinates() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let pca = pca_weights(&[a.clone(), a.clone(), vec![0.0, 1.0, 0.0, 1.0], vec![5.0, 0.0, 1.0, 2.0]]).unwrap();
        for k in 0..2 {
            assert!((pca.coords[0][k] - pca.coords[1][k]).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_inputs_keep_order_on_first_component() {
        let dir = [0.3, -1.2, 0.7, 2.0, 0.1];
        let ts = [-2.0, -0.5, 0.25, 1.0, 3.5];
        let vs: Vec<Vec<f64>> = ts.iter().map(|t| dir.iter().map(|d| 10.0 + t * d).collect()).collect();
        let pca = pca_weights(&vs).unwrap();
        let pc1: Vec<f64> = pca.coords.iter().map(|c| c[0]).collect();
        let increasing = pc1.windows(2).all(|w| w[0] < w[1]);
        let decreasing = pc1.windows(2).all(|w| w[0] > w[1]);
        assert!(increasing || decreasing);
        assert!(pca.coords.iter().all(|c| c[1].abs() < 1e-6));
        // Distances along PC1 reproduce the parameter distances.
        let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
        assert!(((pc1[4] - pc1[0]).abs() - 5.5 * norm).abs() < 1e-9);
    }

    #[test]
    fn more_components_never_reconstruct_worse() {
        let vs: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..8).map(|j| ((i * 7 + j * 3) as f64).sin()).collect())
            .collect();
        let pca = pca_weights(&vs).unwrap();
        assert!(pca.reconstruction_error(2) <= pca.reconstruction_error(1));
        assert!(pca.reconstruction_error(1) <= pca.reconstruction_error(0));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let err = pca_weights(&[vec![1.0], vec![1.0, 2.0], vec![0.0]]).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}
