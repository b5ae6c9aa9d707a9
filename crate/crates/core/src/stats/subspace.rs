use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top right-singular directions of a stacked matrix of bias vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceResult {
    pub k: usize,
    /// `k × dim`, one orthonormal direction per row.
    pub directions: Array2<f64>,
    /// Fraction of `‖C‖_F²` captured by the first `k` directions.
    pub explained: f64,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

/// SVD of `diffs` (one bias vector per row), keeping the smallest `k` whose
/// squared singular values reach `threshold` of the squared Frobenius norm.
///
/// The right-singular vectors are the eigenvectors of `CᵀC`, which stays
/// small (`dim × dim`) for embedding-sized inputs.
pub fn bias_subspace(diffs: ArrayView2<'_, f64>, threshold: f64) -> Result<SubspaceResult> {
    if diffs.nrows() == 0 || diffs.ncols() == 0 {
        return Err(Error::Stats("bias subspace needs at least one row".into()));
    }
    if diffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Stats("bias vectors contain non-finite entries".into()));
    }
    if !(0.0..=1.0).contains(&threshold) || threshold == 0.0 {
        return Err(Error::Stats(format!("threshold {threshold} outside (0, 1]")));
    }
    let frob2: f64 = diffs.iter().map(|v| v * v).sum();
    if frob2 == 0.0 {
        return Err(Error::Stats("bias vectors are all zero".into()));
    }

    let gram = diffs.t().dot(&diffs);
    let (eigvals, eigvecs) = symmetric_eigen(gram.view());
    let total: f64 = eigvals.iter().map(|v| v.max(0.0)).sum();

    let mut k = 0;
    let mut cum = 0.0;
    for &ev in eigvals.iter() {
        k += 1;
        cum += ev.max(0.0);
        if cum / total >= threshold - 1e-12 {
            break;
        }
    }

    let mut directions = Array2::zeros((k, diffs.ncols()));
    for j in 0..k {
        let mut v = eigvecs.column(j).to_owned();
        // sign convention: largest-magnitude component positive
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.mapv_inplace(|x| -x);
        }
        directions.row_mut(j).assign(&v);
    }

    Ok(SubspaceResult {
        k,
        directions,
        explained: (cum / total).min(1.0),
        singular_values: eigvals.iter().map(|v| v.max(0.0).sqrt()).collect(),
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as columns.
pub fn symmetric_eigen(a: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    let mut a = a.to_owned();
    let mut v = Array2::<f64>::eye(n);
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let diag = a.diag().to_owned();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));
    let vals = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let vecs = v.select(Axis(1), &order);
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn diagonal_case() {
        let c = array![[2.0, 0.0], [0.0, 1.0]];
        let s = bias_subspace(c.view(), 0.5).unwrap();
        assert_eq!(s.k, 1);
        assert!((s.directions[[0, 0]].abs() - 1.0).abs() < 1e-6);
        assert!(s.directions[[0, 1]].abs() < 1e-6);
        assert!((s.explained - 0.8).abs() < 1e-12);
        assert!((s.singular_values[0] - 2.0).abs() < 1e-12);
        assert!((s.singular_values[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one() {
        let c = array![[1.0, 2.0, -1.0], [2.0, 4.0, -2.0], [-0.5, -1.0, 0.5]];
        let s = bias_subspace(c.view(), 0.5).unwrap();
        assert_eq!(s.k, 1);
        assert!((s.explained - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_four_dims() {
        let c = Array2::<f64>::eye(4) * 3.0;
        let s = bias_subspace(c.view(), 0.5).unwrap();
        assert_eq!(s.k, 2);
        let s = bias_subspace(c.view(), 0.51).unwrap();
        assert_eq!(s.k, 3);
    }

    #[test]
    fn zero_matrix_is_an_error() {
        assert!(bias_subspace(Array2::<f64>::zeros((3, 4)).view(), 0.5).is_err());
    }

    #[test]
    fn eigen_reconstructs() {
        let m = array![[4.0, 1.0, -2.0], [1.0, 2.0, 0.5], [-2.0, 0.5, 3.0]];
        let (vals, vecs) = symmetric_eigen(m.view());
        let recon = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (a, b) in recon.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
    }
}
