//! Symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Sized for the desk-scale kernel matrices this crate produces (n up to a
//! few hundred): each sweep rotates away every upper-triangle entry, and
//! sweeps repeat until the off-diagonal Frobenius norm drops below
//! 10⁻¹²·‖H‖_F or the 100-sweep cap trips.

use crate::error::{Result, SbsError};
use crate::inr_core::Matrix;

const SWEEP_CAP: usize = 100;
const OFF_DIAG_FACTOR: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-8;

/// Eigenvalues (descending) and the orthonormal eigenvector matrix Q whose
/// columns satisfy H·q_i = λ_i·q_i.
pub fn eig_sym(h: &Matrix<f64>) -> Result<(Vec<f64>, Matrix<f64>)> {
    let n = h.rows();
    if n == 0 || h.cols() != n {
        return Err(SbsError::validation(format!(
            "eigendecomposition needs a non-empty square matrix, got {}×{}",
            h.rows(),
            h.cols()
        )));
    }
    let scale = h.data().iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    for i in 0..n {
        for j in i + 1..n {
            let gap = (h.row(i)[j] - h.row(j)[i]).abs();
            if gap > SYMMETRY_TOL * scale {
                return Err(SbsError::validation(format!(
                    "matrix is not symmetric: |H[{i}][{j}] − H[{j}][{i}]| = {gap:e}"
                )));
            }
        }
    }

    let mut a: Vec<f64> = h.data().to_vec();
    // average the two triangles so rotations start from an exactly
    // symmetric working copy
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
    let mut q = vec![0.0f64; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }

    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let threshold = OFF_DIAG_FACTOR * frob;
    let mut converged = false;
    for _sweep in 0..SWEEP_CAP {
        let off = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= threshold {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for r in p + 1..n {
                let apq = a[p * n + r];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[r * n + r] - a[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← GᵀAG with the rotation in the (p, r) plane
                for k in 0..n {
                    let akp = a[p * n + k];
                    let akr = a[r * n + k];
                    a[p * n + k] = c * akp - s * akr;
                    a[r * n + k] = s * akp + c * akr;
                }
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akr = a[k * n + r];
                    a[k * n + p] = c * akp - s * akr;
                    a[k * n + r] = s * akp + c * akr;
                }
                for k in 0..n {
                    let qkp = q[k * n + p];
                    let qkr = q[k * n + r];
                    q[k * n + p] = c * qkp - s * qkr;
                    q[k * n + r] = s * qkp + c * qkr;
                }
            }
        }
    }
    if !converged {
        return Err(SbsError::numeric(format!(
            "Jacobi eigensolver did not converge within {SWEEP_CAP} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut sorted_q = vec![0.0f64; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for row in 0..n {
            sorted_q[row * n + new_col] = q[row * n + old_col];
        }
    }
    Ok((eigenvalues, Matrix::from_flat(n, n, sorted_q)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn mat(rows: &[&[f64]]) -> Matrix<f64> {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn identity_has_unit_spectrum() {
        let (vals, _) = eig_sym(&mat(&[&[1.0, 0.0], &[0.0, 1.0]])).unwrap();
        assert_eq!(vals, vec![1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix_sorted_descending() {
        let (vals, q) = eig_sym(&mat(&[&[1.0, 0.0], &[0.0, 3.0]])).unwrap();
        assert_eq!(vals, vec![3.0, 1.0]);
        // eigenvector of 3 is e₂ up to sign
        assert!((q.row(1)[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_by_two_hand_spectrum() {
        let (vals, _) = eig_sym(&mat(&[&[2.0, 1.0], &[1.0, 2.0]])).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_is_fine() {
        let (vals, _) = eig_sym(&Matrix::zeros(3, 3)).unwrap();
        assert_eq!(vals, vec![0.0; 3]);
    }

    #[test]
    fn random_symmetric_decomposition_is_accurate() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let n = 12;
            let mut h = vec![0.0f64; n * n];
            for i in 0..n {
                for j in 0..=i {
                    let v = rng.gen_range(-1.0..1.0);
                    h[i * n + j] = v;
                    h[j * n + i] = v;
                }
            }
            let h = Matrix::from_flat(n, n, h).unwrap();
            let (vals, q) = eig_sym(&h).unwrap();
            assert!(vals.windows(2).all(|p| p[0] >= p[1]));

            let frob = h.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut resid = 0.0f64;
            let mut ortho = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    // (HQ − QΛ)_ij
                    let hq: f64 = (0..n).map(|k| h.row(i)[k] * q.row(k)[j]).sum();
                    let ql = q.row(i)[j] * vals[j];
                    resid += (hq - ql) * (hq - ql);
                    // (QᵀQ − I)_ij
                    let dot: f64 = (0..n).map(|k| q.row(k)[i] * q.row(k)[j]).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    ortho += (dot - target) * (dot - target);
                }
            }
            assert!(resid.sqrt() / frob < 1e-8, "residual {}", resid.sqrt() / frob);
            assert!(ortho.sqrt() < 1e-8, "orthonormality gap {}", ortho.sqrt());
        }
    }

    #[test]
    fn asymmetric_or_non_square_rejected() {
        let bad = mat(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(eig_sym(&bad), Err(SbsError::Validation(_))));
        let rect = Matrix::zeros(2, 3);
        assert!(matches!(eig_sym(&rect), Err(SbsError::Validation(_))));
    }
}
