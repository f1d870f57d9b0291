//! Width-convergence probe for the tangent kernel.
//!
//! A two-layer ReLU net whose first layer is the only trainable part: rows
//! w_k ~ N(0, I), a fixed bias-free ±1/√m output head. The gradient with
//! respect to row k is (±1/√m)·1[w_k·x > 0]·x, so the empirical tangent
//! kernel reduces to ⟨x_i, x_j⟩ times the fraction of co-active hidden
//! units, and at infinite width it approaches cos θ·(π − θ)/(2π) on
//! unit-norm inputs. Widening the probe should shrink the gap to that
//! closed form.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SbsError};
use crate::inr_core::Matrix;

/// Two-layer ReLU probe: trainable m×d first layer, fixed ±1/√m head.
#[derive(Debug, Clone)]
pub struct TwoLayerProbe {
    weights: Vec<f64>,
    signs: Vec<f64>,
    width: usize,
    in_dim: usize,
}

impl TwoLayerProbe {
    pub fn new(in_dim: usize, width: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || width == 0 {
            return Err(SbsError::validation("probe needs positive input dim and width"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> =
            (0..width * in_dim).map(|_| rng.sample(StandardNormal)).collect();
        let scale = 1.0 / (width as f64).sqrt();
        let signs: Vec<f64> =
            (0..width).map(|_| if rng.gen::<bool>() { scale } else { -scale }).collect();
        Ok(TwoLayerProbe { weights, signs, width, in_dim })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len())?;
        let mut out = 0.0;
        for k in 0..self.width {
            let z = self.pre_activation(k, x);
            if z > 0.0 {
                out += self.signs[k] * z;
            }
        }
        Ok(out)
    }

    /// Gram matrix of first-layer gradients for a row-per-sample input set:
    /// H_ij = ⟨x_i, x_j⟩ · |{k : w_k·x_i > 0 ∧ w_k·x_j > 0}| / m.
    pub fn ntk(&self, inputs: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.check_dim(inputs.cols())?;
        let n = inputs.rows();
        if n == 0 {
            return Err(SbsError::validation("tangent kernel needs at least one input row"));
        }
        let masks: Vec<Vec<bool>> = (0..n)
            .map(|i| {
                (0..self.width)
                    .map(|k| self.pre_activation(k, inputs.row(i)) > 0.0)
                    .collect()
            })
            .collect();
        let mut h = vec![0.0f64; n * n];
        for i in 0..n {
            for j in i..n {
                let both = masks[i]
                    .iter()
                    .zip(&masks[j])
                    .filter(|(a, b)| **a && **b)
                    .count();
                let dot: f64 = inputs
                    .row(i)
                    .iter()
                    .zip(inputs.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let v = dot * both as f64 / self.width as f64;
                h[i * n + j] = v;
                h[j * n + i] = v;
            }
        }
        Matrix::from_flat(n, n, h)
    }

    fn pre_activation(&self, k: usize, x: &[f64]) -> f64 {
        let row = &self.weights[k * self.in_dim..(k + 1) * self.in_dim];
        row.iter().zip(x).map(|(w, v)| w * v).sum()
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.in_dim {
            return Err(SbsError::validation(format!(
                "probe expects {}-dim inputs, got {got}",
                self.in_dim
            )));
        }
        Ok(())
    }
}

/// n seeded unit-norm random directions in d dimensions, one per row.
pub fn unit_inputs(n: usize, d: usize, seed: u64) -> Result<Matrix<f64>> {
    if n == 0 || d == 0 {
        return Err(SbsError::validation("need positive row count and dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    while rows.len() < n {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        rows.push(v.into_iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    Matrix::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntk_lab::arccos_ntk;

    #[test]
    fn unit_inputs_have_unit_rows() {
        let m = unit_inputs(6, 3, 2).unwrap();
        for i in 0..m.rows() {
            let norm: f64 = m.row(i).iter().map(|v| v * v).sum::<f64>();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert_eq!(m.data(), unit_inputs(6, 3, 2).unwrap().data());
    }

    #[test]
    fn probe_kernel_is_symmetric_with_plausible_diagonal() {
        let probe = TwoLayerProbe::new(3, 64, 1).unwrap();
        let x = unit_inputs(5, 3, 3).unwrap();
        let h = probe.ntk(&x).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(h.row(i)[j], h.row(j)[i]);
            }
            // diagonal = active fraction, near 1/2 for a unit input
            assert!(h.row(i)[i] >= 0.0 && h.row(i)[i] <= 1.0);
        }
    }

    #[test]
    fn wider_probes_approach_the_closed_form() {
        let x = unit_inputs(10, 3, 7).unwrap();
        let target = arccos_ntk(&x).unwrap();
        let mut avg_dev = Vec::new();
        for width in [256usize, 512, 1024] {
            let mut total = 0.0;
            for seed in 0..5u64 {
                let probe = TwoLayerProbe::new(3, width, seed).unwrap();
                let h = probe.ntk(&x).unwrap();
                let dev = h
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                total += dev;
            }
            avg_dev.push(total / 5.0);
        }
        assert!(
            avg_dev[0] > avg_dev[1] && avg_dev[1] > avg_dev[2],
            "deviations {avg_dev:?} are not monotone decreasing"
        );
    }
}
