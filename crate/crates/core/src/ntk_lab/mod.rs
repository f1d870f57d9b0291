//! Tangent-kernel analysis: empirical Gram matrices from per-sample
//! parameter gradients, ReLU closed forms, eigendecomposition, projection
//! coefficients, predicted residual decay, and 2-D spectra.
//!
//! The chain this module supports: build a kernel H for an encoded input
//! set, eigendecompose H = QΛQᵀ, project a target 𝒴 onto the eigenbasis,
//! and read off how fast gradient flow is predicted to fit each direction
//! (coefficients on large eigenvalues shrink first). Spectra of the raw
//! target matrices tell the same story in the Fourier basis.

mod eig;
mod probe;
mod spectrum;

pub use eig::eig_sym;
pub use probe::{unit_inputs, TwoLayerProbe};
pub use spectrum::{dft2_magnitude, SpectrumReport};

use crate::encoders::{rff_encode, RffMap};
use crate::error::{Result, SbsError};
use crate::inr_core::{InrModel, Matrix};

const PSD_SLACK: f64 = 1e-8;
const NORM_TOL: f64 = 1e-6;

/// Eigendecomposition of one kernel matrix together with the projection of
/// a target vector onto its eigenbasis, tagged by where both came from.
#[derive(Debug, Clone)]
pub struct NtkReport {
    encoder_tag: String,
    target_tag: String,
    eigenvalues: Vec<f64>,
    q: Matrix<f64>,
    coefficients: Vec<f64>,
}

impl NtkReport {
    /// Decomposes `h`, projects `y`, and checks the kernel invariants:
    /// spectrum non-negative up to round-off and projection norm preserved.
    pub fn new(
        h: &Matrix<f64>,
        y: &[f64],
        encoder_tag: impl Into<String>,
        target_tag: impl Into<String>,
    ) -> Result<Self> {
        let (eigenvalues, q) = eig_sym(h)?;
        let lmax = eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
        let lmin = eigenvalues.last().copied().unwrap_or(0.0);
        if lmin < -PSD_SLACK * lmax {
            return Err(SbsError::validation(format!(
                "kernel matrix is not positive semidefinite: λ_min = {lmin:e}, λ_max = {lmax:e}"
            )));
        }
        let coefficients = project(&q, y)?;
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nc = coefficients.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (ny - nc).abs() > NORM_TOL * ny.max(1.0) {
            return Err(SbsError::numeric(format!(
                "projection changed the target norm: ‖y‖ = {ny}, ‖Qᵀy‖ = {nc}"
            )));
        }
        Ok(NtkReport {
            encoder_tag: encoder_tag.into(),
            target_tag: target_tag.into(),
            eigenvalues,
            q,
            coefficients,
        })
    }

    pub fn encoder_tag(&self) -> &str {
        &self.encoder_tag
    }

    pub fn target_tag(&self) -> &str {
        &self.target_tag
    }

    /// Eigenvalues sorted descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, one per column, matching the eigenvalues.
    pub fn eigenvectors(&self) -> &Matrix<f64> {
        &self.q
    }

    /// Qᵀ𝒴, one coefficient per eigen-direction.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Number of leading eigen-directions needed before their cumulative
    /// (non-negative) eigenvalue mass reaches `mass` of the total.
    pub fn eigenmass_index(&self, mass: f64) -> Result<usize> {
        if !(mass > 0.0 && mass <= 1.0) {
            return Err(SbsError::validation(format!(
                "eigenvalue mass must lie in (0, 1], got {mass}"
            )));
        }
        let clipped: Vec<f64> = self.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total == 0.0 {
            return Ok(0);
        }
        let mut acc = 0.0;
        for (i, l) in clipped.iter().enumerate() {
            acc += l;
            if acc >= mass * total {
                return Ok(i + 1);
            }
        }
        Ok(clipped.len())
    }

    /// Share of squared projection mass carried by the first
    /// ⌈fraction·n⌉ eigen-directions; 1 for a zero target.
    pub fn top_coefficient_mass(&self, fraction: f64) -> Result<f64> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(SbsError::validation(format!(
                "direction fraction must lie in (0, 1], got {fraction}"
            )));
        }
        let n = self.coefficients.len();
        let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
        let total: f64 = self.coefficients.iter().map(|c| c * c).sum();
        if total == 0.0 {
            return Ok(1.0);
        }
        let top: f64 = self.coefficients[..take].iter().map(|c| c * c).sum();
        Ok(top / total)
    }
}

/// Gram matrix of per-sample parameter gradients of a scalar-output model:
/// H_ij = ⟨∇_θ f(x_i), ∇_θ f(x_j)⟩.
pub fn empirical_ntk(model: &InrModel, encoded_inputs: &Matrix<f64>) -> Result<Matrix<f64>> {
    if model.out_dim() != 1 {
        return Err(SbsError::validation(format!(
            "tangent-kernel analysis needs a scalar-output model, got {} outputs",
            model.out_dim()
        )));
    }
    if encoded_inputs.cols() != model.in_dim() {
        return Err(SbsError::validation(format!(
            "encoded inputs have {} columns, model expects {}",
            encoded_inputs.cols(),
            model.in_dim()
        )));
    }
    let n = encoded_inputs.rows();
    if n == 0 {
        return Err(SbsError::validation("tangent kernel needs at least one sample"));
    }
    let net = model.net_f64();
    let mut grads = Vec::with_capacity(n);
    for i in 0..n {
        let g = net.output_grad(encoded_inputs.row(i))?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(SbsError::numeric(format!("non-finite gradient for sample {i}")));
        }
        grads.push(g);
    }
    let mut h = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            // per-term products commute, so H is symmetric bit-for-bit
            h[i * n + j] = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
        }
    }
    Matrix::from_flat(n, n, h)
}

/// ReLU closed form on unit inputs: H_ij = cos θ_ij·(π − θ_ij)/(2π) with
/// θ_ij the angle between rows i and j.
pub fn arccos_ntk(unit_inputs: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = unit_inputs.rows();
    if n == 0 {
        return Err(SbsError::validation("kernel needs at least one input row"));
    }
    for i in 0..n {
        let norm = unit_inputs.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(SbsError::validation(format!(
                "input row {i} has norm {norm}, expected unit norm"
            )));
        }
    }
    let mut h = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = unit_inputs
                .row(i)
                .iter()
                .zip(unit_inputs.row(j))
                .map(|(a, b)| a * b)
                .sum();
            let cos = dot.clamp(-1.0, 1.0);
            let theta = cos.acos();
            let v = cos * (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI);
            h[i * n + j] = v;
            h[j * n + i] = v;
        }
    }
    Matrix::from_flat(n, n, h)
}

/// Closed-form kernel for random-Fourier-encoded inputs: elementwise
/// φ·(π − arccos φ)/(2π) on a matrix of normalized feature cosines.
pub fn rff_ntk(phi_cosines: &Matrix<f64>) -> Result<Matrix<f64>> {
    let data = phi_cosines.data();
    if let Some(bad) = data.iter().find(|&&v| !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&v)) {
        return Err(SbsError::validation(format!(
            "feature cosine {bad} lies outside [−1, 1]"
        )));
    }
    let out: Vec<f64> = data
        .iter()
        .map(|&v| {
            let phi = v.clamp(-1.0, 1.0);
            phi * (std::f64::consts::PI - phi.acos()) / (2.0 * std::f64::consts::PI)
        })
        .collect();
    Matrix::from_flat(phi_cosines.rows(), phi_cosines.cols(), out)
}

/// Normalized feature cosines of a coordinate set under one RFF map:
/// φ_ij = ⟨φ(x_i), φ(x_j)⟩ / D, so the diagonal is 1 up to round-off.
pub fn rff_cosine_matrix(map: &RffMap, coords: &Matrix<f64>) -> Result<Matrix<f64>> {
    let n = coords.rows();
    if n == 0 {
        return Err(SbsError::validation("need at least one coordinate row"));
    }
    let mut encoded = Vec::with_capacity(n);
    for i in 0..n {
        encoded.push(rff_encode(map, coords.row(i))?);
    }
    let d = map.features() as f64;
    let mut phi = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let dot: f64 = encoded[i].iter().zip(&encoded[j]).map(|(a, b)| a * b).sum();
            phi[i * n + j] = dot / d;
            phi[j * n + i] = dot / d;
        }
    }
    Matrix::from_flat(n, n, phi)
}

/// Coefficients of `y` in the eigenbasis: QᵀY.
pub fn project(q: &Matrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    if q.rows() != y.len() {
        return Err(SbsError::validation(format!(
            "eigenvector matrix has {} rows, target has {} entries",
            q.rows(),
            y.len()
        )));
    }
    Ok((0..q.cols())
        .map(|i| (0..q.rows()).map(|j| q.row(j)[i] * y[j]).sum())
        .collect())
}

/// Predicted residual norm √(Σ c_i²·e^{−2ηλ_i t}) for every t in the grid.
pub fn residual_curve(
    eigenvalues: &[f64],
    coefficients: &[f64],
    eta: f64,
    t_grid: &[f64],
) -> Result<Vec<f64>> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(SbsError::validation(format!("learning rate must be positive, got {eta}")));
    }
    if eigenvalues.len() != coefficients.len() {
        return Err(SbsError::validation(format!(
            "{} eigenvalues but {} coefficients",
            eigenvalues.len(),
            coefficients.len()
        )));
    }
    Ok(t_grid
        .iter()
        .map(|&t| {
            eigenvalues
                .iter()
                .zip(coefficients)
                .map(|(&l, &c)| c * c * (-2.0 * eta * l * t).exp())
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}
