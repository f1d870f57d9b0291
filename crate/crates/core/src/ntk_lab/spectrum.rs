//! Centered 2-D DFT magnitude spectra and radial energy fractions.
//!
//! The transform is the direct O(n⁴) sum (capped at n = 64), evaluated with
//! a precomputed twiddle table. Under this normalization Parseval's identity
//! reads Σ|signal|² = (1/n²)·Σ|spectrum|², and the constructor verifies it.

use crate::error::{Result, SbsError};

const MAX_N: usize = 64;
const PARSEVAL_TOL: f64 = 1e-6;

/// Magnitude spectrum of an n×n matrix with the DC bin shifted to the
/// center, plus the matching signal energy.
#[derive(Debug, Clone)]
pub struct SpectrumReport {
    n: usize,
    magnitude: Vec<f64>,
    signal_energy: f64,
}

impl SpectrumReport {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Centered n×n |X|, row-major; the DC bin sits at (⌊n/2⌋, ⌊n/2⌋).
    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    /// Σ of squared signal entries.
    pub fn signal_energy(&self) -> f64 {
        self.signal_energy
    }

    /// (1/n²)·Σ|X|², which Parseval pins to the signal energy.
    pub fn spectral_energy(&self) -> f64 {
        self.magnitude.iter().map(|m| m * m).sum::<f64>() / (self.n * self.n) as f64
    }

    /// Fraction of spectral energy inside the centered radial cutoff.
    ///
    /// The radius is normalized by the corner bin's distance from DC, so a
    /// cutoff of 1 always includes every bin. A zero-energy spectrum counts
    /// as fully inside any cutoff.
    pub fn low_freq_energy_fraction(&self, cutoff: f64) -> Result<f64> {
        if !(cutoff > 0.0 && cutoff <= 1.0) {
            return Err(SbsError::validation(format!(
                "radial cutoff must lie in (0, 1], got {cutoff}"
            )));
        }
        let half = (self.n / 2) as f64;
        let corner_sq = 2.0 * half * half;
        let limit_sq = cutoff * cutoff * corner_sq;
        let mut inside = 0.0f64;
        let mut total = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let fi = i as f64 - half;
                let fj = j as f64 - half;
                let e = self.magnitude[i * self.n + j].powi(2);
                total += e;
                if fi * fi + fj * fj <= limit_sq {
                    inside += e;
                }
            }
        }
        if total == 0.0 {
            return Ok(1.0);
        }
        Ok(inside / total)
    }
}

/// Direct centered 2-D DFT magnitude of a row-major n×n matrix.
pub fn dft2_magnitude(matrix: &[f32], n: usize) -> Result<SpectrumReport> {
    if n == 0 || n > MAX_N {
        return Err(SbsError::validation(format!(
            "direct transform supports 1 ≤ n ≤ {MAX_N}, got {n}"
        )));
    }
    if matrix.len() != n * n {
        return Err(SbsError::validation(format!(
            "matrix payload has {} entries, expected {n}×{n}",
            matrix.len()
        )));
    }
    // e^{−2πi k/n} for k in 0..n; every exponent reduces to this table
    let table: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let ang = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
            (ang.cos(), ang.sin())
        })
        .collect();

    let shift = n / 2;
    let mut magnitude = vec![0.0f64; n * n];
    for u in 0..n {
        for v in 0..n {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for y in 0..n {
                for x in 0..n {
                    let k = (u * y + v * x) % n;
                    let (c, s) = table[k];
                    let val = f64::from(matrix[y * n + x]);
                    re += val * c;
                    im += val * s;
                }
            }
            let cu = (u + shift) % n;
            let cv = (v + shift) % n;
            magnitude[cu * n + cv] = re.hypot(im);
        }
    }

    let signal_energy = matrix.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
    let report = SpectrumReport { n, magnitude, signal_energy };
    let gap = (report.spectral_energy() - signal_energy).abs();
    if gap > PARSEVAL_TOL * signal_energy.max(1e-300) && signal_energy > 0.0 {
        return Err(SbsError::numeric(format!(
            "spectral energy drifted from signal energy by {gap:e}"
        )));
    }
    Ok(report)
}
