//! Coordinate encodings fed to the MLP: multi-level positional encoding and
//! random Fourier features, plus the bandwidth schedule that picks the RFF σ
//! from a layer's parameter count.
//!
//! Kernel coordinates (layer, filter, channel) are first normalized to
//! [0, 1]³ by dividing each axis by its largest index across the bundle
//! (degenerate single-valued axes map to 0), so bandwidths transfer across
//! models of different size.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::bytesio::{Reader, Writer};
use crate::error::{Result, SbsError};
use crate::weight_store::{KernelCoord, WeightBundle};

/// Multi-level sinusoidal encoding: scalar x becomes
/// [sin(b⁰πx), cos(b⁰πx), …, sin(b^{L−1}πx), cos(b^{L−1}πx)].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeConfig {
    levels: usize,
    base: f64,
}

impl PeConfig {
    pub fn new(levels: usize, base: f64) -> Result<Self> {
        if levels < 1 {
            return Err(SbsError::validation("positional encoding needs ≥ 1 level"));
        }
        if !(base > 1.0) || !base.is_finite() {
            return Err(SbsError::validation(format!(
                "positional-encoding base must be > 1, got {base}"
            )));
        }
        Ok(PeConfig { levels, base })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn base(&self) -> f64 {
        self.base
    }
}

impl Default for PeConfig {
    fn default() -> Self {
        PeConfig { levels: 4, base: 2.0 }
    }
}

/// Encodes a d-vector to length 2·L·d, level-major within each dimension.
/// Per input scalar the output has Euclidean norm √L (sin² + cos² per level).
pub fn pe_encode(coord: &[f64], config: &PeConfig) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * config.levels * coord.len());
    for &x in coord {
        debug_assert!(x.is_finite());
        for level in 0..config.levels {
            let arg = config.base.powi(level as i32) * std::f64::consts::PI * x;
            out.push(arg.sin());
            out.push(arg.cos());
        }
    }
    out
}

/// Random Fourier feature map φ(x) = [cos(πBx); sin(πBx)] with B ∼ N(0, σ²),
/// a D×d matrix frozen at construction and carried in the model checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    matrix: Vec<f32>, // D×d row-major
    in_dim: usize,
    features: usize,
    sigma: f64,
    seed: u64,
}

impl RffMap {
    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    /// Rebuilds a map from an explicit matrix (checkpoint loading, tests).
    pub fn from_parts(
        in_dim: usize,
        features: usize,
        sigma: f64,
        seed: u64,
        matrix: Vec<f32>,
    ) -> Result<Self> {
        if in_dim < 1 || features < 1 {
            return Err(SbsError::validation("feature map needs d ≥ 1 and D ≥ 1"));
        }
        if matrix.len() != features * in_dim {
            return Err(SbsError::validation(format!(
                "feature matrix has {} entries, expected {}×{}",
                matrix.len(),
                features,
                in_dim
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(SbsError::validation(format!(
                "feature bandwidth σ must be > 0, got {sigma}"
            )));
        }
        Ok(RffMap { matrix, in_dim, features, sigma, seed })
    }
}

/// Samples the D×d frequency matrix i.i.d. from N(0, σ²), deterministically
/// for a fixed seed.
pub fn rff_init(in_dim: usize, features: usize, sigma: f64, seed: u64) -> Result<RffMap> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(SbsError::validation(format!(
            "feature bandwidth σ must be > 0, got {sigma}"
        )));
    }
    if in_dim < 1 || features < 1 {
        return Err(SbsError::validation("feature map needs d ≥ 1 and D ≥ 1"));
    }
    let normal = Normal::new(0.0f64, sigma).expect("σ validated above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix = (0..features * in_dim)
        .map(|_| normal.sample(&mut rng) as f32)
        .collect();
    Ok(RffMap { matrix, in_dim, features, sigma, seed })
}

/// φ(x) = [cos(πBx); sin(πBx)], length 2D; ⟨φ(x), φ(x)⟩ = D identically.
pub fn rff_encode(map: &RffMap, coord: &[f64]) -> Result<Vec<f64>> {
    if coord.len() != map.in_dim {
        return Err(SbsError::validation(format!(
            "coordinate has {} dims, feature map expects {}",
            coord.len(),
            map.in_dim
        )));
    }
    let d = map.in_dim;
    let mut out = vec![0.0; 2 * map.features];
    for k in 0..map.features {
        let row = &map.matrix[k * d..(k + 1) * d];
        let dot: f64 = row.iter().zip(coord).map(|(&b, &x)| b as f64 * x).sum();
        let arg = std::f64::consts::PI * dot;
        out[k] = arg.cos();
        out[map.features + k] = arg.sin();
    }
    Ok(out)
}

/// E[cos(πb·Δ)] for b ∼ N(0, σ²I): exp(−π²σ²·dist²/2). This is the limit of
/// the normalized feature inner product ⟨φ(x), φ(y)⟩/D as D → ∞, and carries
/// the π² that the πBx mapping in the feature map implies.
pub fn gaussian_kernel_expect(sigma: f64, dist: f64) -> f64 {
    let pi = std::f64::consts::PI;
    (-(pi * pi) * sigma * sigma * dist * dist / 2.0).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMode {
    GlobalFixed,
    PerLayerAdaptive,
}

/// Picks the RFF bandwidth. In adaptive mode σ shrinks with the layer's
/// parameter count as σ_l = σ_base·√(P_ref/P_l) (so σ² ∝ 1/P), clamped to
/// [clamp_min, clamp_max].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSchedule {
    pub mode: SigmaMode,
    pub sigma_base: f64,
    pub reference_param_count: usize,
    pub clamp_min: f64,
    pub clamp_max: f64,
}

impl SigmaSchedule {
    pub fn new(
        mode: SigmaMode,
        sigma_base: f64,
        reference_param_count: usize,
        clamp_min: f64,
        clamp_max: f64,
    ) -> Result<Self> {
        if !(sigma_base > 0.0) || !sigma_base.is_finite() {
            return Err(SbsError::validation("σ base must be > 0"));
        }
        if reference_param_count == 0 {
            return Err(SbsError::validation("reference parameter count must be ≥ 1"));
        }
        if !(clamp_min > 0.0) || clamp_min > clamp_max {
            return Err(SbsError::validation(format!(
                "bad σ clamp range [{clamp_min}, {clamp_max}]"
            )));
        }
        Ok(SigmaSchedule { mode, sigma_base, reference_param_count, clamp_min, clamp_max })
    }

    pub fn global_fixed(sigma_base: f64) -> Result<Self> {
        SigmaSchedule::new(SigmaMode::GlobalFixed, sigma_base, 1, 10.0, 1000.0)
    }
}

/// Bandwidth for one layer under the schedule.
pub fn sigma_for_layer(schedule: &SigmaSchedule, layer_param_count: usize) -> f64 {
    match schedule.mode {
        SigmaMode::GlobalFixed => schedule.sigma_base,
        SigmaMode::PerLayerAdaptive => {
            let ratio = schedule.reference_param_count as f64 / layer_param_count as f64;
            (schedule.sigma_base * ratio.sqrt()).clamp(schedule.clamp_min, schedule.clamp_max)
        }
    }
}

/// Bandwidth for a whole model served by a single feature map: anchored at
/// the largest layer, which dominates the parameter count and therefore the
/// frequency balance that the schedule is correcting for.
pub fn sigma_for_model(schedule: &SigmaSchedule, layer_param_counts: &[usize]) -> Result<f64> {
    let largest = layer_param_counts
        .iter()
        .copied()
        .max()
        .ok_or_else(|| SbsError::validation("no layers"))?;
    Ok(sigma_for_layer(schedule, largest))
}

/// Per-axis divisors (L−1, F_max−1, C_max−1) for normalizing coordinates;
/// a zero divisor marks a degenerate axis that maps to 0.
pub fn coordinate_scales(bundle: &WeightBundle) -> [f64; 3] {
    let f_max = bundle.layers().iter().map(|l| l.filters()).max().unwrap_or(1);
    let c_max = bundle.layers().iter().map(|l| l.channels()).max().unwrap_or(1);
    [
        (bundle.layer_count() - 1) as f64,
        (f_max - 1) as f64,
        (c_max - 1) as f64,
    ]
}

pub fn normalize_coord(coord: KernelCoord, scales: [f64; 3]) -> [f64; 3] {
    let norm = |v: usize, s: f64| if s == 0.0 { 0.0 } else { v as f64 / s };
    [
        norm(coord.layer, scales[0]),
        norm(coord.filter, scales[1]),
        norm(coord.channel, scales[2]),
    ]
}

/// The encoder actually attached to a model.
#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Pe(PeConfig),
    Rff(RffMap),
}

impl Encoder {
    pub fn out_dim(&self, in_dim: usize) -> usize {
        match self {
            Encoder::Pe(cfg) => 2 * cfg.levels * in_dim,
            Encoder::Rff(map) => 2 * map.features,
        }
    }

    pub fn encode(&self, coord: &[f64]) -> Result<Vec<f64>> {
        match self {
            Encoder::Pe(cfg) => Ok(pe_encode(coord, cfg)),
            Encoder::Rff(map) => rff_encode(map, coord),
        }
    }

    /// Checkpoint layout: tag byte (0 = positional, 1 = Fourier features),
    /// then the config scalars, then the frequency matrix row-major f32.
    pub(crate) fn write_to(&self, w: &mut Writer) {
        match self {
            Encoder::Pe(cfg) => {
                w.u8(0);
                w.u16(cfg.levels as u16);
                w.f64(cfg.base);
            }
            Encoder::Rff(map) => {
                w.u8(1);
                w.u16(map.in_dim as u16);
                w.u32(map.features as u32);
                w.f64(map.sigma);
                w.u64(map.seed);
                w.f32_slice(&map.matrix);
            }
        }
    }

    pub(crate) fn read_from(r: &mut Reader) -> Result<Self> {
        match r.u8()? {
            0 => {
                let levels = r.u16()? as usize;
                let base = r.f64()?;
                Ok(Encoder::Pe(PeConfig::new(levels, base)?))
            }
            1 => {
                let in_dim = r.u16()? as usize;
                let features = r.u32()? as usize;
                let sigma = r.f64()?;
                let seed = r.u64()?;
                let matrix = r.f32_vec(features.saturating_mul(in_dim))?;
                Ok(Encoder::Rff(RffMap::from_parts(in_dim, features, sigma, seed, matrix)?))
            }
            tag => Err(SbsError::corruption(format!("unknown encoder tag {tag}"))),
        }
    }
}
