//! Deterministic desk-scale fixture: a three-conv-layer bundle with a fitted
//! linear classification head, plus the synthetic blob dataset it is scored
//! on. Everything is derived from one seed, so two calls with the same seed
//! produce bit-identical bundles and datasets.
//!
//! Each layer's kernels sample a smooth closed curve through tap space (plus
//! per-slot jitter), then land in slots in random order. That mirrors the
//! structure training imprints on a real net: the kernel population admits a
//! good one-dimensional arrangement that the raw slot indices scatter, which
//! is exactly what slot reordering recovers. The head is fit by
//! ridge-regularized least squares on the pooled conv features, giving the
//! net real (well above chance) accuracy on its dataset.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cnn_infer::{
    argmax, conv2d_forward, global_avg_pool, synthetic_blobs, FeatureMap, LabeledDataset, NetSpec,
};
use crate::encoders::{PeConfig, SigmaSchedule};
use crate::error::{Result, SbsError};
use crate::smoothing::{OrderingConfig, OrderingStrategy, TwoOpt};
use crate::trainer::{EncoderChoice, TrainConfig};
use crate::weight_store::{KernelTensor, WeightBundle};

/// Samples in the fixture dataset.
pub const TINY_SAMPLES: usize = 200;
/// Image shape (channels, height, width).
pub const TINY_IMAGE: (usize, usize, usize) = (3, 10, 10);
/// Label alphabet size.
pub const TINY_CLASSES: usize = 2;

/// Per-harmonic amplitudes of each layer's kernel curve. Three equal
/// harmonics make the loop twisty enough that only step-by-step traversal
/// stays smooth: adjacent curve points are close, while points a handful of
/// steps apart are already near-independent.
const HARMONIC_AMPS: [f64; 3] = [1.0, 1.0, 1.0];

/// Desk-scale training recipe for the ordering-strategy comparison grid.
///
/// The budget sits mid-descent on purpose: orderings differ in how fast the
/// easy spectrum is absorbed, and that gap closes again once every strategy
/// is left grinding on its white jitter floor. Both the reproduction command
/// and the in-tree comparison suite read this one definition so they cannot
/// drift apart.
#[derive(Debug, Clone, Copy)]
pub struct TrendSettings {
    /// Optimizer steps per cell.
    pub steps: usize,
    /// Adam learning rate.
    pub lr: f32,
    /// Hidden width of the reconstruction net.
    pub hidden: usize,
    /// Random-feature count for the `rff` encoder column.
    pub rff_features: usize,
    /// Fixed bandwidth for the `rff` encoder column.
    pub rff_sigma: f64,
    /// Pair-swap refinement passes applied after each ordering strategy.
    pub two_opt_passes: usize,
}

impl Default for TrendSettings {
    fn default() -> Self {
        TrendSettings {
            steps: 100,
            lr: 5e-3,
            hidden: 64,
            rff_features: 32,
            rff_sigma: 4.0,
            two_opt_passes: 10,
        }
    }
}
/// Share of each kernel drawn from the curve; the rest is per-slot jitter.
/// CURVE_WEIGHT² + jitter² = 1 keeps the per-tap variance at the He scale.
const CURVE_WEIGHT: f64 = 0.95;

/// Everything needed to run the desk-scale pipeline end to end.
#[derive(Debug, Clone)]
pub struct TinyFixture {
    pub spec: NetSpec,
    pub bundle: WeightBundle,
    pub dataset: LabeledDataset,
}

/// Standard-normal n×n matrix, row-major.
pub fn gaussian_matrix(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect()
}

/// Builds the tiny fixture for one seed.
pub fn tiny_fixture(seed: u64) -> Result<TinyFixture> {
    let spec = NetSpec::tiny(TINY_CLASSES)?;
    // distinct stream for the dataset so it never aliases the kernel draws
    let dataset = synthetic_blobs(TINY_SAMPLES, TINY_IMAGE, TINY_CLASSES, seed ^ 0x0DA7_A5E7)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = [(8usize, TINY_IMAGE.0), (8, 8), (8, 8)];
    let layers: Vec<KernelTensor> = dims
        .iter()
        .map(|&(filters, channels)| gaussian_layer(filters, channels, &mut rng))
        .collect::<Result<_>>()?;

    // pooled conv features for every sample, then a least-squares head
    let feats: Vec<Vec<f32>> =
        (0..dataset.len()).map(|i| gap_features(&layers, &dataset.image(i))).collect::<Result<_>>()?;
    let (weights, bias) = fit_head(&feats, &dataset)?;

    let mut correct = 0usize;
    for (i, x) in feats.iter().enumerate() {
        if argmax(&head_logits(&weights, &bias, x)) == dataset.label(i) {
            correct += 1;
        }
    }
    let accuracy = correct as f32 / dataset.len() as f32;

    let pack = |vs: &[f32]| vs.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<u8>>();
    let bundle = WeightBundle::new(
        layers,
        format!("tiny-{seed}"),
        Some(accuracy),
        vec![pack(&weights), pack(&bias)],
    )?;
    Ok(TinyFixture { spec, bundle, dataset })
}

/// One conv layer whose kernels sit at random positions `t` on a smooth
/// closed curve in tap space, blended with jitter, at He scale. Using a
/// (cos, sin) tap-vector pair per harmonic keeps the marginal variance
/// independent of `t`.
fn gaussian_layer(filters: usize, channels: usize, rng: &mut ChaCha8Rng) -> Result<KernelTensor> {
    let taps = 9;
    let std = (2.0 / (channels * taps) as f64).sqrt();
    let basis: Vec<(Vec<f64>, Vec<f64>)> = HARMONIC_AMPS
        .iter()
        .map(|_| {
            (
                (0..taps).map(|_| rng.sample(StandardNormal)).collect(),
                (0..taps).map(|_| rng.sample(StandardNormal)).collect(),
            )
        })
        .collect();
    let curve_norm = HARMONIC_AMPS.iter().map(|a| a * a).sum::<f64>().sqrt();
    let jitter = (1.0 - CURVE_WEIGHT * CURVE_WEIGHT).sqrt();
    let mut data = Vec::with_capacity(filters * channels * taps);
    for _f in 0..filters {
        for _c in 0..channels {
            let t = rng.gen::<f64>();
            for d in 0..taps {
                let mut curve = 0.0;
                for (j, (u, v)) in basis.iter().enumerate() {
                    let phase = std::f64::consts::TAU * (j + 1) as f64 * t;
                    curve += HARMONIC_AMPS[j] * (u[d] * phase.cos() + v[d] * phase.sin());
                }
                curve /= curve_norm;
                let eps: f64 = rng.sample(StandardNormal);
                data.push((std * (CURVE_WEIGHT * curve + jitter * eps)) as f32);
            }
        }
    }
    KernelTensor::new(filters, channels, 3, 3, data)
}

/// conv→relu three times, then global average pool — the same arithmetic the
/// full net runs before its linear head.
fn gap_features(layers: &[KernelTensor], img: &FeatureMap<f32>) -> Result<Vec<f32>> {
    let mut m = img.clone();
    for t in layers {
        m = conv2d_forward(&m, t.data(), t.filters(), t.kh(), 1, 1)?;
        let data: Vec<f32> =
            m.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        m = FeatureMap::new(m.channels(), m.height(), m.width(), data)?;
    }
    Ok(global_avg_pool(&m))
}

/// Same accumulation the inference path uses, so the reported fixture
/// accuracy matches a later evaluation of the stored bundle exactly.
fn head_logits(weights: &[f32], bias: &[f32], x: &[f32]) -> Vec<f32> {
    (0..bias.len())
        .map(|o| {
            let mut acc = bias[o];
            for (i, &v) in x.iter().enumerate() {
                acc += weights[o * x.len() + i] * v;
            }
            acc
        })
        .collect()
}

/// Ridge-regularized least squares of one-hot targets on the pooled
/// features; returns (row-major classes×features weights, biases) as f32.
fn fit_head(feats: &[Vec<f32>], data: &LabeledDataset) -> Result<(Vec<f32>, Vec<f32>)> {
    let d = feats[0].len();
    let aug = d + 1;
    let classes = data.classes();

    // normal equations over augmented features [x; 1]
    let mut a = vec![vec![0.0f64; aug]; aug];
    let mut b = vec![vec![0.0f64; classes]; aug];
    for (i, x) in feats.iter().enumerate() {
        let mut z = Vec::with_capacity(aug);
        z.extend(x.iter().map(|&v| f64::from(v)));
        z.push(1.0);
        for r in 0..aug {
            for c in 0..aug {
                a[r][c] += z[r] * z[c];
            }
            b[r][data.label(i)] += z[r];
        }
    }
    let trace: f64 = (0..aug).map(|i| a[i][i]).sum();
    let ridge = 1e-6 * trace / aug as f64;
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    solve_inplace(&mut a, &mut b)?;

    let mut weights = vec![0.0f32; classes * d];
    let mut bias = vec![0.0f32; classes];
    for c in 0..classes {
        for i in 0..d {
            weights[c * d + i] = b[i][c] as f32;
        }
        bias[c] = b[d][c] as f32;
    }
    Ok((weights, bias))
}

/// Gaussian elimination with partial pivoting; `b` becomes the solution.
fn solve_inplace(a: &mut [Vec<f64>], b: &mut [Vec<f64>]) -> Result<()> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty pivot range");
        if a[pivot][col].abs() < 1e-12 {
            return Err(SbsError::numeric("singular normal-equation system in head fit"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..b[row].len() {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..b[col].len() {
            let mut acc = b[col][k];
            for j in col + 1..n {
                acc -= a[col][j] * b[j][k];
            }
            b[col][k] = acc / a[col][col];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn_infer::evaluate_accuracy;

    #[test]
    fn fixture_is_deterministic() {
        let a = tiny_fixture(0).unwrap();
        let b = tiny_fixture(0).unwrap();
        for (la, lb) in a.bundle.layers().iter().zip(b.bundle.layers()) {
            assert_eq!(la.data(), lb.data());
        }
        assert_eq!(a.bundle.residual_blobs(), b.bundle.residual_blobs());
        assert_eq!(a.dataset, b.dataset);
        let c = tiny_fixture(1).unwrap();
        assert_ne!(a.bundle.layer(0).data(), c.bundle.layer(0).data());
    }

    #[test]
    fn fixture_shapes_match_the_toy_net() {
        let f = tiny_fixture(3).unwrap();
        assert_eq!(f.bundle.layer_count(), 3);
        let dims: Vec<_> = f
            .bundle
            .layers()
            .iter()
            .map(|t| (t.filters(), t.channels(), t.kh(), t.kw()))
            .collect();
        assert_eq!(dims, vec![(8, 3, 3, 3), (8, 8, 3, 3), (8, 8, 3, 3)]);
        f.spec.validate_against(&f.bundle).unwrap();
        assert_eq!(f.dataset.len(), TINY_SAMPLES);
        assert_eq!(f.dataset.shape(), TINY_IMAGE);
        assert_eq!(f.dataset.classes(), TINY_CLASSES);
    }

    #[test]
    fn fitted_head_separates_the_blobs() {
        let f = tiny_fixture(0).unwrap();
        let acc = evaluate_accuracy(&f.spec, &f.bundle, &f.dataset).unwrap();
        assert!(acc >= 0.9, "fixture accuracy {acc}");
        // the stored accuracy is the one the inference path reproduces
        assert_eq!(f.bundle.source_accuracy(), Some(acc as f32));
    }

    #[test]
    fn kernel_scale_tracks_fan_in() {
        let f = tiny_fixture(5).unwrap();
        for t in f.bundle.layers() {
            let expect = (2.0 / (t.channels() * 9) as f64).sqrt();
            let data = t.data();
            let var: f64 =
                data.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / data.len() as f64;
            let std = var.sqrt();
            assert!(
                (0.5..2.0).contains(&(std / expect)),
                "layer std {std} vs target {expect}"
            );
        }
    }

    #[test]
    fn gaussian_matrix_is_seeded_and_standard() {
        let a = gaussian_matrix(16, 9);
        assert_eq!(a, gaussian_matrix(16, 9));
        assert_ne!(a, gaussian_matrix(16, 10));
        let mean: f64 = a.iter().map(|&v| f64::from(v)).sum::<f64>() / a.len() as f64;
        let var: f64 =
            a.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.25, "mean {mean}");
        assert!((0.6..1.4).contains(&var), "var {var}");
    }
}
