//! Reconstruction training: fits the coordinate MLP to a bundle's kernels
//! (optionally rearranged by a permutation table) and rebuilds a bundle from
//! the trained model.
//!
//! Targets are z-score normalized per layer and center-padded to the largest
//! kernel size; reconstruction crops, denormalizes, and inverse-permutes so
//! every kernel lands back in its original slot. Residual blobs pass through
//! verbatim.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use crate::encoders::{
    coordinate_scales, normalize_coord, rff_init, sigma_for_model, Encoder, PeConfig,
    SigmaSchedule,
};
use crate::error::{Result, SbsError};
use crate::inr_core::{adam_step, mlp_init, AdamHyper, AdamState, InrModel, Matrix};
use crate::smoothing::OrderingStrategy;
use crate::weight_store::{encode_table, KernelTensor, PermutationTable, WeightBundle};

/// Per-layer target normalization: stored so reconstruction can undo it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorm {
    pub mean: f32,
    /// Population std of the layer's entries; 1.0 when the layer is constant.
    pub scale: f32,
}

/// Which encoder the trainer should build.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderChoice {
    Pe(PeConfig),
    /// σ is resolved through the schedule against the bundle's layer sizes.
    Rff { features: usize, schedule: SigmaSchedule, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    /// Width of the four hidden layers.
    pub hidden: usize,
    pub encoder: EncoderChoice,
    /// Recorded for provenance; the table passed to [`train`] is what is used.
    pub smoothing: OrderingStrategy,
    pub adam: AdamHyper,
    pub eval_every: usize,
    /// Reserved auxiliary-loss coefficients; must both be 0 (not implemented).
    pub attn_weight: f64,
    pub distill_weight: f64,
}

impl TrainConfig {
    pub fn defaults(encoder: EncoderChoice) -> Self {
        TrainConfig {
            steps: 2000,
            batch: 256,
            seed: 0,
            hidden: 32,
            encoder,
            smoothing: OrderingStrategy::Uos,
            adam: AdamHyper::default(),
            eval_every: 200,
            attn_weight: 0.0,
            distill_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub step: usize,
    /// Full-grid training loss (normalized target space) at this step.
    pub recon_loss: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EvalRecord>,
    /// MSE of the final reconstruction against the ORIGINAL bundle.
    pub final_mse: f64,
}

/// Everything needed to rebuild kernels: the MLP, its input encoder, the
/// per-layer normalization, and the training-time permutation (None =
/// identity).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: InrModel,
    pub encoder: Encoder,
    pub norms: Vec<LayerNorm>,
    pub table: Option<PermutationTable>,
    pub adam: Option<AdamState>,
}

impl TrainedModel {
    pub fn reconstruct(&self, meta: &WeightBundle) -> Result<WeightBundle> {
        let inverse = match &self.table {
            Some(t) => t.invert(),
            None => PermutationTable::identity_for(meta),
        };
        reconstruct(&self.model, &self.encoder, &self.norms, meta, &inverse)
    }

    pub fn compression_ratio(&self, bundle: &WeightBundle) -> f64 {
        compression_ratio(&self.model, self.table.as_ref(), bundle)
    }
}

/// Pads a k×k kernel to k_max×k_max with zeros, centered.
pub(crate) fn center_pad(kernel: &[f32], k: usize, k_max: usize) -> Vec<f32> {
    let off = (k_max - k) / 2;
    let mut out = vec![0.0f32; k_max * k_max];
    for r in 0..k {
        for c in 0..k {
            out[(r + off) * k_max + (c + off)] = kernel[r * k + c];
        }
    }
    out
}

/// Center k×k window of a k_max×k_max patch.
pub(crate) fn center_crop(patch: &[f32], k_max: usize, k: usize) -> Vec<f32> {
    let off = (k_max - k) / 2;
    let mut out = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            out.push(patch[(r + off) * k_max + (c + off)]);
        }
    }
    out
}

fn layer_norms(bundle: &WeightBundle) -> Vec<LayerNorm> {
    bundle
        .layers()
        .iter()
        .map(|layer| {
            let n = layer.data().len() as f64;
            let mean = layer.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var =
                layer.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            LayerNorm {
                mean: mean as f32,
                scale: if std < 1e-12 { 1.0 } else { std as f32 },
            }
        })
        .collect()
}

fn build_encoder(choice: &EncoderChoice, bundle: &WeightBundle) -> Result<Encoder> {
    match choice {
        EncoderChoice::Pe(cfg) => Ok(Encoder::Pe(*cfg)),
        EncoderChoice::Rff { features, schedule, seed } => {
            let counts: Vec<usize> =
                bundle.layers().iter().map(KernelTensor::param_count).collect();
            let sigma = sigma_for_model(schedule, &counts)?;
            Ok(Encoder::Rff(rff_init(3, *features, sigma, *seed)?))
        }
    }
}

/// Encoded inputs and normalized padded targets for every coordinate of the
/// bundle, in grid order.
fn build_dataset(
    bundle: &WeightBundle,
    encoder: &Encoder,
    norms: &[LayerNorm],
    k_max: usize,
) -> Result<(Matrix<f32>, Matrix<f32>)> {
    let scales = coordinate_scales(bundle);
    let grid = bundle.coordinate_grid();
    let in_dim = encoder.out_dim(3);
    let out_dim = k_max * k_max;
    let mut inputs = Matrix::zeros(grid.len(), in_dim);
    let mut targets = Matrix::zeros(grid.len(), out_dim);
    for (i, &coord) in grid.iter().enumerate() {
        let enc = encoder.encode(&normalize_coord(coord, scales))?;
        for (dst, &v) in inputs.row_mut(i).iter_mut().zip(&enc) {
            *dst = v as f32;
        }
        let layer = bundle.layer(coord.layer);
        let norm = norms[coord.layer];
        let normalized: Vec<f32> = layer
            .kernel(coord.filter, coord.channel)
            .iter()
            .map(|&v| (v - norm.mean) / norm.scale)
            .collect();
        let padded = center_pad(&normalized, layer.kh(), k_max);
        targets.row_mut(i).copy_from_slice(&padded);
    }
    Ok((inputs, targets))
}

fn gather(m: &Matrix<f32>, idx: &[usize]) -> Matrix<f32> {
    let mut out = Matrix::zeros(idx.len(), m.cols());
    for (i, &j) in idx.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(j));
    }
    out
}

/// Trains the MLP to regress the permuted bundle's kernels at encoded
/// coordinates. Deterministic per seed: batches are epoch-wise shuffled
/// without replacement, the learning rate follows a cosine decay to 10% of
/// its initial value, and evaluations land every `eval_every` steps plus the
/// final step.
pub fn train(
    bundle: &WeightBundle,
    table: &PermutationTable,
    config: &TrainConfig,
) -> Result<(TrainedModel, TrainHistory)> {
    if config.steps < 1 {
        return Err(SbsError::validation("training needs ≥ 1 step"));
    }
    if config.eval_every < 1 {
        return Err(SbsError::validation("eval_every must be ≥ 1"));
    }
    if config.attn_weight != 0.0 || config.distill_weight != 0.0 {
        return Err(SbsError::validation(
            "auxiliary loss terms are reserved and must be 0",
        ));
    }
    let permuted = bundle.apply_permutation(table)?;
    let total = permuted.coordinate_grid().len();
    if config.batch < 1 || config.batch > total {
        return Err(SbsError::validation(format!(
            "batch {} must lie in [1, {total}]",
            config.batch
        )));
    }

    let encoder = build_encoder(&config.encoder, &permuted)?;
    let norms = layer_norms(&permuted);
    let k_max = permuted.layers().iter().map(KernelTensor::kh).max().unwrap();
    let (inputs, targets) = build_dataset(&permuted, &encoder, &norms, k_max)?;

    let widths = [
        encoder.out_dim(3),
        config.hidden,
        config.hidden,
        config.hidden,
        config.hidden,
        k_max * k_max,
    ];
    let mut model = mlp_init(&widths, config.seed)?;
    let mut state = AdamState::new(model.param_count(), config.adam);
    let lr0 = config.adam.lr;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..total).collect();
    let mut pos = total; // trigger a shuffle on the first step

    let start = Instant::now();
    let mut records = Vec::new();
    let mut last_recorded = 0;
    for step in 1..=config.steps {
        if pos >= total {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let end = (pos + config.batch).min(total);
        let idx = &order[pos..end];
        pos = end;

        // cosine decay from lr0 to 0.1·lr0 across the run
        let progress = if config.steps > 1 {
            (step - 1) as f64 / (config.steps - 1) as f64
        } else {
            0.0
        };
        let factor = 0.1 + 0.45 * (1.0 + (std::f64::consts::PI * progress).cos());
        state.hyper.lr = lr0 * factor as f32;

        let (loss, grads) = model
            .backward_mse(&gather(&inputs, idx), &gather(&targets, idx))
            .map_err(|e| SbsError::numeric(format!("step {step}: {e}")))?;
        if !loss.is_finite() {
            return Err(SbsError::numeric(format!(
                "training diverged: non-finite loss at step {step}"
            )));
        }
        adam_step(&mut model, &mut state, &grads)?;

        if step % config.eval_every == 0 || step == config.steps {
            if step != last_recorded {
                let out = model.forward(&inputs)?;
                let mut loss = 0.0f64;
                for i in 0..total {
                    for (&y, &t) in out.row(i).iter().zip(targets.row(i)) {
                        let d = y as f64 - t as f64;
                        loss += d * d;
                    }
                }
                loss /= (total * k_max * k_max) as f64;
                if !loss.is_finite() {
                    return Err(SbsError::numeric(format!(
                        "training diverged: non-finite eval loss at step {step}"
                    )));
                }
                records.push(EvalRecord {
                    step,
                    recon_loss: loss,
                    wall_ms: start.elapsed().as_millis() as u64,
                });
                last_recorded = step;
            }
        }
    }

    state.hyper.lr = lr0;
    let trained = TrainedModel {
        model,
        encoder,
        norms,
        table: if table.is_identity() { None } else { Some(table.clone()) },
        adam: Some(state),
    };
    let reconstructed = trained.reconstruct(bundle)?;
    let final_mse = recon_mse(bundle, &reconstructed)?;
    Ok((trained, TrainHistory { records, final_mse }))
}

/// Evaluates the MLP over every coordinate, crops each prediction to its
/// layer's kernel size, undoes the normalization, and applies the inverse
/// permutation so kernels land in their original slots. `meta` supplies the
/// shapes, name, accuracy, and residual blobs — its kernel values are unused.
pub fn reconstruct(
    model: &InrModel,
    encoder: &Encoder,
    norms: &[LayerNorm],
    meta: &WeightBundle,
    inverse_table: &PermutationTable,
) -> Result<WeightBundle> {
    let k_max = meta.layers().iter().map(KernelTensor::kh).max().unwrap();
    if model.out_dim() != k_max * k_max {
        return Err(SbsError::validation(format!(
            "model predicts {}-entry patches, bundle needs {}",
            model.out_dim(),
            k_max * k_max
        )));
    }
    if model.in_dim() != encoder.out_dim(3) {
        return Err(SbsError::validation(format!(
            "model takes {} inputs, encoder emits {}",
            model.in_dim(),
            encoder.out_dim(3)
        )));
    }
    if norms.len() != meta.layer_count() {
        return Err(SbsError::validation(format!(
            "{} normalization records for {} layers",
            norms.len(),
            meta.layer_count()
        )));
    }

    let scales = coordinate_scales(meta);
    let grid = meta.coordinate_grid();
    let mut inputs = Matrix::zeros(grid.len(), encoder.out_dim(3));
    for (i, &coord) in grid.iter().enumerate() {
        let enc = encoder.encode(&normalize_coord(coord, scales))?;
        for (dst, &v) in inputs.row_mut(i).iter_mut().zip(&enc) {
            *dst = v as f32;
        }
    }
    let out = model.forward(&inputs)?;

    let mut layers = Vec::with_capacity(meta.layer_count());
    let mut row = 0;
    for layer in meta.layers() {
        let norm = norms[layers.len()];
        let mut data = Vec::with_capacity(layer.param_count());
        for _ in 0..layer.slot_count() {
            let cropped = center_crop(out.row(row), k_max, layer.kh());
            data.extend(cropped.iter().map(|&v| v * norm.scale + norm.mean));
            row += 1;
        }
        layers.push(KernelTensor::new(
            layer.filters(),
            layer.channels(),
            layer.kh(),
            layer.kw(),
            data,
        )?);
    }
    let predicted = WeightBundle::new(
        layers,
        meta.model_name(),
        meta.source_accuracy(),
        meta.residual_blobs().to_vec(),
    )?;
    predicted.apply_permutation(inverse_table)
}

/// Mean squared error over all kernel entries of two same-shaped bundles.
pub fn recon_mse(original: &WeightBundle, reconstructed: &WeightBundle) -> Result<f64> {
    if original.layer_count() != reconstructed.layer_count() {
        return Err(SbsError::validation("bundle layer counts differ"));
    }
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (a, b) in original.layers().iter().zip(reconstructed.layers()) {
        if a.filters() != b.filters()
            || a.channels() != b.channels()
            || a.kh() != b.kh()
            || a.kw() != b.kw()
        {
            return Err(SbsError::validation("bundle layer shapes differ"));
        }
        for (&x, &y) in a.data().iter().zip(b.data()) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        count += a.param_count();
    }
    Ok(sum / count as f64)
}

/// Bytes of the serialized MLP parameters (plus the permutation table when a
/// non-identity one is used) over bytes of the bundle's kernel entries.
pub fn compression_ratio(
    model: &InrModel,
    table: Option<&PermutationTable>,
    bundle: &WeightBundle,
) -> f64 {
    let mut numerator = 4 * model.param_count();
    if let Some(t) = table {
        if !t.is_identity() {
            numerator += encode_table(t).len();
        }
    }
    numerator as f64 / (4 * bundle.param_count()) as f64
}
