//! The coordinate-MLP predictor: a five-weight-layer ReLU network with
//! hand-written forward/backward passes, He initialization, Adam, and a
//! finite-difference gradient oracle.
//!
//! The math engine ([`net::Net`]) is generic over the element type: training
//! runs in f32, while the verification oracles and tangent-kernel analysis
//! instantiate the same code at f64.

pub(crate) mod net;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::{Result, SbsError};
pub use net::{Matrix, Scalar};
use net::Net;

/// Fixed hyperparameters of the Adam update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 5e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators, one entry per flattened parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f32>,
    v: Vec<f32>,
    step: u64,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(param_count: usize, hyper: AdamHyper) -> Self {
        AdamState { m: vec![0.0; param_count], v: vec![0.0; param_count], step: 0, hyper }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f32], &[f32]) {
        (&self.m, &self.v)
    }

    /// Restores a saved state (checkpoint resume).
    pub fn from_parts(m: Vec<f32>, v: Vec<f32>, step: u64, hyper: AdamHyper) -> Result<Self> {
        if m.len() != v.len() {
            return Err(SbsError::validation("optimizer moment lengths differ"));
        }
        Ok(AdamState { m, v, step, hyper })
    }
}

/// The five-weight-layer ReLU MLP mapping encoded coordinates to a flattened
/// kernel patch. Hidden layers 1–4 are followed by ReLU; the output layer is
/// linear.
#[derive(Debug, Clone, PartialEq)]
pub struct InrModel {
    net: Net<f32>,
    seed: u64,
}

pub const MLP_WEIGHT_LAYERS: usize = 5;

/// He-normal initialization (std √(2/fan_in)), zero biases, deterministic
/// per seed. `widths` is [in, h₁, h₂, h₃, h₄, out].
pub fn mlp_init(widths: &[usize], seed: u64) -> Result<InrModel> {
    if widths.len() != MLP_WEIGHT_LAYERS + 1 {
        return Err(SbsError::validation(format!(
            "model takes {} widths [in, 4×hidden, out], got {}",
            MLP_WEIGHT_LAYERS + 1,
            widths.len()
        )));
    }
    Ok(InrModel { net: init_net(widths, seed)?, seed })
}

pub(crate) fn init_net<T: Scalar>(widths: &[usize], seed: u64) -> Result<Net<T>> {
    if widths.iter().any(|&w| w == 0) {
        return Err(SbsError::validation("all layer widths must be ≥ 1"));
    }
    let mut net = Net::zeros(widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for layer in 0..net.layer_count() {
        let fan_in = widths[layer];
        let normal = rand_distr::Normal::new(0.0f64, (2.0 / fan_in as f64).sqrt()).unwrap();
        let w = net.weights_mut(layer);
        for v in w.iter_mut() {
            *v = T::from_f64(normal.sample(&mut rng));
        }
        // biases stay zero
    }
    Ok(net)
}

impl InrModel {
    /// Rebuilds a model from its checkpoint pieces without re-sampling.
    pub fn from_parts(widths: &[usize], seed: u64, params: &[f32]) -> Result<InrModel> {
        if widths.len() != MLP_WEIGHT_LAYERS + 1 {
            return Err(SbsError::validation(format!(
                "model takes {} widths, got {}",
                MLP_WEIGHT_LAYERS + 1,
                widths.len()
            )));
        }
        let mut net = Net::zeros(widths)?;
        net.set_params(params)?;
        Ok(InrModel { net, seed })
    }

    pub fn widths(&self) -> &[usize] {
        self.net.widths()
    }

    pub fn in_dim(&self) -> usize {
        self.net.widths()[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.net.widths().last().unwrap()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count()
    }

    pub fn params(&self) -> Vec<f32> {
        self.net.params()
    }

    pub fn set_params(&mut self, flat: &[f32]) -> Result<()> {
        self.net.set_params(flat)
    }

    /// Same parameters at 64-bit, for oracles and kernel analysis.
    pub(crate) fn net_f64(&self) -> Net<f64> {
        self.net.cast()
    }

    pub fn forward(&self, batch: &Matrix<f32>) -> Result<Matrix<f32>> {
        self.net.forward(batch)
    }

    /// Mean squared error over batch and output dims, plus flattened
    /// parameter gradients (layer-major, weights then biases per layer).
    pub fn backward_mse(&self, batch: &Matrix<f32>, targets: &Matrix<f32>) -> Result<(f64, Vec<f32>)> {
        self.net.backward_mse(batch, targets)
    }
}

/// Standard Adam with bias correction; advances the step counter by one.
pub fn adam_step(model: &mut InrModel, state: &mut AdamState, grads: &[f32]) -> Result<()> {
    let n = model.param_count();
    if grads.len() != n || state.m.len() != n {
        return Err(SbsError::validation(format!(
            "parameter/gradient/state length mismatch: {n} params, {} grads, {} moments",
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = (1.0 - (h.beta1 as f64).powi(state.step as i32)) as f32;
    let bc2 = (1.0 - (h.beta2 as f64).powi(state.step as i32)) as f32;
    let mut params = model.net.params();
    for i in 0..n {
        let g = grads[i];
        state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g;
        state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
    model.net.set_params(&params)
}

/// Outcome of the finite-difference gradient audit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Weight-layer index (0-based) where the max error occurred.
    pub worst_layer: usize,
    /// Parameter coordinates actually compared (kink-crossers are excluded).
    pub coords_checked: usize,
}

/// Central-difference audit of the analytic gradients at 64-bit over a random
/// subset of ≥ 200 parameter coordinates (all of them for small models).
/// Coordinates whose ±eps perturbation flips any ReLU pre-activation sign are
/// excluded: the loss is not differentiable across the kink, so the
/// finite-difference quotient is meaningless there.
pub fn grad_check(
    model: &InrModel,
    batch: &Matrix<f64>,
    targets: &Matrix<f64>,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(SbsError::validation(format!(
            "grad-check eps must lie in [1e-7, 1e-3], got {eps}"
        )));
    }
    let net = model.net_f64();
    grad_check_net(&net, batch, targets, eps, model.seed ^ 0x67c6_697e)
}

pub(crate) fn grad_check_net(
    net: &Net<f64>,
    batch: &Matrix<f64>,
    targets: &Matrix<f64>,
    eps: f64,
    subset_seed: u64,
) -> Result<GradCheckReport> {
    let mut net = net.clone();
    let (_, analytic) = net.backward_mse(batch, targets)?;
    let n = net.param_count();
    let coords: Vec<usize> = if n <= 200 {
        (0..n).collect()
    } else {
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all.truncate(200);
        all
    };

    let mut max_rel = 0.0f64;
    let mut worst_layer = 0;
    let mut checked = 0;
    for &idx in &coords {
        let orig = net.get_param(idx);
        net.set_param(idx, orig + eps);
        let (loss_plus, signs_plus) = net.loss_and_signs(batch, targets)?;
        net.set_param(idx, orig - eps);
        let (loss_minus, signs_minus) = net.loss_and_signs(batch, targets)?;
        net.set_param(idx, orig);
        if signs_plus != signs_minus {
            continue; // perturbation crosses a ReLU kink
        }
        checked += 1;
        let fd = (loss_plus - loss_minus) / (2.0 * eps);
        let an = analytic[idx];
        let denom = an.abs().max(fd.abs());
        let rel = if denom < 1e-10 { 0.0 } else { (an - fd).abs() / denom };
        if rel > max_rel {
            max_rel = rel;
            worst_layer = net.layer_of_param(idx);
        }
    }
    Ok(GradCheckReport { max_rel_error: max_rel, worst_layer, coords_checked: checked })
}
