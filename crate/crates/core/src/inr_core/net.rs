//! Dense MLP math engine, generic over the element type.
//!
//! One implementation serves both precisions: f32 for training, f64 for the
//! gradient oracle and tangent-kernel analysis. Gradient accumulation is
//! strictly sequential over batch rows so results are bit-reproducible.

use crate::error::{Result, SbsError};

/// Element type of the engine; implemented for `f32` and `f64`.
pub trait Scalar:
    Copy
    + PartialOrd
    + PartialEq
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn finite(self) -> bool;
}

impl Scalar for f32 {
    const ZERO: f32 = 0.0;
    fn from_f64(v: f64) -> f32 {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    fn from_f64(v: f64) -> f64 {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn finite(self) -> bool {
        self.is_finite()
    }
}

/// Row-major rows×cols matrix (batches, targets, outputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![T::ZERO; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(SbsError::validation(format!(
                "matrix payload has {} entries, expected {rows}×{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|v| v.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(SbsError::validation("ragged rows in matrix"));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }
}

/// Dense MLP: `widths.len() − 1` weight layers, ReLU after every layer except
/// the last. Parameters flatten layer-major as (weights row-major, biases).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Net<T> {
    widths: Vec<usize>,
    weights: Vec<Vec<T>>, // layer i: widths[i+1] × widths[i], row-major
    biases: Vec<Vec<T>>,  // layer i: widths[i+1]
}

impl<T: Scalar> Net<T> {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(SbsError::validation("net needs at least one weight layer"));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(SbsError::validation("all layer widths must be ≥ 1"));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            weights.push(vec![T::ZERO; pair[1] * pair[0]]);
            biases.push(vec![T::ZERO; pair[1]]);
        }
        Ok(Net { widths: widths.to_vec(), weights, biases })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [T] {
        &mut self.weights[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// Flattened parameters: per layer, weights row-major then biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in 0..self.layer_count() {
            out.extend_from_slice(&self.weights[layer]);
            out.extend_from_slice(&self.biases[layer]);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(SbsError::validation(format!(
                "parameter payload has {} entries, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut pos = 0;
        for layer in 0..self.layer_count() {
            let w = self.weights[layer].len();
            self.weights[layer].copy_from_slice(&flat[pos..pos + w]);
            pos += w;
            let b = self.biases[layer].len();
            self.biases[layer].copy_from_slice(&flat[pos..pos + b]);
            pos += b;
        }
        Ok(())
    }

    pub fn get_param(&self, idx: usize) -> T {
        let (layer, in_biases, off) = self.locate(idx);
        if in_biases {
            self.biases[layer][off]
        } else {
            self.weights[layer][off]
        }
    }

    pub fn set_param(&mut self, idx: usize, v: T) {
        let (layer, in_biases, off) = self.locate(idx);
        if in_biases {
            self.biases[layer][off] = v;
        } else {
            self.weights[layer][off] = v;
        }
    }

    pub fn layer_of_param(&self, idx: usize) -> usize {
        self.locate(idx).0
    }

    fn locate(&self, mut idx: usize) -> (usize, bool, usize) {
        for layer in 0..self.layer_count() {
            let w = self.weights[layer].len();
            if idx < w {
                return (layer, false, idx);
            }
            idx -= w;
            let b = self.biases[layer].len();
            if idx < b {
                return (layer, true, idx);
            }
            idx -= b;
        }
        panic!("parameter index out of range");
    }

    pub fn cast<U: Scalar>(&self) -> Net<U> {
        Net {
            widths: self.widths.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.iter().map(|&v| U::from_f64(v.to_f64())).collect())
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|&v| U::from_f64(v.to_f64())).collect())
                .collect(),
        }
    }

    fn check_batch(&self, batch: &Matrix<T>) -> Result<()> {
        if batch.cols() != self.widths[0] {
            return Err(SbsError::validation(format!(
                "batch has {} columns, net input width is {}",
                batch.cols(),
                self.widths[0]
            )));
        }
        Ok(())
    }

    /// Forward pass keeping every layer's post-activation (index 0 is the
    /// input). Used by both inference and backprop.
    fn forward_cached(&self, batch: &Matrix<T>) -> Result<Vec<Matrix<T>>> {
        self.check_batch(batch)?;
        let n = batch.rows();
        let mut acts = Vec::with_capacity(self.layer_count() + 1);
        acts.push(batch.clone());
        for layer in 0..self.layer_count() {
            let (w_in, w_out) = (self.widths[layer], self.widths[layer + 1]);
            let last = layer + 1 == self.layer_count();
            let mut out = Matrix::zeros(n, w_out);
            for i in 0..n {
                let x = acts[layer].row(i);
                let y = out.row_mut(i);
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &self.weights[layer][o * w_in..(o + 1) * w_in];
                    let mut acc = self.biases[layer][o];
                    for (&w, &xv) in row.iter().zip(x) {
                        acc += w * xv;
                    }
                    *yo = if !last && acc < T::ZERO { T::ZERO } else { acc };
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    pub fn forward(&self, batch: &Matrix<T>) -> Result<Matrix<T>> {
        Ok(self.forward_cached(batch)?.pop().unwrap())
    }

    /// MSE over batch and output dims plus flattened parameter gradients.
    pub fn backward_mse(&self, batch: &Matrix<T>, targets: &Matrix<T>) -> Result<(f64, Vec<T>)> {
        let acts = self.forward_cached(batch)?;
        let out = acts.last().unwrap();
        if targets.rows() != out.rows() || targets.cols() != out.cols() {
            return Err(SbsError::validation(format!(
                "targets are {}×{}, outputs are {}×{}",
                targets.rows(),
                targets.cols(),
                out.rows(),
                out.cols()
            )));
        }
        if out.data().iter().any(|&v| !v.finite()) {
            return Err(SbsError::numeric("non-finite value in forward pass"));
        }
        let n = out.rows();
        let denom = (n * out.cols()) as f64;
        let mut loss = 0.0f64;
        // dL/dy for the current layer, one row per sample
        let mut delta = Matrix::zeros(n, out.cols());
        for i in 0..n {
            let (y, t) = (out.row(i), targets.row(i));
            let d = delta.row_mut(i);
            for o in 0..y.len() {
                let diff = y[o].to_f64() - t[o].to_f64();
                loss += diff * diff;
                d[o] = T::from_f64(2.0 * diff / denom);
            }
        }
        loss /= denom;

        let mut grad_w: Vec<Vec<T>> =
            self.weights.iter().map(|w| vec![T::ZERO; w.len()]).collect();
        let mut grad_b: Vec<Vec<T>> = self.biases.iter().map(|b| vec![T::ZERO; b.len()]).collect();

        for layer in (0..self.layer_count()).rev() {
            let (w_in, w_out) = (self.widths[layer], self.widths[layer + 1]);
            let input = &acts[layer];
            let mut next_delta = Matrix::zeros(n, w_in);
            for i in 0..n {
                let d = delta.row(i);
                let x = input.row(i);
                let gb = &mut grad_b[layer];
                let gw = &mut grad_w[layer];
                for o in 0..w_out {
                    let dv = d[o];
                    if dv == T::ZERO {
                        continue;
                    }
                    gb[o] += dv;
                    let grow = &mut gw[o * w_in..(o + 1) * w_in];
                    for (g, &xv) in grow.iter_mut().zip(x) {
                        *g += dv * xv;
                    }
                }
                if layer > 0 {
                    let nd = next_delta.row_mut(i);
                    for o in 0..w_out {
                        let dv = d[o];
                        if dv == T::ZERO {
                            continue;
                        }
                        let row = &self.weights[layer][o * w_in..(o + 1) * w_in];
                        for (ndj, &w) in nd.iter_mut().zip(row) {
                            *ndj += dv * w;
                        }
                    }
                    // ReLU mask: units that were clamped pass no gradient
                    for (ndj, &a) in nd.iter_mut().zip(input.row(i)) {
                        if a == T::ZERO {
                            *ndj = T::ZERO;
                        }
                    }
                }
            }
            delta = next_delta;
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for layer in 0..self.layer_count() {
            flat.extend_from_slice(&grad_w[layer]);
            flat.extend_from_slice(&grad_b[layer]);
        }
        Ok((loss, flat))
    }

    /// Loss plus the sign pattern of every hidden pre-activation, for kink
    /// detection in the gradient audit. A unit counts as active when its
    /// post-activation is strictly positive.
    pub fn loss_and_signs(&self, batch: &Matrix<T>, targets: &Matrix<T>) -> Result<(f64, Vec<bool>)> {
        let acts = self.forward_cached(batch)?;
        let out = acts.last().unwrap();
        if targets.rows() != out.rows() || targets.cols() != out.cols() {
            return Err(SbsError::validation("target shape mismatch"));
        }
        let denom = (out.rows() * out.cols()) as f64;
        let mut loss = 0.0;
        for i in 0..out.rows() {
            for (y, t) in out.row(i).iter().zip(targets.row(i)) {
                let d = y.to_f64() - t.to_f64();
                loss += d * d;
            }
        }
        let mut signs = Vec::new();
        for hidden in &acts[1..acts.len() - 1] {
            signs.extend(hidden.data().iter().map(|&v| v > T::ZERO));
        }
        Ok((loss / denom, signs))
    }

    /// Gradient of the scalar output w.r.t. every parameter for one input
    /// row; requires output width 1. This is the Jacobian row used for
    /// empirical tangent kernels.
    pub fn output_grad(&self, x: &[T]) -> Result<Vec<T>> {
        if *self.widths.last().unwrap() != 1 {
            return Err(SbsError::validation(
                "output gradient needs a scalar-output net",
            ));
        }
        let batch = Matrix::from_rows(&[x.to_vec()])?;
        let acts = self.forward_cached(&batch)?;

        let mut grad_w: Vec<Vec<T>> =
            self.weights.iter().map(|w| vec![T::ZERO; w.len()]).collect();
        let mut grad_b: Vec<Vec<T>> = self.biases.iter().map(|b| vec![T::ZERO; b.len()]).collect();

        // delta = dy/d(pre-activation of current layer)
        let mut delta = vec![T::from_f64(1.0)];
        for layer in (0..self.layer_count()).rev() {
            let (w_in, w_out) = (self.widths[layer], self.widths[layer + 1]);
            let x = acts[layer].row(0);
            for o in 0..w_out {
                let dv = delta[o];
                if dv == T::ZERO {
                    continue;
                }
                grad_b[layer][o] = dv;
                let grow = &mut grad_w[layer][o * w_in..(o + 1) * w_in];
                for (g, &xv) in grow.iter_mut().zip(x) {
                    *g = dv * xv;
                }
            }
            if layer > 0 {
                let mut next = vec![T::ZERO; w_in];
                for o in 0..w_out {
                    let dv = delta[o];
                    if dv == T::ZERO {
                        continue;
                    }
                    let row = &self.weights[layer][o * w_in..(o + 1) * w_in];
                    for (nj, &w) in next.iter_mut().zip(row) {
                        *nj += dv * w;
                    }
                }
                for (nj, &a) in next.iter_mut().zip(x) {
                    if a == T::ZERO {
                        *nj = T::ZERO;
                    }
                }
                delta = next;
            }
        }

        let mut flat = Vec::with_capacity(self.param_count());
        for layer in 0..self.layer_count() {
            flat.extend_from_slice(&grad_w[layer]);
            flat.extend_from_slice(&grad_b[layer]);
        }
        Ok(flat)
    }
}
