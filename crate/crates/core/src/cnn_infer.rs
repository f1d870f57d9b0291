//! Forward-only inference for small convolutional nets, so a reconstructed
//! kernel bundle can be scored by task accuracy instead of raw MSE.
//!
//! A [`NetSpec`] is an ordered list of layer descriptors; each conv layer is
//! bound to one bundle layer index, and every bundle layer must be bound
//! exactly once. Linear layers read their parameters from the bundle's
//! residual blobs: the j-th linear layer takes blob 2j as its row-major
//! `outputs×inputs` f32 weight matrix and blob 2j+1 as its f32 bias vector.
//!
//! ## `SBSD` dataset byte format (little-endian)
//!
//! | field   | type            | notes                                  |
//! |---------|-----------------|----------------------------------------|
//! | magic   | 4 bytes         | `SBSD`                                 |
//! | version | u16             | 1                                      |
//! | n       | u32             | sample count, ≥ 1                      |
//! | C, H, W | u16 × 3         | image shape                            |
//! | classes | u16             | label alphabet size                    |
//! | pixels  | n·C·H·W × f32   | sample-major, then channel, row, col   |
//! | labels  | n × u16         | each < classes                         |

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::bytesio::{Reader, Writer};
use crate::error::{Result, SbsError};
use crate::inr_core::Scalar;
use crate::weight_store::WeightBundle;

const DATASET_MAGIC: &[u8; 4] = b"SBSD";
const VERSION: u16 = 1;

/// Dense C×H×W activation tensor, channel-major with row-major planes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(SbsError::validation(format!(
                "feature map dimensions must be positive, got {channels}×{height}×{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(SbsError::validation(format!(
                "feature map payload has {} entries, expected {channels}×{height}×{width}",
                data.len()
            )));
        }
        Ok(FeatureMap { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        FeatureMap::new(channels, height, width, vec![T::ZERO; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// One conv layer: kernel shape, geometry, and the bundle layer it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub bundle_layer: usize,
    pub filters: usize,
    pub channels: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Ordered layer descriptor of a [`NetSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Relu,
    GlobalAvgPool,
    Linear { inputs: usize, outputs: usize },
}

/// Validated net topology: layer list plus the input channel count.
///
/// Construction walks a shape machine (spatial channel count, then flat
/// width after pooling) so that consecutive layers are compatible and the
/// net ends in a flat class-score stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetSpec {
    input_channels: usize,
    layers: Vec<LayerSpec>,
    classes: usize,
}

/// Stage tracked while checking or running the layer chain.
enum Stage<T> {
    Spatial(FeatureMap<T>),
    Flat(Vec<T>),
}

impl NetSpec {
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_channels == 0 {
            return Err(SbsError::validation("net input channel count must be ≥ 1"));
        }
        // None = flattened stage of the given width, Some = spatial channels.
        let mut spatial = true;
        let mut width = input_channels;
        let mut bound = std::collections::BTreeSet::new();
        for (i, layer) in layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv(cs) => {
                    if cs.filters == 0 || cs.channels == 0 || cs.k == 0 || cs.stride == 0 {
                        return Err(SbsError::validation(format!(
                            "conv layer {i} must have positive filters/channels/k/stride"
                        )));
                    }
                    if !spatial {
                        return Err(SbsError::validation(format!(
                            "conv layer {i} cannot follow a flattened stage"
                        )));
                    }
                    if width != cs.channels {
                        return Err(SbsError::validation(format!(
                            "conv layer {i} expects {} input channels but receives {width}",
                            cs.channels
                        )));
                    }
                    if !bound.insert(cs.bundle_layer) {
                        return Err(SbsError::validation(format!(
                            "bundle layer {} is bound by more than one conv layer",
                            cs.bundle_layer
                        )));
                    }
                    width = cs.filters;
                }
                LayerSpec::Relu => {}
                LayerSpec::GlobalAvgPool => {
                    if !spatial {
                        return Err(SbsError::validation(format!(
                            "global average pool at layer {i} requires a spatial stage"
                        )));
                    }
                    spatial = false;
                }
                LayerSpec::Linear { inputs, outputs } => {
                    if inputs == 0 || outputs == 0 {
                        return Err(SbsError::validation(format!(
                            "linear layer {i} must have positive input/output widths"
                        )));
                    }
                    if spatial {
                        return Err(SbsError::validation(format!(
                            "linear layer {i} requires a flattened stage (pool first)"
                        )));
                    }
                    if width != inputs {
                        return Err(SbsError::validation(format!(
                            "linear layer {i} expects {inputs} inputs but receives {width}"
                        )));
                    }
                    width = outputs;
                }
            }
        }
        if spatial {
            return Err(SbsError::validation("net must end in a flat class-score stage"));
        }
        Ok(NetSpec { input_channels, layers, classes: width })
    }

    /// Desk-scale toy topology:
    /// conv(8,3,3) → relu → conv(8,8,3) → relu → conv(8,8,3) → relu →
    /// global-avg-pool → linear(8, classes), all convs stride 1 pad 1.
    pub fn tiny(classes: usize) -> Result<NetSpec> {
        let conv = |bundle_layer, filters, channels| {
            LayerSpec::Conv(ConvSpec { bundle_layer, filters, channels, k: 3, stride: 1, pad: 1 })
        };
        NetSpec::new(
            3,
            vec![
                conv(0, 8, 3),
                LayerSpec::Relu,
                conv(1, 8, 8),
                LayerSpec::Relu,
                conv(2, 8, 8),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear { inputs: 8, outputs: classes },
            ],
        )
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Width of the final flat stage, i.e. the logit count.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Checks that the spec and a bundle agree: every bundle layer is bound
    /// by exactly one conv layer with matching dimensions, and each linear
    /// layer finds correctly sized weight/bias blobs.
    pub fn validate_against(&self, bundle: &WeightBundle) -> Result<()> {
        let mut bound = vec![false; bundle.layer_count()];
        let mut linear_pairs = 0usize;
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv(cs) => {
                    if cs.bundle_layer >= bound.len() {
                        return Err(SbsError::validation(format!(
                            "conv layer {i} binds bundle layer {}, but the bundle has {} layers",
                            cs.bundle_layer,
                            bound.len()
                        )));
                    }
                    bound[cs.bundle_layer] = true;
                    let t = bundle.layer(cs.bundle_layer);
                    if t.filters() != cs.filters
                        || t.channels() != cs.channels
                        || t.kh() != cs.k
                        || t.kw() != cs.k
                    {
                        return Err(SbsError::validation(format!(
                            "conv layer {i} expects a {}×{}×{}×{} tensor, bundle layer {} is {}×{}×{}×{}",
                            cs.filters,
                            cs.channels,
                            cs.k,
                            cs.k,
                            cs.bundle_layer,
                            t.filters(),
                            t.channels(),
                            t.kh(),
                            t.kw()
                        )));
                    }
                }
                LayerSpec::Linear { inputs, outputs } => {
                    let wi = 2 * linear_pairs;
                    let blobs = bundle.residual_blobs();
                    if blobs.len() < wi + 2 {
                        return Err(SbsError::validation(format!(
                            "linear layer {i} expects weight/bias blobs {wi} and {}, bundle has {} blobs",
                            wi + 1,
                            blobs.len()
                        )));
                    }
                    if blobs[wi].len() != 4 * inputs * outputs {
                        return Err(SbsError::validation(format!(
                            "linear layer {i} weight blob {wi} has {} bytes, expected {}",
                            blobs[wi].len(),
                            4 * inputs * outputs
                        )));
                    }
                    if blobs[wi + 1].len() != 4 * outputs {
                        return Err(SbsError::validation(format!(
                            "linear layer {i} bias blob {} has {} bytes, expected {}",
                            wi + 1,
                            blobs[wi + 1].len(),
                            4 * outputs
                        )));
                    }
                    linear_pairs += 1;
                }
                LayerSpec::Relu | LayerSpec::GlobalAvgPool => {}
            }
        }
        if let Some(unbound) = bound.iter().position(|b| !b) {
            return Err(SbsError::validation(format!(
                "bundle layer {unbound} is not bound by any conv layer"
            )));
        }
        Ok(())
    }
}

/// Output height/width for one spatial axis; rejects non-integer sizes.
fn conv_axis(len: usize, k: usize, stride: usize, pad: usize, axis: &str) -> Result<usize> {
    let span = len + 2 * pad;
    if span < k {
        return Err(SbsError::validation(format!(
            "kernel size {k} exceeds padded input {axis} {span}"
        )));
    }
    if (span - k) % stride != 0 {
        return Err(SbsError::validation(format!(
            "output {axis} ({len} + 2·{pad} − {k})/{stride} + 1 is not an integer"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Cross-correlation of a C×H×W input with F×C×k×k kernels (flat,
/// filter-major then channel, then row-major taps), zero padding.
///
/// Implemented by gathering padded patches and contracting each against the
/// kernel rows; taps accumulate in (channel, row, col) order, so results are
/// bit-identical to [`conv2d_reference`].
pub fn conv2d_forward<T: Scalar>(
    input: &FeatureMap<T>,
    kernels: &[T],
    filters: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<FeatureMap<T>> {
    let (c, h, w) = input.shape();
    if filters == 0 || k == 0 {
        return Err(SbsError::validation("conv needs positive filter count and kernel size"));
    }
    if stride == 0 {
        return Err(SbsError::validation("conv stride must be ≥ 1"));
    }
    if kernels.len() != filters * c * k * k {
        return Err(SbsError::validation(format!(
            "kernel payload has {} entries, expected {filters}×{c}×{k}×{k}",
            kernels.len()
        )));
    }
    let oh = conv_axis(h, k, stride, pad, "height")?;
    let ow = conv_axis(w, k, stride, pad, "width")?;

    // Patch matrix: one row of C·k·k taps per output position, zeros where
    // the window hangs over the padded border.
    let taps = c * k * k;
    let mut patches = vec![T::ZERO; oh * ow * taps];
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * taps;
            let mut j = 0;
            for ch in 0..c {
                for ki in 0..k {
                    for kj in 0..k {
                        let y = (oy * stride + ki) as isize - pad as isize;
                        let x = (ox * stride + kj) as isize - pad as isize;
                        if (0..h as isize).contains(&y) && (0..w as isize).contains(&x) {
                            patches[row + j] = input.at(ch, y as usize, x as usize);
                        }
                        j += 1;
                    }
                }
            }
        }
    }

    let mut out = vec![T::ZERO; filters * oh * ow];
    for f in 0..filters {
        let krow = &kernels[f * taps..(f + 1) * taps];
        for p in 0..oh * ow {
            let prow = &patches[p * taps..(p + 1) * taps];
            let mut acc = T::ZERO;
            for j in 0..taps {
                acc += krow[j] * prow[j];
            }
            out[f * (oh * ow) + p] = acc;
        }
    }
    FeatureMap::new(filters, oh, ow, out)
}

/// Plain nested-loop cross-correlation over an explicitly zero-padded copy
/// of the input: the independent oracle that [`conv2d_forward`] is checked
/// against. Same tap order, so agreement is exact in either precision.
pub fn conv2d_reference<T: Scalar>(
    input: &FeatureMap<T>,
    kernels: &[T],
    filters: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Result<FeatureMap<T>> {
    let (c, h, w) = input.shape();
    if filters == 0 || k == 0 {
        return Err(SbsError::validation("conv needs positive filter count and kernel size"));
    }
    if stride == 0 {
        return Err(SbsError::validation("conv stride must be ≥ 1"));
    }
    if kernels.len() != filters * c * k * k {
        return Err(SbsError::validation(format!(
            "kernel payload has {} entries, expected {filters}×{c}×{k}×{k}",
            kernels.len()
        )));
    }
    let oh = conv_axis(h, k, stride, pad, "height")?;
    let ow = conv_axis(w, k, stride, pad, "width")?;

    let ph = h + 2 * pad;
    let pw = w + 2 * pad;
    let mut padded = vec![T::ZERO; c * ph * pw];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                padded[(ch * ph + y + pad) * pw + x + pad] = input.at(ch, y, x);
            }
        }
    }

    let mut out = vec![T::ZERO; filters * oh * ow];
    for f in 0..filters {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::ZERO;
                for ch in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            acc += kernels[((f * c + ch) * k + ki) * k + kj]
                                * padded[(ch * ph + oy * stride + ki) * pw + ox * stride + kj];
                        }
                    }
                }
                out[(f * oh + oy) * ow + ox] = acc;
            }
        }
    }
    FeatureMap::new(filters, oh, ow, out)
}

fn relu_slice<T: Scalar>(xs: &mut [T]) {
    for x in xs.iter_mut() {
        if !(*x > T::ZERO) {
            *x = T::ZERO;
        }
    }
}

/// Per-channel mean over all spatial positions.
pub fn global_avg_pool<T: Scalar>(m: &FeatureMap<T>) -> Vec<T> {
    let area = T::from_f64((m.height * m.width) as f64);
    (0..m.channels)
        .map(|ch| {
            let plane = &m.data[ch * m.height * m.width..(ch + 1) * m.height * m.width];
            let mut acc = T::ZERO;
            for &v in plane {
                acc += v;
            }
            acc / area
        })
        .collect()
}

/// Parses the j-th linear layer's weight/bias blob pair out of a bundle.
fn linear_params(bundle: &WeightBundle, pair: usize, inputs: usize, outputs: usize) -> (Vec<f32>, Vec<f32>) {
    let unpack = |raw: &[u8]| {
        raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect::<Vec<f32>>()
    };
    let weights = unpack(&bundle.residual_blobs()[2 * pair]);
    let bias = unpack(&bundle.residual_blobs()[2 * pair + 1]);
    debug_assert_eq!(weights.len(), inputs * outputs);
    debug_assert_eq!(bias.len(), outputs);
    (weights, bias)
}

/// Runs one image through the net and returns the raw class logits.
pub fn forward_net(
    spec: &NetSpec,
    bundle: &WeightBundle,
    image: &FeatureMap<f32>,
) -> Result<Vec<f32>> {
    spec.validate_against(bundle)?;
    if image.channels() != spec.input_channels() {
        return Err(SbsError::validation(format!(
            "image has {} channels, net expects {}",
            image.channels(),
            spec.input_channels()
        )));
    }
    let mut stage = Stage::Spatial(image.clone());
    let mut linear_pairs = 0usize;
    for layer in &spec.layers {
        stage = match (*layer, stage) {
            (LayerSpec::Conv(cs), Stage::Spatial(m)) => {
                let t = bundle.layer(cs.bundle_layer);
                Stage::Spatial(conv2d_forward(&m, t.data(), cs.filters, cs.k, cs.stride, cs.pad)?)
            }
            (LayerSpec::Relu, Stage::Spatial(mut m)) => {
                relu_slice(&mut m.data);
                Stage::Spatial(m)
            }
            (LayerSpec::Relu, Stage::Flat(mut v)) => {
                relu_slice(&mut v);
                Stage::Flat(v)
            }
            (LayerSpec::GlobalAvgPool, Stage::Spatial(m)) => Stage::Flat(global_avg_pool(&m)),
            (LayerSpec::Linear { inputs, outputs }, Stage::Flat(v)) => {
                let (weights, bias) = linear_params(bundle, linear_pairs, inputs, outputs);
                linear_pairs += 1;
                let logits = (0..outputs)
                    .map(|o| {
                        let mut acc = bias[o];
                        for i in 0..inputs {
                            acc += weights[o * inputs + i] * v[i];
                        }
                        acc
                    })
                    .collect();
                Stage::Flat(logits)
            }
            // construction validates the stage chain, so these cannot pair up
            _ => unreachable!("layer/stage mismatch ruled out by NetSpec::new"),
        };
    }
    match stage {
        Stage::Flat(v) => Ok(v),
        Stage::Spatial(_) => unreachable!("NetSpec::new requires a flat final stage"),
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of the net described by `spec`+`bundle` on a dataset.
pub fn evaluate_accuracy(
    spec: &NetSpec,
    bundle: &WeightBundle,
    data: &LabeledDataset,
) -> Result<f64> {
    if data.classes() != spec.classes() {
        return Err(SbsError::validation(format!(
            "dataset has {} classes, net emits {} logits",
            data.classes(),
            spec.classes()
        )));
    }
    spec.validate_against(bundle)?;
    let mut correct: u64 = 0;
    for i in 0..data.len() {
        let logits = forward_net(spec, bundle, &data.image(i))?;
        if argmax(&logits) == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Labeled image set: n samples of C×H×W f32 pixels plus integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<f32>,
    labels: Vec<u16>,
    channels: usize,
    height: usize,
    width: usize,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(
        images: Vec<f32>,
        labels: Vec<u16>,
        shape: (usize, usize, usize),
        classes: usize,
    ) -> Result<Self> {
        let (channels, height, width) = shape;
        if labels.is_empty() {
            return Err(SbsError::validation("dataset must contain at least one sample"));
        }
        if channels == 0 || height == 0 || width == 0 || classes == 0 {
            return Err(SbsError::validation(format!(
                "dataset shape {channels}×{height}×{width} and class count {classes} must be positive"
            )));
        }
        if images.len() != labels.len() * channels * height * width {
            return Err(SbsError::validation(format!(
                "pixel payload has {} entries, expected {}×{channels}×{height}×{width}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(bad) = images.iter().position(|p| !p.is_finite()) {
            return Err(SbsError::validation(format!("pixel {bad} is not finite")));
        }
        if let Some(i) = labels.iter().position(|&l| usize::from(l) >= classes) {
            return Err(SbsError::validation(format!(
                "label {} of sample {i} is outside [0, {classes})",
                labels[i]
            )));
        }
        Ok(LabeledDataset { images, labels, channels, height, width, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Copy of sample `i` as a feature map.
    pub fn image(&self, i: usize) -> FeatureMap<f32> {
        let stride = self.channels * self.height * self.width;
        let slice = &self.images[i * stride..(i + 1) * stride];
        FeatureMap::new(self.channels, self.height, self.width, slice.to_vec())
            .expect("stored shape is validated")
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }
}

pub fn encode_dataset(data: &LabeledDataset) -> Result<Vec<u8>> {
    let n = u32::try_from(data.len())
        .map_err(|_| SbsError::validation("sample count exceeds the u32 field"))?;
    let dim = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| SbsError::validation(format!("{what} exceeds the u16 field")))
    };
    let mut w = Writer::new();
    w.header(DATASET_MAGIC, VERSION);
    w.u32(n);
    w.u16(dim(data.channels, "channel count")?);
    w.u16(dim(data.height, "height")?);
    w.u16(dim(data.width, "width")?);
    w.u16(dim(data.classes, "class count")?);
    w.f32_slice(&data.images);
    for &l in &data.labels {
        w.u16(l);
    }
    Ok(w.into_bytes())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = Reader::new(bytes, "SBSD");
    r.header(DATASET_MAGIC, VERSION)?;
    let n = r.u32()? as usize;
    let channels = r.u16()? as usize;
    let height = r.u16()? as usize;
    let width = r.u16()? as usize;
    let classes = r.u16()? as usize;
    let images = r.f32_vec(n * channels * height * width)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u16()?);
    }
    r.finish()?;
    LabeledDataset::new(images, labels, (channels, height, width), classes)
}

pub fn save_dataset(data: &LabeledDataset, path: &Path) -> Result<()> {
    Ok(std::fs::write(path, encode_dataset(data)?)?)
}

pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    decode_dataset(&std::fs::read(path)?)
}

/// Seeded synthetic classification set: one soft Gaussian blob per image at
/// a random center and radius, bright in the channels congruent to the label
/// (mod `classes`) and dim elsewhere, plus mild pixel noise. Labels cycle
/// 0,1,…,classes−1 so the set is balanced.
pub fn synthetic_blobs(
    n: usize,
    shape: (usize, usize, usize),
    classes: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let (channels, height, width) = shape;
    if n == 0 || channels == 0 || height == 0 || width == 0 || classes == 0 {
        return Err(SbsError::validation(
            "blob dataset needs positive sample count, shape, and class count",
        ));
    }
    if classes > usize::from(u16::MAX) {
        return Err(SbsError::validation("class count exceeds the u16 label range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n * channels * height * width);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let cy = (0.25 + 0.5 * rng.gen::<f64>()) * (height.max(2) - 1) as f64;
        let cx = (0.25 + 0.5 * rng.gen::<f64>()) * (width.max(2) - 1) as f64;
        let sigma = (0.15 + 0.15 * rng.gen::<f64>()) * height.min(width) as f64;
        for ch in 0..channels {
            let amp = if ch % classes == label { 1.0 } else { 0.15 };
            for y in 0..height {
                for x in 0..width {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = amp * (-d2 / (2.0 * sigma * sigma)).exp() + 0.05 * noise;
                    images.push(v as f32);
                }
            }
        }
        labels.push(label as u16);
    }
    LabeledDataset::new(images, labels, shape, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weight_store::{KernelTensor, PermutationTable};
    use proptest::prelude::*;
    use rand::Rng;

    fn map_f32(c: usize, h: usize, w: usize, data: &[f32]) -> FeatureMap<f32> {
        FeatureMap::new(c, h, w, data.to_vec()).unwrap()
    }

    fn blob(values: &[f32]) -> Vec<u8> {
        values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn identity_kernel_preserves_input() {
        let input = map_f32(2, 2, 3, &[1.0, -2.0, 3.5, 0.25, 4.0, -0.5, 7.0, 8.0, 9.0, 1.5, 2.5, 3.5]);
        // 2 filters × 2 channels × 1×1; filter f copies channel f
        let kernels = [1.0, 0.0, 0.0, 1.0];
        let out = conv2d_forward(&input, &kernels, 2, 1, 1, 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_kernel_on_constant_input_sums_window() {
        let input = FeatureMap::new(1, 5, 5, vec![0.5f32; 25]).unwrap();
        let kernels = vec![1.0f32; 9];
        let out = conv2d_forward(&input, &kernels, 1, 3, 1, 0).unwrap();
        assert_eq!(out.shape(), (1, 3, 3));
        assert!(out.data().iter().all(|&v| v == 4.5));
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let input = map_f32(1, 4, 4, &(0..16).map(|i| i as f32).collect::<Vec<_>>());
        let out = conv2d_forward(&input, &vec![0.0f32; 2 * 9], 2, 3, 1, 1).unwrap();
        assert_eq!(out.shape(), (2, 4, 4));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stride_and_pad_shape_arithmetic() {
        let input = FeatureMap::<f32>::zeros(1, 5, 5).unwrap();
        let out = conv2d_forward(&input, &vec![0.0f32; 9], 1, 3, 2, 1).unwrap();
        // (5 + 2 − 3)/2 + 1 = 3
        assert_eq!(out.shape(), (1, 3, 3));
    }

    #[test]
    fn non_integer_output_size_rejected() {
        let input = FeatureMap::<f32>::zeros(1, 5, 5).unwrap();
        let err = conv2d_forward(&input, &vec![0.0f32; 4], 1, 2, 2, 0).unwrap_err();
        assert!(matches!(err, SbsError::Validation(_)));
        // kernel larger than the padded input
        let err = conv2d_forward(&input, &vec![0.0f32; 49], 1, 7, 1, 0).unwrap_err();
        assert!(matches!(err, SbsError::Validation(_)));
    }

    #[test]
    fn forward_matches_reference_bitwise_f64() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for case in 0..60 {
            let c = 1 + case % 3;
            let f = 1 + (case / 3) % 3;
            let k = if case % 2 == 0 { 1 } else { 3 };
            let stride = 1 + (case / 2) % 2;
            let pad = (case / 5) % 2;
            let oh = 1 + case % 4;
            let ow = 1 + (case / 4) % 4;
            let h = (oh - 1) * stride + k;
            let w = (ow - 1) * stride + k;
            if h <= 2 * pad || w <= 2 * pad {
                continue;
            }
            let (h, w) = (h - 2 * pad, w - 2 * pad);
            let input = FeatureMap::new(
                c,
                h,
                w,
                (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>(),
            )
            .unwrap();
            let kernels: Vec<f64> =
                (0..f * c * k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = conv2d_forward(&input, &kernels, f, k, stride, pad).unwrap();
            let slow = conv2d_reference(&input, &kernels, f, k, stride, pad).unwrap();
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert_eq!(a.to_bits(), b.to_bits(), "case {case}");
            }
        }
    }

    proptest! {
        #[test]
        fn forward_matches_reference_on_random_shapes(
            c in 1usize..4,
            f in 1usize..4,
            big_k in proptest::bool::ANY,
            stride in 1usize..3,
            pad in 0usize..2,
            oh in 1usize..5,
            ow in 1usize..5,
            seed in 0u64..1000,
        ) {
            let k = if big_k { 3 } else { 1 };
            let h = (oh - 1) * stride + k;
            let w = (ow - 1) * stride + k;
            prop_assume!(h > 2 * pad && w > 2 * pad);
            let (h, w) = (h - 2 * pad, w - 2 * pad);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let input = FeatureMap::new(
                c, h, w,
                (0..c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<f64>>(),
            ).unwrap();
            let kernels: Vec<f64> = (0..f * c * k * k).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fast = conv2d_forward(&input, &kernels, f, k, stride, pad).unwrap();
            let slow = conv2d_reference(&input, &kernels, f, k, stride, pad).unwrap();
            prop_assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    /// 1-conv 1-linear bundle over 1-channel 2×2 images, two classes.
    fn hand_net() -> (NetSpec, WeightBundle) {
        let spec = NetSpec::new(
            1,
            vec![
                LayerSpec::Conv(ConvSpec {
                    bundle_layer: 0,
                    filters: 1,
                    channels: 1,
                    k: 1,
                    stride: 1,
                    pad: 0,
                }),
                LayerSpec::Relu,
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear { inputs: 1, outputs: 2 },
            ],
        )
        .unwrap();
        let bundle = WeightBundle::new(
            vec![KernelTensor::new(1, 1, 1, 1, vec![2.0]).unwrap()],
            "hand",
            None,
            vec![blob(&[1.0, -1.0]), blob(&[0.5, 0.0])],
        )
        .unwrap();
        (spec, bundle)
    }

    #[test]
    fn hand_built_net_matches_hand_computation() {
        let (spec, bundle) = hand_net();
        // conv doubles, relu clips, pool averages (2+0+6+0)/4 = 2
        let logits = forward_net(&spec, &bundle, &map_f32(1, 2, 2, &[1.0, -2.0, 3.0, 0.0])).unwrap();
        assert_eq!(logits, vec![2.5, -2.0]);
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_logits() {
        let spec = NetSpec::tiny(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layers = vec![
            KernelTensor::new(8, 3, 3, 3, (0..8 * 3 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            KernelTensor::new(8, 8, 3, 3, (0..8 * 8 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
            KernelTensor::new(8, 8, 3, 3, (0..8 * 8 * 9).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        ];
        let head_w: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bundle =
            WeightBundle::new(layers, "t", None, vec![blob(&head_w), blob(&[0.0, 0.0])]).unwrap();
        let logits =
            forward_net(&spec, &bundle, &FeatureMap::zeros(3, 6, 6).unwrap()).unwrap();
        assert_eq!(logits, vec![0.0, 0.0]);
    }

    #[test]
    fn identical_images_give_identical_logits() {
        let (spec, bundle) = hand_net();
        let img = map_f32(1, 2, 2, &[0.3, 0.7, -0.2, 0.9]);
        let a = forward_net(&spec, &bundle, &img).unwrap();
        let b = forward_net(&spec, &bundle, &img.clone()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn binding_and_shape_mismatches_rejected() {
        // duplicate binding caught at construction
        let dup = NetSpec::new(
            1,
            vec![
                LayerSpec::Conv(ConvSpec { bundle_layer: 0, filters: 1, channels: 1, k: 1, stride: 1, pad: 0 }),
                LayerSpec::Conv(ConvSpec { bundle_layer: 0, filters: 1, channels: 1, k: 1, stride: 1, pad: 0 }),
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear { inputs: 1, outputs: 2 },
            ],
        );
        assert!(matches!(dup, Err(SbsError::Validation(_))));

        // channel chain breaks
        let chain = NetSpec::new(
            3,
            vec![
                LayerSpec::Conv(ConvSpec { bundle_layer: 0, filters: 4, channels: 2, k: 1, stride: 1, pad: 0 }),
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear { inputs: 4, outputs: 2 },
            ],
        );
        assert!(matches!(chain, Err(SbsError::Validation(_))));

        // spatial output rejected
        let spatial = NetSpec::new(
            1,
            vec![LayerSpec::Conv(ConvSpec { bundle_layer: 0, filters: 1, channels: 1, k: 1, stride: 1, pad: 0 })],
        );
        assert!(matches!(spatial, Err(SbsError::Validation(_))));

        let (spec, bundle) = hand_net();
        // bundle tensor dims disagree with the conv descriptor
        let wrong = WeightBundle::new(
            vec![KernelTensor::new(1, 1, 3, 3, vec![0.0; 9]).unwrap()],
            "w",
            None,
            bundle.residual_blobs().to_vec(),
        )
        .unwrap();
        assert!(matches!(spec.validate_against(&wrong), Err(SbsError::Validation(_))));

        // unbound extra bundle layer
        let extra = WeightBundle::new(
            vec![
                KernelTensor::new(1, 1, 1, 1, vec![2.0]).unwrap(),
                KernelTensor::new(1, 1, 1, 1, vec![1.0]).unwrap(),
            ],
            "w",
            None,
            bundle.residual_blobs().to_vec(),
        )
        .unwrap();
        assert!(matches!(spec.validate_against(&extra), Err(SbsError::Validation(_))));

        // short bias blob
        let short = WeightBundle::new(
            vec![KernelTensor::new(1, 1, 1, 1, vec![2.0]).unwrap()],
            "w",
            None,
            vec![blob(&[1.0, -1.0]), blob(&[0.5])],
        )
        .unwrap();
        assert!(matches!(spec.validate_against(&short), Err(SbsError::Validation(_))));
    }

    #[test]
    fn argmax_ties_break_to_lowest_index() {
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 2.0, 2.0]), 1);
        assert_eq!(argmax(&[-1.0, -3.0]), 0);
    }

    #[test]
    fn single_sample_accuracy_is_one_or_zero() {
        let (spec, bundle) = hand_net();
        // positive image → pooled 2.0 → logits [2.5, −2.0] → class 0
        let img = vec![1.0, 1.0, 1.0, 1.0];
        let right =
            LabeledDataset::new(img.clone(), vec![0], (1, 2, 2), 2).unwrap();
        assert_eq!(evaluate_accuracy(&spec, &bundle, &right).unwrap(), 1.0);
        let wrong = LabeledDataset::new(img, vec![1], (1, 2, 2), 2).unwrap();
        assert_eq!(evaluate_accuracy(&spec, &bundle, &wrong).unwrap(), 0.0);
    }

    #[test]
    fn chance_level_net_on_balanced_blobs() {
        // constant-logit head: every sample gets class 0, and the balanced
        // two-class set pins accuracy to one half exactly
        let spec = NetSpec::new(
            1,
            vec![
                LayerSpec::Conv(ConvSpec { bundle_layer: 0, filters: 1, channels: 1, k: 1, stride: 1, pad: 0 }),
                LayerSpec::GlobalAvgPool,
                LayerSpec::Linear { inputs: 1, outputs: 2 },
            ],
        )
        .unwrap();
        let bundle = WeightBundle::new(
            vec![KernelTensor::new(1, 1, 1, 1, vec![1.0]).unwrap()],
            "flat",
            None,
            vec![blob(&[0.0, 0.0]), blob(&[0.3, 0.1])],
        )
        .unwrap();
        let data = synthetic_blobs(1000, (1, 5, 5), 2, 99).unwrap();
        let acc = evaluate_accuracy(&spec, &bundle, &data).unwrap();
        assert!((0.45..=0.55).contains(&acc), "accuracy {acc}");
    }

    #[test]
    fn accuracy_invariant_under_permutation_roundtrip() {
        let spec = NetSpec::tiny(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let layers: Vec<KernelTensor> = [(8usize, 3usize), (8, 8), (8, 8)]
            .iter()
            .map(|&(f, c)| {
                KernelTensor::new(f, c, 3, 3, (0..f * c * 9).map(|_| rng.gen_range(-0.5..0.5)).collect())
                    .unwrap()
            })
            .collect();
        let head_w: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let head_b: Vec<f32> = (0..2).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let bundle =
            WeightBundle::new(layers, "t", None, vec![blob(&head_w), blob(&head_b)]).unwrap();

        let perms: Vec<Vec<u32>> = bundle
            .layers()
            .iter()
            .map(|t| {
                let mut p: Vec<u32> = (0..t.slot_count() as u32).collect();
                p.reverse();
                p
            })
            .collect();
        let table = PermutationTable::new(perms).unwrap();
        let roundtrip = bundle
            .apply_permutation(&table)
            .unwrap()
            .apply_permutation(&table.invert())
            .unwrap();

        let data = synthetic_blobs(40, (3, 6, 6), 2, 5).unwrap();
        let a = evaluate_accuracy(&spec, &bundle, &data).unwrap();
        let b = evaluate_accuracy(&spec, &roundtrip, &data).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_invariant_under_positive_head_scaling() {
        let spec = NetSpec::tiny(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let layers: Vec<KernelTensor> = [(8usize, 3usize), (8, 8), (8, 8)]
            .iter()
            .map(|&(f, c)| {
                KernelTensor::new(f, c, 3, 3, (0..f * c * 9).map(|_| rng.gen_range(-0.5..0.5)).collect())
                    .unwrap()
            })
            .collect();
        let head_w: Vec<f32> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let head_b: Vec<f32> = (0..2).map(|_| rng.gen_range(-0.2..0.2)).collect();
        let scaled_w: Vec<f32> = head_w.iter().map(|v| v * 3.0).collect();
        let scaled_b: Vec<f32> = head_b.iter().map(|v| v * 3.0).collect();

        let base = WeightBundle::new(layers.clone(), "t", None, vec![blob(&head_w), blob(&head_b)])
            .unwrap();
        let scaled =
            WeightBundle::new(layers, "t", None, vec![blob(&scaled_w), blob(&scaled_b)]).unwrap();

        let data = synthetic_blobs(30, (3, 6, 6), 2, 8).unwrap();
        for i in 0..data.len() {
            let img = data.image(i);
            let a = forward_net(&spec, &base, &img).unwrap();
            let b = forward_net(&spec, &scaled, &img).unwrap();
            assert_eq!(argmax(&a), argmax(&b), "sample {i}");
        }
        assert_eq!(
            evaluate_accuracy(&spec, &base, &data).unwrap(),
            evaluate_accuracy(&spec, &scaled, &data).unwrap()
        );
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let data = synthetic_blobs(7, (2, 4, 5), 3, 42).unwrap();
        let bytes = encode_dataset(&data).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(data, back);
        assert_eq!(bytes, encode_dataset(&back).unwrap());
    }

    #[test]
    fn dataset_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.sbsd");
        let data = synthetic_blobs(5, (3, 6, 6), 2, 1).unwrap();
        save_dataset(&data, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), data);
    }

    #[test]
    fn malformed_dataset_files_rejected() {
        let data = synthetic_blobs(3, (1, 2, 2), 2, 0).unwrap();
        let bytes = encode_dataset(&data).unwrap();

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_dataset(&bad_magic), Err(SbsError::Format(_))));

        assert!(matches!(
            decode_dataset(&bytes[..bytes.len() - 1]),
            Err(SbsError::Corruption(_))
        ));

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(decode_dataset(&trailing), Err(SbsError::Corruption(_))));

        // label out of range fails semantic validation
        let mut bad_label = bytes.clone();
        let last = bad_label.len() - 2;
        bad_label[last..].copy_from_slice(&9u16.to_le_bytes());
        assert!(matches!(decode_dataset(&bad_label), Err(SbsError::Validation(_))));
    }

    #[test]
    fn blob_generator_is_deterministic_balanced_and_finite() {
        let a = synthetic_blobs(10, (3, 5, 5), 2, 7).unwrap();
        let b = synthetic_blobs(10, (3, 5, 5), 2, 7).unwrap();
        assert_eq!(a, b);
        let c = synthetic_blobs(10, (3, 5, 5), 2, 8).unwrap();
        assert_ne!(a, c);
        let zeros = (0..a.len()).filter(|&i| a.label(i) == 0).count();
        assert_eq!(zeros, 5);
        assert!(a.image(0).data().iter().all(|v| v.is_finite()));
    }
}
