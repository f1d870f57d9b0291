//! Container for a CNN's convolutional kernels plus coordinate indexing,
//! per-layer slot permutations, and the bit-exact on-disk formats.
//!
//! Within a layer of shape `F × C × kh × kw`, the (filter, channel) pair is
//! flattened to the slot index `s = f·C + c`; that linearization is the one
//! canonical traversal everywhere in this crate. Permutations act on those
//! slots and never cross layer boundaries. Non-kernel parameters (biases,
//! fully-connected weights, ...) are carried as opaque residual blobs and are
//! never touched by any transformation.

mod io;

use crate::error::{Result, SbsError};

/// One convolutional layer's kernels: `filters × channels` square kernels of
/// side 1 or 3, stored row-major (filter-major, then channel, then rows).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTensor {
    filters: usize,
    channels: usize,
    kh: usize,
    kw: usize,
    data: Vec<f32>,
}

impl KernelTensor {
    pub fn new(filters: usize, channels: usize, kh: usize, kw: usize, data: Vec<f32>) -> Result<Self> {
        if filters == 0 || channels == 0 {
            return Err(SbsError::validation(format!(
                "layer must have at least one filter and one channel, got {filters}×{channels}"
            )));
        }
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(SbsError::validation(format!(
                "kernels must be square with side 1 or 3, got {kh}×{kw}"
            )));
        }
        let expect = filters * channels * kh * kw;
        if data.len() != expect {
            return Err(SbsError::validation(format!(
                "kernel payload has {} entries, expected {expect}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(SbsError::validation(format!(
                "non-finite kernel entry at flat index {idx}"
            )));
        }
        Ok(KernelTensor { filters, channels, kh, kw, data })
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn kh(&self) -> usize {
        self.kh
    }

    pub fn kw(&self) -> usize {
        self.kw
    }

    /// Entries in one kernel (`kh·kw`).
    pub fn kernel_len(&self) -> usize {
        self.kh * self.kw
    }

    /// Number of (filter, channel) slots (`F·C`).
    pub fn slot_count(&self) -> usize {
        self.filters * self.channels
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Kernel at flattened slot `s = f·C + c`, as a row-major `kh·kw` slice.
    pub fn slot(&self, s: usize) -> &[f32] {
        let k = self.kernel_len();
        &self.data[s * k..(s + 1) * k]
    }

    pub fn kernel(&self, filter: usize, channel: usize) -> &[f32] {
        self.slot(filter * self.channels + channel)
    }
}

/// Identifies one kernel: (layer, filter, channel).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KernelCoord {
    pub layer: usize,
    pub filter: usize,
    pub channel: usize,
}

impl KernelCoord {
    pub fn new(layer: usize, filter: usize, channel: usize) -> Self {
        KernelCoord { layer, filter, channel }
    }
}

/// Ordered set of kernel layers plus pass-through payloads.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    layers: Vec<KernelTensor>,
    model_name: String,
    source_accuracy: Option<f32>,
    residual_blobs: Vec<Vec<u8>>,
}

impl WeightBundle {
    pub fn new(
        layers: Vec<KernelTensor>,
        model_name: impl Into<String>,
        source_accuracy: Option<f32>,
        residual_blobs: Vec<Vec<u8>>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(SbsError::validation("bundle must contain at least one layer"));
        }
        if let Some(acc) = source_accuracy {
            if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
                return Err(SbsError::validation(format!(
                    "source accuracy must be a fraction in [0, 1], got {acc}"
                )));
            }
        }
        Ok(WeightBundle {
            layers,
            model_name: model_name.into(),
            source_accuracy,
            residual_blobs,
        })
    }

    pub fn layers(&self) -> &[KernelTensor] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &KernelTensor {
        &self.layers[l]
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn source_accuracy(&self) -> Option<f32> {
        self.source_accuracy
    }

    pub fn residual_blobs(&self) -> &[Vec<u8>] {
        &self.residual_blobs
    }

    /// Total kernel entries across all layers (Σ F·C·kh·kw).
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(KernelTensor::param_count).sum()
    }

    fn check_coord(&self, coord: KernelCoord) -> Result<&KernelTensor> {
        let layer = self.layers.get(coord.layer).ok_or_else(|| {
            SbsError::Index(format!(
                "layer {} out of range (bundle has {})",
                coord.layer,
                self.layers.len()
            ))
        })?;
        if coord.filter >= layer.filters() || coord.channel >= layer.channels() {
            return Err(SbsError::Index(format!(
                "slot ({}, {}) out of range for layer {} of shape {}×{}",
                coord.filter,
                coord.channel,
                coord.layer,
                layer.filters(),
                layer.channels()
            )));
        }
        Ok(layer)
    }

    /// Borrowed row-major `kh·kw` view of one kernel.
    pub fn kernel_at(&self, coord: KernelCoord) -> Result<&[f32]> {
        let layer = self.check_coord(coord)?;
        Ok(layer.kernel(coord.filter, coord.channel))
    }

    /// All coordinates, layer-major then filter-major then channel order.
    pub fn coordinate_grid(&self) -> Vec<KernelCoord> {
        let mut out = Vec::with_capacity(self.layers.iter().map(KernelTensor::slot_count).sum());
        for (l, layer) in self.layers.iter().enumerate() {
            for f in 0..layer.filters() {
                for c in 0..layer.channels() {
                    out.push(KernelCoord::new(l, f, c));
                }
            }
        }
        out
    }

    /// Rebuilds the bundle with each layer's slots rearranged: output slot `i`
    /// holds the input's slot `inv[i]`, i.e. the table's `perm` maps old slot
    /// positions to new ones.
    pub fn apply_permutation(&self, table: &PermutationTable) -> Result<WeightBundle> {
        if table.layer_count() != self.layers.len() {
            return Err(SbsError::validation(format!(
                "permutation table has {} layers, bundle has {}",
                table.layer_count(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let inv = table.inv(l);
            if inv.len() != layer.slot_count() {
                return Err(SbsError::validation(format!(
                    "layer {l}: table covers {} slots, layer has {}",
                    inv.len(),
                    layer.slot_count()
                )));
            }
            let k = layer.kernel_len();
            let mut data = Vec::with_capacity(layer.param_count());
            for &src in inv {
                data.extend_from_slice(layer.slot(src as usize));
            }
            debug_assert_eq!(data.len(), layer.param_count());
            let _ = k;
            layers.push(KernelTensor::new(
                layer.filters(),
                layer.channels(),
                layer.kh(),
                layer.kw(),
                data,
            )?);
        }
        WeightBundle::new(
            layers,
            self.model_name.clone(),
            self.source_accuracy,
            self.residual_blobs.clone(),
        )
    }
}

/// Per-layer bijections over flattened (f, c) slots. `perm[i]` is the slot the
/// input's slot `i` moves to; `inv` is the precomputed inverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationTable {
    perms: Vec<Vec<u32>>,
    invs: Vec<Vec<u32>>,
}

impl PermutationTable {
    pub fn new(perms: Vec<Vec<u32>>) -> Result<Self> {
        let mut invs = Vec::with_capacity(perms.len());
        for (l, perm) in perms.iter().enumerate() {
            invs.push(invert_one(perm).map_err(|e| {
                SbsError::validation(format!("layer {l}: {e}"))
            })?);
        }
        Ok(PermutationTable { perms, invs })
    }

    /// Identity table matching the bundle's layer slot counts.
    pub fn identity_for(bundle: &WeightBundle) -> Self {
        let perms = bundle
            .layers()
            .iter()
            .map(|layer| (0..layer.slot_count() as u32).collect())
            .collect();
        PermutationTable::new(perms).expect("identity is a bijection")
    }

    pub fn layer_count(&self) -> usize {
        self.perms.len()
    }

    pub fn perm(&self, l: usize) -> &[u32] {
        &self.perms[l]
    }

    pub fn inv(&self, l: usize) -> &[u32] {
        &self.invs[l]
    }

    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &v)| v as usize == i))
    }

    /// Swaps the roles of `perm` and `inv`.
    pub fn invert(&self) -> PermutationTable {
        PermutationTable {
            perms: self.invs.clone(),
            invs: self.perms.clone(),
        }
    }
}

fn invert_one(perm: &[u32]) -> std::result::Result<Vec<u32>, String> {
    let n = perm.len();
    let mut inv = vec![u32::MAX; n];
    for (i, &p) in perm.iter().enumerate() {
        let p = p as usize;
        if p >= n {
            return Err(format!("index {p} out of range for {n} slots"));
        }
        if inv[p] != u32::MAX {
            return Err(format!("slot {p} targeted twice; not a bijection"));
        }
        inv[p] = i as u32;
    }
    Ok(inv)
}

pub use io::{
    decode_bundle, decode_table, encode_bundle, encode_table, load_bundle, load_table,
    save_bundle, save_table,
};
