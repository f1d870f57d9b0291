//! On-disk codecs for weight bundles and permutation tables.
//!
//! Bundle file ("SBSW", version 1), all integers little-endian:
//!   magic `SBSW`, u16 version, u16 layer_count,
//!   per layer: u16 F, u16 C, u8 kh, u8 kw, then F·C·kh·kw row-major f32,
//!   u32 blob_count, per blob: u32 length + raw bytes,
//!   u16 name_length + UTF-8 model name, u8 accuracy flag, f32 accuracy if set.
//!
//! Table file ("SBSP", version 1):
//!   magic `SBSP`, u16 version, u16 layer_count,
//!   per layer: u32 slot_count then slot_count u32 forward indices.
//! Only the forward permutation is stored; the inverse is recomputed on load.

use std::fs;
use std::path::Path;

use super::{KernelTensor, PermutationTable, WeightBundle};
use crate::bytesio::{Reader, Writer};
use crate::error::{Result, SbsError};

const BUNDLE_MAGIC: &[u8; 4] = b"SBSW";
const TABLE_MAGIC: &[u8; 4] = b"SBSP";
const VERSION: u16 = 1;

pub fn encode_bundle(bundle: &WeightBundle) -> Vec<u8> {
    let mut w = Writer::new();
    w.header(BUNDLE_MAGIC, VERSION);
    w.u16(bundle.layer_count() as u16);
    for layer in bundle.layers() {
        w.u16(layer.filters() as u16);
        w.u16(layer.channels() as u16);
        w.u8(layer.kh() as u8);
        w.u8(layer.kw() as u8);
        w.f32_slice(layer.data());
    }
    w.u32(bundle.residual_blobs().len() as u32);
    for blob in bundle.residual_blobs() {
        w.u32(blob.len() as u32);
        w.bytes(blob);
    }
    let name = bundle.model_name().as_bytes();
    w.u16(name.len() as u16);
    w.bytes(name);
    match bundle.source_accuracy() {
        Some(acc) => {
            w.u8(1);
            w.f32(acc);
        }
        None => w.u8(0),
    }
    w.into_bytes()
}

pub fn decode_bundle(bytes: &[u8]) -> Result<WeightBundle> {
    let mut r = Reader::new(bytes, "SBSW");
    r.header(BUNDLE_MAGIC, VERSION)?;
    let layer_count = r.u16()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let filters = r.u16()? as usize;
        let channels = r.u16()? as usize;
        let kh = r.u8()? as usize;
        let kw = r.u8()? as usize;
        let data = r.f32_vec(filters.saturating_mul(channels).saturating_mul(kh).saturating_mul(kw))?;
        layers.push(KernelTensor::new(filters, channels, kh, kw, data)?);
    }
    let blob_count = r.u32()? as usize;
    let mut blobs = Vec::with_capacity(blob_count);
    for _ in 0..blob_count {
        let len = r.u32()? as usize;
        blobs.push(r.take(len)?.to_vec());
    }
    let name_len = r.u16()? as usize;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| SbsError::corruption("SBSW model name is not valid UTF-8"))?;
    let accuracy = match r.u8()? {
        0 => None,
        1 => Some(r.f32()?),
        flag => {
            return Err(SbsError::corruption(format!(
                "SBSW accuracy flag must be 0 or 1, got {flag}"
            )))
        }
    };
    r.finish()?;
    WeightBundle::new(layers, name, accuracy, blobs)
}

pub fn save_bundle(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bundle(bundle))?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<WeightBundle> {
    decode_bundle(&fs::read(path)?)
}

pub fn encode_table(table: &PermutationTable) -> Vec<u8> {
    let mut w = Writer::new();
    w.header(TABLE_MAGIC, VERSION);
    w.u16(table.layer_count() as u16);
    for l in 0..table.layer_count() {
        let perm = table.perm(l);
        w.u32(perm.len() as u32);
        w.u32_slice(perm);
    }
    w.into_bytes()
}

pub fn decode_table(bytes: &[u8]) -> Result<PermutationTable> {
    let mut r = Reader::new(bytes, "SBSP");
    r.header(TABLE_MAGIC, VERSION)?;
    let layer_count = r.u16()? as usize;
    let mut perms = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let slots = r.u32()? as usize;
        perms.push(r.u32_vec(slots)?);
    }
    r.finish()?;
    PermutationTable::new(perms)
}

pub fn save_table(table: &PermutationTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_table(table))?;
    Ok(())
}

pub fn load_table(path: impl AsRef<Path>) -> Result<PermutationTable> {
    decode_table(&fs::read(path)?)
}
