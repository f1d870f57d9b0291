//! Model checkpoint codec ("SBSM", version 1), all integers little-endian:
//!   magic `SBSM`, u16 version,
//!   u16 width_count, u32 × widths,
//!   encoder block (tag byte + scalars + frequency matrix, see encoders),
//!   parameter payload f32 (length fixed by the widths),
//!   u8 optimizer flag; if set: u64 step, f32 lr/β₁/β₂/ε, then first and
//!     second moments (param_count f32 each),
//!   u64 training seed,
//!   u16 layer count, per layer f32 mean + f32 scale (target normalization),
//!   u8 table flag; if set: u32 byte length + embedded permutation-table file.
//!
//! The checkpoint is self-contained: reconstruction needs nothing besides it
//! and the bundle that supplies shapes and pass-through blobs.

use std::fs;
use std::path::Path;

use crate::bytesio::{Reader, Writer};
use crate::encoders::Encoder;
use crate::error::{Result, SbsError};
use crate::inr_core::{AdamHyper, AdamState, InrModel};
use crate::trainer::{LayerNorm, TrainedModel};
use crate::weight_store::{decode_table, encode_table};

const MAGIC: &[u8; 4] = b"SBSM";
const VERSION: u16 = 1;

pub fn encode_model(trained: &TrainedModel) -> Vec<u8> {
    let mut w = Writer::new();
    w.header(MAGIC, VERSION);
    let widths = trained.model.widths();
    w.u16(widths.len() as u16);
    for &width in widths {
        w.u32(width as u32);
    }
    trained.encoder.write_to(&mut w);
    w.f32_slice(&trained.model.params());
    match &trained.adam {
        Some(state) => {
            w.u8(1);
            w.u64(state.step());
            let h = state.hyper;
            w.f32(h.lr);
            w.f32(h.beta1);
            w.f32(h.beta2);
            w.f32(h.eps);
            let (m, v) = state.moments();
            w.f32_slice(m);
            w.f32_slice(v);
        }
        None => w.u8(0),
    }
    w.u64(trained.model.seed());
    w.u16(trained.norms.len() as u16);
    for norm in &trained.norms {
        w.f32(norm.mean);
        w.f32(norm.scale);
    }
    match &trained.table {
        Some(table) => {
            w.u8(1);
            let bytes = encode_table(table);
            w.u32(bytes.len() as u32);
            w.bytes(&bytes);
        }
        None => w.u8(0),
    }
    w.into_bytes()
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let mut r = Reader::new(bytes, "SBSM");
    r.header(MAGIC, VERSION)?;
    let width_count = r.u16()? as usize;
    let mut widths = Vec::with_capacity(width_count);
    for _ in 0..width_count {
        widths.push(r.u32()? as usize);
    }
    let encoder = Encoder::read_from(&mut r)?;
    let param_count: usize = widths
        .windows(2)
        .map(|p| p[1] * p[0] + p[1])
        .sum();
    let params = r.f32_vec(param_count)?;
    let adam_raw = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let hyper = AdamHyper {
                lr: r.f32()?,
                beta1: r.f32()?,
                beta2: r.f32()?,
                eps: r.f32()?,
            };
            let m = r.f32_vec(param_count)?;
            let v = r.f32_vec(param_count)?;
            Some(AdamState::from_parts(m, v, step, hyper)?)
        }
        flag => {
            return Err(SbsError::corruption(format!(
                "SBSM optimizer flag must be 0 or 1, got {flag}"
            )))
        }
    };
    let seed = r.u64()?;
    let norm_count = r.u16()? as usize;
    let mut norms = Vec::with_capacity(norm_count);
    for _ in 0..norm_count {
        norms.push(LayerNorm { mean: r.f32()?, scale: r.f32()? });
    }
    let table = match r.u8()? {
        0 => None,
        1 => {
            let len = r.u32()? as usize;
            Some(decode_table(r.take(len)?)?)
        }
        flag => {
            return Err(SbsError::corruption(format!(
                "SBSM table flag must be 0 or 1, got {flag}"
            )))
        }
    };
    r.finish()?;
    let model = InrModel::from_parts(&widths, seed, &params)?;
    if encoder.out_dim(3) != model.in_dim() {
        return Err(SbsError::validation(format!(
            "checkpoint encoder emits {} features, model takes {}",
            encoder.out_dim(3),
            model.in_dim()
        )));
    }
    Ok(TrainedModel { model, encoder, norms, table, adam: adam_raw })
}

pub fn save_model(trained: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_model(trained))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{PeConfig, SigmaSchedule};
    use crate::trainer::{train, EncoderChoice, TrainConfig};
    use crate::weight_store::{KernelTensor, PermutationTable, WeightBundle};

    fn trained_pair() -> (WeightBundle, TrainedModel) {
        let layers = vec![
            KernelTensor::new(2, 2, 3, 3, (0..36).map(|i| (i as f32).sin()).collect()).unwrap(),
            KernelTensor::new(2, 2, 3, 3, (0..36).map(|i| (i as f32).cos()).collect()).unwrap(),
        ];
        let bundle = WeightBundle::new(layers, "ckpt", Some(0.9), vec![vec![7]]).unwrap();
        let mut perm: Vec<u32> = (0..4).collect();
        perm.swap(0, 3);
        let table = PermutationTable::new(vec![perm.clone(), perm]).unwrap();
        let cfg = TrainConfig {
            steps: 30,
            batch: 8,
            hidden: 8,
            ..TrainConfig::defaults(EncoderChoice::Rff {
                features: 8,
                schedule: SigmaSchedule::global_fixed(20.0).unwrap(),
                seed: 5,
            })
        };
        let (trained, _) = train(&bundle, &table, &cfg).unwrap();
        (bundle, trained)
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let (_, trained) = trained_pair();
        let bytes = encode_model(&trained);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back), bytes);
        assert_eq!(back.model.params(), trained.model.params());
        assert_eq!(back.encoder, trained.encoder);
        assert_eq!(back.norms, trained.norms);
        assert_eq!(back.table, trained.table);
        assert_eq!(back.adam, trained.adam);
    }

    #[test]
    fn roundtrip_through_file() {
        let (bundle, trained) = trained_pair();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.sbsm");
        save_model(&trained, &path).unwrap();
        let back = load_model(&path).unwrap();
        // reconstructions from the original and the reloaded model agree
        let a = trained.reconstruct(&bundle).unwrap();
        let b = back.reconstruct(&bundle).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn pe_without_optimizer_or_table() {
        let (_, mut trained) = trained_pair();
        trained.adam = None;
        trained.table = None;
        // swap in a PE encoder-compatible model
        let pe = Encoder::Pe(PeConfig::default());
        let model = InrModel::from_parts(
            &[pe.out_dim(3), 4, 4, 4, 4, 9],
            1,
            &vec![0.25; {
                let w = [pe.out_dim(3), 4, 4, 4, 4, 9];
                w.windows(2).map(|p| p[1] * p[0] + p[1]).sum::<usize>()
            }],
        )
        .unwrap();
        trained.model = model;
        trained.encoder = pe;
        let bytes = encode_model(&trained);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back), bytes);
        assert!(back.adam.is_none() && back.table.is_none());
    }

    #[test]
    fn malformed_files_rejected() {
        let (_, trained) = trained_pair();
        let bytes = encode_model(&trained);

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'Z';
        assert!(matches!(decode_model(&bad_magic), Err(SbsError::Format(_))));

        let mut bad_version = bytes.clone();
        bad_version[4] = 3;
        assert!(matches!(decode_model(&bad_version), Err(SbsError::Format(_))));

        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 2]),
            Err(SbsError::Corruption(_))
        ));

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0, 0]);
        assert!(matches!(decode_model(&trailing), Err(SbsError::Corruption(_))));
    }

    #[test]
    fn encoder_model_width_mismatch_rejected() {
        // model whose input width disagrees with the encoder output; the file
        // itself is self-consistent, so parsing succeeds and the semantic
        // check has to catch it
        let widths = [5, 4, 4, 4, 4, 9];
        let count: usize = widths.windows(2).map(|p| p[1] * p[0] + p[1]).sum();
        let trained = TrainedModel {
            model: InrModel::from_parts(&widths, 0, &vec![0.0; count]).unwrap(),
            encoder: Encoder::Pe(PeConfig::default()),
            norms: vec![],
            table: None,
            adam: None,
        };
        let bytes = encode_model(&trained);
        assert!(matches!(decode_model(&bytes), Err(SbsError::Validation(_))));
    }
}
