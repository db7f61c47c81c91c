//! Versioned binary checkpoint container: a magic tag, a JSON metadata
//! block describing the model shape, and named little-endian f64 arrays.
//! A JSON shape manifest can be emitted alongside for inspection.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

use crate::encoder::EncoderConfig;
use crate::model::{ActorCritic, BackboneKind};
use crate::norm::ObsNormalizer;

const MAGIC: &[u8; 4] = b"GRLC";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("array `{name}` has {got} values, expected {expected}")]
    ShapeMismatch {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("missing array `{0}`")]
    MissingArray(String),
    #[error("checkpoint metadata is inconsistent: {0}")]
    BadMeta(String),
}

/// Shape description stored in the metadata block; enough to rebuild an
/// uninitialized model before filling its arrays.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub backbone: BackboneKind,
    /// Present for the gated backbone.
    pub encoder: Option<EncoderConfig>,
    /// Present for the feedforward backbone: (obs_dim, hidden_dim).
    pub feedforward: Option<(usize, usize)>,
    pub action_dim: usize,
    pub obs_dim: usize,
    /// Extra caller context (seed, task); not interpreted on load.
    #[serde(default)]
    pub note: String,
}

fn collect_arrays(model: &ActorCritic, norm: &ObsNormalizer) -> Vec<(String, Vec<f64>)> {
    let mut arrays: Vec<(String, Vec<f64>)> = model
        .arrays()
        .into_iter()
        .map(|(n, a)| (n.to_string(), a.to_vec()))
        .collect();
    for (n, a) in norm.state_arrays() {
        arrays.push((n.to_string(), a));
    }
    arrays
}

fn meta_for(model: &ActorCritic, norm: &ObsNormalizer, note: &str) -> CheckpointMeta {
    use crate::model::Backbone;
    let (encoder, feedforward) = match &model.backbone {
        Backbone::Gated(p) => (Some(p.cfg), None),
        Backbone::Feedforward(p) => (None, Some((p.l1.in_dim(), p.l1.out_dim()))),
    };
    CheckpointMeta {
        backbone: model.backbone.kind(),
        encoder,
        feedforward,
        action_dim: model.action_dim(),
        obs_dim: norm.dim(),
        note: note.to_string(),
    }
}

pub fn save<W: Write>(
    w: &mut W,
    model: &ActorCritic,
    norm: &ObsNormalizer,
    note: &str,
) -> Result<(), CheckpointError> {
    let meta = meta_for(model, norm, note);
    let meta_bytes = serde_json::to_vec(&meta)?;
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(meta_bytes.len() as u32)?;
    w.write_all(&meta_bytes)?;
    let arrays = collect_arrays(model, norm);
    w.write_u32::<LittleEndian>(arrays.len() as u32)?;
    for (name, values) in arrays {
        let nb = name.as_bytes();
        w.write_u16::<LittleEndian>(nb.len() as u16)?;
        w.write_all(nb)?;
        w.write_u64::<LittleEndian>(values.len() as u64)?;
        for v in values {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_raw<R: Read>(r: &mut R) -> Result<(CheckpointMeta, Vec<(String, Vec<f64>)>), CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let meta_len = r.read_u32::<LittleEndian>()? as usize;
    let mut meta_bytes = vec![0u8; meta_len];
    r.read_exact(&mut meta_bytes)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::BadMeta("non-utf8 array name".into()))?;
        let len = r.read_u64::<LittleEndian>()? as usize;
        let mut values = vec![0.0; len];
        for v in values.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        arrays.push((name, values));
    }
    Ok((meta, arrays))
}

pub fn load<R: Read>(r: &mut R) -> Result<(ActorCritic, ObsNormalizer, CheckpointMeta), CheckpointError> {
    let (meta, arrays) = read_raw(r)?;
    let find = |name: &str| -> Result<&Vec<f64>, CheckpointError> {
        arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    };

    let mut model = match meta.backbone {
        BackboneKind::Gated => {
            let cfg = meta
                .encoder
                .ok_or_else(|| CheckpointError::BadMeta("gated backbone without encoder dims".into()))?;
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let mut m = ActorCritic::init_gated(cfg, meta.action_dim, 1.0, &mut rng);
            m.backbone = m.backbone.zeros_like();
            m
        }
        BackboneKind::Feedforward => {
            let (obs_dim, hidden) = meta.feedforward.ok_or_else(|| {
                CheckpointError::BadMeta("feedforward backbone without dims".into())
            })?;
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            ActorCritic::init_feedforward(obs_dim, hidden, meta.action_dim, 1.0, &mut rng)
        }
    };
    for (name, slot) in model.arrays_mut() {
        let values = find(name)?;
        if values.len() != slot.len() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: slot.len(),
                got: values.len(),
            });
        }
        slot.copy_from_slice(values);
    }

    let count_arr = find("norm.count")?;
    let mean = find("norm.mean")?.clone();
    let m2 = find("norm.m2")?.clone();
    if count_arr.len() != 1 || mean.len() != meta.obs_dim || m2.len() != meta.obs_dim {
        return Err(CheckpointError::BadMeta("normalizer arrays disagree with obs_dim".into()));
    }
    let norm = ObsNormalizer::from_state(count_arr[0], mean, m2);
    Ok((model, norm, meta))
}

/// JSON shape manifest for a saved model: the metadata plus every array
/// name and length.
pub fn shape_manifest(model: &ActorCritic, norm: &ObsNormalizer, note: &str) -> serde_json::Value {
    let arrays: Vec<serde_json::Value> = collect_arrays(model, norm)
        .iter()
        .map(|(n, a)| serde_json::json!({ "name": n, "len": a.len() }))
        .collect();
    serde_json::json!({
        "format_version": FORMAT_VERSION,
        "meta": meta_for(model, norm, note),
        "arrays": arrays,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_pair(seed: u64) -> (ActorCritic, ObsNormalizer) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = EncoderConfig {
            robot_dim: 7,
            ext_dim: 3,
            token_dim: 5,
            hidden_dim: 9,
        };
        let model = ActorCritic::init_gated(cfg, 4, 0.3, &mut rng);
        let mut norm = ObsNormalizer::new(10);
        for _ in 0..50 {
            let obs: Vec<f64> = (0..10).map(|_| rand::Rng::gen_range(&mut rng, -2.0..2.0)).collect();
            norm.update(&obs);
        }
        (model, norm)
    }

    #[test]
    fn roundtrip_gated() {
        let (model, norm) = sample_pair(1);
        let mut buf = Vec::new();
        save(&mut buf, &model, &norm, "unit").unwrap();
        let (back, norm_back, meta) = load(&mut buf.as_slice()).unwrap();
        assert_eq!(model, back);
        assert_eq!(meta.backbone, BackboneKind::Gated);
        assert_eq!(meta.note, "unit");
        // loaded normalizer reproduces the same outputs and is frozen
        let mut a = Vec::new();
        let mut b = Vec::new();
        norm.normalize(&vec![0.3; 10], &mut a);
        norm_back.normalize(&vec![0.3; 10], &mut b);
        assert_eq!(a, b);
        assert!(!norm_back.updating);
    }

    #[test]
    fn roundtrip_feedforward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ActorCritic::init_feedforward(10, 16, 4, 0.3, &mut rng);
        let norm = ObsNormalizer::new(10);
        let mut buf = Vec::new();
        save(&mut buf, &model, &norm, "").unwrap();
        let (back, _, meta) = load(&mut buf.as_slice()).unwrap();
        assert_eq!(model, back);
        assert_eq!(meta.feedforward, Some((10, 16)));
    }

    #[test]
    fn save_is_deterministic() {
        let (model, norm) = sample_pair(3);
        let mut a = Vec::new();
        let mut b = Vec::new();
        save(&mut a, &model, &norm, "x").unwrap();
        save(&mut b, &model, &norm, "x").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let (model, norm) = sample_pair(4);
        let mut buf = Vec::new();
        save(&mut buf, &model, &norm, "").unwrap();
        let mut corrupted = buf.clone();
        corrupted[0] = b'X';
        assert!(matches!(load(&mut corrupted.as_slice()), Err(CheckpointError::BadMagic)));
        let mut versioned = buf.clone();
        versioned[4] = 99;
        assert!(matches!(
            load(&mut versioned.as_slice()),
            Err(CheckpointError::UnsupportedVersion(_))
        ));
    }

    #[test]
    fn detects_truncation() {
        let (model, norm) = sample_pair(5);
        let mut buf = Vec::new();
        save(&mut buf, &model, &norm, "").unwrap();
        buf.truncate(buf.len() - 9);
        assert!(load(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn manifest_covers_all_arrays() {
        let (model, norm) = sample_pair(6);
        let manifest = shape_manifest(&model, &norm, "m");
        let names: Vec<String> = manifest["arrays"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["name"].as_str().unwrap().to_string())
            .collect();
        for expected in ["enc.proj.w", "pi.log_std", "vf.w", "norm.mean", "norm.count"] {
            assert!(names.contains(&expected.to_string()), "missing {expected}");
        }
        assert_eq!(manifest["format_version"], FORMAT_VERSION);
    }
}
