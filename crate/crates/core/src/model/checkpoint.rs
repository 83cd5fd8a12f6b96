//! Binary checkpoint format.
//!
//! ```text
//! "USFM" | version: u16 LE | header_len: u32 LE | header (UTF-8 JSON) | payload
//! ```
//!
//! The header holds the [`ModelConfig`], which optional components are
//! present, an ordered parameter directory (name, shape, byte offset into the
//! payload) and free-form string metadata. The payload is the concatenation of
//! every parameter as little-endian `f32`, in directory order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::vit::VitMae;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"USFM";
pub const VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub has_decoder: bool,
    pub has_head: bool,
    pub params: Vec<ParamEntry>,
    /// Provenance: producing command, seed, run configuration.
    pub meta: BTreeMap<String, String>,
}

pub fn to_bytes(model: &VitMae, meta: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let params = model
        .params()
        .iter()
        .map(|p| {
            let e = ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset,
            };
            offset += 4 * p.value.numel() as u64;
            e
        })
        .collect();
    let header = CheckpointHeader {
        config: model.config().clone(),
        has_decoder: model.decoder.is_some(),
        has_head: model.head.is_some(),
        params,
        meta: meta.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;

    let mut out = Vec::with_capacity(10 + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<(VitMae, CheckpointHeader)> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 10 || &bytes[..4] != MAGIC {
        return Err(bad("missing USFM magic"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let json = bytes
        .get(10..10 + header_len)
        .ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let payload = &bytes[10 + header_len..];

    let mut model = VitMae::zeros(&header.config, header.has_decoder, header.has_head)?;
    let mut slots = model.params_mut();
    if slots.len() != header.params.len() {
        return Err(Error::Checkpoint(format!(
            "directory lists {} parameters, configuration implies {}",
            header.params.len(),
            slots.len()
        )));
    }
    let mut expected_offset = 0u64;
    for (slot, entry) in slots.iter_mut().zip(&header.params) {
        if slot.name != entry.name || slot.value.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {} {:?} does not match expected {} {:?}",
                entry.name,
                entry.shape,
                slot.name,
                slot.value.shape()
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!("bad offset for {}", entry.name)));
        }
        let n = slot.value.numel();
        let start = entry.offset as usize;
        let raw = payload
            .get(start..start + 4 * n)
            .ok_or_else(|| Error::Checkpoint(format!("truncated payload at {}", entry.name)))?;
        for (dst, chunk) in slot.value.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        expected_offset += 4 * n as u64;
    }
    if payload.len() as u64 != expected_offset {
        return Err(bad("trailing bytes after payload"));
    }
    Ok((model, header))
}

pub fn save(path: &Path, model: &VitMae, meta: &BTreeMap<String, String>) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(VitMae, CheckpointHeader)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> VitMae {
        let mut c = ModelConfig::with_encoder(16, 1, 2);
        c.image_size = 32;
        init_parameters(&c, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = model();
        let meta = BTreeMap::from([("seed".to_string(), "4".to_string())]);
        let bytes = to_bytes(&m, &meta).unwrap();
        assert_eq!(&bytes[..4], b"USFM");
        let (back, header) = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.meta, meta);
        assert_eq!(to_bytes(&back, &meta).unwrap(), bytes);
    }

    #[test]
    fn components_survive_round_trip() {
        let mut m = model();
        m.drop_decoder();
        let bytes = to_bytes(&m, &BTreeMap::new()).unwrap();
        let (back, header) = from_bytes(&bytes).unwrap();
        assert!(!header.has_decoder && header.has_head);
        assert!(back.decoder.is_none());
        assert_eq!(back, m);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = to_bytes(&model(), &BTreeMap::new()).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(from_bytes(&magic).is_err());
        let mut version = bytes;
        version[4] = 9;
        assert!(from_bytes(&version).is_err());
    }
}
