//! Checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "ECGFCKPT"
//! 8       4     format version, u32 LE
//! 12      8     header length H, u64 LE
//! 20      4     CRC32 of the header bytes, u32 LE
//! 24      H     UTF-8 JSON header
//! 24+H    P     payload: every tensor as f32 LE, in directory order
//! ```
//!
//! The header holds the network spec, method state, training metadata, the
//! tensor directory (name, shape, byte offset into the payload, element
//! count), the payload length and the payload CRC32.

use std::fs;
use std::path::Path;

use ecgfilter_core::nn::{Checkpoint, NamedTensor, NetworkSpec, TrainingMeta};
use ecgfilter_core::uad::MethodState;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"ECGFCKPT";
pub const FILE_VERSION: u32 = 1;
const PREAMBLE: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    method: MethodState,
    training_meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
    payload_crc32: u32,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut payload = Vec::with_capacity(ckpt.param_count() * 4);
    let mut tensors = Vec::with_capacity(ckpt.tensors.len());
    for t in &ckpt.tensors {
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset: payload.len() as u64,
            len: t.data.len(),
        });
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = Header {
        spec: ckpt.spec.clone(),
        method: ckpt.method.clone(),
        training_meta: ckpt.training_meta.clone(),
        tensors,
        payload_bytes: payload.len() as u64,
        payload_crc32: crc32fast::hash(&payload),
    };
    let h = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(PREAMBLE + h.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&h).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |message: &str| AppError::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FILE_VERSION {
        return Err(AppError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: FILE_VERSION,
        });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let hcrc = u32::from_le_bytes(bytes[20..24].try_into().unwrap());
    let hend = PREAMBLE.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("header runs past end of file"))?;
    let hbytes = &bytes[PREAMBLE..hend];
    if crc32fast::hash(hbytes) != hcrc {
        return Err(corrupt("header checksum mismatch"));
    }
    let header: Header = serde_json::from_slice(hbytes).map_err(|e| corrupt(&format!("header: {e}")))?;
    let payload = &bytes[hend..];
    if payload.len() as u64 != header.payload_bytes {
        return Err(AppError::Truncated {
            path: path.to_path_buf(),
            expected: header.payload_bytes,
            actual: payload.len() as u64,
            detail: "checkpoint payload".into(),
        });
    }
    if crc32fast::hash(payload) != header.payload_crc32 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let start = t.offset as usize;
        let end = start + t.len * 4;
        if end > payload.len() {
            return Err(corrupt(&format!("tensor {} lies outside the payload", t.name)));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(NamedTensor {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    let ckpt = Checkpoint {
        spec: header.spec,
        tensors,
        training_meta: header.training_meta,
        method: header.method,
    };
    ckpt.validate().map_err(|e| corrupt(&e.to_string()))?;
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    crate::ledger::write_atomic(path, &encode(ckpt))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(AppError::io(path))?;
    decode(&bytes, path)
}

/// Short content hash identifying a checkpoint in score ledgers.
pub fn checkpoint_id(ckpt: &Checkpoint) -> String {
    let digest = Sha256::digest(encode(ckpt));
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ecgfilter_core::nn::{Activation, Architecture, ConvStage, TrainConfig};
    use ecgfilter_core::uad::{train_detector, DetectorConfig};

    fn tiny() -> Checkpoint {
        let spec = NetworkSpec {
            in_channels: 1,
            length: 32,
            use_bias: false,
            activation: Activation::LeakyRelu,
            arch: Architecture::Resnet1dEncoder {
                stem: ConvStage::new(4, 3, 2),
                blocks: vec![ConvStage::new(4, 3, 1)],
                latent_dim: 3,
            },
        };
        let data: Vec<Vec<f64>> = (0..8).map(|k| (0..32).map(|i| ((i * k) as f64 * 0.1).sin()).collect()).collect();
        let refs: Vec<&[f64]> = data.iter().map(Vec::as_slice).collect();
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 4,
            ..TrainConfig::default()
        };
        train_detector(&DetectorConfig::DeepSvdd { spec, epsilon: 0.1 }, &refs, &refs, &tc).unwrap().0
    }

    #[test]
    fn round_trip_is_exact() {
        let c = tiny();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("f.ckpt");
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        assert_eq!(encode(&back), encode(&c));
    }

    #[test]
    fn flipped_payload_byte_is_corruption() {
        let c = tiny();
        let mut b = encode(&c);
        let last = b.len() - 3;
        b[last] ^= 0x40;
        assert!(matches!(decode(&b, Path::new("x")), Err(AppError::Corrupt { message, .. }) if message.contains("payload")));
        let mut b = encode(&c);
        b[30] ^= 0x01;
        assert!(matches!(decode(&b, Path::new("x")), Err(AppError::Corrupt { .. })));
    }

    #[test]
    fn unknown_version_is_explicit() {
        let mut b = encode(&tiny());
        b[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            decode(&b, Path::new("x")),
            Err(AppError::UnsupportedVersion { found: 9, supported: 1, .. })
        ));
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let b = encode(&tiny());
        let e = decode(&b[..b.len() - 8], Path::new("x")).unwrap_err();
        assert!(matches!(e, AppError::Truncated { .. }), "{e}");
    }
}
