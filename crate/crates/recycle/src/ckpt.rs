//! `.ckpt` files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic       8 bytes  "RCYCKPT\0"
//! header_len  u64
//! header      JSON, header_len bytes
//! payload     f32 values
//! checksum    u64, CRC-64/XZ of the payload
//! ```
//!
//! The header holds the format version, step, metadata and a directory of
//! every tensor and moment with its shape and byte offset into the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use recycle_core::checkpoint::{Checkpoint, Metadata, Moments, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MAGIC: &[u8; 8] = b"RCYCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const CRC: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    /// `param`, `moment_m` or `moment_v`.
    kind: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    step: u64,
    metadata: Metadata,
    payload_bytes: u64,
    tensors: Vec<Entry>,
}

/// Serializes a validated checkpoint.
pub fn to_bytes(ck: &Checkpoint) -> recycle_core::Result<Vec<u8>> {
    ck.validate()?;
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut push = |name: &str, kind: &str, t: &Tensor, entries: &mut Vec<Entry>| {
        entries.push(Entry { name: name.to_string(), kind: kind.into(), shape: t.shape.clone(), offset: payload.len() as u64 });
        payload.reserve(t.data.len() * 4);
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    };
    for (name, t) in &ck.tensors {
        push(name, "param", t, &mut entries);
    }
    for (name, mo) in &ck.optimizer_state {
        push(name, "moment_m", &mo.m, &mut entries);
        push(name, "moment_v", &mo.v, &mut entries);
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        step: ck.step,
        metadata: ck.metadata.clone(),
        payload_bytes: payload.len() as u64,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(24 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&CRC.checksum(&payload).to_le_bytes());
    Ok(out)
}

fn read_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8 bytes"))
}

/// Parses and validates checkpoint bytes. Errors are plain messages; callers
/// attach the path.
pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Checkpoint, String> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint file (bad magic)".into());
    }
    let hlen = read_u64(&bytes[8..16]);
    let rest = bytes.len() as u64 - 16;
    if hlen > rest {
        return Err("truncated header".into());
    }
    let hend = 16 + hlen as usize;
    let header: Header = serde_json::from_slice(&bytes[16..hend]).map_err(|e| format!("bad header: {e}"))?;
    if header.format_version != FORMAT_VERSION {
        return Err(format!("unsupported format version {}", header.format_version));
    }
    let expect = hend as u64 + header.payload_bytes + 8;
    if bytes.len() as u64 != expect {
        return Err(format!("size is {} bytes, header implies {expect}", bytes.len()));
    }
    let pend = hend + header.payload_bytes as usize;
    let payload = &bytes[hend..pend];
    if CRC.checksum(payload) != read_u64(&bytes[pend..]) {
        return Err("payload checksum mismatch".into());
    }
    let mut tensors = BTreeMap::new();
    let mut ms: BTreeMap<String, (Option<Tensor>, Option<Tensor>)> = BTreeMap::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let start = usize::try_from(e.offset).map_err(|_| "offset overflow".to_string())?;
        let end = start.checked_add(n * 4).filter(|&end| end <= payload.len());
        let Some(end) = end else {
            return Err(format!("tensor {} lies outside the payload", e.name));
        };
        let data = payload[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor { shape: e.shape, data };
        let slot = match e.kind.as_str() {
            "param" => {
                if tensors.insert(e.name.clone(), t).is_some() {
                    return Err(format!("duplicate tensor {}", e.name));
                }
                continue;
            }
            "moment_m" => &mut ms.entry(e.name.clone()).or_default().0,
            "moment_v" => &mut ms.entry(e.name.clone()).or_default().1,
            other => return Err(format!("unknown tensor kind {other:?}")),
        };
        if slot.replace(t).is_some() {
            return Err(format!("duplicate moment for {}", e.name));
        }
    }
    let mut optimizer_state = BTreeMap::new();
    for (name, pair) in ms {
        match pair {
            (Some(m), Some(v)) => optimizer_state.insert(name, Moments { m, v }),
            _ => return Err(format!("incomplete moments for {name}")),
        };
    }
    let ck = Checkpoint { tensors, step: header.step, optimizer_state, metadata: header.metadata };
    ck.validate().map_err(|e| e.to_string())?;
    Ok(ck)
}

pub fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(ck)?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use recycle_core::nmt::{ModelConfig, OptimizerConfig};

    fn sample() -> Checkpoint {
        let mut tensors = BTreeMap::new();
        tensors.insert("embed.shared".into(), Tensor::new(vec![3, 2], vec![1.0, -0.0, 2.5, f32::MIN_POSITIVE, 7.0, -3.25]).unwrap());
        tensors.insert("enc.0.w".into(), Tensor::new(vec![2], vec![0.1, 0.2]).unwrap());
        let mut optimizer_state = BTreeMap::new();
        optimizer_state.insert(
            "enc.0.w".into(),
            Moments { m: Tensor::new(vec![2], vec![0.5, 0.25]).unwrap(), v: Tensor::new(vec![2], vec![1e-8, 3.0]).unwrap() },
        );
        Checkpoint {
            tensors,
            step: 42,
            optimizer_state,
            metadata: Metadata {
                vocab_hash: "abc".into(),
                vocab_size: 3,
                model: ModelConfig::default(),
                optimizer: Some(OptimizerConfig::default()),
            },
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let back = from_bytes(&to_bytes(&ck).unwrap()).unwrap();
        assert!(back.bitwise_eq(&ck));
        assert_eq!(back, ck);
        assert_eq!(back.tensors["embed.shared"].data[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        for cut in 0..bytes.len() {
            assert!(from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn flipped_payload_bit_fails_checksum() {
        let mut bytes = to_bytes(&sample()).unwrap();
        let n = bytes.len();
        bytes[n - 12] ^= 1;
        assert!(from_bytes(&bytes).unwrap_err().contains("checksum"));
    }

    #[test]
    fn unknown_version_rejected() {
        let bytes = to_bytes(&sample()).unwrap();
        let text = String::from_utf8_lossy(&bytes).replace("\"format_version\":1", "\"format_version\":9");
        assert!(from_bytes(text.as_bytes()).unwrap_err().contains("version"));
    }

    #[test]
    fn nan_refused_on_save() {
        let mut ck = sample();
        ck.tensors.get_mut("enc.0.w").unwrap().data[0] = f32::NAN;
        assert!(to_bytes(&ck).is_err());
        let mut ck = sample();
        ck.optimizer_state.get_mut("enc.0.w").unwrap().v.data[1] = f32::INFINITY;
        assert!(to_bytes(&ck).is_err());
    }
}
