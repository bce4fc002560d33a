//! Binary file formats.
//!
//! Tensor file (`sample --out`), little-endian throughout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MATE"
//! 4       2     format version (1)
//! 6       2     rank (4)
//! 8       8     dims T, H, W, d as u16
//! 16      8·N   f64 values, token-major in (t, y, x) storage order
//! ```
//!
//! Checkpoint file (`train-toy --checkpoint`):
//!
//! ```text
//! 0       8     magic "MATECKPT"
//! 8       4     format version (1)
//! 12      4     byte length L of the embedded run.toml
//! 16      L     run.toml (UTF-8)
//! 16+L    8     parameter count P (u64)
//! 24+L    8·P   f64 parameters in visit order
//! ```

use std::path::Path;

use mate_core::mate::{DenoiserWeights, Parameters};
use mate_core::{Shape3, TokenTensor};

use crate::config::RunConfig;
use crate::error::CliError;

pub const TENSOR_MAGIC: &[u8; 4] = b"MATE";
pub const TENSOR_VERSION: u16 = 1;
pub const TENSOR_HEADER_LEN: usize = 16;
const CHECKPOINT_MAGIC: &[u8; 8] = b"MATECKPT";
const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_tensor(x: &TokenTensor) -> Result<Vec<u8>, String> {
    let s = x.shape();
    let dims = [s.t_len, s.h_len, s.w_len, x.dim()];
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 8 * x.as_slice().len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&4u16.to_le_bytes());
    for d in dims {
        let d = u16::try_from(d).map_err(|_| format!("dimension {d} exceeds the u16 header field"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TokenTensor, String> {
    if bytes.len() < TENSOR_HEADER_LEN || &bytes[..4] != TENSOR_MAGIC {
        return Err("not a MATE tensor file".into());
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]) as usize;
    let version = u16_at(4) as u16;
    if version != TENSOR_VERSION {
        return Err(format!("unsupported tensor format version {version}"));
    }
    if u16_at(6) != 4 {
        return Err(format!("expected rank 4, found {}", u16_at(6)));
    }
    let [t, h, w, d] = [u16_at(8), u16_at(10), u16_at(12), u16_at(14)];
    let shape = Shape3::new(t, h, w).map_err(|e| e.to_string())?;
    let count = shape.n_tokens() * d;
    let body = &bytes[TENSOR_HEADER_LEN..];
    if body.len() != 8 * count {
        return Err(format!("expected {} data bytes, found {}", 8 * count, body.len()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    TokenTensor::from_vec(shape, d, data).map_err(|e| e.to_string())
}

pub fn write_tensor(path: &Path, x: &TokenTensor) -> Result<(), CliError> {
    let bytes = encode_tensor(x).map_err(|m| CliError::format(path, m))?;
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<TokenTensor, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_tensor(&bytes).map_err(|m| CliError::format(path, m))
}

pub fn write_checkpoint(path: &Path, cfg: &RunConfig, weights: &DenoiserWeights) -> Result<(), CliError> {
    let text = cfg.to_toml();
    let params = weights.flatten();
    let mut out = Vec::with_capacity(32 + text.len() + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| CliError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<(RunConfig, DenoiserWeights), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let bad = |m: &str| CliError::format(path, m);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not a MATE checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let rest = &bytes[16..];
    if rest.len() < len + 8 {
        return Err(bad("truncated checkpoint"));
    }
    let text = std::str::from_utf8(&rest[..len]).map_err(|_| bad("embedded config is not UTF-8"))?;
    let cfg = RunConfig::from_toml(text)?;
    let count = u64::from_le_bytes(rest[len..len + 8].try_into().unwrap()) as usize;
    let body = &rest[len + 8..];
    if body.len() != 8 * count {
        return Err(bad("parameter block length mismatch"));
    }
    let params: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut weights = DenoiserWeights::zeros(&cfg.mate_config()?);
    weights
        .load_flat(&params)
        .map_err(|e| bad(&format!("weights do not match the embedded config: {e}")))?;
    Ok((cfg, weights))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_header_layout() {
        let x = TokenTensor::from_vec(Shape3::new(1, 2, 3).unwrap(), 2, (0..12).map(f64::from).collect()).unwrap();
        let b = encode_tensor(&x).unwrap();
        assert_eq!(&b[..16], b"MATE\x01\x00\x04\x00\x01\x00\x02\x00\x03\x00\x02\x00");
        assert_eq!(b.len(), 16 + 96);
        assert_eq!(&b[16 + 8..16 + 16], &1.0f64.to_le_bytes());
        assert_eq!(decode_tensor(&b).unwrap(), x);
    }

    #[test]
    fn tensor_decode_rejects_damage() {
        let x = TokenTensor::zeros(Shape3::new(1, 1, 2).unwrap(), 1);
        let mut b = encode_tensor(&x).unwrap();
        assert!(decode_tensor(&b[..20]).is_err());
        b[0] = b'X';
        assert!(decode_tensor(&b).is_err());
        let big = TokenTensor::zeros(Shape3::new(1, 1, 70_000).unwrap(), 1);
        assert!(encode_tensor(&big).is_err());
    }
}
