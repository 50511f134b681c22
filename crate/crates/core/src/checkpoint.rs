//! `SCNP` checkpoint format for [`EncoderParams`].
//!
//! ```text
//! "SCNP"                 magic
//! version                u32 (= 1)
//! kind                   u32 (0 linear, 1 mlp)
//! dim, hidden, out_dim   u32 each (hidden = 0 for linear towers)
//! weights                f64 each: tower f [hidden], tower f out, tower g [hidden], tower g out
//! log_temp               f64
//! ```
//! All values little-endian; matrices row-major.

use std::fs;
use std::path::Path;

use crate::encoder::{init_params_with, EncoderParams, TowerKind};
use crate::{Result, ScanError};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SCNP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

pub fn encode_params(params: &EncoderParams) -> Vec<u8> {
    let flat = params.to_flat();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * flat.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    let kind = match params.kind() {
        TowerKind::Linear => 0u32,
        TowerKind::Mlp => 1,
    };
    for v in [CHECKPOINT_VERSION, kind, params.dim() as u32, params.tower_f.hidden_dim() as u32, params.out_dim() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<EncoderParams> {
    if bytes.len() < 4 {
        return Err(ScanError::Truncated { needed: 4, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4-byte slice");
    if found != CHECKPOINT_MAGIC {
        return Err(ScanError::BadMagic { expected: CHECKPOINT_MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(ScanError::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4-byte slice"));
    let version = word(1);
    if version != CHECKPOINT_VERSION {
        return Err(ScanError::UnsupportedVersion(version));
    }
    let kind = match word(2) {
        0 => TowerKind::Linear,
        1 => TowerKind::Mlp,
        k => return Err(ScanError::Corrupt(format!("unknown tower kind {k}"))),
    };
    let (dim, hidden, out_dim) = (word(3) as usize, word(4) as usize, word(5) as usize);
    if dim == 0 || out_dim == 0 || (kind == TowerKind::Mlp && hidden == 0) {
        return Err(ScanError::Corrupt("zero dimension in checkpoint header".into()));
    }
    let mut params = init_params_with(kind, dim, hidden.max(1), out_dim, 0);
    let count = params.num_params();
    let needed = HEADER_LEN + 8 * count;
    if bytes.len() < needed {
        return Err(ScanError::Truncated { needed, found: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(ScanError::Corrupt(format!("{} trailing bytes", bytes.len() - needed)));
    }
    let flat: Vec<f64> = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    params.set_flat(&flat)?;
    Ok(params)
}

pub fn save_params(params: &EncoderParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_params(params)).map_err(|e| ScanError::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<EncoderParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ScanError::io(path, e))?;
    decode_params(&bytes)
}
