//! Model file: `"MAE1"`, then little-endian `u32` channels, window,
//! conv1, conv2, conv3, fc hidden, code size, flags (bit 0 ReLU on code,
//! bit 1 ReLU on output), `u64` seed, `u64` parameter count, then every
//! parameter as `f32` in layer order (weights, then biases).

use std::path::Path;

use super::arch::AeArchitecture;
use super::network::AeParameters;
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"MAE1";
const HEADER_BYTES: usize = 4 + 8 * 4 + 16;

pub fn encode_model(p: &AeParameters) -> Vec<u8> {
    let a = p.arch();
    let mut out = Vec::with_capacity(HEADER_BYTES + 4 * p.len());
    out.extend_from_slice(MODEL_MAGIC);
    let flags = a.relu_code as u32 | (a.relu_output as u32) << 1;
    for v in [a.channels, a.window, a.conv[0], a.conv[1], a.conv[2], a.fc_hidden, a.code] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&(p.len() as u64).to_le_bytes());
    for v in &p.values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<AeParameters, String> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != MODEL_MAGIC {
        return Err("missing MAE1 header".into());
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let flags = u32_at(7);
    let arch = AeArchitecture {
        channels: u32_at(0),
        window: u32_at(1),
        conv: [u32_at(2), u32_at(3), u32_at(4)],
        fc_hidden: u32_at(5),
        code: u32_at(6),
        relu_code: flags & 1 != 0,
        relu_output: flags & 2 != 0,
    };
    let seed = u64::from_le_bytes(bytes[36..44].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[44..52].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_BYTES..];
    if body.len() != count * 4 {
        return Err(format!("expected {count} parameters, body has {} bytes", body.len()));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    AeParameters::from_values(arch, values, seed).map_err(|e| e.to_string())
}

pub fn save_model(path: &Path, p: &AeParameters) -> Result<()> {
    std::fs::write(path, encode_model(p)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<AeParameters> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|msg| Error::format(path, msg))
}
