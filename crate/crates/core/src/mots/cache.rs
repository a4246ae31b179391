//! On-disk MOTS cache.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   "MOTS" | version u32 | channels u32 | window u32
//! record*  ix i32 | iy i32 | iz i32 | frame u32 | channels × row
//! row      ceil(window / 8) bytes, bit j = occupancy j frames before `frame`
//! ```
//!
//! The record count follows from the file length.

use std::io::Write;
use std::path::Path;

use super::MotsFeature;
use crate::error::{Error, Result};
use crate::voxelgrid::VoxelCoord;

pub const CACHE_MAGIC: &[u8; 4] = b"MOTS";
pub const CACHE_VERSION: u32 = 1;
const HEADER_BYTES: usize = 16;

fn row_bytes(window: usize) -> usize {
    window.div_ceil(8)
}

pub struct MotsCacheWriter<W: Write> {
    out: W,
    channels: usize,
    window: usize,
    written: usize,
}

impl<W: Write> MotsCacheWriter<W> {
    pub fn new(mut out: W, channels: usize, window: usize) -> std::io::Result<Self> {
        out.write_all(CACHE_MAGIC)?;
        for v in [CACHE_VERSION, channels as u32, window as u32] {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(MotsCacheWriter {
            out,
            channels,
            window,
            written: 0,
        })
    }

    pub fn push(&mut self, f: &MotsFeature) -> std::io::Result<()> {
        if f.channels() != self.channels || f.window != self.window {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!(
                    "feature is {}x{}, cache expects {}x{}",
                    f.channels(),
                    f.window,
                    self.channels,
                    self.window
                ),
            ));
        }
        let c = f.center;
        for v in [c.ix, c.iy, c.iz] {
            self.out.write_all(&v.to_le_bytes())?;
        }
        self.out.write_all(&(f.frame_index as u32).to_le_bytes())?;
        let nb = row_bytes(self.window);
        for row in &f.rows {
            self.out.write_all(&row.to_le_bytes()[..nb])?;
        }
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Decodes a cache buffer into `(channels, window, features)`.
pub fn read_cache(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<MotsFeature>), String> {
    if bytes.len() < HEADER_BYTES || &bytes[..4] != CACHE_MAGIC {
        return Err("missing MOTS header".into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != CACHE_VERSION {
        return Err(format!("unsupported cache version {version}"));
    }
    let (channels, window) = (u32_at(8) as usize, u32_at(12) as usize);
    if window == 0 || window > 64 {
        return Err(format!("invalid window {window}"));
    }
    let nb = row_bytes(window);
    let record = 16 + channels * nb;
    let body = &bytes[HEADER_BYTES..];
    if !body.len().is_multiple_of(record) {
        return Err(format!(
            "body length {} is not a multiple of the {record}-byte record",
            body.len()
        ));
    }
    let features = body
        .chunks_exact(record)
        .map(|rec| {
            let i32_at = |o: usize| i32::from_le_bytes(rec[o..o + 4].try_into().unwrap());
            let rows = rec[16..]
                .chunks_exact(nb)
                .map(|r| {
                    let mut b = [0u8; 8];
                    b[..nb].copy_from_slice(r);
                    u64::from_le_bytes(b)
                })
                .collect();
            MotsFeature {
                rows,
                window,
                center: VoxelCoord::new(i32_at(0), i32_at(4), i32_at(8)),
                frame_index: u32::from_le_bytes(rec[12..16].try_into().unwrap()) as usize,
            }
        })
        .collect();
    Ok((channels, window, features))
}

pub fn read_cache_file(path: &Path) -> Result<(usize, usize, Vec<MotsFeature>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_cache(&bytes).map_err(|msg| Error::format(path, msg))
}
