//! Mixture file: `"MGMM"`, `u32` k, `u32` dim, then weights (k), means
//! (k×dim) and variances (k×dim) as little-endian `f32`. An optional
//! cluster mapping follows: `u32` present flag; when 1, `f32` threshold,
//! `u32` moving count, that many `u32` cluster ids, and k `f32` IoUs.

use std::path::Path;

use super::gmm::GmmModel;
use super::mapping::ClusterMapping;
use crate::error::{Error, Result};

pub const GMM_MAGIC: &[u8; 4] = b"MGMM";

pub fn encode_gmm(model: &GmmModel, mapping: Option<&ClusterMapping>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(GMM_MAGIC);
    out.extend_from_slice(&(model.k as u32).to_le_bytes());
    out.extend_from_slice(&(model.dim as u32).to_le_bytes());
    for v in model.weights.iter().chain(&model.means).chain(&model.variances) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    match mapping {
        None => out.extend_from_slice(&0u32.to_le_bytes()),
        Some(m) => {
            out.extend_from_slice(&1u32.to_le_bytes());
            out.extend_from_slice(&(m.threshold as f32).to_le_bytes());
            out.extend_from_slice(&(m.moving.len() as u32).to_le_bytes());
            for &c in &m.moving {
                out.extend_from_slice(&(c as u32).to_le_bytes());
            }
            for v in &m.iou {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> std::result::Result<&[u8], String> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_gmm(bytes: &[u8]) -> std::result::Result<(GmmModel, Option<ClusterMapping>), String> {
    if bytes.get(..4) != Some(GMM_MAGIC) {
        return Err("missing MGMM header".into());
    }
    let mut r = Reader { bytes, pos: 4 };
    let k = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if k == 0 || dim == 0 {
        return Err(format!("invalid shape k={k} dim={dim}"));
    }
    let weights = r.f32s(k)?;
    let means = r.f32s(k * dim)?;
    let variances = r.f32s(k * dim)?;
    let var_floor = variances.iter().copied().fold(f64::INFINITY, f64::min);
    let model = GmmModel {
        k,
        dim,
        weights,
        means,
        variances,
        var_floor,
        fitted: true,
        seed: 0,
        log_likelihood: Vec::new(),
        reseeded_at: Vec::new(),
        converged: true,
    };
    let mapping = match r.u32()? {
        0 => None,
        1 => {
            let threshold = r.f32s(1)?[0];
            let n = r.u32()? as usize;
            let moving = (0..n)
                .map(|_| r.u32().map(|c| c as usize))
                .collect::<std::result::Result<_, _>>()?;
            let iou = r.f32s(k)?;
            Some(ClusterMapping {
                moving,
                iou,
                threshold,
                warning: None,
            })
        }
        other => return Err(format!("bad mapping flag {other}")),
    };
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    Ok((model, mapping))
}

pub fn save_gmm(path: &Path, model: &GmmModel, mapping: Option<&ClusterMapping>) -> Result<()> {
    std::fs::write(path, encode_gmm(model, mapping)).map_err(|e| Error::io(path, e))
}

pub fn load_gmm(path: &Path) -> Result<(GmmModel, Option<ClusterMapping>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_gmm(&bytes).map_err(|msg| Error::format(path, msg))
}
