use std::fs;
use std::path::Path;

use super::{InputNormalization, Network, NetworkConfig, NetworkParams, AXES};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FOAPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A network snapshot plus what is needed to query it in original units.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub step: u64,
    /// Multiplier taking network outputs back to original amplitude units.
    pub output_scale: f64,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = &self.network.config;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.hidden_layers as u32).to_le_bytes());
        out.extend_from_slice(&(cfg.width as u32).to_le_bytes());
        out.extend_from_slice(&cfg.omega0.to_le_bytes());
        for (lo, hi) in cfg.normalization.bounds {
            out.extend_from_slice(&lo.to_le_bytes());
            out.extend_from_slice(&hi.to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.output_scale.to_le_bytes());
        let tensors = self.network.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for &v in t {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::format(path, reason.to_string());
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8) != Some(MAGIC.as_slice()) {
            return Err(bad("not a checkpoint file"));
        }
        let version = r.u32().ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let header = (|| {
            let k = r.u32()? as usize;
            let width = r.u32()? as usize;
            let omega0 = r.f64()?;
            let mut bounds = [(0.0, 0.0); AXES];
            for b in &mut bounds {
                *b = (r.f64()?, r.f64()?);
            }
            let step = r.u64()?;
            let scale = r.f64()?;
            Some((k, width, omega0, bounds, step, scale))
        })();
        let (k, width, omega0, bounds, step, output_scale) =
            header.ok_or_else(|| bad("truncated header"))?;
        let config = NetworkConfig::new(k, width, omega0, InputNormalization::new(bounds)?);
        config.validate()?;
        let mut params = NetworkParams::zeros(&config);
        let count = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        {
            let mut tensors = params.tensors_mut();
            if count != tensors.len() {
                return Err(bad("tensor count does not match the configuration"));
            }
            for t in tensors.iter_mut() {
                let len = r.u64().ok_or_else(|| bad("truncated tensor header"))? as usize;
                if len != t.len() {
                    return Err(bad("tensor shape does not match the configuration"));
                }
                let raw = r
                    .take(len.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)
                    .ok_or_else(|| bad("truncated tensor data"))?;
                for (dst, c) in t.iter_mut().zip(raw.chunks_exact(4)) {
                    *dst = f32::from_le_bytes(c.try_into().unwrap()) as f64;
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        Ok(Self {
            network: Network::new(config, params)?,
            step,
            output_scale,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
