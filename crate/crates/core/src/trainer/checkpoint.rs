use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{AdamState, TrainConfig};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ParamStore};

pub const MAGIC: &[u8; 4] = b"PSEP";
pub const VERSION: u32 = 1;

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_val: f64,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.config.model_config(), self.params.clone())
    }

    /// Little-endian: magic, version, entry count, entries
    /// `(name length u32, name, rank u32, dims u64..., f64 payload)`,
    /// then the config as `key = value` text behind a u32 length.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let n = 3 * self.params.len() + 1;
        out.extend_from_slice(&(n as u32).to_le_bytes());
        let mut entry = |name: &str, shape: &[usize], data: &[f64]| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (name, p) in self.params.iter() {
            entry(&format!("param/{name}"), p.shape(), p.data());
        }
        for (k, (name, p)) in self.params.iter().enumerate() {
            entry(&format!("adam.m/{name}"), p.shape(), &self.adam.m[k]);
            entry(&format!("adam.v/{name}"), p.shape(), &self.adam.v[k]);
        }
        entry("meta", &[3], &[self.epoch as f64, self.best_val, self.adam.t as f64]);
        let text = self.config.to_text();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        let mut meta = None;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = core::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let name = String::from(name);
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflow")))?;
            if numel > (bytes.len() - r.pos) / 8 {
                return Err(Error::Checkpoint(format!("{name}: truncated payload")));
            }
            let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if let Some(p) = name.strip_prefix("param/") {
                params.push(p, Tensor::param(shape, data)?);
            } else if let Some(p) = name.strip_prefix("adam.m/") {
                m.push((String::from(p), data));
            } else if let Some(p) = name.strip_prefix("adam.v/") {
                v.push((String::from(p), data));
            } else if name == "meta" && data.len() == 3 {
                meta = Some(data);
            } else {
                return Err(Error::Checkpoint(format!("unexpected entry {name:?}")));
            }
        }
        let len = r.u32()? as usize;
        let text = core::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let config = TrainConfig::from_text(text)?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let meta = meta.ok_or_else(|| Error::Checkpoint("missing meta entry".into()))?;
        let order = |moments: Vec<(String, Vec<f64>)>, what: &str| -> Result<Vec<Vec<f64>>> {
            if moments.len() != params.len() {
                return Err(Error::Checkpoint(format!("{what}: {} moments for {} parameters", moments.len(), params.len())));
            }
            moments
                .into_iter()
                .zip(params.iter())
                .map(|((n, d), (pn, p))| {
                    if n != pn || d.len() != p.numel() {
                        Err(Error::Checkpoint(format!("{what}: entry {n} does not match parameter {pn}")))
                    } else {
                        Ok(d)
                    }
                })
                .collect()
        };
        let adam = AdamState { m: order(m, "adam.m")?, v: order(v, "adam.v")?, t: meta[2] as u64 };
        Ok(Self { params, adam, epoch: meta[0] as usize, best_val: meta[1], config })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
