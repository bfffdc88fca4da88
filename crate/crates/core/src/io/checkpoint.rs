//! Checkpoint container: a TOML metadata block followed by named raw tensors.
//!
//! Layout:
//!
//! ```text
//! format_version 1\n
//! metadata_bytes <n>\n
//! <n bytes of TOML>
//! tensors <k>\n
//! k times: name_len u32 | name utf-8 | ndim u32 | dims u64 x ndim | f32 x prod(dims)
//! ```
//!
//! All binary fields are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::schedule::ScheduleParams;
use crate::tensor::Tensor;
use crate::trainer::{Adam, TrainConfig, Trainer};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// Training steps completed.
    pub step: u64,
    pub lr_size: usize,
    /// Number of optimizer updates applied.
    pub adam_t: u64,
    /// The RNG stream is a function of `(rng_seed, rng_step)` only.
    pub rng_seed: u64,
    pub rng_step: u64,
    pub model: DenoiserConfig,
    pub schedule: ScheduleParams,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = toml::to_string(&self.meta).expect("metadata is serializable");
        let mut out = format!("format_version {}\nmetadata_bytes {}\n", self.meta.format_version, meta.len()).into_bytes();
        out.extend_from_slice(meta.as_bytes());
        out.extend_from_slice(format!("tensors {}\n", self.tensors.len()).as_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let version: u32 = r.header_line("format_version")?;
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {version}")));
        }
        let n: usize = r.header_line("metadata_bytes")?;
        let meta = std::str::from_utf8(r.take(n)?).map_err(|_| bad("metadata is not UTF-8"))?;
        let meta: CheckpointMeta = toml::from_str(meta).map_err(|e| bad(format!("metadata: {e}")))?;
        if meta.format_version != version {
            return Err(bad("metadata format_version disagrees with the header"));
        }
        let k: usize = r.header_line("tensors")?;
        let mut tensors = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| bad("tensor name is not UTF-8"))?.to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("tensor too large"))?;
            let raw = r.take(count.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((name, Tensor::new(&shape, data).map_err(|e| bad(e.to_string()))?));
        }
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Snapshot of a training run: parameters, Adam moments and position.
    pub fn from_trainer(tr: &Trainer<f32>) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = tr.params.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        for (prefix, moments) in [(ADAM_M, &tr.adam.m), (ADAM_V, &tr.adam.v)] {
            tensors.extend(tr.params.iter().zip(moments).map(|((_, n, _), m)| (format!("{prefix}{n}"), m.clone())));
        }
        Self {
            meta: CheckpointMeta {
                format_version: CHECKPOINT_FORMAT_VERSION,
                step: tr.step,
                lr_size: tr.lr_size,
                adam_t: tr.adam.t,
                rng_seed: tr.cfg.seed,
                rng_step: tr.step,
                model: tr.model_cfg.clone(),
                schedule: tr.sched.params().clone(),
                train: tr.cfg.clone(),
            },
            tensors,
        }
    }

    fn fill_params(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let names: Vec<String> = store.iter().map(|(_, n, _)| n.to_string()).collect();
        for name in names {
            let t = self.tensor(&name).ok_or_else(|| bad(format!("missing parameter {name}")))?;
            store.set(&name, t.clone()).map_err(|e| bad(e.to_string()))?;
        }
        Ok(())
    }

    /// The network and its parameters, for inference.
    pub fn load_model(&self) -> Result<(Denoiser, ParamStore<f32>)> {
        let (model, mut store) = Denoiser::init::<f32>(&self.meta.model, 0).map_err(|e| bad(e.to_string()))?;
        self.fill_params(&mut store)?;
        Ok((model, store))
    }

    /// Rebuilds the training run exactly where it was saved.
    pub fn restore_trainer(&self) -> Result<Trainer<f32>> {
        let m = &self.meta;
        if m.rng_seed != m.train.seed || m.rng_step != m.step {
            return Err(bad("RNG state does not match the training position"));
        }
        let mut tr = Trainer::<f32>::new(&m.model, &m.schedule, &m.train, m.lr_size).map_err(|e| bad(e.to_string()))?;
        self.fill_params(&mut tr.params)?;
        let mut adam = Adam::new(&tr.params, m.train.adam_beta1, m.train.adam_beta2, m.train.adam_eps);
        for (i, (_, name, _)) in tr.params.iter().enumerate() {
            for (prefix, dst) in [(ADAM_M, &mut adam.m[i]), (ADAM_V, &mut adam.v[i])] {
                let t = self.tensor(&format!("{prefix}{name}")).ok_or_else(|| bad(format!("missing {prefix}{name}")))?;
                if t.shape() != dst.shape() {
                    return Err(bad(format!("{prefix}{name} has shape {:?}", t.shape())));
                }
                *dst = t.clone();
            }
        }
        adam.t = m.adam_t;
        tr.adam = adam;
        tr.step = m.step;
        Ok(tr)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn header_line<V: std::str::FromStr>(&mut self, key: &str) -> Result<V> {
        let rest = &self.bytes[self.pos..];
        let nl = rest.iter().take(64).position(|&b| b == b'\n').ok_or_else(|| bad(format!("missing {key} line")))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not UTF-8"))?;
        self.pos += nl + 1;
        line.strip_prefix(key)
            .and_then(|v| v.strip_prefix(' '))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(format!("expected `{key} <n>`, found {line:?}")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
