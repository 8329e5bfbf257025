//! Binary training snapshots.
//!
//! Layout (little-endian):
//! `"ACRC"` · version `u32` · config hash `[u8; 32]` · config text (`u32` length, UTF-8) ·
//! epoch `u64` · step `u64` · tensor table · optimizer table · RNG blob · payload.
//!
//! Table entries are `name` (`u32` length, UTF-8) · dtype `u8` · rank `u32` ·
//! extents `u64`×rank · payload offset `u64`. The optimizer table holds
//! `lr, beta1, beta2, eps` as `f64`, the step as `u64`, then one entry per
//! first and second moment. The RNG blob is seed `u64` · stream `u64` ·
//! word position `u128`. The payload is a `u64` byte length followed by raw values.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use super::optim::{Adam, AdamConfig};
use super::trainer::{RngState, TrainConfig, TrainState};
use crate::model::AcrModel;
use crate::tensor::io::{eof_as_truncated, read_f64, read_u32, read_u64, read_u8, read_values, write_values, DType};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ACRC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: [u8; 32],
    /// Canonical text of the experiment configuration the run used.
    pub config_text: String,
    pub epoch: u64,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub optimizer: Adam,
    pub rng: RngState,
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    offset: u64,
}

fn write_str(w: &mut impl Write, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn write_entry(w: &mut impl Write, name: &str, t: &Tensor, offset: u64) -> io::Result<()> {
    write_str(w, name)?;
    w.write_all(&[DType::F64 as u8])?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&offset.to_le_bytes())
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        write_str(w, &self.config_text)?;
        w.write_all(&self.epoch.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;

        let mut offset = 0u64;
        let mut next = |t: &Tensor| {
            let at = offset;
            offset += (t.numel() * 8) as u64;
            at
        };
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, t) in &self.params {
            write_entry(w, name, t, next(t))?;
        }
        let opt = &self.optimizer;
        for v in [opt.lr, opt.cfg.beta1, opt.cfg.beta2, opt.cfg.eps] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&opt.step.to_le_bytes())?;
        w.write_all(&(opt.m.len() as u32).to_le_bytes())?;
        for (k, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
            write_entry(w, &format!("m.{k}"), m, next(m))?;
            write_entry(w, &format!("v.{k}"), v, next(v))?;
        }
        w.write_all(&self.rng.seed.to_le_bytes())?;
        w.write_all(&self.rng.stream.to_le_bytes())?;
        w.write_all(&self.rng.word_pos.to_le_bytes())?;

        w.write_all(&offset.to_le_bytes())?;
        for (_, t) in &self.params {
            write_values(w, t, DType::F64)?;
        }
        for (m, v) in opt.m.iter().zip(&opt.v) {
            write_values(w, m, DType::F64)?;
            write_values(w, v, DType::F64)?;
        }
        Ok(())
    }

    /// Parses a complete checkpoint; nothing is returned unless every byte checks out.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let r = &mut &bytes[..];
        let trunc = eof_as_truncated("checkpoint");
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(&trunc)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
        }
        let version = read_u32(r).map_err(&trunc)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, supported: CHECKPOINT_VERSION });
        }
        let mut config_hash = [0u8; 32];
        r.read_exact(&mut config_hash).map_err(&trunc)?;
        let config_text = read_str(r)?;
        let epoch = read_u64(r).map_err(&trunc)?;
        let step = read_u64(r).map_err(&trunc)?;

        let n_params = read_u32(r).map_err(&trunc)? as usize;
        let params_tab = (0..n_params).map(|_| read_entry(r)).collect::<Result<Vec<_>>>()?;
        let mut scalars = [0.0f64; 4];
        for s in &mut scalars {
            *s = read_f64(r).map_err(&trunc)?;
        }
        let opt_step = read_u64(r).map_err(&trunc)?;
        let n_moments = read_u32(r).map_err(&trunc)? as usize;
        let moments_tab = (0..2 * n_moments).map(|_| read_entry(r)).collect::<Result<Vec<_>>>()?;
        let rng = RngState {
            seed: read_u64(r).map_err(&trunc)?,
            stream: read_u64(r).map_err(&trunc)?,
            word_pos: u128::from_le_bytes(read_array(r)?),
        };
        let payload_len = read_u64(r).map_err(&trunc)? as usize;
        if r.len() < payload_len {
            return Err(Error::Truncated(format!("checkpoint payload has {} of {payload_len} bytes", r.len())));
        }
        if r.len() > payload_len {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", r.len() - payload_len)));
        }
        let payload = *r;
        let load = |e: &Entry| -> Result<Tensor> {
            let n: usize = e.shape.iter().product();
            let width = if e.dtype == DType::F32 { 4 } else { 8 };
            let start = e.offset as usize;
            let end = start
                .checked_add(n * width)
                .filter(|&end| end <= payload.len())
                .ok_or_else(|| Error::Format(format!("tensor {} lies outside the payload", e.name)))?;
            let values = read_values(&mut &payload[start..end], n, e.dtype).map_err(&trunc)?;
            Tensor::new(&e.shape, values)
        };
        let params = params_tab.iter().map(|e| Ok((e.name.clone(), load(e)?))).collect::<Result<Vec<_>>>()?;
        let mut m = Vec::with_capacity(n_moments);
        let mut v = Vec::with_capacity(n_moments);
        for pair in moments_tab.chunks(2) {
            m.push(load(&pair[0])?);
            v.push(load(&pair[1])?);
        }
        let optimizer = Adam {
            cfg: AdamConfig { beta1: scalars[1], beta2: scalars[2], eps: scalars[3] },
            lr: scalars[0],
            step: opt_step,
            m,
            v,
        };
        Ok(Checkpoint { config_hash, config_text, epoch, step, params, optimizer, rng })
    }

    /// Snapshot of a training state; `samples` is the training-set size.
    pub fn capture(state: &TrainState, cfg: &TrainConfig, samples: usize, config_hash: [u8; 32], config_text: &str) -> Self {
        Checkpoint {
            config_hash,
            config_text: config_text.to_string(),
            epoch: state.epoch as u64,
            step: state.step(),
            params: state.model.params().iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            optimizer: state.adam.clone(),
            rng: state.rng_state(samples, cfg),
        }
    }

    /// Loads the stored weights and optimizer into `model`, which must have
    /// been built from the same configuration.
    pub fn restore(&self, mut model: AcrModel, config_hash: &[u8; 32]) -> Result<TrainState> {
        if &self.config_hash != config_hash {
            return Err(Error::Compatibility("checkpoint was written under a different configuration".into()));
        }
        if self.optimizer.step != self.step || self.optimizer.m.len() != self.params.len() {
            return Err(Error::Format("checkpoint optimizer state is inconsistent".into()));
        }
        model.params_mut().assign_all(self.params.clone())?;
        for (k, (_, _, t)) in model.params().iter().enumerate() {
            if self.optimizer.m[k].shape() != t.shape() || self.optimizer.v[k].shape() != t.shape() {
                return Err(Error::Compatibility(format!("moment shape mismatch at parameter {k}")));
            }
        }
        Ok(TrainState { model, adam: self.optimizer.clone(), seed: self.rng.seed, epoch: self.epoch as usize })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(eof_as_truncated("checkpoint"))?;
    Ok(b)
}

fn read_str(r: &mut &[u8]) -> Result<String> {
    let trunc = eof_as_truncated("checkpoint");
    let n = read_u32(r).map_err(&trunc)? as usize;
    if n > r.len() {
        return Err(Error::Truncated("checkpoint string".into()));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(&trunc)?;
    String::from_utf8(buf).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
}

fn read_entry(r: &mut &[u8]) -> Result<Entry> {
    let trunc = eof_as_truncated("checkpoint");
    let name = read_str(r)?;
    let dtype = DType::from_byte(read_u8(r).map_err(&trunc)?)?;
    let rank = read_u32(r).map_err(&trunc)? as usize;
    if rank > 16 {
        return Err(Error::Format(format!("implausible rank {rank} for {name}")));
    }
    let shape = (0..rank).map(|_| read_u64(r).map(|d| d as usize)).collect::<io::Result<Vec<_>>>().map_err(&trunc)?;
    let offset = read_u64(r).map_err(&trunc)?;
    Ok(Entry { name, dtype, shape, offset })
}
