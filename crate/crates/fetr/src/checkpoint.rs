//! The `.fetr` checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FETR" | u32 version | u32 header length | JSON header
//! u32 count | parameter records (sorted by name)
//! u32 count | optimizer records (sorted by name)
//! record = u32 name length | UTF-8 name | u8 dtype | u8 rank | u64 extents[rank] | payload
//! ```
//!
//! Payloads are row-major element bytes, so a round trip is bit-exact and
//! equal training states always produce identical files.

use std::fs;
use std::path::Path;

use fetr_core::backbone::{Network, NetworkSpec};
use fetr_core::train::{Optimizer, RngState, TrainConfig, Trainer};
use fetr_core::{DType, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FETR";
pub const VERSION: u32 = 1;

/// How the dataset was split for the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub train_ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub spec: NetworkSpec,
    pub train: TrainConfig,
    pub split: SplitRecord,
    pub classes: Vec<String>,
    pub checkpoint_every: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer_steps: u64,
    pub best_val_top1: f64,
    /// Generator seed as hex, stream, and word position in decimal.
    pub rng_seed: String,
    pub rng_stream: u64,
    pub rng_word_pos: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: Header,
    pub params: Vec<(String, Tensor<T>)>,
    pub optimizer: Vec<(String, Tensor<T>)>,
}

fn bad(message: impl Into<String>) -> Error {
    Error::Checkpoint(message.into())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_trainer(trainer: &Trainer<T>, classes: &[String], split: SplitRecord, checkpoint_every: usize) -> Self {
        let rng = trainer.rng_state();
        let mut params: Vec<(String, Tensor<T>)> = trainer
            .store
            .iter()
            .map(|(_, p)| (p.name.clone(), p.value.clone()))
            .collect();
        params.sort_by(|a, b| a.0.cmp(&b.0));
        let mut optimizer = trainer.optimizer.state_records(&trainer.store);
        optimizer.sort_by(|a, b| a.0.cmp(&b.0));
        Checkpoint {
            header: Header {
                spec: trainer.network.spec.clone(),
                train: trainer.config.clone(),
                split,
                classes: classes.to_vec(),
                checkpoint_every,
                epoch: trainer.epoch,
                optimizer_steps: trainer.optimizer.steps(),
                best_val_top1: trainer.best_val_top1,
                rng_seed: rng.seed.iter().map(|b| format!("{b:02x}")).collect(),
                rng_stream: rng.stream,
                rng_word_pos: rng.word_pos.to_string(),
            },
            params,
            optimizer,
        }
    }

    fn rng_state(&self) -> Result<RngState> {
        let h = &self.header;
        let hex = h.rng_seed.as_bytes();
        if hex.len() != 64 {
            return Err(bad("bad checkpoint header: generator seed must be 64 hex digits"));
        }
        let mut seed = [0u8; 32];
        for (i, pair) in hex.chunks(2).enumerate() {
            let s = std::str::from_utf8(pair).map_err(|_| bad("bad checkpoint header: generator seed"))?;
            seed[i] = u8::from_str_radix(s, 16).map_err(|_| bad("bad checkpoint header: generator seed"))?;
        }
        let word_pos = h
            .rng_word_pos
            .parse()
            .map_err(|_| bad("bad checkpoint header: generator position"))?;
        Ok(RngState {
            seed,
            stream: h.rng_stream,
            word_pos,
        })
    }

    /// Rebuilds the trainer: every parameter, optimizer buffer, counter and
    /// the generator position.
    pub fn into_trainer(self) -> Result<Trainer<T>> {
        let h = &self.header;
        let (network, mut store) = Network::init::<T>(&h.spec, h.train.seed)?;
        if self.params.len() != store.len() {
            return Err(Error::Mismatch(format!(
                "checkpoint holds {} parameter tensors, the network has {}",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            store
                .set(name, value.clone())
                .map_err(|e| Error::Mismatch(e.to_string()))?;
        }
        let mut optimizer = Optimizer::new(h.train.optimizer, h.train.weight_decay, &store);
        for (name, value) in &self.optimizer {
            optimizer
                .load_record(&store, name, value.clone())
                .map_err(|e| Error::Mismatch(e.to_string()))?;
        }
        optimizer.set_steps(h.optimizer_steps);
        let rng = self.rng_state()?;
        let mut trainer = Trainer::new(network, store, h.train.clone())?;
        trainer.optimizer = optimizer;
        trainer.epoch = h.epoch;
        trainer.best_val_top1 = h.best_val_top1;
        trainer.set_rng_state(&rng);
        Ok(trainer)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for records in [&self.params, &self.optimizer] {
            out.extend_from_slice(&(records.len() as u32).to_le_bytes());
            for (name, t) in records.iter() {
                write_record(&mut out, name, t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(bad("bad checkpoint header: missing FETR magic"));
        }
        let mut r = Cursor { bytes, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!(
                "unsupported version {version} (this build reads version {VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(len)?).map_err(|e| bad(format!("bad checkpoint header: {e}")))?;
        let params = read_records(&mut r)?;
        let optimizer = read_records(&mut r)?;
        if r.pos != bytes.len() {
            return Err(bad(format!(
                "{} trailing bytes after the last record",
                bytes.len() - r.pos
            )));
        }
        Ok(Checkpoint {
            header,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("fetr.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_record<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        match T::DTYPE {
            DType::F32 => out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.as_f64().to_le_bytes()),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                bad(format!(
                    "truncated checkpoint: wanted {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.bytes.len()
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn read_records<T: Scalar>(r: &mut Cursor<'_>) -> Result<Vec<(String, Tensor<T>)>> {
    let count = r.u32()? as usize;
    let mut out: Vec<(String, Tensor<T>)> = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| bad(format!("record name at offset {at} is not UTF-8")))?
            .to_string();
        if out.last().is_some_and(|(prev, _)| *prev >= name) {
            return Err(bad(format!("record `{name}` is out of order")));
        }
        let dtype = DType::from_code(r.u8()?).ok_or_else(|| bad(format!("record `{name}` has an unknown dtype")))?;
        if dtype != T::DTYPE {
            return Err(bad(format!("record `{name}` is {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| bad(format!("record `{name}` extent overflows")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| bad(format!("record `{name}` extent overflows")))?;
        let payload = r.take(
            n.checked_mul(dtype.size())
                .ok_or_else(|| bad("payload size overflows"))?,
        )?;
        let data: Vec<T> = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect(),
        };
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}
