use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::write_atomic;
use crate::autodiff::Tensor;
use crate::train::{EpochRecord, ParamSet, TrainState};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SAPC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Training state plus an opaque JSON snapshot of the run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub params: ParamSet,
    pub velocity: ParamSet,
    pub history: Vec<EpochRecord>,
    pub config: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: serde_json::Value,
    history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, config: serde_json::Value) -> Self {
        Self {
            epoch: state.epoch,
            params: state.params.clone(),
            velocity: state.velocity.clone(),
            history: state.history.clone(),
            config,
        }
    }

    pub fn into_state(self) -> TrainState {
        TrainState {
            params: self.params,
            velocity: self.velocity,
            epoch: self.epoch,
            history: self.history,
        }
    }
}

fn put_u32(w: &mut Vec<u8>, x: u32) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(w: &mut Vec<u8>, x: u64) {
    w.extend_from_slice(&x.to_le_bytes());
}

fn put_table(w: &mut Vec<u8>, table: &ParamSet) {
    put_u32(w, table.len() as u32);
    for (name, t) in table {
        put_u32(w, name.len() as u32);
        w.extend_from_slice(name.as_bytes());
        put_u32(w, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(w, d as u64);
        }
        for x in t.data() {
            w.extend_from_slice(&x.to_le_bytes());
        }
    }
}

/// Layout: magic, version (u32), epoch (u64), JSON metadata (u32 length
/// prefix), then the parameter and velocity tables. A table is a u32 count
/// followed by `name_len u32, name, rank u32, dims u64…, data f64…` per
/// tensor. All integers and floats are little-endian.
pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let meta = serde_json::to_vec(&Meta {
        config: ckpt.config.clone(),
        history: ckpt.history.clone(),
    })
    .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION);
    put_u64(&mut buf, ckpt.epoch as u64);
    put_u32(&mut buf, meta.len() as u32);
    buf.extend_from_slice(&meta);
    put_table(&mut buf, &ckpt.params);
    put_table(&mut buf, &ckpt.velocity);
    w.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn table(&mut self, what: &str) -> Result<ParamSet, CheckpointError> {
        let count = self.u32(what)?;
        let mut out = ParamSet::new();
        for _ in 0..count {
            let len = self.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(self.take(len, "tensor name")?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = self.u32("tensor rank")? as usize;
            if rank > 8 {
                return Err(CheckpointError::Corrupt(format!("{name}: rank {rank}")));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(self.u64("tensor shape")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n <= (self.bytes.len() - self.pos) / 8)
                .ok_or_else(|| CheckpointError::Corrupt(format!("{name}: bad shape {shape:?}")))?;
            let data = self
                .take(n * 8, "tensor data")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_shape_vec(shape, data)
                .map_err(|e| CheckpointError::Corrupt(format!("{name}: {e}")))?;
            if out.insert(name.clone(), t).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
            }
        }
        Ok(out)
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let epoch = c.u64("epoch")? as usize;
    let meta_len = c.u32("metadata length")? as usize;
    let meta: Meta = serde_json::from_slice(c.take(meta_len, "metadata")?)
        .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
    let params = c.table("parameter table")?;
    let velocity = c.table("velocity table")?;
    if c.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    for (name, p) in &params {
        match velocity.get(name) {
            Some(v) if v.shape() == p.shape() => {}
            _ => {
                return Err(CheckpointError::Corrupt(format!(
                    "velocity for {name} is missing or misshapen"
                )))
            }
        }
    }
    if velocity.len() != params.len() {
        return Err(CheckpointError::Corrupt(
            "velocity table has extra tensors".into(),
        ));
    }
    if meta.history.len() != epoch {
        return Err(CheckpointError::Corrupt(format!(
            "history has {} epochs, header says {epoch}",
            meta.history.len()
        )));
    }
    Ok(Checkpoint {
        epoch,
        params,
        velocity,
        history: meta.history,
        config: meta.config,
    })
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    read_checkpoint(fs::File::open(path)?)
}
