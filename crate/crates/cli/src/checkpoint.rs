//! Binary checkpoint codec.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic  b"DAO1"
//! version u32
//! config  u32 length + canonical config text (UTF-8)
//! epoch u64, global_step u64, consecutive_aborts u32, dao_invocations u64
//! model parameter block, weighting parameter block
//!   count u32; per entry: name (u32 len + bytes), trainable u8,
//!   ndim u32, dims u32 each, value count u64, values f64 each
//! model optimizer block, weighting optimizer block
//!   t u64, pow_beta1 f64, pow_beta2 f64, slot count u32;
//!   per slot: name, value count u64, m values, v values
//! ```
//!
//! Values round-trip bit-for-bit, so a restored run continues exactly where
//! the saved one left off. Randomness needs no extra state: every stream is
//! derived from the seed in the config echo plus the saved counters.

use std::fs;
use std::path::Path;

use daomix::nn::ParameterStore;
use daomix::optim::Adam;
use daomix::train::Trainer;
use daomix::Tensor;

use crate::error::{CliError, Result};

pub const MAGIC: [u8; 4] = *b"DAO1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub trainable: bool,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub t: u64,
    pub pow_beta1: f64,
    pub pow_beta2: f64,
    pub slots: Vec<(String, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config_text: String,
    pub epoch: u64,
    pub global_step: u64,
    pub consecutive_aborts: u32,
    pub dao_invocations: u64,
    pub model_params: Vec<ParamEntry>,
    pub dao_params: Vec<ParamEntry>,
    pub model_opt: OptState,
    pub dao_opt: OptState,
}

fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_name(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn put_store(buf: &mut Vec<u8>, store: &ParameterStore) {
    put_u32(buf, store.len() as u32);
    for (name, tensor, trainable) in store.iter() {
        put_name(buf, name);
        buf.push(trainable as u8);
        put_u32(buf, tensor.shape().len() as u32);
        for &d in tensor.shape() {
            put_u32(buf, d as u32);
        }
        put_u64(buf, tensor.len() as u64);
        for &x in tensor.data() {
            put_f64(buf, x);
        }
    }
}

fn put_opt(buf: &mut Vec<u8>, state: &(u64, f64, f64, Vec<(String, Vec<f64>, Vec<f64>)>)) {
    let (t, p1, p2, slots) = state;
    put_u64(buf, *t);
    put_f64(buf, *p1);
    put_f64(buf, *p2);
    put_u32(buf, slots.len() as u32);
    for (name, m, v) in slots {
        put_name(buf, name);
        put_u64(buf, m.len() as u64);
        for &x in m {
            put_f64(buf, x);
        }
        for &x in v {
            put_f64(buf, x);
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(CliError::Data("checkpoint truncated".into())),
        }
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

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| CliError::Data("checkpoint name is not UTF-8".into()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn store(&mut self) -> Result<Vec<ParamEntry>> {
        let count = self.u32()? as usize;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.name()?;
            let trainable = self.u8()? != 0;
            let ndim = self.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(self.u32()? as usize);
            }
            let len = self.u64()? as usize;
            if shape.iter().product::<usize>() != len {
                return Err(CliError::Data(format!(
                    "checkpoint tensor {name}: shape {shape:?} does not hold {len} values"
                )));
            }
            let values = self.f64_vec(len)?;
            out.push(ParamEntry {
                name,
                trainable,
                shape,
                values,
            });
        }
        Ok(out)
    }

    fn opt(&mut self) -> Result<OptState> {
        let t = self.u64()?;
        let pow_beta1 = self.f64()?;
        let pow_beta2 = self.f64()?;
        let count = self.u32()? as usize;
        let mut slots = Vec::with_capacity(count);
        for _ in 0..count {
            let name = self.name()?;
            let len = self.u64()? as usize;
            let m = self.f64_vec(len)?;
            let v = self.f64_vec(len)?;
            slots.push((name, m, v));
        }
        Ok(OptState {
            t,
            pow_beta1,
            pow_beta2,
            slots,
        })
    }
}

pub fn save(path: &Path, trainer: &Trainer, config_text: &str) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, config_text.len() as u32);
    buf.extend_from_slice(config_text.as_bytes());
    put_u64(&mut buf, trainer.epoch());
    put_u64(&mut buf, trainer.global_step());
    put_u32(&mut buf, trainer.consecutive_aborts());
    put_u64(&mut buf, trainer.dao_invocations());
    put_store(&mut buf, &trainer.model.params);
    put_store(&mut buf, &trainer.dao.params);
    let (model_opt, dao_opt) = trainer.optimizer_states();
    put_opt(&mut buf, &model_opt);
    put_opt(&mut buf, &dao_opt);
    fs::write(path, buf).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Snapshot> {
    let buf = fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CliError::Data(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CliError::Data(format!(
            "checkpoint version {version} unsupported (expected {VERSION})"
        )));
    }
    let config_len = c.u32()? as usize;
    let config_text = String::from_utf8(c.take(config_len)?.to_vec())
        .map_err(|_| CliError::Data("checkpoint config is not UTF-8".into()))?;
    let epoch = c.u64()?;
    let global_step = c.u64()?;
    let consecutive_aborts = c.u32()?;
    let dao_invocations = c.u64()?;
    let model_params = c.store()?;
    let dao_params = c.store()?;
    let model_opt = c.opt()?;
    let dao_opt = c.opt()?;
    if c.pos != buf.len() {
        return Err(CliError::Data(format!(
            "checkpoint has {} trailing bytes",
            buf.len() - c.pos
        )));
    }
    Ok(Snapshot {
        config_text,
        epoch,
        global_step,
        consecutive_aborts,
        dao_invocations,
        model_params,
        dao_params,
        model_opt,
        dao_opt,
    })
}

fn apply_store(entries: &[ParamEntry], store: &mut ParameterStore, which: &str) -> Result<()> {
    if entries.len() != store.len() {
        return Err(CliError::Data(format!(
            "{which}: checkpoint has {} tensors, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let current = store.get(&e.name).ok_or_else(|| {
            CliError::Data(format!("{which}: unknown tensor {} in checkpoint", e.name))
        })?;
        if current.shape() != e.shape.as_slice() {
            return Err(CliError::Data(format!(
                "{which}: tensor {} has shape {:?}, checkpoint says {:?}",
                e.name,
                current.shape(),
                e.shape
            )));
        }
        if store.is_trainable(&e.name) != e.trainable {
            return Err(CliError::Data(format!(
                "{which}: tensor {} trainability differs from checkpoint",
                e.name
            )));
        }
        store
            .get_mut(&e.name)
            .expect("checked above")
            .data_mut()
            .copy_from_slice(&e.values);
    }
    Ok(())
}

/// Restore a freshly constructed trainer to the saved state. The trainer
/// must have been built from the same configuration the snapshot echoes.
pub fn apply(snapshot: &Snapshot, trainer: &mut Trainer) -> Result<()> {
    let cfg = *trainer.config();
    apply_store(&snapshot.model_params, &mut trainer.model.params, "model")?;
    apply_store(&snapshot.dao_params, &mut trainer.dao.params, "weighting")?;
    let model_opt = Adam::restore(
        cfg.model_adam(),
        snapshot.model_opt.t,
        snapshot.model_opt.pow_beta1,
        snapshot.model_opt.pow_beta2,
        snapshot.model_opt.slots.clone(),
    )
    .map_err(CliError::from)?;
    let dao_opt = Adam::restore(
        cfg.dao_adam(),
        snapshot.dao_opt.t,
        snapshot.dao_opt.pow_beta1,
        snapshot.dao_opt.pow_beta2,
        snapshot.dao_opt.slots.clone(),
    )
    .map_err(CliError::from)?;
    trainer.restore_progress(
        snapshot.epoch,
        snapshot.global_step,
        snapshot.consecutive_aborts,
        snapshot.dao_invocations,
        model_opt,
        dao_opt,
    );
    Ok(())
}

/// Rebuild a tensor from a checkpoint entry (used by inspection tooling and
/// tests).
pub fn entry_tensor(e: &ParamEntry) -> Result<Tensor> {
    Tensor::new(e.shape.clone(), e.values.clone()).map_err(CliError::from)
}
