//! Binary checkpoint files.
//!
//! Layout (little-endian): magic `EARN`, version u16, tensor count u32, then
//! per tensor a u16-prefixed UTF-8 name, rank u8, u32 dims and the f32
//! payload; a CRC32 of everything before it closes the file. Tensors are
//! written in name order. Besides the parameters, optimizer velocity is
//! stored under `momentum/<name>` and the update counter under
//! `meta/iteration`.

use std::collections::BTreeMap;
use std::path::Path;

use super::model::{init_param, InitReport, Model};
use super::spec::ArchSpec;
use super::NnError;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EARN";
const VERSION: u16 = 1;
const MOMENTUM_PREFIX: &str = "momentum/";
const ITERATION_KEY: &str = "meta/iteration";
/// Largest counter an f32 holds exactly.
const MAX_ITERATION: u64 = 1 << 24;

/// Decoded tensors of a checkpoint file, keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

fn corrupt(reason: impl Into<String>) -> NnError {
    NnError::CheckpointCorrupt(reason.into())
}

impl Checkpoint {
    pub fn from_model(model: &Model<f32>) -> Result<Self, NnError> {
        if model.iteration() > MAX_ITERATION {
            return Err(NnError::InvalidSchedule(format!(
                "iteration {} exceeds the checkpoint counter range",
                model.iteration()
            )));
        }
        let mut tensors = model.params().clone();
        for (k, v) in model.momentum() {
            tensors.insert(format!("{MOMENTUM_PREFIX}{k}"), v.clone());
        }
        tensors.insert(
            ITERATION_KEY.into(),
            Tensor::from_vec(&[1], vec![model.iteration() as f32]),
        );
        Ok(Checkpoint { tensors })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        if bytes.len() < 14 {
            return Err(corrupt("file too short"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if &body[..4] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u16()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n.checked_mul(4).is_some_and(|b| b <= body.len()))
                .ok_or_else(|| corrupt(format!("implausible shape for {name}")))?;
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if tensors.insert(name.clone(), Tensor::from_vec(&shape, data)).is_some() {
                return Err(corrupt(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }
        Ok(Checkpoint { tensors })
    }

    pub fn read(path: &Path) -> Result<Self, NnError> {
        let bytes = std::fs::read(path).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<(), NnError> {
        crate::write_bytes(path, &self.encode()).map_err(|source| NnError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.tensors
            .get(ITERATION_KEY)
            .and_then(|t| t.data().first())
            .map_or(0, |&v| v as u64)
    }

    /// Parameter tensors only, without optimizer state or metadata.
    pub fn params(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.tensors.iter().filter(|(k, _)| !k.contains('/'))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(model: &Model<f32>, path: &Path) -> Result<(), NnError> {
    Checkpoint::from_model(model)?.write(path)
}

/// Full restore: every parameter of `spec` must be present with its shape.
/// Optimizer state and the iteration counter come back too, so training can
/// continue exactly where it stopped.
pub fn load_checkpoint(path: &Path, spec: ArchSpec) -> Result<Model<f32>, NnError> {
    let ckpt = Checkpoint::read(path)?;
    let mut model = Model::random(spec, 0)?;
    for (name, p) in model.params.iter_mut() {
        match ckpt.tensors.get(name) {
            Some(t) if t.shape() == p.shape() => *p = t.clone(),
            Some(t) => {
                return Err(corrupt(format!(
                    "{name}: shape {:?} does not match {:?}",
                    t.shape(),
                    p.shape()
                )))
            }
            None => return Err(corrupt(format!("missing parameter {name}"))),
        }
    }
    for (k, t) in &ckpt.tensors {
        if let Some(name) = k.strip_prefix(MOMENTUM_PREFIX) {
            match model.params.get(name) {
                Some(p) if p.shape() == t.shape() => {
                    model.momentum.insert(name.to_string(), t.clone());
                }
                _ => return Err(corrupt(format!("momentum for unknown parameter {name}"))),
            }
        } else if k != ITERATION_KEY && !model.params.contains_key(k) {
            return Err(corrupt(format!("unexpected tensor {k}")));
        }
    }
    model.iteration = ckpt.iteration();
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Random { seed: u64 },
    /// Loads every parameter whose name and shape match; the rest are
    /// He-initialized from `seed` and reported.
    FromCheckpoint { path: std::path::PathBuf, seed: u64 },
}

pub fn build_model(spec: ArchSpec, init: &Init) -> Result<(Model<f32>, InitReport), NnError> {
    match init {
        Init::Random { seed } => {
            let model = Model::random(spec, *seed)?;
            let layers = model
                .spec
                .layers
                .iter()
                .filter(|l| l.kind.is_parametric())
                .map(|l| l.name.clone())
                .collect();
            Ok((
                model,
                InitReport {
                    restored: Vec::new(),
                    reinitialized_layers: layers,
                },
            ))
        }
        Init::FromCheckpoint { path, seed } => {
            let ckpt = Checkpoint::read(path)?;
            restore_matching(spec, &ckpt, *seed)
        }
    }
}

/// Partial restore used for transfer from a model trained on another task.
pub fn restore_matching(spec: ArchSpec, ckpt: &Checkpoint, seed: u64) -> Result<(Model<f32>, InitReport), NnError> {
    let mut model = Model::random(spec, seed)?;
    let mut report = InitReport::default();
    let all = model.spec.all_params()?;
    let mut fresh_layers = std::collections::BTreeSet::new();
    for (index, p) in &all {
        match ckpt.tensors.get(&p.name) {
            Some(t) if t.shape() == p.shape.as_slice() => {
                model.params.insert(p.name.clone(), t.clone());
                report.restored.push(p.name.clone());
            }
            _ => {
                fresh_layers.insert(*index);
            }
        }
    }
    // A layer is restored only as a whole; a partial match is re-initialized.
    for &index in &fresh_layers {
        let input = model.input_shape_of(index);
        for (j, p) in model.spec.layer_params(index, input).iter().enumerate() {
            report.restored.retain(|n| n != &p.name);
            let t = init_param(&model.spec, index, j, p, seed);
            model.params.insert(p.name.clone(), t);
        }
        report.reinitialized_layers.push(model.spec.layers[index].name.clone());
    }
    model.iteration = 0;
    model.generation += 1;
    Ok((model, report))
}
