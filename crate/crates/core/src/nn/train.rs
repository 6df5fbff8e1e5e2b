use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::save_checkpoint;
use super::data::SampleSource;
use super::model::{Model, Params};
use super::NnError;
use crate::rng;
use crate::tensor::{Element, Tensor};

/// Samples per forward/backward work unit. Fixed so that gradient sums do
/// not depend on how many threads are available.
const MICRO_BATCH: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    /// Mini-batch updates to reach; training resumes from the model's counter.
    pub iterations: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fractions of `iterations` at which the rate is multiplied by `lr_decay`.
    pub lr_steps: Vec<f64>,
    pub lr_decay: f64,
    /// Updates over which the rate ramps linearly up to `lr`.
    pub warmup: u64,
    pub log_every: u64,
    /// Checkpoint cadence; 0 keeps only the final model.
    pub eval_every: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            iterations: 10_000,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_steps: vec![0.5, 0.75],
            lr_decay: 0.1,
            warmup: 100,
            log_every: 100,
            eval_every: 0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |m: &str| Err(NnError::InvalidSchedule(m.to_string()));
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight_decay be non-negative");
        }
        Ok(())
    }

    /// Learning rate for the update that produces iteration `t + 1`.
    pub fn lr_at(&self, t: u64) -> f64 {
        let frac = t as f64 / self.iterations as f64;
        let steps = self.lr_steps.iter().filter(|&&s| frac >= s).count();
        let ramp = if t < self.warmup {
            (t + 1) as f64 / self.warmup as f64
        } else {
            1.0
        };
        ramp * self.lr * self.lr_decay.powi(steps as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    /// Mean training loss over the updates since the previous record.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub losses: Vec<LossRecord>,
    pub checkpoints: Vec<(u64, PathBuf)>,
}

/// Sample indices for update `t`: positions `[t·B, (t+1)·B)` of the
/// concatenation of per-epoch shuffles. Epoch `e` is shuffled by its own
/// stream, so any iteration can be reproduced without replaying earlier ones.
pub struct BatchPlan {
    n: usize,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: Option<(u64, Vec<usize>)>,
}

impl BatchPlan {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        BatchPlan {
            n,
            batch_size,
            shuffle_seed: rng::derive_seed(seed, rng::purpose::SHUFFLE),
            epoch: None,
        }
    }

    fn permutation(&mut self, epoch: u64) -> &[usize] {
        if self.epoch.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut rng::stream(self.shuffle_seed, epoch));
            self.epoch = Some((epoch, perm));
        }
        &self.epoch.as_ref().expect("just set").1
    }

    pub fn indices(&mut self, t: u64) -> Vec<usize> {
        let start = t * self.batch_size as u64;
        (start..start + self.batch_size as u64)
            .map(|p| {
                let n = self.n as u64;
                self.permutation(p / n)[(p % n) as usize]
            })
            .collect()
    }
}

/// Mean loss and gradients over a batch, computed in fixed-size pieces in
/// parallel and combined in order.
pub fn loss_and_grads<T: Element>(model: &Model<T>, batch: &Tensor<T>, labels: &[usize]) -> Result<(f64, Params<T>), NnError> {
    let shape = batch.shape().to_vec();
    let n = shape[0];
    let per = shape[1..].iter().product::<usize>();
    let pieces = (0..n)
        .step_by(MICRO_BATCH)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|s| {
            let e = (s + MICRO_BATCH).min(n);
            let x = Tensor::from_vec(
                &[e - s, shape[1], shape[2], shape[3]],
                batch.data()[s * per..e * per].to_vec(),
            );
            let out = model.forward(&x, Some(&labels[s..e]))?;
            let g = model.backward(&out.cache)?;
            Ok((e - s, out.loss.expect("labels supplied").as_f64(), g))
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    let mut loss = 0.0;
    let mut total: Params<T> = Params::new();
    for (m, l, g) in pieces {
        let w = m as f64 / n as f64;
        loss += w * l;
        let wt = T::from_f64(w);
        for (name, t) in g {
            let acc = total.entry(name).or_insert_with(|| Tensor::zeros(t.shape()));
            for (a, &v) in acc.data_mut().iter_mut().zip(t.data()) {
                *a = *a + wt * v;
            }
        }
    }
    Ok((loss, total))
}

pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    dir.join(format!("iter_{iteration:07}.earn"))
}

/// Runs SGD from the model's current iteration up to `schedule.iterations`.
///
/// At every `eval_every` boundary (and at the end) a checkpoint is written
/// to `checkpoint_dir` when given, and `on_boundary` is called.
pub fn train(
    model: &mut Model<f32>,
    data: &dyn SampleSource,
    schedule: &Schedule,
    seed: u64,
    checkpoint_dir: Option<&Path>,
    on_boundary: &mut dyn FnMut(&Model<f32>) -> Result<(), NnError>,
) -> Result<TrainingLog, NnError> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(NnError::Data("training set is empty".into()));
    }
    if let Some(i) = (0..data.len()).find(|&i| data.label(i) >= model.num_classes()) {
        return Err(NnError::LabelOutOfRange {
            label: data.label(i),
            classes: model.num_classes(),
        });
    }
    let mut plan = BatchPlan::new(data.len(), schedule.batch_size, seed);
    let mut log = TrainingLog::default();
    let mut window = (0.0, 0u64);
    let log_every = schedule.log_every.max(1);
    while model.iteration() < schedule.iterations {
        let t = model.iteration();
        let (batch, labels) = data.batch(&plan.indices(t))?;
        let (loss, grads) = loss_and_grads(model, &batch, &labels)?;
        model.sgd_step(&grads, schedule.lr_at(t), schedule.momentum, schedule.weight_decay)?;
        window = (window.0 + loss, window.1 + 1);
        let done = model.iteration();
        if done % log_every == 0 || done == schedule.iterations {
            let rec = LossRecord {
                iteration: done,
                loss: window.0 / window.1 as f64,
            };
            log::debug!("iteration {} loss {:.5}", rec.iteration, rec.loss);
            log.losses.push(rec);
            window = (0.0, 0);
        }
        let boundary = schedule.eval_every > 0 && done % schedule.eval_every == 0;
        if boundary || done == schedule.iterations {
            if let Some(dir) = checkpoint_dir {
                let path = checkpoint_path(dir, done);
                save_checkpoint(model, &path)?;
                log.checkpoints.push((done, path));
            }
            on_boundary(model)?;
        }
    }
    Ok(log)
}
