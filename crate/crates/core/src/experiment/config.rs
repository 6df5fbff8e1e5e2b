use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::descriptors::{DescriptorId, Metric};
use crate::nn::{Arch, FreezePolicy, Schedule};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Checkpoint grid of the reference experiments, before scaling.
const CHECKPOINT_GRID: [u64; 5] = [10_000, 20_000, 30_000, 40_000, 50_000];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSetup {
    pub factor: u32,
    pub seed: u64,
}

impl Default for AugmentationSetup {
    fn default() -> Self {
        AugmentationSetup { factor: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSetup {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitSetup {
    fn default() -> Self {
        SplitSetup { ratio: 0.6, seed: 0 }
    }
}

/// Source of the weights a selective policy starts from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pretrained {
    Checkpoint {
        path: PathBuf,
    },
    /// Train the same architecture on an auxiliary labelled image tree
    /// (`root/<class>/<images>`) with disjoint classes, then transfer.
    Proxy {
        dataset_root: PathBuf,
        iterations: u64,
        #[serde(default)]
        factor: u32,
        #[serde(default)]
        seed: u64,
        /// Where finished proxy checkpoints are cached; defaults to
        /// `<output_dir>/pretrain`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cache_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub run_id: String,
    pub dataset_root: PathBuf,
    #[serde(default)]
    pub arch: Option<Arch>,
    #[serde(default)]
    pub policy: Option<FreezePolicy>,
    #[serde(default)]
    pub descriptor: Option<DescriptorId>,
    /// Defaults to the descriptor's own metric.
    #[serde(default)]
    pub metric: Option<Metric>,
    #[serde(default)]
    pub pretrained: Option<Pretrained>,
    #[serde(default)]
    pub augmentation: AugmentationSetup,
    #[serde(default)]
    pub schedule: Schedule,
    /// When set, training runs to `50_000·scale` iterations with checkpoints
    /// every `10_000·scale`, overriding the schedule.
    #[serde(default)]
    pub scale: Option<f64>,
    #[serde(default)]
    pub split: SplitSetup,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    /// Seed for initialization, batch order and head re-initialization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
    pub output_dir: PathBuf,
}

fn default_input_size() -> usize {
    64
}

fn default_eval_batch() -> usize {
    64
}

impl RunConfig {
    /// A CNN run with default settings.
    pub fn network(run_id: &str, dataset_root: &Path, arch: Arch, policy: FreezePolicy, output_dir: &Path) -> Self {
        RunConfig {
            arch: Some(arch),
            policy: Some(policy),
            ..Self::blank(run_id, dataset_root, output_dir)
        }
    }

    /// A descriptor run with the descriptor's default metric.
    pub fn descriptor(run_id: &str, dataset_root: &Path, descriptor: DescriptorId, output_dir: &Path) -> Self {
        RunConfig {
            descriptor: Some(descriptor),
            ..Self::blank(run_id, dataset_root, output_dir)
        }
    }

    fn blank(run_id: &str, dataset_root: &Path, output_dir: &Path) -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            run_id: run_id.into(),
            dataset_root: dataset_root.into(),
            arch: None,
            policy: None,
            descriptor: None,
            metric: None,
            pretrained: None,
            augmentation: AugmentationSetup::default(),
            schedule: Schedule::default(),
            scale: None,
            split: SplitSetup::default(),
            input_size: default_input_size(),
            seed: 0,
            eval_batch: default_eval_batch(),
            output_dir: output_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return bad(format!("run_id {:?} must be a non-empty file name", self.run_id));
        }
        let network = self.arch.is_some() || self.policy.is_some();
        match (network, self.descriptor.is_some()) {
            (true, true) => return bad("set either arch+policy or descriptor, not both".into()),
            (false, false) => return bad("set arch+policy or descriptor".into()),
            (true, false) if self.arch.is_none() || self.policy.is_none() => {
                return bad("arch and policy must be given together".into())
            }
            _ => {}
        }
        if self.metric.is_some() && self.descriptor.is_none() {
            return bad("metric applies only to descriptor runs".into());
        }
        if let Some(policy) = self.policy {
            if policy.is_selective() && self.pretrained.is_none() {
                return bad(format!("policy {policy} needs a pretrained source"));
            }
            self.effective_schedule().validate()?;
            if self.input_size < 16 {
                return bad("input_size must be at least 16".into());
            }
        }
        if let Some(s) = self.scale {
            if !(s.is_finite() && s > 0.0) || (CHECKPOINT_GRID[0] as f64 * s).round() < 1.0 {
                return bad(format!("scale {s} leaves no iterations"));
            }
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return bad(format!("split ratio {} outside (0, 1)", self.split.ratio));
        }
        if self.eval_batch == 0 {
            return bad("eval_batch must be positive".into());
        }
        Ok(())
    }

    pub fn is_network(&self) -> bool {
        self.arch.is_some()
    }

    pub fn effective_schedule(&self) -> Schedule {
        let mut s = self.schedule.clone();
        if self.scale.is_some() {
            let grid = self.checkpoint_grid();
            s.iterations = *grid.last().expect("grid is non-empty");
            s.eval_every = grid[0];
        }
        s
    }

    /// Iterations at which checkpoints are evaluated.
    pub fn checkpoint_grid(&self) -> Vec<u64> {
        match self.scale {
            Some(scale) => CHECKPOINT_GRID
                .iter()
                .map(|&g| (g as f64 * scale).round() as u64)
                .collect(),
            None => {
                let s = &self.schedule;
                let mut grid: Vec<u64> = if s.eval_every > 0 {
                    (1..=s.iterations / s.eval_every).map(|k| k * s.eval_every).collect()
                } else {
                    Vec::new()
                };
                if grid.last() != Some(&s.iterations) {
                    grid.push(s.iterations);
                }
                grid
            }
        }
    }

    pub fn metric_or_default(&self) -> Option<Metric> {
        self.descriptor.map(|d| self.metric.unwrap_or(d.default_metric()))
    }

    /// Canonical JSON with `output_dir` blanked, so the same experiment
    /// written to another place has the same digest.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        if let Some(Pretrained::Proxy { cache_dir, .. }) = &mut c.pretrained {
            *cache_dir = None;
        }
        serde_json::to_string(&c).expect("config serializes")
    }

    pub fn digest(&self) -> String {
        crate::sha256_hex(self.canonical_json().as_bytes())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(super::io_err(path))?;
        Self::from_json(&text)
    }

    /// Label shown in series tables: the policy or the descriptor name.
    pub fn method_label(&self) -> String {
        match (self.policy, self.descriptor) {
            (Some(p), _) => p.name().to_string(),
            (None, Some(d)) => d.name().to_string(),
            _ => String::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentSeries {
    /// Factors 0, 10 and 100 for the base architecture and policy.
    AugmentationSweep,
    /// Every architecture under full and selective learning.
    StrategySweep,
    /// LBP and HOG against the best network run per architecture.
    BaselineComparison,
}

impl ExperimentSeries {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentSeries::AugmentationSweep => "augmentation_sweep",
            ExperimentSeries::StrategySweep => "strategy_sweep",
            ExperimentSeries::BaselineComparison => "baseline_comparison",
        }
    }
}

impl std::str::FromStr for ExperimentSeries {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            ExperimentSeries::AugmentationSweep,
            ExperimentSeries::StrategySweep,
            ExperimentSeries::BaselineComparison,
        ]
        .into_iter()
        .find(|x| x.name() == s)
        .ok_or_else(|| ExperimentError::Config(format!("unknown series {s}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RunConfig {
        RunConfig::network("r", Path::new("data"), Arch::MiniSqueezenet, FreezePolicy::FullLearning, Path::new("out"))
    }

    #[test]
    fn both_arch_and_descriptor_is_rejected() {
        let mut c = base();
        c.descriptor = Some(DescriptorId::Lbp);
        assert!(matches!(c.validate(), Err(ExperimentError::Config(_))));
        c.arch = None;
        c.policy = None;
        c.validate().unwrap();
    }

    #[test]
    fn scale_maps_the_grid() {
        let mut c = base();
        c.scale = Some(0.01);
        assert_eq!(c.checkpoint_grid(), [100, 200, 300, 400, 500]);
        let s = c.effective_schedule();
        assert_eq!((s.iterations, s.eval_every), (500, 100));
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = base();
        let mut b = base();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn json_round_trip() {
        let c = base();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
