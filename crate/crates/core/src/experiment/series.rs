use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::config::{ExperimentSeries, Pretrained, RunConfig};
use super::ingest::ingest;
use super::pipeline::{run_with_split, RunOutcome};
use super::{io_err, tag, ExperimentError, Stage};
use crate::descriptors::DescriptorId;
use crate::evalproto::{split_dataset, ExperimentReport};
use crate::nn::{Arch, FreezePolicy};
use crate::rng::derive_seed;

const SWEEP_FACTORS: [u32; 3] = [0, 10, 100];

/// One line of a series table.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRow {
    pub run_id: String,
    pub iterations: Option<u64>,
    pub factor: u32,
    /// Freeze policy or descriptor name.
    pub method: String,
    pub rank1: f64,
    pub rank5: f64,
    pub aucmc: f64,
}

impl SeriesRow {
    fn new(cfg: &RunConfig, r: &ExperimentReport) -> Self {
        SeriesRow {
            run_id: cfg.run_id.clone(),
            iterations: r.iterations,
            factor: cfg.augmentation.factor,
            method: cfg.method_label(),
            rank1: r.rank1,
            rank5: r.rank5,
            aucmc: r.aucmc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeriesOutcome {
    pub rows: Vec<SeriesRow>,
    pub runs: Vec<(RunConfig, RunOutcome)>,
    pub split_digest: String,
    pub table_path: PathBuf,
}

pub fn rows_to_csv(rows: &[SeriesRow]) -> String {
    let mut s = String::from("run_id,iterations,factor,policy,rank1,rank5,aucmc\n");
    for r in rows {
        let it = r.iterations.map(|i| i.to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4}\n",
            r.run_id, it, r.factor, r.method, r.rank1, r.rank5, r.aucmc
        ));
    }
    s
}

/// The policy that stands for "selective" on each architecture.
pub fn selective_policy(arch: Arch) -> FreezePolicy {
    match arch {
        Arch::MiniSqueezenet => FreezePolicy::SelectiveAllButHead,
        _ => FreezePolicy::SelectiveFc,
    }
}

fn id_seed(master: u64, run_id: &str) -> u64 {
    let h = crate::sha256_hex(run_id.as_bytes());
    derive_seed(master, u64::from_str_radix(&h[..16], 16).expect("hex digest"))
}

fn derived(base: &RunConfig, run_id: String) -> RunConfig {
    let mut c = base.clone();
    c.seed = id_seed(base.seed, &run_id);
    c.augmentation.seed = id_seed(base.augmentation.seed, &run_id);
    c.output_dir = base.output_dir.join(&run_id);
    if let Some(Pretrained::Proxy { cache_dir, .. }) = &mut c.pretrained {
        cache_dir.get_or_insert_with(|| base.output_dir.join("pretrain"));
    }
    c.run_id = run_id;
    c
}

fn network(base: &RunConfig, arch: Arch, policy: FreezePolicy, factor: u32, run_id: String) -> RunConfig {
    let mut c = derived(base, run_id);
    c.arch = Some(arch);
    c.policy = Some(policy);
    c.descriptor = None;
    c.metric = None;
    c.augmentation.factor = factor;
    c
}

fn strategy_configs(base: &RunConfig) -> Vec<RunConfig> {
    let mut out = Vec::new();
    for arch in Arch::ALL {
        for policy in [FreezePolicy::FullLearning, selective_policy(arch)] {
            let id = format!("{}_{}", arch.name(), policy.name());
            out.push(network(base, arch, policy, base.augmentation.factor, id));
        }
    }
    out
}

/// Expands a series into its runs, each with its own output directory
/// under the base output directory and seeds derived from its run id.
pub fn series_configs(series: ExperimentSeries, base: &RunConfig) -> Result<Vec<RunConfig>, ExperimentError> {
    let configs = match series {
        ExperimentSeries::AugmentationSweep => {
            let (Some(arch), Some(policy)) = (base.arch, base.policy) else {
                return Err(ExperimentError::Config("augmentation_sweep needs a network base config".into()));
            };
            SWEEP_FACTORS
                .iter()
                .map(|&f| network(base, arch, policy, f, format!("{}_{}_f{f:03}", arch.name(), policy.name())))
                .collect()
        }
        ExperimentSeries::StrategySweep => strategy_configs(base),
        ExperimentSeries::BaselineComparison => {
            let mut out = strategy_configs(base);
            for d in [DescriptorId::Lbp, DescriptorId::Hog] {
                let mut c = derived(base, d.name().to_string());
                c.arch = None;
                c.policy = None;
                c.pretrained = None;
                c.descriptor = Some(d);
                c.metric = None;
                out.push(c);
            }
            out
        }
    };
    for c in &configs {
        c.validate()?;
    }
    Ok(configs)
}

fn run_all(
    configs: &[RunConfig],
    split: &crate::evalproto::Split,
    jobs: usize,
) -> Vec<Result<RunOutcome, ExperimentError>> {
    let slots: Vec<Mutex<Option<Result<RunOutcome, ExperimentError>>>> =
        configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, configs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cfg) = configs.get(i) else { break };
                log::info!("series run {}", cfg.run_id);
                let r = run_with_split(cfg, Some(split));
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("slot lock").expect("every run finished"))
        .collect()
}

fn best_per_arch<'a>(runs: &'a [(RunConfig, RunOutcome)]) -> Vec<&'a (RunConfig, RunOutcome)> {
    let mut best: Vec<&(RunConfig, RunOutcome)> = Vec::new();
    for arch in Arch::ALL {
        let pick = runs
            .iter()
            .filter(|(c, _)| c.arch == Some(arch))
            .max_by(|a, b| a.1.report.rank1.total_cmp(&b.1.report.rank1).then(b.0.run_id.cmp(&a.0.run_id)));
        best.extend(pick);
    }
    best
}

/// Runs every config of a series on one shared split and writes
/// `series.csv` to the base output directory. `jobs` runs execute at once.
pub fn run_series(series: ExperimentSeries, base: &RunConfig, jobs: usize) -> Result<SeriesOutcome, ExperimentError> {
    let configs = series_configs(series, base)?;
    let out = &base.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let manifest = tag(Stage::Ingest, ingest(&base.dataset_root))?.manifest;
    tag(Stage::Ingest, manifest.save(out.join("manifest.json")))?;
    let split = tag(Stage::Split, split_dataset(&manifest, base.split.ratio, base.split.seed))?;
    tag(Stage::Split, split.save(out.join("split.json")))?;
    let digest = split.digest();

    let mut runs = Vec::new();
    for (cfg, r) in configs.iter().zip(run_all(&configs, &split, jobs)) {
        runs.push((cfg.clone(), r?));
    }
    for (_, o) in &runs {
        let all = o.checkpoint_reports.iter().chain(std::iter::once(&o.report));
        if all.into_iter().any(|r| r.split_digest != digest) {
            return Err(ExperimentError::SplitDrift);
        }
    }

    let mut rows: Vec<SeriesRow> = match series {
        ExperimentSeries::BaselineComparison => {
            let descriptors = runs.iter().filter(|(c, _)| c.descriptor.is_some());
            descriptors
                .chain(best_per_arch(&runs))
                .map(|(c, o)| SeriesRow::new(c, &o.report))
                .collect()
        }
        _ => runs
            .iter()
            .flat_map(|(c, o)| o.checkpoint_reports.iter().map(move |r| SeriesRow::new(c, r)))
            .collect(),
    };
    rows.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.iterations.cmp(&b.iterations)));
    let table_path = out.join("series.csv");
    write_table(&table_path, &rows)?;
    Ok(SeriesOutcome {
        rows,
        runs,
        split_digest: digest,
        table_path,
    })
}

fn write_table(path: &Path, rows: &[SeriesRow]) -> Result<(), ExperimentError> {
    crate::write_bytes(path, rows_to_csv(rows).as_bytes()).map_err(io_err(path))
}
