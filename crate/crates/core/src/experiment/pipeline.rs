use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Pretrained, RunConfig};
use super::ingest::ingest;
use super::plot::plot_cmc;
use super::{io_err, tag, ExperimentError, Stage};
use crate::augment::{augment_dataset, AugmentConfig};
use crate::descriptors::{load_features, save_features, DescriptorConfig, Gallery, GalleryScorer};
use crate::evalproto::{evaluate, DatasetManifest, ExperimentReport, ManifestEntry, Probe, ReportContext, Split, split_dataset};
use crate::imagecore::{load_image, Image};
use crate::nn::{
    build_model, load_checkpoint, save_checkpoint, train, Arch, ArchSpec, FreezePolicy, ImageSource, Init, Model,
    NetworkScorer, PresetOptions, Schedule,
};

const TRAIN_RECORD: &str = "train_record.json";
const FEATURE_RECORD: &str = "features/index.json";

/// Inputs shared by the train and extract stages.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: Split,
    /// Train side of the split followed by its augmented variants.
    pub train: DatasetManifest,
}

/// Provenance of a training stage, checked again before evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub config_digest: String,
    pub split_digest: String,
    pub arch: Arch,
    pub input_size: usize,
    pub num_classes: usize,
    pub reinitialized_layers: Vec<String>,
    /// `(iteration, path relative to the output directory)`.
    pub checkpoints: Vec<(u64, String)>,
}

/// Gallery features written by the extract stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub config_digest: String,
    pub split_digest: String,
    pub descriptor: DescriptorConfig,
    /// `(path relative to the output directory, subject index)`.
    pub items: Vec<(String, usize)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Report of the final checkpoint, or of the descriptor gallery.
    pub report: ExperimentReport,
    /// One report per evaluated checkpoint; empty for descriptor runs.
    pub checkpoint_reports: Vec<ExperimentReport>,
    pub output_dir: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    crate::write_bytes(path, text.as_bytes()).map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

fn reset_dir(dir: &Path) -> Result<(), ExperimentError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Decodes entries in parallel, labelling each with its index in `subjects`.
pub fn load_labelled(entries: &[ManifestEntry], subjects: &[String]) -> Result<Vec<(Image, usize)>, ExperimentError> {
    entries
        .par_iter()
        .map(|e| {
            let label = subjects
                .binary_search(&e.subject)
                .map_err(|_| ExperimentError::Config(format!("unknown subject {}", e.subject)))?;
            Ok((load_image(&e.path)?, label))
        })
        .collect()
}

/// Ingests (unless a split is supplied), splits and augments the train side.
/// Writes `manifest.json`, `split.json` and `augmented_manifest.json`.
pub fn prepare(cfg: &RunConfig, split: Option<&Split>) -> Result<Prepared, ExperimentError> {
    let out = &cfg.output_dir;
    let split = match split {
        Some(s) => s.clone(),
        None => {
            let outcome = tag(Stage::Ingest, ingest(&cfg.dataset_root))?;
            if !outcome.warnings.is_empty() {
                log::warn!("{} unreadable files skipped", outcome.warnings.len());
            }
            tag(Stage::Ingest, outcome.manifest.save(out.join("manifest.json")))?;
            tag(Stage::Split, split_dataset(&outcome.manifest, cfg.split.ratio, cfg.split.seed))?
        }
    };
    tag(Stage::Split, split.save(out.join("split.json")))?;
    let train_side = tag(Stage::Split, split.train_manifest())?;
    let aug = AugmentConfig {
        factor: cfg.augmentation.factor,
        master_seed: cfg.augmentation.seed,
        output_size: None,
    };
    let aug_dir = out.join("augmented");
    if aug_dir.exists() {
        tag(Stage::Augment, reset_dir(&aug_dir))?;
    }
    let train = tag(Stage::Augment, augment_dataset(&train_side, &aug, &aug_dir))?;
    tag(Stage::Augment, train.save(out.join("augmented_manifest.json")))?;
    Ok(Prepared { split, train })
}

fn network_spec(arch: Arch, classes: usize, input_size: usize) -> Result<ArchSpec, ExperimentError> {
    Ok(arch.spec(PresetOptions::new(classes).with_input_size(input_size))?)
}

fn proxy_key(
    arch: Arch,
    input_size: usize,
    manifest: &DatasetManifest,
    schedule: &Schedule,
    factor: u32,
    seed: u64,
) -> String {
    let text = serde_json::json!({
        "arch": arch,
        "input_size": input_size,
        "manifest": crate::sha256_hex(manifest.to_json().as_bytes()),
        "schedule": schedule,
        "factor": factor,
        "seed": seed,
    });
    crate::sha256_hex(text.to_string().as_bytes())
}

/// Trains `arch` under full learning on the proxy dataset and returns the
/// checkpoint path. Finished checkpoints are cached by content key.
pub fn pretrain_proxy(cfg: &RunConfig) -> Result<PathBuf, ExperimentError> {
    let (Some(arch), Some(Pretrained::Proxy { dataset_root, iterations, factor, seed, cache_dir })) =
        (cfg.arch, &cfg.pretrained)
    else {
        return Err(ExperimentError::Config("no proxy pretraining configured".into()));
    };
    let cache = cache_dir.clone().unwrap_or_else(|| cfg.output_dir.join("pretrain"));
    let manifest = ingest(dataset_root)?.manifest;
    let schedule = Schedule {
        iterations: *iterations,
        eval_every: 0,
        ..cfg.schedule.clone()
    };
    let key = proxy_key(arch, cfg.input_size, &manifest, &schedule, *factor, *seed);
    let path = cache.join(format!("{}_{}.earn", arch.name(), &key[..16]));
    if path.exists() {
        log::info!("reusing pretrained {}", path.display());
        return Ok(path);
    }
    let work = cache.join(format!("work_{}", &key[..16]));
    reset_dir(&work)?;
    let aug = AugmentConfig {
        factor: *factor,
        master_seed: *seed,
        output_size: None,
    };
    let all = augment_dataset(&manifest, &aug, &work.join("augmented"))?;
    let items = load_labelled(&all.entries, &all.subjects)?;
    let source = ImageSource::new(items, cfg.input_size)?;
    let spec = network_spec(arch, all.subjects.len(), cfg.input_size)?;
    let mut model = Model::random(spec, *seed)?;
    log::info!("pretraining {} on {} proxy classes", arch, all.subjects.len());
    train(&mut model, &source, &schedule, *seed, None, &mut |_| Ok(()))?;
    let tmp = work.join("model.earn");
    save_checkpoint(&model, &tmp)?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    std::fs::remove_dir_all(&work).map_err(io_err(&work))?;
    Ok(path)
}

fn initial_model(cfg: &RunConfig, spec: ArchSpec, policy: FreezePolicy) -> Result<(Model<f32>, Vec<String>), ExperimentError> {
    if !policy.is_selective() {
        return Ok((Model::random(spec, cfg.seed)?, Vec::new()));
    }
    let path = match &cfg.pretrained {
        Some(Pretrained::Checkpoint { path }) => path.clone(),
        Some(Pretrained::Proxy { .. }) => tag(Stage::Pretrain, pretrain_proxy(cfg))?,
        None => return Err(ExperimentError::Config(format!("policy {policy} needs a pretrained source"))),
    };
    let (mut model, report) = tag(Stage::Pretrain, build_model(spec, &Init::FromCheckpoint { path, seed: cfg.seed }))?;
    let mut reinit = report.reinitialized_layers;
    for name in model.apply_freeze_policy(policy, cfg.seed)? {
        if !reinit.contains(&name) {
            reinit.push(name);
        }
    }
    Ok((model, reinit))
}

/// Trains the configured network, writing `checkpoints/` and `train_record.json`.
pub fn train_stage(cfg: &RunConfig, prepared: &Prepared) -> Result<TrainRecord, ExperimentError> {
    let (Some(arch), Some(policy)) = (cfg.arch, cfg.policy) else {
        return Err(ExperimentError::Config("train stage needs arch and policy".into()));
    };
    let classes = prepared.split.subjects.len();
    let spec = tag(Stage::Train, network_spec(arch, classes, cfg.input_size))?;
    let (mut model, reinitialized_layers) = initial_model(cfg, spec, policy)?;
    let items = tag(Stage::Train, load_labelled(&prepared.train.entries, &prepared.split.subjects))?;
    let source = tag(Stage::Train, ImageSource::new(items, cfg.input_size))?;
    let ckpt_dir = cfg.output_dir.join("checkpoints");
    tag(Stage::Train, reset_dir(&ckpt_dir))?;
    let schedule = cfg.effective_schedule();
    let log = tag(
        Stage::Train,
        train(&mut model, &source, &schedule, cfg.seed, Some(&ckpt_dir), &mut |m| {
            log::info!("{}: checkpoint at iteration {}", cfg.run_id, m.iteration());
            Ok(())
        }),
    )?;
    let grid = cfg.checkpoint_grid();
    let checkpoints = log
        .checkpoints
        .iter()
        .filter(|(it, _)| grid.contains(it))
        .map(|(it, p)| (*it, relative(&cfg.output_dir, p)))
        .collect();
    let record = TrainRecord {
        config_digest: cfg.digest(),
        split_digest: prepared.split.digest(),
        arch,
        input_size: cfg.input_size,
        num_classes: classes,
        reinitialized_layers,
        checkpoints,
    };
    tag(Stage::Write, write_json(&cfg.output_dir.join(TRAIN_RECORD), &record))?;
    Ok(record)
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn descriptor_config(cfg: &RunConfig) -> Result<DescriptorConfig, ExperimentError> {
    let id = cfg
        .descriptor
        .ok_or_else(|| ExperimentError::Config("extract stage needs a descriptor".into()))?;
    let mut dc = DescriptorConfig::new(id);
    dc.metric = cfg.metric_or_default().expect("descriptor is set");
    Ok(dc)
}

/// Extracts gallery features from the train side into `features/`.
pub fn extract_stage(cfg: &RunConfig, prepared: &Prepared) -> Result<FeatureRecord, ExperimentError> {
    let descriptor = descriptor_config(cfg)?;
    let dir = cfg.output_dir.join("features");
    tag(Stage::Extract, reset_dir(&dir))?;
    let subjects = &prepared.split.subjects;
    let items = prepared
        .train
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| -> Result<(String, usize), ExperimentError> {
            let label = subjects
                .binary_search(&e.subject)
                .map_err(|_| ExperimentError::Config(format!("unknown subject {}", e.subject)))?;
            let f = descriptor.extract(&load_image(&e.path)?)?;
            let path = dir.join(format!("{i:06}.ebfv"));
            save_features(&f, &path)?;
            Ok((relative(&cfg.output_dir, &path), label))
        })
        .collect::<Result<Vec<_>, _>>();
    let record = FeatureRecord {
        config_digest: cfg.digest(),
        split_digest: prepared.split.digest(),
        descriptor,
        items: tag(Stage::Extract, items)?,
    };
    tag(Stage::Write, write_json(&cfg.output_dir.join(FEATURE_RECORD), &record))?;
    Ok(record)
}

fn check_provenance(cfg: &RunConfig, split: &Split, config: &str, split_digest: &str) -> Result<(), ExperimentError> {
    if config != cfg.digest() {
        return Err(ExperimentError::RecordMismatch("config digest differs".into()));
    }
    if split_digest != split.digest() {
        return Err(ExperimentError::RecordMismatch("split digest differs".into()));
    }
    Ok(())
}

fn evaluate_inner(cfg: &RunConfig) -> Result<Vec<ExperimentReport>, ExperimentError> {
    let out = &cfg.output_dir;
    let split = Split::load(out.join("split.json"))?;
    let subjects = split.subjects.len();
    let probes: Vec<Probe> = load_labelled(&split.test, &split.subjects)?
        .into_iter()
        .map(|(image, label)| Probe { image, label })
        .collect();
    let ctx = |iterations| ReportContext {
        run_id: cfg.run_id.clone(),
        config_digest: cfg.digest(),
        split_digest: split.digest(),
        split_rule: split.rule.clone(),
        iterations,
        train_count: split.train.len(),
    };
    if cfg.is_network() {
        let record: TrainRecord = read_json(&out.join(TRAIN_RECORD))?;
        check_provenance(cfg, &split, &record.config_digest, &record.split_digest)?;
        if record.num_classes != subjects {
            return Err(ExperimentError::RecordMismatch(format!(
                "model has {} classes, split has {subjects} subjects",
                record.num_classes
            )));
        }
        let spec = network_spec(record.arch, subjects, record.input_size)?;
        let mut reports = Vec::new();
        for (it, rel) in &record.checkpoints {
            let model = load_checkpoint(&out.join(rel), spec.clone())?;
            let report = evaluate(&NetworkScorer::new(&model), &probes, subjects, cfg.eval_batch, &ctx(Some(*it)))?;
            report.save(out.join(format!("reports/iter_{it:07}.json")))?;
            reports.push(report);
        }
        if reports.is_empty() {
            return Err(ExperimentError::RecordMismatch("no checkpoints on the evaluation grid".into()));
        }
        Ok(reports)
    } else {
        let record: FeatureRecord = read_json(&out.join(FEATURE_RECORD))?;
        check_provenance(cfg, &split, &record.config_digest, &record.split_digest)?;
        let entries = record
            .items
            .par_iter()
            .map(|(rel, label)| Ok((load_features(out.join(rel))?, *label)))
            .collect::<Result<Vec<_>, ExperimentError>>()?;
        let scorer = GalleryScorer {
            gallery: Gallery::new(entries)?,
            config: record.descriptor,
            num_subjects: subjects,
        };
        Ok(vec![evaluate(&scorer, &probes, subjects, cfg.eval_batch, &ctx(None))?])
    }
}

/// Scores the test side with every recorded checkpoint (or the feature
/// gallery) and writes `report.json`, `cmc.csv` and `plot.svg` for the last.
pub fn evaluate_stage(cfg: &RunConfig) -> Result<Vec<ExperimentReport>, ExperimentError> {
    let reports = tag(Stage::Evaluate, evaluate_inner(cfg))?;
    let last = reports.last().expect("at least one report");
    let out = &cfg.output_dir;
    tag(Stage::Write, last.save(out.join("report.json")))?;
    let csv = out.join("cmc.csv");
    tag(Stage::Write, crate::write_bytes(&csv, last.curve.to_csv().as_bytes()).map_err(io_err(&csv)))?;
    tag(Stage::Write, plot_cmc(std::slice::from_ref(last), &out.join("plot.svg")))?;
    Ok(reports)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ExperimentError> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Writes `artifacts.json`: the SHA-256 of every file under the output
/// directory, sorted by relative path.
pub fn write_artifacts(out: &Path) -> Result<(), ExperimentError> {
    let target = out.join("artifacts.json");
    let mut files = Vec::new();
    collect_files(out, &mut files)?;
    files.retain(|p| p != &target);
    let mut digests = files
        .par_iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(io_err(p))?;
            Ok((relative(out, p), crate::sha256_hex(&bytes)))
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    digests.sort();
    let map: serde_json::Map<String, serde_json::Value> =
        digests.into_iter().map(|(k, v)| (k, v.into())).collect();
    write_json(&target, &map)
}

fn quarantine(dir: &Path) {
    if !dir.exists() {
        return;
    }
    let mut q = dir.as_os_str().to_owned();
    q.push(".quarantine");
    let q = PathBuf::from(q);
    if q.exists() {
        let _ = std::fs::remove_dir_all(&q);
    }
    match std::fs::rename(dir, &q) {
        Ok(()) => log::warn!("partial artifacts moved to {}", q.display()),
        Err(e) => log::warn!("could not quarantine {}: {e}", dir.display()),
    }
}

pub fn run(cfg: &RunConfig) -> Result<RunOutcome, ExperimentError> {
    run_with_split(cfg, None)
}

/// Full run. A supplied split replaces ingest and splitting. On failure the
/// output directory is renamed with a `.quarantine` suffix.
pub fn run_with_split(cfg: &RunConfig, split: Option<&Split>) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let out = cfg.output_dir.clone();
    let result = (|| {
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        for stale in ["checkpoints", "reports", "features"] {
            let d = out.join(stale);
            if d.exists() {
                std::fs::remove_dir_all(&d).map_err(io_err(&d))?;
            }
        }
        let cfg_path = out.join("config.json");
        crate::write_bytes(&cfg_path, cfg.to_json().as_bytes()).map_err(io_err(&cfg_path))?;
        let prepared = prepare(cfg, split)?;
        if cfg.is_network() {
            train_stage(cfg, &prepared)?;
        } else {
            extract_stage(cfg, &prepared)?;
        }
        let reports = evaluate_stage(cfg)?;
        tag(Stage::Write, write_artifacts(&out))?;
        Ok(reports)
    })();
    match result {
        Ok(mut reports) => {
            let report = reports.pop().expect("at least one report");
            reports.push(report.clone());
            let checkpoint_reports = if cfg.is_network() { reports } else { Vec::new() };
            Ok(RunOutcome {
                report,
                checkpoint_reports,
                output_dir: out,
            })
        }
        Err(e) => {
            quarantine(&out);
            Err(e)
        }
    }
}
