use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use earbench::augment::{augment_dataset, AugmentConfig};
use earbench::evalproto::{split_dataset, DatasetManifest, Split};
use earbench::experiment::{self, ExperimentSeries, RunConfig};
use earbench::surrogate::{write_dataset, SurrogateConfig};

#[derive(Parser)]
#[command(name = "earbench", version, about = "Ear identification experiments under limited data")]
struct Cli {
    /// Worker threads for image and training pools.
    #[arg(long, env = "EARBENCH_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List root/<subject>/<images> into a manifest.
    Ingest {
        root: PathBuf,
        #[arg(long, default_value = "manifest.json")]
        out: PathBuf,
    },
    /// Render augmented variants of every original in a manifest.
    Augment {
        manifest: PathBuf,
        #[arg(long, default_value_t = 10)]
        factor: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Subject-stratified train/test split.
    Split {
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "split.json")]
        out: PathBuf,
    },
    /// Train the configured network and write checkpoints.
    Train(ConfigArgs),
    /// Extract descriptor features for the gallery.
    Extract(ConfigArgs),
    /// Evaluate checkpoints or the feature gallery on the test side.
    Evaluate(ConfigArgs),
    /// All stages of one run.
    Run(ConfigArgs),
    /// One of the comparison series on a shared split.
    Series {
        #[arg(value_parser = ["augmentation_sweep", "strategy_sweep", "baseline_comparison"])]
        series: String,
        #[command(flatten)]
        config: ConfigArgs,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// CMC curves of one or more reports as SVG.
    Plot {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "plot.svg")]
        out: PathBuf,
    },
    /// Write a synthetic ear-like dataset as root/<subject>/<image>.png.
    Synth {
        #[arg(long, default_value_t = 20)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; flags below override its values.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Checkpoint grid scale: 50k·scale iterations, checkpoints every 10k·scale.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    factor: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(p) = &self.dataset_root {
            cfg.dataset_root = p.clone();
        }
        if let Some(p) = &self.output_dir {
            cfg.output_dir = p.clone();
        }
        if let Some(s) = self.scale {
            cfg.scale = Some(s);
        }
        if let Some(n) = self.iterations {
            cfg.schedule.iterations = n;
            cfg.scale = None;
        }
        if let Some(f) = self.factor {
            cfg.augmentation.factor = f;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reuses an existing split in the output directory so stage commands
/// agree with earlier ones.
fn prepare(cfg: &RunConfig) -> Result<experiment::Prepared> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("split.json");
    let split = if path.exists() { Some(Split::load(&path)?) } else { None };
    Ok(experiment::prepare(cfg, split.as_ref())?)
}

fn print_report(r: &earbench::evalproto::ExperimentReport) {
    let it = r.iterations.map(|i| format!(" @{i}")).unwrap_or_default();
    println!(
        "{}{it}: rank1 {:.2}%  rank5 {:.2}%  aucmc {:.2}%",
        r.run_id, r.rank1, r.rank5, r.aucmc
    );
}

fn write_config(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join("config.json"), cfg.to_json())?;
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest { root, out } => {
            let outcome = experiment::ingest(&root)?;
            outcome.manifest.save(&out)?;
            println!(
                "{} images, {} subjects, {} skipped",
                outcome.manifest.len(),
                outcome.manifest.subjects.len(),
                outcome.warnings.len()
            );
        }
        Command::Augment { manifest, factor, seed, out_dir } => {
            let m = DatasetManifest::load(&manifest)?;
            let cfg = AugmentConfig {
                factor,
                master_seed: seed,
                output_size: None,
            };
            let out = augment_dataset(&m, &cfg, &out_dir)?;
            out.save(out_dir.join("augmented_manifest.json"))?;
            println!("{} entries ({} generated)", out.len(), out.len() - m.len());
        }
        Command::Split { manifest, ratio, seed, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let s = split_dataset(&m, ratio, seed)?;
            s.save(&out)?;
            println!("train {} test {} digest {}", s.train.len(), s.test.len(), s.digest());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            if !cfg.is_network() {
                bail!("train needs arch and policy in the config");
            }
            write_config(&cfg)?;
            let record = experiment::train_stage(&cfg, &prepare(&cfg)?)?;
            for (it, p) in &record.checkpoints {
                println!("iteration {it}: {p}");
            }
        }
        Command::Extract(args) => {
            let cfg = args.load()?;
            if cfg.is_network() {
                bail!("extract needs a descriptor in the config");
            }
            write_config(&cfg)?;
            let record = experiment::extract_stage(&cfg, &prepare(&cfg)?)?;
            println!("{} gallery features", record.items.len());
        }
        Command::Evaluate(args) => {
            let cfg = args.load()?;
            for r in experiment::evaluate_stage(&cfg)? {
                print_report(&r);
            }
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let outcome = experiment::run(&cfg)?;
            for r in &outcome.checkpoint_reports {
                print_report(r);
            }
            if outcome.checkpoint_reports.is_empty() {
                print_report(&outcome.report);
            }
        }
        Command::Series { series, config, jobs } => {
            let series: ExperimentSeries = series.parse()?;
            let base = config.load()?;
            let outcome = experiment::run_series(series, &base, jobs)?;
            print!("{}", experiment::rows_to_csv(&outcome.rows));
            println!("table: {}", outcome.table_path.display());
        }
        Command::Plot { reports, out } => {
            experiment::plot_cmc_files(&reports, &out)?;
            println!("{}", out.display());
        }
        Command::Synth { classes, per_class, seed, out } => {
            let m = write_dataset(&SurrogateConfig::new(classes, per_class, seed), &out)?;
            println!("{} images in {}", m.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
