use std::path::{Path, PathBuf};

use earbench::descriptors::DescriptorId;
use earbench::evalproto::{CmcCurve, Counts, ExperimentReport};
use earbench::experiment::{
    evaluate_stage, ingest, render_cmc, run, run_series, ExperimentError, ExperimentSeries, Pretrained, RunConfig, Stage,
};
use earbench::imagecore::{save_png, Image};
use earbench::nn::{Arch, FreezePolicy};
use earbench::surrogate::{generate, subject_name, write_dataset, SurrogateConfig};

fn png(path: &Path, shade: u8) {
    save_png(&Image::filled(6, 6, &[shade, 40, 90]).unwrap(), path).unwrap();
}

#[test]
fn ingest_lists_subjects_in_order() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    png(&root.join("b/1.png"), 1);
    png(&root.join("b/2.png"), 2);
    png(&root.join("b/3.png"), 3);
    png(&root.join("a/1.png"), 4);
    png(&root.join("a/2.png"), 5);
    png(&root.join(".cache/x.png"), 6);
    std::fs::write(root.join("a/.DS_Store"), b"junk").unwrap();
    let out = ingest(root).unwrap();
    assert_eq!(out.manifest.len(), 5);
    assert_eq!(out.manifest.subjects, ["a", "b"]);
    assert!(out.warnings.is_empty());
}

#[test]
fn ingest_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(ingest(tmp.path()), Err(ExperimentError::NoSubjects { found: 0, .. })));
    png(&tmp.path().join("a/1.png"), 1);
    std::fs::create_dir(tmp.path().join("b")).unwrap();
    std::fs::write(tmp.path().join("b/1.png"), b"not a png").unwrap();
    assert!(matches!(ingest(tmp.path()), Err(ExperimentError::EmptySubject { subject }) if subject == "b"));
}

#[test]
fn corrupt_file_is_skipped_with_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    for i in 0..9 {
        png(&tmp.path().join(format!("s{}/{i}.png", i % 2)), i as u8);
    }
    std::fs::write(tmp.path().join("s0/bad.png"), b"\x89PNG broken").unwrap();
    let out = ingest(tmp.path()).unwrap();
    assert_eq!(out.manifest.len(), 9);
    assert_eq!(out.warnings.len(), 1);
    assert!(out.warnings[0].path.ends_with("s0/bad.png"));
}

/// Four subjects, each with four copies of one image, so every probe has an
/// exact duplicate in the gallery.
fn duplicate_set(root: &Path) {
    let protos = generate(&SurrogateConfig::new(4, 1, 6));
    for (img, class) in protos {
        for k in 0..4 {
            save_png(&img, root.join(subject_name(class)).join(format!("{k}.png"))).unwrap();
        }
    }
}

#[test]
fn descriptor_run_on_duplicates_is_perfect_and_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    duplicate_set(&data);
    let out = tmp.path().join("run");
    let cfg = RunConfig::descriptor("lbp", &data, DescriptorId::Lbp, &out);
    let first = run(&cfg).unwrap();
    assert_eq!(first.report.rank1, 100.0);
    assert_eq!(first.report.counts, Counts { train: 8, test: 8, subjects: 4 });
    for f in ["manifest.json", "split.json", "report.json", "cmc.csv", "plot.svg", "artifacts.json", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let artifacts = std::fs::read(out.join("artifacts.json")).unwrap();
    let report = std::fs::read(out.join("report.json")).unwrap();
    let second = run(&cfg).unwrap();
    assert_eq!(second.report, first.report);
    assert_eq!(second.report.config_digest, cfg.digest());
    assert_eq!(std::fs::read(out.join("artifacts.json")).unwrap(), artifacts);
    assert_eq!(std::fs::read(out.join("report.json")).unwrap(), report);
}

#[test]
fn arch_and_descriptor_together_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let mut cfg = RunConfig::descriptor("x", tmp.path(), DescriptorId::Hog, &out);
    cfg.arch = Some(Arch::MiniAlexnet);
    cfg.policy = Some(FreezePolicy::FullLearning);
    assert!(matches!(run(&cfg), Err(ExperimentError::Config(_))));
    assert!(!out.exists());
}

fn toy_network(data: &Path, out: &Path, policy: FreezePolicy) -> RunConfig {
    let mut cfg = RunConfig::network("toy", data, Arch::MiniSqueezenet, policy, out);
    cfg.input_size = 32;
    cfg.scale = Some(0.001);
    cfg.schedule.batch_size = 8;
    cfg
}

#[test]
fn failed_stage_is_tagged_and_quarantined() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&SurrogateConfig::new(3, 4, 1), &data).unwrap();
    let out = tmp.path().join("run");
    let mut cfg = toy_network(&data, &out, FreezePolicy::SelectiveAllButHead);
    cfg.pretrained = Some(Pretrained::Checkpoint {
        path: tmp.path().join("missing.earn"),
    });
    let err = run(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Pretrain));
    assert!(!out.exists());
    assert!(tmp.path().join("run.quarantine/split.json").exists());
}

#[test]
fn network_run_evaluates_the_checkpoint_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&SurrogateConfig::new(3, 4, 2), &data).unwrap();
    let out = tmp.path().join("run");
    let mut cfg = toy_network(&data, &out, FreezePolicy::FullLearning);
    cfg.augmentation.factor = 2;
    let outcome = run(&cfg).unwrap();
    let its: Vec<Option<u64>> = outcome.checkpoint_reports.iter().map(|r| r.iterations).collect();
    assert_eq!(its, [10, 20, 30, 40, 50].map(Some));
    assert_eq!(outcome.report, outcome.checkpoint_reports[4]);
    assert!(out.join("checkpoints/iter_0000050.earn").exists());
    assert!(out.join("reports/iter_0000010.json").exists());

    // Evaluation refuses a config that differs from the one trained.
    cfg.seed += 1;
    let err = evaluate_stage(&cfg).unwrap_err();
    assert!(matches!(
        err,
        ExperimentError::Stage { stage: Stage::Evaluate, ref source } if matches!(**source, ExperimentError::RecordMismatch(_))
    ));
}

#[test]
fn augmentation_sweep_has_fifteen_stable_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    write_dataset(&SurrogateConfig::new(3, 4, 3), &data).unwrap();
    let base = toy_network(&data, &tmp.path().join("a"), FreezePolicy::FullLearning);
    let a = run_series(ExperimentSeries::AugmentationSweep, &base, 1).unwrap();
    assert_eq!(a.rows.len(), 15);
    let factors: Vec<u32> = a.rows.iter().map(|r| r.factor).collect();
    assert_eq!(factors, [[0; 5], [10; 5], [100; 5]].concat());
    assert!(a.runs.iter().all(|(_, o)| o.report.split_digest == a.split_digest));

    let mut again = base.clone();
    again.output_dir = tmp.path().join("b");
    let b = run_series(ExperimentSeries::AugmentationSweep, &again, 2).unwrap();
    assert_eq!(
        std::fs::read(&a.table_path).unwrap(),
        std::fs::read(&b.table_path).unwrap()
    );
}

#[test]
fn strategy_and_baseline_series() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let proxy = tmp.path().join("proxy");
    write_dataset(&SurrogateConfig::new(3, 3, 4), &data).unwrap();
    write_dataset(&SurrogateConfig::new(3, 2, 40), &proxy).unwrap();
    let mut base = toy_network(&data, &tmp.path().join("s"), FreezePolicy::FullLearning);
    base.pretrained = Some(Pretrained::Proxy {
        dataset_root: proxy,
        iterations: 10,
        factor: 0,
        seed: 0,
        cache_dir: None,
    });
    let s = run_series(ExperimentSeries::StrategySweep, &base, 1).unwrap();
    assert_eq!(s.rows.len(), 30);
    let mut sorted = s.rows.clone();
    sorted.sort_by(|a, b| a.run_id.cmp(&b.run_id).then(a.iterations.cmp(&b.iterations)));
    assert_eq!(sorted, s.rows);
    let pretrained: Vec<PathBuf> = std::fs::read_dir(tmp.path().join("s/pretrain"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(pretrained.len(), 3);

    base.output_dir = tmp.path().join("c");
    let c = run_series(ExperimentSeries::BaselineComparison, &base, 2).unwrap();
    let ids: Vec<&str> = c.rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(c.rows.len(), 5);
    assert!(ids.contains(&"lbp") && ids.contains(&"hog"));
    let csv = std::fs::read_to_string(&c.table_path).unwrap();
    assert!(csv.starts_with("run_id,iterations,factor,policy,rank1,rank5,aucmc\n"));
}

fn flat_report(run_id: &str, values: Vec<f64>) -> ExperimentReport {
    ExperimentReport {
        schema_version: 1,
        run_id: run_id.into(),
        rank1: values[0],
        rank5: values[4.min(values.len() - 1)],
        aucmc: values.iter().sum::<f64>() / values.len() as f64,
        curve: CmcCurve { values },
        config_digest: String::new(),
        split_digest: String::new(),
        split_rule: String::new(),
        iterations: None,
        counts: Counts { train: 0, test: 1, subjects: 4 },
    }
}

fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .map(|l| {
            let pts = l.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>");
            pts.split(' ')
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    (x.parse().unwrap(), y.parse().unwrap())
                })
                .collect()
        })
        .collect()
}

#[test]
fn plot_of_a_perfect_curve_is_flat() {
    let svg = render_cmc(&[flat_report("ideal", vec![100.0; 4])]).unwrap();
    let lines = polylines(&svg);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].len(), 4);
    assert!(lines[0].iter().all(|p| p.1 == lines[0][0].1));
}

#[test]
fn plot_legend_follows_input_order_and_is_stable() {
    let reports = [
        flat_report("zeta <b>", vec![25.0, 50.0, 75.0, 100.0]),
        flat_report("alpha", vec![100.0; 4]),
    ];
    let svg = render_cmc(&reports).unwrap();
    assert_eq!(polylines(&svg).len(), 2);
    let z = svg.find("zeta &lt;b&gt;").unwrap();
    let a = svg.find(">alpha<").unwrap();
    assert!(z < a);
    assert_eq!(render_cmc(&reports).unwrap(), svg);
    assert!(render_cmc(&[]).is_err());
}
