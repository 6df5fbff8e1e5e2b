use earbench::imagecore::Image;
use earbench::nn::{
    loss_and_grads, save_checkpoint, train, Arch, FreezePolicy, ImageSource, Model, NetworkScorer, NnError, PresetOptions,
    SampleSource, Schedule,
};
use earbench::evalproto::ProbeScorer;

/// 16 solid-color images: reddish for class 0, bluish for class 1.
fn toy_set() -> Vec<(Image, usize)> {
    (0..16)
        .map(|i| {
            let class = i % 2;
            let shade = 120 + 16 * (i / 2) as u8;
            let px = if class == 0 { [shade, 30, 40] } else { [40, 30, shade] };
            (Image::filled(16, 16, &px).unwrap(), class)
        })
        .collect()
}

fn schedule(iterations: u64) -> Schedule {
    Schedule {
        iterations,
        batch_size: 8,
        log_every: 10,
        ..Schedule::default()
    }
}

fn accuracy(model: &Model<f32>, set: &[(Image, usize)]) -> f64 {
    let images: Vec<Image> = set.iter().map(|(i, _)| i.clone()).collect();
    let scores = NetworkScorer::new(model).score_batch(&images).unwrap();
    let hits = scores
        .iter()
        .zip(set)
        .filter(|(row, (_, y))| {
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap();
            best == *y
        })
        .count();
    hits as f64 / set.len() as f64
}

fn spec(arch: Arch) -> earbench::nn::ArchSpec {
    arch.spec(PresetOptions::new(2).with_input_size(32)).unwrap()
}

#[test]
fn squeezenet_memorizes_toy_set_within_200_iterations() {
    let set = toy_set();
    let source = ImageSource::new(set.clone(), 32).unwrap();
    let mut model = Model::random(spec(Arch::MiniSqueezenet), 1).unwrap();
    train(&mut model, &source, &schedule(200), 5, None, &mut |_| Ok(())).unwrap();
    assert_eq!(model.iteration(), 200);
    assert_eq!(accuracy(&model, &set), 1.0);
}

fn initial_loss(model: &Model<f32>, source: &ImageSource) -> f64 {
    let idx: Vec<usize> = (0..source.len()).collect();
    let (x, y) = source.batch(&idx).unwrap();
    loss_and_grads(model, &x, &y).unwrap().0
}

#[test]
fn loss_decreases_for_every_preset_and_policy() {
    let source = ImageSource::new(toy_set(), 32).unwrap();
    for arch in Arch::ALL {
        let selective = match arch {
            Arch::MiniSqueezenet => FreezePolicy::SelectiveAllButHead,
            _ => FreezePolicy::SelectiveFc,
        };
        for policy in [FreezePolicy::FullLearning, selective] {
            let mut model = Model::random(spec(arch), 2).unwrap();
            model.apply_freeze_policy(policy, 3).unwrap();
            let before = initial_loss(&model, &source);
            train(&mut model, &source, &schedule(200), 4, None, &mut |_| Ok(())).unwrap();
            let after = initial_loss(&model, &source);
            assert!(after < before, "{arch} {policy}: {before} -> {after}");
        }
    }
}

#[test]
fn same_seed_gives_identical_checkpoints_and_resume_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let source = ImageSource::new(toy_set(), 32).unwrap();
    let run = |iters: u64, from: Option<Model<f32>>| {
        let mut m = from.unwrap_or_else(|| Model::random(spec(Arch::MiniVgg), 6).unwrap());
        train(&mut m, &source, &schedule(iters), 9, None, &mut |_| Ok(())).unwrap();
        m
    };
    let a = run(30, None);
    let b = run(30, None);
    let (pa, pb) = (dir.path().join("a.earn"), dir.path().join("b.earn"));
    save_checkpoint(&a, &pa).unwrap();
    save_checkpoint(&b, &pb).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    // Checkpoint at 12 during the full run, restore it from disk, continue to 30.
    let mut full = Model::random(spec(Arch::MiniVgg), 6).unwrap();
    let s = Schedule {
        eval_every: 12,
        ..schedule(30)
    };
    let log = train(&mut full, &source, &s, 9, Some(dir.path()), &mut |_| Ok(())).unwrap();
    assert_eq!(full.params(), a.params());
    let restored = earbench::nn::load_checkpoint(&log.checkpoints[0].1, spec(Arch::MiniVgg)).unwrap();
    assert_eq!(restored.iteration(), 12);
    let resumed = run(30, Some(restored));
    assert_eq!(resumed.params(), a.params());
}

#[test]
fn checkpoints_land_on_eval_boundaries() {
    let dir = tempfile::tempdir().unwrap();
    let source = ImageSource::new(toy_set(), 32).unwrap();
    let mut m = Model::random(spec(Arch::MiniSqueezenet), 1).unwrap();
    let mut seen = Vec::new();
    let s = Schedule {
        eval_every: 5,
        ..schedule(12)
    };
    let log = train(&mut m, &source, &s, 1, Some(dir.path()), &mut |m| {
        seen.push(m.iteration());
        Ok(())
    })
    .unwrap();
    assert_eq!(seen, [5, 10, 12]);
    assert_eq!(log.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), [5, 10, 12]);
    assert!(log.checkpoints.iter().all(|(_, p)| p.exists()));
    assert_eq!(log.losses.last().unwrap().iteration, 12);
}

#[test]
fn zero_iterations_is_rejected() {
    let source = ImageSource::new(toy_set(), 32).unwrap();
    let mut m = Model::random(spec(Arch::MiniSqueezenet), 1).unwrap();
    let err = train(&mut m, &source, &schedule(0), 1, None, &mut |_| Ok(())).unwrap_err();
    assert!(matches!(err, NnError::InvalidSchedule(_)));
}
