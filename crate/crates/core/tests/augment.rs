use std::path::Path;

use earbench::augment::{
    apply_plan, augment_dataset, plan_augmented_manifest, sample_plan, AugmentConfig, TransformKind, TransformSpec,
};
use earbench::evalproto::{DatasetManifest, ManifestEntry, Origin};
use earbench::imagecore::{load_image, Image};
use earbench::surrogate::{write_dataset, SurrogateConfig};
use proptest::prelude::*;

fn originals(n: usize) -> DatasetManifest {
    let entries = (0..n)
        .map(|i| ManifestEntry::original(format!("img/{i:05}.png"), format!("s{:03}", i % 166)))
        .collect();
    DatasetManifest::new(entries).unwrap()
}

#[test]
fn factor_ten_over_1383_originals() {
    let cfg = AugmentConfig {
        factor: 10,
        master_seed: 1,
        output_size: None,
    };
    let out = plan_augmented_manifest(&originals(1383), &cfg, Path::new("aug")).unwrap();
    assert_eq!(out.len(), 15_213);
    assert_eq!(out.entries.iter().filter(|e| e.is_original()).count(), 1383);
}

#[test]
fn factor_zero_is_identity() {
    let m = originals(12);
    let cfg = AugmentConfig::default();
    assert_eq!(augment_dataset(&m, &cfg, Path::new("/nonexistent")).unwrap(), m);
}

#[test]
fn variants_keep_source_labels() {
    let m = originals(40);
    let cfg = AugmentConfig {
        factor: 3,
        master_seed: 2,
        output_size: None,
    };
    let out = plan_augmented_manifest(&m, &cfg, Path::new("aug")).unwrap();
    for e in &out.entries {
        if let Origin::Augmented { source, .. } = &e.origin {
            let src = m.entries.iter().find(|o| &o.path == source).unwrap();
            assert_eq!(src.subject, e.subject);
        }
    }
}

#[test]
fn rendered_variants_match_their_plans() {
    let tmp = tempfile::tempdir().unwrap();
    let m = write_dataset(&SurrogateConfig::new(2, 2, 3), &tmp.path().join("src")).unwrap();
    let cfg = AugmentConfig {
        factor: 2,
        master_seed: 4,
        output_size: None,
    };
    let out = augment_dataset(&m, &cfg, &tmp.path().join("aug")).unwrap();
    assert_eq!(out.len(), 12);
    for e in &out.entries[m.len()..] {
        let Origin::Augmented { source, seed_record } = &e.origin else {
            panic!("expected an augmented entry");
        };
        let plan = sample_plan(seed_record.master_seed, seed_record.item_index);
        let expected = apply_plan(&load_image(source).unwrap(), &plan).unwrap();
        assert_eq!(load_image(&e.path).unwrap(), expected);
    }
}

#[test]
fn sampled_parameters_stay_in_range() {
    let mut degrees = Vec::new();
    for i in 0..10_000 {
        for t in sample_plan(3, i).transforms {
            match t {
                TransformSpec::Rotate { degrees: d } => degrees.push(d),
                TransformSpec::Brightness { delta, .. } => assert!(delta == 10 || delta == -10),
                TransformSpec::Contrast { factor, .. } => assert!((0.5..=1.5).contains(&factor)),
                _ => {}
            }
        }
    }
    let mean = degrees.iter().sum::<f64>() / degrees.len() as f64;
    assert!((-1.5..=1.5).contains(&mean), "mean rotation {mean}");
    assert!(degrees.iter().all(|d| (-45.0..=45.0).contains(d)));
}

#[test]
fn inclusion_rates_near_half() {
    let n = 10_000;
    for kind in TransformKind::ALL {
        let hits = (0..n).filter(|&i| sample_plan(11, i).kinds().any(|k| k == kind)).count();
        let rate = hits as f64 / n as f64;
        assert!((0.48..=0.52).contains(&rate), "{kind:?}: {rate}");
    }
}

proptest! {
    #[test]
    fn plans_preserve_shape_and_are_pure(
        w in 4u32..20,
        h in 4u32..20,
        seed in any::<u64>(),
        index in 0u64..1000,
        fill in any::<u8>(),
    ) {
        let data = (0..w * h * 3).map(|i| (i as u8).wrapping_mul(7).wrapping_add(fill)).collect();
        let img = Image::new(w, h, 3, data).unwrap();
        let plan = sample_plan(seed, index);
        let a = apply_plan(&img, &plan).unwrap();
        prop_assert_eq!((a.width(), a.height(), a.channels()), (w, h, 3));
        prop_assert_eq!(a, apply_plan(&img, &plan).unwrap());
    }
}
