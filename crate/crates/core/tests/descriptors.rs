use earbench::descriptors::{
    hog_descriptor, lbp_descriptor, nn_identify, DescriptorConfig, DescriptorId, FeatureVector, Gallery, HogParams, Metric,
    LBP_BINS,
};
use earbench::imagecore::Image;
use earbench::surrogate::{generate, SurrogateConfig};
use proptest::prelude::*;

fn gray(w: u32, h: u32, data: Vec<u8>) -> Image {
    Image::new(w, h, 1, data).unwrap()
}

#[test]
fn extraction_is_deterministic() {
    let items = generate(&SurrogateConfig::new(2, 2, 1));
    for id in [DescriptorId::Lbp, DescriptorId::Hog] {
        let cfg = DescriptorConfig::new(id);
        for (img, _) in &items {
            assert_eq!(cfg.extract(img).unwrap(), cfg.extract(img).unwrap());
        }
    }
}

#[test]
fn default_metrics() {
    assert_eq!(DescriptorConfig::new(DescriptorId::Lbp).metric, Metric::Chi2);
    assert_eq!(DescriptorConfig::new(DescriptorId::Hog).metric, Metric::Euclidean);
}

#[test]
fn hog_is_cell_translation_covariant() {
    let (w, h) = (48u32, 32u32);
    let pattern = |x: u32, y: u32| ((x * 31 + y * 17) % 97) as u8;
    let a: Vec<u8> = (0..h).flat_map(|y| (0..w).map(move |x| if x < 32 { pattern(x, y) } else { 0 })).collect();
    let b: Vec<u8> = (0..h)
        .flat_map(|y| (0..w).map(move |x| if (16..48).contains(&x) { pattern(x - 16, y) } else { 0 }))
        .collect();
    let p = HogParams::default();
    let fa = hog_descriptor(&gray(w, h, a), p).unwrap();
    let fb = hog_descriptor(&gray(w, h, b), p).unwrap();
    let (rows, cols, bins) = fa.layout;
    let block = |f: &FeatureVector, r: u32, c: u32| {
        let start = ((r * cols + c) * bins) as usize;
        f.values[start..start + bins as usize].to_vec()
    };
    // Block 1 spans the pattern's two interior cells; two cells right in `b`.
    for r in 0..rows {
        assert_eq!(block(&fa, r, 1), block(&fb, r, 3), "row {r}");
    }
}

proptest! {
    #[test]
    fn lbp_cells_sum_to_one(
        w in 8u32..24,
        h in 8u32..24,
        seed in any::<u8>(),
    ) {
        let data = (0..w * h).map(|i| (i as u8).wrapping_mul(seed | 1).wrapping_add(seed)).collect();
        let f = lbp_descriptor(&gray(w, h, data), 2, 2).unwrap();
        prop_assert_eq!(f.layout, (2, 2, LBP_BINS as u32));
        for cell in f.values.chunks(LBP_BINS) {
            prop_assert!((cell.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            prop_assert!(cell.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn identification_ranks_every_subject_once(
        entries in proptest::collection::vec((proptest::collection::vec(0f32..1.0, 6), 0usize..5), 1..12),
        probe in proptest::collection::vec(0f32..1.0, 6),
        metric in prop_oneof![Just(Metric::Chi2), Just(Metric::Cosine), Just(Metric::Euclidean)],
    ) {
        let fv = |v: Vec<f32>| FeatureVector::new(DescriptorId::Lbp, (1, 1, 6), v).unwrap();
        let mut subjects: Vec<usize> = entries.iter().map(|e| e.1).collect();
        subjects.sort_unstable();
        subjects.dedup();
        let gallery = Gallery::new(entries.into_iter().map(|(v, s)| (fv(v), s)).collect()).unwrap();
        let ranked = nn_identify(&gallery, &fv(probe), metric).unwrap();
        let mut got: Vec<usize> = ranked.iter().map(|r| r.0).collect();
        prop_assert!(ranked.windows(2).all(|w| w[0].1 < w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0)));
        got.sort_unstable();
        prop_assert_eq!(got, subjects);
    }
}
