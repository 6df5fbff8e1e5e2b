use earbench::evalproto::{
    aucmc, cmc, evaluate, ranks_from_scores, split_dataset, train_count, DatasetManifest, EvalError, ExperimentReport,
    ManifestEntry, Probe, ProbeScorer, ReportContext, ScoreMatrix, Split,
};
use earbench::imagecore::Image;
use proptest::prelude::*;

fn manifest(counts: &[usize]) -> DatasetManifest {
    let entries = counts
        .iter()
        .enumerate()
        .flat_map(|(s, &n)| (0..n).map(move |i| ManifestEntry::original(format!("{s}/{i}.png"), format!("s{s:03}"))))
        .collect();
    DatasetManifest::new(entries).unwrap()
}

/// Scores the probe's true class 1 and everything else 0; probe images
/// encode the label in their single pixel.
struct OneHot(usize);

impl ProbeScorer for OneHot {
    fn num_subjects(&self) -> usize {
        self.0
    }

    fn score_batch(&self, probes: &[Image]) -> Result<Vec<Vec<f64>>, EvalError> {
        Ok(probes
            .iter()
            .map(|p| (0..self.0).map(|j| (j == p.get(0, 0, 0) as usize) as u8 as f64).collect())
            .collect())
    }
}

#[test]
fn one_hot_scorer_is_perfect() {
    let probes: Vec<Probe> = (0..30)
        .map(|i| Probe {
            image: Image::filled(1, 1, &[(i % 7) as u8]).unwrap(),
            label: i % 7,
        })
        .collect();
    let r = evaluate(&OneHot(7), &probes, 7, 4, &ReportContext::default()).unwrap();
    assert_eq!((r.rank1, r.rank5, r.aucmc), (100.0, 100.0, 100.0));
    assert!(matches!(
        evaluate(&OneHot(6), &probes, 7, 4, &ReportContext::default()),
        Err(EvalError::SubjectSetMismatch { .. })
    ));
}

#[test]
fn split_and_manifest_json_round_trip() {
    let m = manifest(&[3, 5, 1, 8]);
    assert_eq!(DatasetManifest::from_json(&m.to_json()).unwrap(), m);
    let s = split_dataset(&m, 0.6, 9).unwrap();
    let back = Split::from_json(&s.to_json()).unwrap();
    assert_eq!(back.to_json(), s.to_json());
    assert_eq!(back.digest(), s.digest());
}

#[test]
fn report_json_round_trip() {
    let scores = ScoreMatrix::from_rows(&[vec![0.2, 0.5, 0.3], vec![0.9, 0.05, 0.05]]).unwrap();
    let r = ExperimentReport::from_scores(&scores, true, &[0, 0], &ReportContext::default()).unwrap();
    assert_eq!(r.curve.values, [50.0, 50.0, 100.0]);
    let text = r.to_json();
    assert_eq!(ExperimentReport::from_json(&text).unwrap().to_json(), text);
}

proptest! {
    #[test]
    fn cmc_is_monotone_and_ends_at_100(
        (subjects, ranks) in (1usize..40).prop_flat_map(|n| (Just(n), proptest::collection::vec(1..=n, 1..60)))
    ) {
        let c = cmc(&ranks, subjects).unwrap();
        prop_assert_eq!(c.len(), subjects);
        prop_assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.values.last().unwrap(), 100.0);
        prop_assert!(c.values.iter().all(|v| (0.0..=100.0).contains(v)));
        prop_assert!(c.rank(1) <= aucmc(&c) + 1e-9);
    }

    #[test]
    fn ranks_stay_in_range_and_flip_with_direction(
        rows in proptest::collection::vec(proptest::collection::vec(-5i32..5, 4), 1..8),
        labels in proptest::collection::vec(0usize..4, 8),
    ) {
        let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect();
        let labels = &labels[..rows.len()];
        let scores = ScoreMatrix::from_rows(&rows).unwrap();
        let neg = ScoreMatrix::from_rows(&rows.iter().map(|r| r.iter().map(|v| -v).collect()).collect::<Vec<_>>()).unwrap();
        let hi = ranks_from_scores(&scores, true, labels).unwrap();
        prop_assert!(hi.iter().all(|&r| (1..=4).contains(&r)));
        prop_assert_eq!(hi, ranks_from_scores(&neg, false, labels).unwrap());
    }

    #[test]
    fn split_partitions_each_subject(
        counts in proptest::collection::vec(1usize..15, 2..12),
        seed in any::<u64>(),
        ratio in 0.1f64..0.9,
    ) {
        let m = manifest(&counts);
        let s = split_dataset(&m, ratio, seed).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len(), m.len());
        for (i, &n) in counts.iter().enumerate() {
            let name = format!("s{i:03}");
            let tr = s.train.iter().filter(|e| e.subject == name).count();
            let te = s.test.iter().filter(|e| e.subject == name).count();
            prop_assert_eq!(tr, train_count(n, ratio));
            prop_assert_eq!(tr + te, n);
            if n >= 2 {
                prop_assert!(tr >= 1 && te >= 1);
            }
        }
        let mut all: Vec<&str> = s.train.iter().chain(&s.test).map(|e| e.path.as_str()).collect();
        all.sort_unstable();
        all.dedup();
        prop_assert_eq!(all.len(), m.len());
        prop_assert_eq!(s, split_dataset(&m, ratio, seed).unwrap());
    }
}
