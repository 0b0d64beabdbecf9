mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvg::data::SplitName;
use stvg::nn::Standardizer;
use stvg::proposals::{
    enumerate_windows, event_intervals, link_paths, link_tubelets, propose_intervals,
    WindowClassifier, WindowClassifierConfig, WindowConfig, WindowExample,
};
use stvg::synth::{build_dataset, Preset, SynthConfig, SynthProvider};
use common::oracle;

#[test]
fn linking_matches_exhaustive_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let nontrivial = oracle::check_linking(&mut rng, 500).unwrap();
    assert!(nontrivial > 100);
}

#[test]
fn linked_tubelets_are_box_disjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let frames = oracle::micro_instance(&mut rng);
        let dets = oracle::to_dets(&frames);
        let mut seen = BTreeSet::new();
        for p in link_paths(&dets, 0.3, 8) {
            for (k, i) in p.boxes.iter().enumerate() {
                assert!(seen.insert((p.start + k, *i)));
            }
        }
        for t in link_tubelets(&dets, 0.3, 8) {
            assert!(t.boxes.iter().all(Option::is_some));
            assert_eq!(t.confidence.as_ref().unwrap().len(), t.boxes.len());
        }
    }
}

proptest! {
    #[test]
    fn window_count_has_a_closed_form(n in 1usize..300, base in 1usize..40, stride in 1usize..20, scales in prop::option::of(1usize..5)) {
        let cfg = WindowConfig { base_length: base, stride, n_scales: scales };
        let w = enumerate_windows(n, &cfg).unwrap();
        let mut expected = 0;
        let mut k = 0;
        while base << k <= n && scales.is_none_or(|s| k < s) {
            expected += (n - (base << k)) / stride + 1;
            k += 1;
        }
        prop_assert_eq!(w.len(), expected);
        prop_assert!(w.iter().all(|i| i.end <= n));
    }
}

#[test]
fn classification_does_not_depend_on_batch_order() {
    let c = WindowClassifier::<f64>::new(WindowClassifierConfig::default(), 3, Standardizer::identity(3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seqs: Vec<Vec<Vec<f64>>> = (0..20)
        .map(|_| {
            (0..rng.random_range(1..=4))
                .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect()
        })
        .collect();
    let forward = c.probabilities(&seqs).unwrap();
    let mut reversed: Vec<_> = seqs.clone();
    reversed.reverse();
    let mut back = c.probabilities(&reversed).unwrap();
    back.reverse();
    assert_eq!(forward, back);
}

#[test]
fn proposals_are_sorted_and_complete_when_k_is_large() {
    let cfg = SynthConfig::default();
    let ds = build_dataset(15, Preset::Motion, &cfg, 4).unwrap();
    let provider = SynthProvider::new(4, &cfg);
    let wc = WindowClassifierConfig {
        epochs: 3,
        ..Default::default()
    };
    let videos: Vec<_> = ds.videos_in(SplitName::Train).map(|v| (v, event_intervals(&ds, &v.id))).collect();
    let examples = WindowExample::collect(&provider, &videos, &wc).unwrap();
    let (clf, _) = WindowClassifier::<f64>::fit(&examples, wc.clone()).unwrap();
    let v = ds.videos_in(SplitName::Test).next().unwrap();
    let all = propose_intervals(&clf, &provider, v, 1000).unwrap();
    assert_eq!(all.len(), enumerate_windows(v.n_frames, &wc.windows).unwrap().len());
    assert!(all.windows(2).all(|p| p[0].score > p[1].score
        || (p[0].score == p[1].score && p[0].interval.start <= p[1].interval.start)));
    assert_eq!(propose_intervals(&clf, &provider, v, 5).unwrap(), all[..5].to_vec());
}
