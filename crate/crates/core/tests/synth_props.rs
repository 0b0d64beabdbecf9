use std::collections::BTreeSet;

use stvg::data::{read_dataset, write_dataset, SplitName};
use stvg::features::FeatureProvider;
use stvg::synth::{build_dataset, build_scenes, Preset, SynthConfig, SynthProvider};
use stvg::validator::{corpus_pos_stats, modal_tag, validate};

#[test]
fn corpus_is_valid_and_noun_heavy() {
    let cfg = SynthConfig::default();
    for (preset, seed) in [(Preset::Motion, 7), (Preset::Mixed, 8), (Preset::Motion, 9)] {
        let ds = build_dataset(30, preset, &cfg, seed).unwrap();
        assert!(ds.instances.iter().all(|i| validate(&i.expression).valid));
        let stats = corpus_pos_stats(ds.instances.iter().map(|i| &i.expression)).unwrap();
        assert_eq!(modal_tag(&stats), Some("NN"));
    }
}

#[test]
fn motion_preset_mostly_needs_motion() {
    let cfg = SynthConfig::default();
    let exact = SynthProvider::exact(0);
    for seed in [1, 2, 3] {
        let ds = build_dataset(30, Preset::Motion, &cfg, seed).unwrap();
        let mut motion_only = 0;
        for inst in &ds.instances {
            let video = ds.video(&inst.video_id).unwrap();
            let f = inst.interval.start;
            let app: BTreeSet<Vec<u64>> = inst
                .candidates
                .iter()
                .map(|c| exact.appearance(video, c, f).iter().map(|x| x.to_bits()).collect())
                .collect();
            if app.len() == 1 {
                motion_only += 1;
            }
        }
        let share = motion_only as f64 / ds.instances.len() as f64;
        assert!(share >= 0.5, "seed {seed}: {share}");
    }
}

#[test]
fn exact_motion_follows_the_scene_program() {
    let cfg = SynthConfig::default();
    let p = SynthProvider::exact(0);
    for (scene, split) in build_scenes(15, Preset::Mixed, &cfg, 4).unwrap() {
        let video = scene.video_record(split);
        let s = &scene.spec;
        for (k, track) in scene.tracks.iter().enumerate() {
            for f in 0..s.n_frames {
                let step = f.max(1);
                let (dx, dy) = match s.events.iter().find(|e| e.interval.contains(step)) {
                    Some(e) => {
                        let (ux, uy) = e.directions[k].unit();
                        (ux * e.speeds[k] / s.width, uy * e.speeds[k] / s.height)
                    }
                    None => (0.0, 0.0),
                };
                let m = p.motion(&video, track, f);
                assert!((m[0] - dx).abs() < 1e-12 && (m[1] - dy).abs() < 1e-12);
                assert!((m[2] - dx.hypot(dy)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn every_instance_has_one_matching_candidate() {
    let cfg = SynthConfig::default();
    for (scene, _) in build_scenes(30, Preset::Motion, &cfg, 5).unwrap() {
        for (e, event) in scene.spec.events.iter().enumerate() {
            for (k, obj) in scene.spec.objects.iter().enumerate() {
                assert_eq!(scene.matching_objects(e, &obj.color, event.directions[k]), vec![k]);
            }
        }
    }
}

#[test]
fn splits_are_disjoint_and_generation_is_deterministic() {
    let cfg = SynthConfig::default();
    let a = build_dataset(30, Preset::Motion, &cfg, 11).unwrap();
    let b = build_dataset(30, Preset::Motion, &cfg, 11).unwrap();
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    write_dataset(&a, &mut ba).unwrap();
    write_dataset(&b, &mut bb).unwrap();
    assert_eq!(ba, bb);
    let split = a.split();
    let sets = [SplitName::Train, SplitName::Val, SplitName::Test].map(|s| split.get(s).clone());
    assert_eq!(sets.iter().map(BTreeSet::len).collect::<Vec<_>>(), vec![24, 2, 4]);
    for i in 0..3 {
        for j in i + 1..3 {
            assert!(sets[i].is_disjoint(&sets[j]));
        }
    }
    for inst in &a.instances {
        let v = a.video(&inst.video_id).unwrap();
        assert!(split.get(v.split).contains(&v.id));
    }
}

#[test]
fn datasets_round_trip_through_jsonl() {
    let cfg = SynthConfig::default();
    for seed in 0..100 {
        let preset = if seed % 2 == 0 { Preset::Motion } else { Preset::Mixed };
        let ds = build_dataset(15, preset, &cfg, seed).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&ds, &mut bytes).unwrap();
        let back = read_dataset(bytes.as_slice()).unwrap();
        assert_eq!(back, ds);
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        assert_eq!(again, bytes);
    }
}
