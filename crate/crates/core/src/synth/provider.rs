use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{SynthConfig, COLORS};
use crate::data::{TemporalInterval, Tubelet, VideoRecord};
use crate::features::{tubelet_motion, FeatureProvider};
use crate::metrics::box_iou;

/// 64-bit FNV-1a over the given byte strings, with a separator between parts.
pub fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for b in p.iter().chain(std::iter::once(&0xffu8)) {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Magnitudes are reported in hundredths of the image size per frame.
const CHUNK_SCALE: f64 = 100.0;
const MOVING_THRESHOLD: f64 = 0.05;

/// Feature provider for synthetic scenes. Appearance is a one-hot color code
/// of the scene object that best overlaps the queried box; motion is the box
/// displacement of the queried tubelet. Noise is keyed by
/// (seed, video, object, frame) so descriptors do not depend on query order.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthProvider {
    pub seed: u64,
    pub appearance_sigma: f64,
    pub motion_sigma: f64,
    pub chunk_sigma: f64,
}

impl SynthProvider {
    pub fn new(seed: u64, cfg: &SynthConfig) -> Self {
        SynthProvider {
            seed,
            appearance_sigma: cfg.appearance_sigma,
            motion_sigma: cfg.motion_sigma,
            chunk_sigma: cfg.chunk_sigma,
        }
    }

    /// Noise-free variant.
    pub fn exact(seed: u64) -> Self {
        SynthProvider {
            seed,
            appearance_sigma: 0.0,
            motion_sigma: 0.0,
            chunk_sigma: 0.0,
        }
    }

    fn noise(&self, kind: &str, video: &str, object: &str, a: usize, b: usize, sigma: f64, n: usize) -> Vec<f64> {
        if sigma == 0.0 {
            return vec![0.0; n];
        }
        let key = fnv1a(&[
            &self.seed.to_le_bytes(),
            kind.as_bytes(),
            video.as_bytes(),
            object.as_bytes(),
            &(a as u64).to_le_bytes(),
            &(b as u64).to_le_bytes(),
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Color index of the scene object best overlapping `tubelet` at `frame`.
    pub fn color_at(&self, video: &VideoRecord, tubelet: &Tubelet, frame: usize) -> Option<usize> {
        let b = tubelet.box_at(frame)?;
        let mut best: Option<(f64, &crate::data::SceneObject)> = None;
        for o in &video.objects {
            if let Some(ob) = o.track.box_at(frame) {
                let iou = box_iou(b, ob);
                if iou > 0.0 && best.is_none_or(|(bi, _)| iou > bi) {
                    best = Some((iou, o));
                }
            }
        }
        let obj = best?.1;
        obj.attributes.iter().find_map(|a| COLORS.iter().position(|c| c == a))
    }
}

impl FeatureProvider for SynthProvider {
    fn appearance_dim(&self) -> usize {
        COLORS.len()
    }

    fn chunk_dim(&self) -> usize {
        3
    }

    fn appearance(&self, video: &VideoRecord, tubelet: &Tubelet, frame: usize) -> Vec<f64> {
        let mut v = self.noise("app", &video.id, &tubelet.object_id, frame, 0, self.appearance_sigma, COLORS.len());
        if let Some(c) = self.color_at(video, tubelet, frame) {
            v[c] += 1.0;
        }
        v
    }

    fn motion(&self, video: &VideoRecord, tubelet: &Tubelet, frame: usize) -> Vec<f64> {
        let m = tubelet_motion(video, tubelet, frame);
        let n = self.noise("flow", &video.id, &tubelet.object_id, frame, 0, self.motion_sigma, m.len());
        m.iter().zip(n).map(|(a, b)| a + b).collect()
    }

    /// `[mean magnitude, largest per-object mean magnitude, share of moving
    /// object-frames]` over the chunk.
    fn chunk_descriptor(&self, video: &VideoRecord, chunk: TemporalInterval) -> Vec<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut moving = 0usize;
        let mut best_obj: f64 = 0.0;
        for o in &video.objects {
            let (mut s, mut c) = (0.0, 0usize);
            for f in chunk.frames() {
                if o.track.box_at(f).is_none() {
                    continue;
                }
                let m = tubelet_motion(video, &o.track, f)[2] * CHUNK_SCALE;
                s += m;
                c += 1;
                if m > MOVING_THRESHOLD {
                    moving += 1;
                }
            }
            if c > 0 {
                best_obj = best_obj.max(s / c as f64);
            }
            total += s;
            count += c;
        }
        let mean = if count > 0 { total / count as f64 } else { 0.0 };
        let share = if count > 0 { moving as f64 / count as f64 } else { 0.0 };
        let n = self.noise("chunk", &video.id, "", chunk.start, chunk.end, self.chunk_sigma, 3);
        vec![mean + n[0], best_obj + n[1], share + n[2]]
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn scene() -> Scene {
        let spec = SceneSpec {
            id: "v".into(),
            class_label: "ball".into(),
            width: 640.0,
            height: 360.0,
            n_frames: 60,
            fps: 30.0,
            landmark: 0,
            objects: vec![
                ObjectSpec {
                    color: "red".into(),
                    start_box: [100.0, 100.0, 150.0, 150.0],
                },
                ObjectSpec {
                    color: "red".into(),
                    start_box: [300.0, 100.0, 350.0, 150.0],
                },
                ObjectSpec {
                    color: "blue".into(),
                    start_box: [400.0, 200.0, 450.0, 250.0],
                },
            ],
            events: vec![EventSpec {
                interval: TemporalInterval { start: 10, end: 50 },
                directions: vec![Direction::Right, Direction::Left, Direction::Still],
                speeds: vec![2.0, 2.0, 2.0],
                then_stop: vec![false; 3],
            }],
        };
        generate_scene(&spec).unwrap()
    }

    #[test]
    fn exact_descriptors_follow_the_scene_program() {
        let s = scene();
        let v = s.video_record(crate::data::SplitName::Train);
        let p = SynthProvider::exact(1);
        let right = p.motion(&v, &s.tracks[0], 20);
        assert_eq!(right, vec![2.0 / 640.0, 0.0, 2.0 / 640.0]);
        let left = p.motion(&v, &s.tracks[1], 20);
        assert_eq!(left[0], -2.0 / 640.0);
        assert_eq!(p.motion(&v, &s.tracks[2], 20), vec![0.0; 3]);
        assert_eq!(p.appearance(&v, &s.tracks[0], 20), p.appearance(&v, &s.tracks[1], 20));
        assert_eq!(p.appearance(&v, &s.tracks[2], 20)[2], 1.0);
    }

    #[test]
    fn noisy_descriptors_are_keyed_not_sequential() {
        let s = scene();
        let v = s.video_record(crate::data::SplitName::Train);
        let p = SynthProvider::new(4, &SynthConfig::default());
        let a = p.motion(&v, &s.tracks[0], 20);
        let _ = p.motion(&v, &s.tracks[1], 21);
        assert_eq!(a, p.motion(&v, &s.tracks[0], 20));
        assert!((a[0] - 2.0 / 640.0).abs() < 0.005);
        assert_ne!(a, p.motion(&v, &s.tracks[0], 21));
    }

    #[test]
    fn chunk_descriptor_separates_events_from_background() {
        let s = scene();
        let v = s.video_record(crate::data::SplitName::Train);
        let p = SynthProvider::exact(1);
        let ev = p.chunk_descriptor(&v, TemporalInterval { start: 16, end: 32 });
        let bg = p.chunk_descriptor(&v, TemporalInterval { start: 50, end: 60 });
        assert!(ev[0] > 0.0 && ev[2] > 0.5);
        assert_eq!(bg, vec![0.0; 3]);
    }
}
