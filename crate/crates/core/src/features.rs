//! Per-object per-frame descriptors consumed by the visual modules.
//!
//! Appearance and motion come from a [`FeatureProvider`]; location and
//! context offsets are pure box geometry and are computed here.

use crate::data::{BoundingBox, GroundingInstance, TemporalInterval, Tubelet, VideoRecord};
use crate::error::{Result, StvgError};

pub const LOC_DIM: usize = 5;
pub const MAX_CONTEXTS: usize = 5;
/// `l_i` followed by up to five zero-padded `δ_ij`.
pub const LOC_INPUT_DIM: usize = LOC_DIM * (1 + MAX_CONTEXTS);
/// Frames t−2..t+2.
pub const STACK: usize = 5;
pub const FLOW_DIM: usize = 3;

const LOC_TOLERANCE: f64 = 1e-9;

/// `[x_min/W, y_min/H, x_max/W, y_max/H, area/(W·H)]`.
pub fn location_vector(b: &BoundingBox, width: f64, height: f64) -> Result<[f64; LOC_DIM]> {
    let l = [
        b.x_min / width,
        b.y_min / height,
        b.x_max / width,
        b.y_max / height,
        b.area() / (width * height),
    ];
    if l.iter().any(|v| !(-LOC_TOLERANCE..=1.0 + LOC_TOLERANCE).contains(v)) {
        return Err(StvgError::validation(
            "location",
            format!("box {:?} lies outside the {width}x{height} image", b.to_array()),
        ));
    }
    Ok(l)
}

/// Offset of a target box relative to a context box, normalized by the image.
pub fn context_delta(target: &BoundingBox, context: &BoundingBox, width: f64, height: f64) -> [f64; LOC_DIM] {
    [
        (target.x_min - context.x_min) / width,
        (target.y_min - context.y_min) / height,
        (target.x_max - context.x_max) / width,
        (target.y_max - context.y_max) / height,
        (target.area() - context.area()) / (width * height),
    ]
}

/// Frame indices t−2..t+2 clamped into `[lo, hi]`.
pub fn stack_indices(t: usize, lo: usize, hi: usize) -> [usize; STACK] {
    let mut out = [0; STACK];
    for (k, slot) in out.iter_mut().enumerate() {
        let f = t as i64 + k as i64 - 2;
        *slot = f.clamp(lo as i64, hi as i64) as usize;
    }
    out
}

/// Flow-like statistics of the box displacement `prev → cur`:
/// mean horizontal shift / W, mean vertical shift / H, magnitude of the two.
pub fn box_motion(prev: &BoundingBox, cur: &BoundingBox, width: f64, height: f64) -> [f64; FLOW_DIM] {
    let dx = ((cur.x_min - prev.x_min) + (cur.x_max - prev.x_max)) / (2.0 * width);
    let dy = ((cur.y_min - prev.y_min) + (cur.y_max - prev.y_max)) / (2.0 * height);
    [dx, dy, (dx * dx + dy * dy).sqrt()]
}

/// Box displacement at `frame` from the tubelet alone: backward difference,
/// forward difference when the previous frame is missing, zero when isolated.
pub fn tubelet_motion(video: &VideoRecord, tubelet: &Tubelet, frame: usize) -> [f64; FLOW_DIM] {
    let Some(cur) = tubelet.box_at(frame) else {
        return [0.0; FLOW_DIM];
    };
    if let Some(prev) = frame.checked_sub(1).and_then(|f| tubelet.box_at(f)) {
        return box_motion(prev, cur, video.width, video.height);
    }
    if let Some(next) = tubelet.box_at(frame + 1) {
        return box_motion(cur, next, video.width, video.height);
    }
    [0.0; FLOW_DIM]
}

/// Source of appearance and motion descriptors; stands in for image and flow CNNs.
pub trait FeatureProvider: Send + Sync {
    fn appearance_dim(&self) -> usize;

    fn motion_dim(&self) -> usize {
        FLOW_DIM
    }

    fn chunk_dim(&self) -> usize;

    /// Appearance of the region `tubelet` occupies at `frame` (box present).
    fn appearance(&self, video: &VideoRecord, tubelet: &Tubelet, frame: usize) -> Vec<f64>;

    /// Motion of the region `tubelet` occupies at `frame` (box present).
    fn motion(&self, video: &VideoRecord, tubelet: &Tubelet, frame: usize) -> Vec<f64>;

    /// Whole-scene descriptor of the frames in `chunk`.
    fn chunk_descriptor(&self, video: &VideoRecord, chunk: TemporalInterval) -> Vec<f64>;
}

/// Descriptors of one candidate over the frames of an instance interval.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateFeatures {
    /// Box present at each interval frame.
    pub present: Vec<bool>,
    pub appearance: Vec<Vec<f64>>,
    pub motion: Vec<Vec<f64>>,
    pub location: Vec<[f64; LOC_DIM]>,
    /// Per frame, other candidates used as context, nearest first (≤ 5).
    pub contexts: Vec<Vec<usize>>,
    /// Per frame and other candidate, `δ` when both boxes are present.
    pub deltas: Vec<Vec<Option<[f64; LOC_DIM]>>>,
}

impl CandidateFeatures {
    pub fn n_frames(&self) -> usize {
        self.present.len()
    }

    /// Interval-relative positions of frames with a box.
    pub fn present_positions(&self) -> Vec<usize> {
        (0..self.present.len()).filter(|p| self.present[*p]).collect()
    }

    /// `[l_i; δ_i1..δ_i5]` at an interval position, zero-padded.
    pub fn location_input(&self, p: usize) -> [f64; LOC_INPUT_DIM] {
        let mut out = [0.0; LOC_INPUT_DIM];
        out[..LOC_DIM].copy_from_slice(&self.location[p]);
        for (k, j) in self.contexts[p].iter().enumerate() {
            if let Some(d) = self.deltas[p][*j] {
                out[LOC_DIM * (k + 1)..LOC_DIM * (k + 2)].copy_from_slice(&d);
            }
        }
        out
    }

    /// Interval positions t−2..t+2 clamped to the interval.
    pub fn stack_positions(&self, p: usize) -> [usize; STACK] {
        stack_indices(p, 0, self.n_frames() - 1)
    }

    /// Concatenated motion descriptors over the 5-frame stack.
    pub fn stacked_motion(&self, p: usize) -> Vec<f64> {
        self.stack_positions(p)
            .iter()
            .flat_map(|q| self.motion[*q].iter().copied())
            .collect()
    }
}

/// Features for every candidate of one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub interval: TemporalInterval,
    pub candidates: Vec<CandidateFeatures>,
}

fn center_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax, ay) = a.center();
    let (bx, by) = b.center();
    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
}

/// Descriptors for the candidates of `inst`; the other candidates act as context objects.
pub fn extract_bundle(
    provider: &dyn FeatureProvider,
    video: &VideoRecord,
    inst: &GroundingInstance,
) -> Result<FeatureBundle> {
    extract_for_tubelets(provider, video, inst.interval, &inst.candidates)
}

pub fn extract_for_tubelets(
    provider: &dyn FeatureProvider,
    video: &VideoRecord,
    interval: TemporalInterval,
    tubelets: &[Tubelet],
) -> Result<FeatureBundle> {
    let n = tubelets.len();
    let n_frames = interval.len();
    let (da, dm) = (provider.appearance_dim(), provider.motion_dim());
    let mut candidates = Vec::with_capacity(n);
    for (i, tub) in tubelets.iter().enumerate() {
        let mut c = CandidateFeatures {
            present: Vec::with_capacity(n_frames),
            appearance: Vec::with_capacity(n_frames),
            motion: Vec::with_capacity(n_frames),
            location: Vec::with_capacity(n_frames),
            contexts: Vec::with_capacity(n_frames),
            deltas: Vec::with_capacity(n_frames),
        };
        for f in interval.frames() {
            let Some(b) = tub.box_at(f) else {
                c.present.push(false);
                c.appearance.push(vec![0.0; da]);
                c.motion.push(vec![0.0; dm]);
                c.location.push([0.0; LOC_DIM]);
                c.contexts.push(Vec::new());
                c.deltas.push(vec![None; n]);
                continue;
            };
            let app = provider.appearance(video, tub, f);
            let mot = provider.motion(video, tub, f);
            if app.len() != da || mot.len() != dm {
                return Err(StvgError::dim("feature provider", da + dm, app.len() + mot.len()));
            }
            c.present.push(true);
            c.appearance.push(app);
            c.motion.push(mot);
            c.location.push(location_vector(b, video.width, video.height)?);
            let mut near: Vec<(f64, usize)> = Vec::new();
            let mut deltas = vec![None; n];
            for (j, other) in tubelets.iter().enumerate() {
                if j == i {
                    continue;
                }
                if let Some(ob) = other.box_at(f) {
                    deltas[j] = Some(context_delta(b, ob, video.width, video.height));
                    near.push((center_distance(b, ob), j));
                }
            }
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            c.contexts.push(near.into_iter().take(MAX_CONTEXTS).map(|(_, j)| j).collect());
            c.deltas.push(deltas);
        }
        candidates.push(c);
    }
    Ok(FeatureBundle { interval, candidates })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SplitName;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn full_frame_location() {
        let l = location_vector(&bx(0.0, 0.0, 640.0, 360.0), 640.0, 360.0).unwrap();
        assert_eq!(l, [0.0, 0.0, 1.0, 1.0, 1.0]);
        assert!(location_vector(&bx(0.0, 0.0, 700.0, 360.0), 640.0, 360.0).is_err());
    }

    #[test]
    fn half_frame_delta() {
        let (w, h) = (640.0, 360.0);
        let d = context_delta(&bx(0.0, 0.0, w / 2.0, h), &bx(w / 2.0, 0.0, w, h), w, h);
        assert_eq!(d, [-0.5, 0.0, -0.5, 0.0, 0.0]);
    }

    #[test]
    fn stack_clamps_at_edges() {
        assert_eq!(stack_indices(0, 0, 9), [0, 0, 0, 1, 2]);
        assert_eq!(stack_indices(9, 0, 9), [7, 8, 9, 9, 9]);
        assert_eq!(stack_indices(4, 0, 9), [2, 3, 4, 5, 6]);
    }

    #[test]
    fn motion_sign_follows_direction() {
        let right = box_motion(&bx(10.0, 10.0, 50.0, 50.0), &bx(13.0, 10.0, 53.0, 50.0), 640.0, 360.0);
        let left = box_motion(&bx(13.0, 10.0, 53.0, 50.0), &bx(10.0, 10.0, 50.0, 50.0), 640.0, 360.0);
        assert!((right[0] - 3.0 / 640.0).abs() < 1e-15);
        assert_eq!(right[0], -left[0]);
        assert_eq!(right[2], left[2]);
    }

    struct Zero;
    impl FeatureProvider for Zero {
        fn appearance_dim(&self) -> usize {
            2
        }
        fn chunk_dim(&self) -> usize {
            1
        }
        fn appearance(&self, _: &VideoRecord, _: &Tubelet, _: usize) -> Vec<f64> {
            vec![0.0; 2]
        }
        fn motion(&self, v: &VideoRecord, t: &Tubelet, f: usize) -> Vec<f64> {
            tubelet_motion(v, t, f).to_vec()
        }
        fn chunk_descriptor(&self, _: &VideoRecord, _: TemporalInterval) -> Vec<f64> {
            vec![0.0]
        }
    }

    #[test]
    fn sole_object_has_zero_padded_contexts() {
        let video = VideoRecord {
            id: "v".into(),
            width: 100.0,
            height: 100.0,
            n_frames: 3,
            fps: 30.0,
            split: SplitName::Train,
            objects: vec![],
        };
        let t = Tubelet::new("a", "ball", 0, vec![Some(bx(0.0, 0.0, 10.0, 10.0)); 3]);
        let b = extract_for_tubelets(&Zero, &video, TemporalInterval::new(0, 3).unwrap(), &[t]).unwrap();
        let li = b.candidates[0].location_input(1);
        assert!(li[LOC_DIM..].iter().all(|v| *v == 0.0));
        assert_eq!(b.candidates[0].stacked_motion(0).len(), 15);
    }
}
