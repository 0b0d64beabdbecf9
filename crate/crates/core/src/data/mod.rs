//! Dataset model: boxes, tubelets, intervals, expressions and grounding instances.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, StvgError};
use crate::scalar::Scalar;

pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, TubeletRec, FORMAT_VERSION};

/// Axis-aligned box in pixel coordinates, `[x_min, y_min, x_max, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundingBox<T: Scalar = f64> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BoundingBox<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let b = BoundingBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(StvgError::validation("box", "non-finite coordinate"));
        }
        if self.x_min < T::zero() || self.y_min < T::zero() {
            return Err(StvgError::validation("box", "negative coordinate"));
        }
        if !(self.x_min < self.x_max && self.y_min < self.y_max) {
            return Err(StvgError::validation(
                "box",
                format!(
                    "degenerate box [{}, {}, {}, {}]",
                    self.x_min, self.y_min, self.x_max, self.y_max
                ),
            ));
        }
        Ok(())
    }

    pub fn from_array(a: [T; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(&self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let two = T::lit(2.0);
        ((self.x_min + self.x_max) / two, (self.y_min + self.y_max) / two)
    }

    /// Area of the overlap with `other` (zero when disjoint).
    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w <= T::zero() || h <= T::zero() {
            T::zero()
        } else {
            w * h
        }
    }

    pub fn cast<U: Scalar>(&self) -> BoundingBox<U> {
        BoundingBox {
            x_min: U::lit(self.x_min.as_f64()),
            y_min: U::lit(self.y_min.as_f64()),
            x_max: U::lit(self.x_max.as_f64()),
            y_max: U::lit(self.y_max.as_f64()),
        }
    }
}

/// Half-open frame interval `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TemporalInterval {
    pub start: usize,
    pub end: usize,
}

impl TemporalInterval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(StvgError::validation(
                "interval",
                format!("empty interval [{start}, {end})"),
            ));
        }
        Ok(TemporalInterval { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.end
    }

    pub fn intersection_len(&self, other: &TemporalInterval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }

    pub fn frames(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

impl fmt::Display for TemporalInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

/// Per-frame box track for one object. Slot `k` holds the box at frame
/// `frame_start + k`; `None` marks a frame where the object is not visible.
#[derive(Clone, Debug, PartialEq)]
pub struct Tubelet<T: Scalar = f64> {
    pub object_id: String,
    pub class_label: String,
    pub frame_start: usize,
    pub boxes: Vec<Option<BoundingBox<T>>>,
    pub confidence: Option<Vec<T>>,
    /// Ground-truth annotation: must be gap-free.
    pub ground_truth: bool,
}

impl<T: Scalar> Tubelet<T> {
    pub fn new(
        object_id: impl Into<String>,
        class_label: impl Into<String>,
        frame_start: usize,
        boxes: Vec<Option<BoundingBox<T>>>,
    ) -> Self {
        Tubelet {
            object_id: object_id.into(),
            class_label: class_label.into(),
            frame_start,
            boxes,
            confidence: None,
            ground_truth: false,
        }
    }

    /// Inclusive last frame.
    pub fn frame_end(&self) -> usize {
        self.frame_start + self.boxes.len().saturating_sub(1)
    }

    /// Frame range as a half-open interval.
    pub fn span(&self) -> TemporalInterval {
        TemporalInterval {
            start: self.frame_start,
            end: self.frame_start + self.boxes.len(),
        }
    }

    pub fn box_at(&self, frame: usize) -> Option<&BoundingBox<T>> {
        if frame < self.frame_start {
            return None;
        }
        self.boxes.get(frame - self.frame_start)?.as_ref()
    }

    /// Frames that carry a box.
    pub fn present_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_some())
            .map(move |(k, _)| self.frame_start + k)
    }

    pub fn covers(&self, interval: &TemporalInterval) -> bool {
        !self.boxes.is_empty() && self.frame_start <= interval.start && self.frame_end() + 1 >= interval.end
    }

    /// Restriction to `interval`; frames outside this tubelet's span become absent slots.
    pub fn restrict(&self, interval: &TemporalInterval) -> Tubelet<T> {
        let boxes = interval.frames().map(|f| self.box_at(f).copied()).collect();
        let confidence = self.confidence.as_ref().map(|c| {
            interval
                .frames()
                .map(|f| {
                    if f >= self.frame_start && f - self.frame_start < c.len() {
                        c[f - self.frame_start]
                    } else {
                        T::zero()
                    }
                })
                .collect()
        });
        Tubelet {
            object_id: self.object_id.clone(),
            class_label: self.class_label.clone(),
            frame_start: interval.start,
            boxes,
            confidence,
            ground_truth: self.ground_truth && interval.start >= self.frame_start && interval.end <= self.span().end,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(StvgError::validation("boxes", "tubelet has no frames"));
        }
        for (k, b) in self.boxes.iter().enumerate() {
            match b {
                Some(b) => b.validate().map_err(|e| match e {
                    StvgError::Validation { message, .. } => {
                        StvgError::validation(format!("boxes[{k}]"), message)
                    }
                    other => other,
                })?,
                None if self.ground_truth => {
                    return Err(StvgError::validation(
                        format!("boxes[{k}]"),
                        "ground-truth tubelet has a gap",
                    ))
                }
                None => {}
            }
        }
        if let Some(c) = &self.confidence {
            if c.len() != self.boxes.len() {
                return Err(StvgError::validation(
                    "confidence",
                    format!("{} scores for {} frames", c.len(), self.boxes.len()),
                ));
            }
            if let Some(k) = c.iter().position(|v| !(*v >= T::zero() && *v <= T::one())) {
                return Err(StvgError::validation(
                    format!("confidence[{k}]"),
                    "score outside [0, 1]",
                ));
            }
        }
        Ok(())
    }
}

/// Tokenized identifying description with parallel Penn Treebank tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Expression {
    pub tokens: Vec<String>,
    pub pos_tags: Vec<String>,
    pub raw_text: String,
}

impl Expression {
    pub fn new(tokens: Vec<String>, pos_tags: Vec<String>, raw_text: impl Into<String>) -> Result<Self> {
        let e = Expression {
            tokens,
            pos_tags,
            raw_text: raw_text.into(),
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(StvgError::validation("expression.tokens", "empty expression"));
        }
        if self.tokens.len() != self.pos_tags.len() {
            return Err(StvgError::validation(
                "expression.pos",
                format!("{} tags for {} tokens", self.pos_tags.len(), self.tokens.len()),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// One grounding example: an expression, its contrast set and the referent.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundingInstance {
    pub id: String,
    pub video_id: String,
    pub interval: TemporalInterval,
    pub expression: Expression,
    pub candidates: Vec<Tubelet>,
    pub target_index: usize,
    pub attributes: BTreeSet<String>,
}

impl GroundingInstance {
    pub fn target(&self) -> &Tubelet {
        &self.candidates[self.target_index]
    }

    pub fn validate(&self) -> Result<()> {
        self.expression.validate()?;
        if self.interval.is_empty() {
            return Err(StvgError::validation("interval", "empty interval"));
        }
        if self.candidates.len() < 2 {
            return Err(StvgError::validation(
                "candidates",
                format!("contrast set needs at least 2 candidates, got {}", self.candidates.len()),
            ));
        }
        if self.target_index >= self.candidates.len() {
            return Err(StvgError::validation(
                "target_index",
                format!("{} out of range for {} candidates", self.target_index, self.candidates.len()),
            ));
        }
        let class = &self.candidates[0].class_label;
        if let Some(k) = self.candidates.iter().position(|c| &c.class_label != class) {
            return Err(StvgError::validation(
                "candidates",
                format!(
                    "mixed class labels: candidate {k} is `{}`, expected `{class}`",
                    self.candidates[k].class_label
                ),
            ));
        }
        for (k, c) in self.candidates.iter().enumerate() {
            c.validate().map_err(|e| match e {
                StvgError::Validation { field, message } => {
                    StvgError::validation(format!("candidates[{k}].{field}"), message)
                }
                other => other,
            })?;
            if !c.covers(&self.interval) {
                return Err(StvgError::validation(
                    format!("candidates[{k}]"),
                    format!("tubelet does not cover interval {}", self.interval),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = StvgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(StvgError::validation("split", format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Object of a scene, carried in the video record so that a feature provider
/// can re-derive descriptors from the file alone.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub object_id: String,
    pub class_label: String,
    pub attributes: Vec<String>,
    /// Whole-video track.
    pub track: Tubelet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub n_frames: usize,
    pub fps: f64,
    pub split: SplitName,
    pub objects: Vec<SceneObject>,
}

impl VideoRecord {
    pub fn object(&self, object_id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }
}

/// Video-level partition.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl DatasetSplit {
    pub fn get(&self, split: SplitName) -> &BTreeSet<String> {
        match split {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pairs = [
            ("train/val", &self.train, &self.val),
            ("train/test", &self.train, &self.test),
            ("val/test", &self.val, &self.test),
        ];
        for (name, a, b) in pairs {
            if let Some(v) = a.intersection(b).next() {
                return Err(StvgError::validation(
                    "split",
                    format!("video `{v}` appears in both sides of {name}"),
                ));
            }
        }
        Ok(())
    }
}

/// Videos plus grounding instances, instances grouped in video order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub videos: Vec<VideoRecord>,
    pub instances: Vec<GroundingInstance>,
}

impl Dataset {
    /// Builds a dataset, stably regrouping instances by the order of their videos.
    pub fn new(videos: Vec<VideoRecord>, mut instances: Vec<GroundingInstance>) -> Result<Self> {
        let order: BTreeMap<&str, usize> = videos
            .iter()
            .enumerate()
            .map(|(k, v)| (v.id.as_str(), k))
            .collect();
        if order.len() != videos.len() {
            return Err(StvgError::validation("video.id", "duplicate video id"));
        }
        for inst in &instances {
            if !order.contains_key(inst.video_id.as_str()) {
                return Err(StvgError::validation(
                    "video_id",
                    format!("instance `{}` references unknown video `{}`", inst.id, inst.video_id),
                ));
            }
        }
        instances.sort_by_key(|i| order[i.video_id.as_str()]);
        let ds = Dataset { videos, instances };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.split().validate()?;
        let mut ids = BTreeSet::new();
        for inst in &self.instances {
            if !ids.insert(inst.id.as_str()) {
                return Err(StvgError::validation("id", format!("duplicate instance id `{}`", inst.id)));
            }
            inst.validate()?;
        }
        Ok(())
    }

    pub fn split(&self) -> DatasetSplit {
        let mut s = DatasetSplit::default();
        for v in &self.videos {
            let set = match v.split {
                SplitName::Train => &mut s.train,
                SplitName::Val => &mut s.val,
                SplitName::Test => &mut s.test,
            };
            set.insert(v.id.clone());
        }
        s
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn videos_in(&self, split: SplitName) -> impl Iterator<Item = &VideoRecord> {
        self.videos.iter().filter(move |v| v.split == split)
    }

    pub fn instances_in(&self, split: SplitName) -> Vec<&GroundingInstance> {
        let ids = self.split();
        let set = ids.get(split);
        self.instances
            .iter()
            .filter(|i| set.contains(&i.video_id))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn box_invariants() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(-1.0, 0.0, 2.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 2.0, f64::NAN).is_err());
        assert_eq!(bx(0.0, 0.0, 10.0, 10.0).intersection_area(&bx(5.0, 5.0, 15.0, 15.0)), 25.0);
    }

    #[test]
    fn interval_is_half_open() {
        let a = TemporalInterval::new(0, 10).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.contains(9));
        assert!(!a.contains(10));
        assert!(TemporalInterval::new(3, 3).is_err());
        assert_eq!(a.intersection_len(&TemporalInterval::new(5, 15).unwrap()), 5);
    }

    #[test]
    fn restrict_pads_with_absent_slots() {
        let t = Tubelet::new("o", "panda", 2, vec![Some(bx(0.0, 0.0, 1.0, 1.0)); 3]);
        let r = t.restrict(&TemporalInterval::new(0, 6).unwrap());
        assert_eq!(r.boxes.len(), 6);
        assert!(r.boxes[0].is_none() && r.boxes[2].is_some() && r.boxes[5].is_none());
    }

    #[test]
    fn ground_truth_gap_rejected() {
        let mut t = Tubelet::new("o", "panda", 0, vec![Some(bx(0.0, 0.0, 1.0, 1.0)), None]);
        assert!(t.validate().is_ok());
        t.ground_truth = true;
        assert!(matches!(t.validate(), Err(StvgError::Validation { field, .. }) if field == "boxes[1]"));
    }
}
