//! Synthetic micro-world: same-class objects moving in short events, with
//! template descriptions whose referent is known by construction.

mod provider;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{
    BoundingBox, Dataset, Expression, GroundingInstance, SceneObject, SplitName, TemporalInterval, Tubelet,
    VideoRecord,
};
use crate::error::{Result, StvgError};
use crate::metrics::box_iou;
use crate::validator;

pub use provider::{fnv1a, SynthProvider};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "white", "black"];
pub const CLASSES: [&str; 6] = ["ball", "car", "dog", "panda", "bird", "horse"];
pub const LANDMARKS: [[&str; 2]; 5] = [
    ["grass", "field"],
    ["sand", "hill"],
    ["stone", "road"],
    ["snow", "slope"],
    ["dirt", "track"],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
    Still,
}

impl Direction {
    pub const ALL: [Direction; 5] = [
        Direction::Left,
        Direction::Right,
        Direction::Up,
        Direction::Down,
        Direction::Still,
    ];

    /// Unit displacement in image coordinates (y grows downward).
    pub fn unit(self) -> (f64, f64) {
        match self {
            Direction::Left => (-1.0, 0.0),
            Direction::Right => (1.0, 0.0),
            Direction::Up => (0.0, -1.0),
            Direction::Down => (0.0, 1.0),
            Direction::Still => (0.0, 0.0),
        }
    }

    pub fn is_moving(self) -> bool {
        self != Direction::Still
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Most videos hold same-colored objects told apart only by motion.
    Motion,
    /// Colors drawn with replacement.
    Mixed,
}

impl FromStr for Preset {
    type Err = StvgError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(Preset::Motion),
            "mixed" => Ok(Preset::Mixed),
            other => Err(StvgError::Config(format!("unknown preset `{other}` (motion|mixed)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Motion => "motion",
            Preset::Mixed => "mixed",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: f64,
    pub height: f64,
    pub n_frames: usize,
    pub fps: f64,
    pub event_len: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub max_events: usize,
    /// Pixels per frame while moving.
    pub speed: (f64, f64),
    pub box_width: (f64, f64),
    pub box_height: (f64, f64),
    /// Share of same-color videos in the motion preset.
    pub twin_fraction: f64,
    pub appearance_sigma: f64,
    pub motion_sigma: f64,
    pub chunk_sigma: f64,
    /// Chance that a moving object's description ends in "then stops".
    pub then_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 640.0,
            height: 360.0,
            n_frames: 120,
            fps: 30.0,
            event_len: 40,
            min_objects: 2,
            max_objects: 4,
            max_events: 2,
            speed: (2.0, 3.5),
            box_width: (50.0, 90.0),
            box_height: (40.0, 70.0),
            twin_fraction: 0.6,
            appearance_sigma: 0.1,
            motion_sigma: 5e-4,
            chunk_sigma: 0.05,
            then_probability: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_objects < 2 || self.min_objects > self.max_objects {
            return Err(StvgError::Config("object count range must satisfy 2 <= min <= max".into()));
        }
        if self.max_objects > Direction::ALL.len() {
            return Err(StvgError::Config(format!(
                "at most {} objects can carry distinct motions",
                Direction::ALL.len()
            )));
        }
        if self.max_events == 0 || self.event_len * self.max_events > self.n_frames {
            return Err(StvgError::Config("events do not fit in the video".into()));
        }
        if self.box_width.1 >= self.width || self.box_height.1 >= self.height {
            return Err(StvgError::Config("objects too large to fit in the image".into()));
        }
        if !(0.0..=1.0).contains(&self.twin_fraction) || !(0.0..=1.0).contains(&self.then_probability) {
            return Err(StvgError::Config("fractions must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub color: String,
    pub start_box: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub interval: TemporalInterval,
    pub directions: Vec<Direction>,
    pub speeds: Vec<f64>,
    pub then_stop: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub id: String,
    pub class_label: String,
    pub width: f64,
    pub height: f64,
    pub n_frames: usize,
    pub fps: f64,
    pub landmark: usize,
    pub objects: Vec<ObjectSpec>,
    pub events: Vec<EventSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    /// Whole-video track per object.
    pub tracks: Vec<Tubelet>,
}

impl SceneSpec {
    pub fn object_id(k: usize) -> String {
        format!("o{k}")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.objects.len();
        if n < 2 {
            return Err(StvgError::validation("objects", "a contrast set needs at least two objects"));
        }
        for o in &self.objects {
            let b = BoundingBox::from_array(o.start_box)?;
            if b.x_max > self.width || b.y_max > self.height {
                return Err(StvgError::validation("objects", "object does not fit in the image"));
            }
        }
        let mut prev_end = 0;
        for (k, e) in self.events.iter().enumerate() {
            if e.directions.len() != n || e.speeds.len() != n || e.then_stop.len() != n {
                return Err(StvgError::validation("events", format!("event {k} does not cover every object")));
            }
            if e.interval.end > self.n_frames || (k > 0 && e.interval.start < prev_end) {
                return Err(StvgError::validation("events", format!("event {k} overlaps or leaves the video")));
            }
            prev_end = e.interval.end;
        }
        Ok(())
    }

    fn event_at(&self, frame: usize) -> Option<&EventSpec> {
        self.events.iter().find(|e| e.interval.contains(frame))
    }
}

/// Deterministic trajectories: objects hold still outside events and move
/// by `speed` pixels per frame in their event direction, clamped to the image.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut tracks = Vec::with_capacity(spec.objects.len());
    for (k, obj) in spec.objects.iter().enumerate() {
        let [x0, y0, x1, y1] = obj.start_box;
        let (w, h) = (x1 - x0, y1 - y0);
        let (mut x, mut y) = (x0, y0);
        let mut boxes = Vec::with_capacity(spec.n_frames);
        for f in 0..spec.n_frames {
            if f > 0 {
                if let Some(e) = spec.event_at(f) {
                    let (ux, uy) = e.directions[k].unit();
                    x = (x + ux * e.speeds[k]).clamp(0.0, spec.width - w);
                    y = (y + uy * e.speeds[k]).clamp(0.0, spec.height - h);
                }
            }
            boxes.push(Some(BoundingBox::new(x, y, x + w, y + h)?));
        }
        let mut t = Tubelet::new(SceneSpec::object_id(k), spec.class_label.clone(), 0, boxes);
        t.ground_truth = true;
        tracks.push(t);
    }
    Ok(Scene {
        spec: spec.clone(),
        tracks,
    })
}

impl Scene {
    pub fn video_record(&self, split: SplitName) -> VideoRecord {
        VideoRecord {
            id: self.spec.id.clone(),
            width: self.spec.width,
            height: self.spec.height,
            n_frames: self.spec.n_frames,
            fps: self.spec.fps,
            split,
            objects: self
                .tracks
                .iter()
                .zip(&self.spec.objects)
                .map(|(t, o)| SceneObject {
                    object_id: t.object_id.clone(),
                    class_label: t.class_label.clone(),
                    attributes: vec![o.color.clone()],
                    track: t.clone(),
                })
                .collect(),
        }
    }

    /// Objects of `event` whose color and direction match.
    pub fn matching_objects(&self, event: usize, color: &str, direction: Direction) -> Vec<usize> {
        let e = &self.spec.events[event];
        (0..self.spec.objects.len())
            .filter(|k| self.spec.objects[*k].color == color && e.directions[*k] == direction)
            .collect()
    }
}

struct Word {
    text: String,
    tag: &'static str,
}

fn w(text: &str, tag: &'static str) -> Word {
    Word {
        text: text.to_string(),
        tag,
    }
}

fn verb_phrase(direction: Direction, variant: bool) -> (Vec<Word>, &'static str) {
    match direction {
        Direction::Right => (vec![w("runs", "VBZ"), w("right", "RB")], "across"),
        Direction::Left => (vec![w("moves", "VBZ"), w("left", "RB")], "across"),
        Direction::Up => (vec![w(if variant { "jumps" } else { "climbs" }, "VBZ")], "up"),
        Direction::Down => (vec![w("slides", "VBZ")], "down"),
        Direction::Still => (vec![w("stays", "VBZ")], "on"),
    }
}

/// Template description of object `k` during `event`: the object's color and
/// class, a direction-specific verb phrase, a landmark phrase, and optionally
/// "then stops".
pub fn realize_expression(scene: &Scene, event: usize, k: usize) -> Result<Expression> {
    let spec = &scene.spec;
    let e = &spec.events[event];
    let dir = e.directions[k];
    let color = &spec.objects[k].color;
    let (verb, prep) = verb_phrase(dir, (k + event) % 2 == 1);
    let [lm1, lm2] = LANDMARKS[spec.landmark % LANDMARKS.len()];
    let mut words = vec![w("the", "DT"), w(color, "JJ"), w(&spec.class_label, "NN")];
    words.extend(verb);
    words.extend([w(prep, "IN"), w("the", "DT"), w(lm1, "NN"), w(lm2, "NN")]);
    if dir.is_moving() && e.then_stop[k] {
        words.extend([w("then", "RB"), w("stops", "VBZ")]);
    }
    let raw = words.iter().map(|x| x.text.as_str()).collect::<Vec<_>>().join(" ");
    let expr = Expression::new(
        words.iter().map(|x| x.text.clone()).collect(),
        words.iter().map(|x| x.tag.to_string()).collect(),
        raw,
    )?;
    let verdict = validator::validate(&expr);
    if !verdict.valid {
        return Err(StvgError::Invalid(format!("template produced an invalid description: {}", expr.raw_text)));
    }
    if scene.matching_objects(event, color, dir).len() != 1 {
        return Err(StvgError::Invalid(format!("description `{}` is ambiguous", expr.raw_text)));
    }
    Ok(expr)
}

/// One description per object per event, indexed `[event][object]`.
pub fn realize_expressions(scene: &Scene) -> Result<Vec<Vec<Expression>>> {
    (0..scene.spec.events.len())
        .map(|e| (0..scene.spec.objects.len()).map(|k| realize_expression(scene, e, k)).collect())
        .collect()
}

fn sample_range<R: Rng>(rng: &mut R, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn sample_events<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Vec<TemporalInterval> {
    let n_events = rng.random_range(1..=cfg.max_events);
    let len = cfg.event_len;
    let mut out = Vec::with_capacity(n_events);
    let mut lo = 0;
    for k in 0..n_events {
        let remaining = n_events - k - 1;
        let hi = cfg.n_frames - len * (remaining + 1);
        let s = rng.random_range(lo..=hi);
        out.push(TemporalInterval { start: s, end: s + len });
        lo = s + len;
    }
    out
}

fn fits(b: &[f64; 4], dir: Direction, travel: f64, cfg: &SynthConfig) -> bool {
    let (ux, uy) = dir.unit();
    let (dx, dy) = (ux * travel, uy * travel);
    b[0] + dx >= 0.0 && b[2] + dx <= cfg.width && b[1] + dy >= 0.0 && b[3] + dy <= cfg.height
}

fn shifted(b: &[f64; 4], dir: Direction, travel: f64) -> [f64; 4] {
    let (ux, uy) = dir.unit();
    [b[0] + ux * travel, b[1] + uy * travel, b[2] + ux * travel, b[3] + uy * travel]
}

/// Samples a scene whose descriptions are unambiguous within every event.
pub fn sample_scene_spec<R: Rng>(
    cfg: &SynthConfig,
    preset: Preset,
    twin: bool,
    id: &str,
    rng: &mut R,
) -> Result<SceneSpec> {
    cfg.validate()?;
    'attempt: for _ in 0..200 {
        let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
        let class_label = CLASSES[rng.random_range(0..CLASSES.len())].to_string();
        let colors: Vec<String> = match (preset, twin) {
            (Preset::Motion, true) => vec![COLORS[rng.random_range(0..COLORS.len())].to_string(); n],
            (Preset::Motion, false) => {
                let mut c: Vec<&str> = COLORS.to_vec();
                c.shuffle(rng);
                c[..n].iter().map(|s| s.to_string()).collect()
            }
            (Preset::Mixed, _) => (0..n)
                .map(|_| COLORS[rng.random_range(0..COLORS.len())].to_string())
                .collect(),
        };
        let mut boxes: Vec<[f64; 4]> = Vec::with_capacity(n);
        for _ in 0..n {
            let mut placed = false;
            for _ in 0..100 {
                let bw = sample_range(rng, cfg.box_width);
                let bh = sample_range(rng, cfg.box_height);
                let x = rng.random_range(0.0..cfg.width - bw);
                let y = rng.random_range(0.0..cfg.height - bh);
                let b = [x, y, x + bw, y + bh];
                let bb = BoundingBox::from_array(b)?;
                if boxes
                    .iter()
                    .all(|o| box_iou(&bb, &BoundingBox::from_array(*o).unwrap()) < 0.2)
                {
                    boxes.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        let objects: Vec<ObjectSpec> = colors
            .iter()
            .zip(&boxes)
            .map(|(c, b)| ObjectSpec {
                color: c.clone(),
                start_box: *b,
            })
            .collect();
        let mut events = Vec::new();
        let mut current = boxes.clone();
        for interval in sample_events(cfg, rng) {
            let speeds: Vec<f64> = (0..n).map(|_| sample_range(rng, cfg.speed)).collect();
            let mut chosen = None;
            for _ in 0..200 {
                let dirs: Vec<Direction> = (0..n)
                    .map(|_| Direction::ALL[rng.random_range(0..Direction::ALL.len())])
                    .collect();
                if !dirs.iter().any(|d| d.is_moving()) {
                    continue;
                }
                let combos: BTreeSet<(&str, Direction)> =
                    colors.iter().map(|c| c.as_str()).zip(dirs.iter().copied()).collect();
                if combos.len() != n {
                    continue;
                }
                let travel = |k: usize| speeds[k] * interval.len() as f64;
                if (0..n).all(|k| fits(&current[k], dirs[k], travel(k), cfg)) {
                    chosen = Some(dirs);
                    break;
                }
            }
            let Some(dirs) = chosen else {
                continue 'attempt;
            };
            let steps = (interval.start.max(1)..interval.end).count() as f64;
            for k in 0..n {
                current[k] = shifted(&current[k], dirs[k], speeds[k] * steps);
            }
            let then_stop = dirs
                .iter()
                .map(|d| d.is_moving() && rng.random_bool(cfg.then_probability))
                .collect();
            events.push(EventSpec {
                interval,
                directions: dirs,
                speeds,
                then_stop,
            });
        }
        let spec = SceneSpec {
            id: id.to_string(),
            class_label,
            width: cfg.width,
            height: cfg.height,
            n_frames: cfg.n_frames,
            fps: cfg.fps,
            landmark: rng.random_range(0..LANDMARKS.len()),
            objects,
            events,
        };
        spec.validate()?;
        return Ok(spec);
    }
    Err(StvgError::Config("could not sample an unambiguous scene; loosen the configuration".into()))
}

/// Video counts per split at the 12:1:2 ratio.
pub fn split_sizes(n_videos: usize) -> (usize, usize, usize) {
    let val = ((n_videos as f64 / 15.0).round() as usize).max(1);
    let test = ((2.0 * n_videos as f64 / 15.0).round() as usize).max(1);
    (n_videos - val - test, val, test)
}

/// Grounding instances of a scene: one per object per event, candidates in shuffled order.
pub fn scene_instances<R: Rng>(scene: &Scene, rng: &mut R) -> Result<Vec<GroundingInstance>> {
    let exprs = realize_expressions(scene)?;
    let mut out = Vec::new();
    for (e, event) in scene.spec.events.iter().enumerate() {
        let mut order: Vec<usize> = (0..scene.tracks.len()).collect();
        for (k, expr) in exprs[e].iter().enumerate() {
            order.shuffle(rng);
            let candidates = order.iter().map(|j| scene.tracks[*j].restrict(&event.interval)).collect();
            let target_index = order.iter().position(|j| *j == k).unwrap();
            out.push(GroundingInstance {
                id: format!("{}-e{}-o{}", scene.spec.id, e, k),
                video_id: scene.spec.id.clone(),
                interval: event.interval,
                expression: expr.clone(),
                candidates,
                target_index,
                attributes: BTreeSet::from([scene.spec.objects[k].color.clone()]),
            });
        }
    }
    Ok(out)
}

/// Scenes for `n_videos` videos with their split assignment. Each video has
/// its own random stream so generation order does not matter.
pub fn build_scenes(
    n_videos: usize,
    preset: Preset,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<(Scene, SplitName)>> {
    if n_videos < 15 {
        return Err(StvgError::Config(format!("need at least 15 videos, got {n_videos}")));
    }
    cfg.validate()?;
    let (n_train, n_val, n_test) = split_sizes(n_videos);
    let mut plan = Vec::with_capacity(n_videos);
    let total_twins = (cfg.twin_fraction * n_videos as f64).round() as usize;
    let mut twins_left = total_twins;
    for (split, size) in [(SplitName::Val, n_val), (SplitName::Test, n_test), (SplitName::Train, n_train)] {
        let twins = if split == SplitName::Train {
            twins_left.min(size)
        } else {
            ((cfg.twin_fraction * size as f64).round() as usize).min(twins_left)
        };
        twins_left -= twins;
        for k in 0..size {
            plan.push((split, k < twins));
        }
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    plan.shuffle(&mut order_rng);
    plan.iter()
        .enumerate()
        .map(|(v, (split, twin))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(v as u64 + 1);
            let id = format!("vid{v:04}");
            let twin = preset == Preset::Motion && *twin;
            let spec = sample_scene_spec(cfg, preset, twin, &id, &mut rng)?;
            Ok((generate_scene(&spec)?, *split))
        })
        .collect()
}

/// Builds a dataset with a video-level 12:1:2 split.
pub fn build_dataset(n_videos: usize, preset: Preset, cfg: &SynthConfig, seed: u64) -> Result<Dataset> {
    let scenes = build_scenes(n_videos, preset, cfg, seed)?;
    let mut videos = Vec::with_capacity(scenes.len());
    let mut instances = Vec::new();
    for (v, (scene, split)) in scenes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 << 32 | v as u64);
        instances.extend(scene_instances(scene, &mut rng)?);
        videos.push(scene.video_record(*split));
    }
    Dataset::new(videos, instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(dir: Direction, speed: f64) -> SceneSpec {
        SceneSpec {
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
            ],
            events: vec![EventSpec {
                interval: TemporalInterval { start: 10, end: 50 },
                directions: vec![dir, Direction::Still],
                speeds: vec![speed, speed],
                then_stop: vec![false, false],
            }],
        }
    }

    #[test]
    fn zero_speed_keeps_boxes_constant() {
        let s = generate_scene(&small_spec(Direction::Right, 0.0)).unwrap();
        let first = s.tracks[0].boxes[0];
        assert!(s.tracks[0].boxes.iter().all(|b| *b == first));
    }

    #[test]
    fn rightward_motion_advances_x_min() {
        let s = generate_scene(&small_spec(Direction::Right, 2.5)).unwrap();
        let t = &s.tracks[0];
        for f in 10..50 {
            let d = t.box_at(f).unwrap().x_min - t.box_at(f - 1).unwrap().x_min;
            assert!((d - 2.5).abs() < 1e-12);
        }
        assert_eq!(t.box_at(50).unwrap(), t.box_at(59).unwrap());
    }

    #[test]
    fn motion_stops_at_the_border() {
        let s = generate_scene(&small_spec(Direction::Left, 5.0)).unwrap();
        let b = s.tracks[0].box_at(49).unwrap();
        assert_eq!(b.x_min, 0.0);
        assert_eq!(b.width(), 50.0);
    }

    #[test]
    fn twin_descriptions_differ_in_the_verb_phrase() {
        let s = generate_scene(&small_spec(Direction::Up, 2.0)).unwrap();
        let ex = realize_expressions(&s).unwrap();
        let (a, b) = (&ex[0][0], &ex[0][1]);
        assert_eq!(a.tokens[..3], b.tokens[..3]);
        assert_ne!(a.tokens[3], b.tokens[3]);
    }

    #[test]
    fn template_tags_match_the_tagger() {
        let ds = build_dataset(15, Preset::Mixed, &SynthConfig::default(), 3).unwrap();
        for inst in &ds.instances {
            assert_eq!(validator::pos_tag(&inst.expression.tokens), inst.expression.pos_tags);
        }
    }

    #[test]
    fn ambiguous_scene_is_rejected() {
        let mut spec = small_spec(Direction::Still, 2.0);
        spec.events[0].directions = vec![Direction::Still, Direction::Still];
        let s = generate_scene(&spec).unwrap();
        assert!(realize_expressions(&s).is_err());
    }

    #[test]
    fn split_ratio() {
        assert_eq!(split_sizes(30), (24, 2, 4));
        assert_eq!(split_sizes(15), (12, 1, 2));
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = SynthConfig::default();
        let a = build_dataset(15, Preset::Motion, &cfg, 11).unwrap();
        let b = build_dataset(15, Preset::Motion, &cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = build_dataset(15, Preset::Motion, &cfg, 12).unwrap();
        assert_ne!(a, c);
    }
}
