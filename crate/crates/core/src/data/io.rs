//! Line-delimited JSON interchange format (`stvg/1`).
//!
//! ```text
//! {"type":"meta","format":"stvg/1","n_videos":..,"n_instances":..}
//! {"type":"video","id":..,"width":..,"height":..,"n_frames":..,"fps":..,"split":"train","objects":[..]}
//! {"type":"instance","id":..,"video_id":..,"interval":[s,e],"expression":{..},"candidates":[..],..}
//! ```
//!
//! Each video record is followed by the instances of that video.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    BoundingBox, Dataset, Expression, GroundingInstance, SceneObject, SplitName, TemporalInterval, Tubelet,
    VideoRecord,
};
use crate::error::{Result, StvgError};

pub const FORMAT_VERSION: &str = "stvg/1";

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum Record {
    Meta(MetaRecord),
    Video(VideoRec),
    Instance(InstanceRec),
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    format: String,
    #[serde(default)]
    n_videos: usize,
    #[serde(default)]
    n_instances: usize,
}

#[derive(Serialize, Deserialize)]
struct VideoRec {
    id: String,
    width: f64,
    height: f64,
    n_frames: usize,
    fps: f64,
    split: SplitName,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    objects: Vec<ObjectRec>,
}

#[derive(Serialize, Deserialize)]
struct ObjectRec {
    object_id: String,
    class: String,
    #[serde(default)]
    attributes: Vec<String>,
    frame_start: usize,
    boxes: Vec<Option<[f64; 4]>>,
}

/// Tubelet in interchange form, shared by dataset, prediction and proposal files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeletRec {
    pub object_id: String,
    pub class: String,
    pub frame_start: usize,
    pub boxes: Vec<Option<[f64; 4]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<Vec<f64>>,
    #[serde(default)]
    pub gt: bool,
}

#[derive(Serialize, Deserialize)]
struct ExpressionRec {
    raw: String,
    tokens: Vec<String>,
    pos: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRec {
    id: String,
    video_id: String,
    interval: [usize; 2],
    expression: ExpressionRec,
    candidates: Vec<TubeletRec>,
    target_index: usize,
    #[serde(default)]
    attributes: Vec<String>,
}

fn prefix_field(prefix: &str, e: StvgError) -> StvgError {
    match e {
        StvgError::Validation { field, message } => StvgError::validation(format!("{prefix}.{field}"), message),
        other => other,
    }
}

fn at_line(line: usize, e: StvgError) -> StvgError {
    match e {
        StvgError::Validation { field, message } => {
            StvgError::validation(field, format!("{message} (line {line})"))
        }
        other => other,
    }
}

impl TubeletRec {
    pub fn from_tubelet(t: &Tubelet) -> Self {
        TubeletRec {
            object_id: t.object_id.clone(),
            class: t.class_label.clone(),
            frame_start: t.frame_start,
            boxes: t.boxes.iter().map(|b| b.map(|b| b.to_array())).collect(),
            confidence: t.confidence.clone(),
            gt: t.ground_truth,
        }
    }

    pub fn into_tubelet(self) -> Result<Tubelet> {
        let mut boxes = Vec::with_capacity(self.boxes.len());
        for (k, b) in self.boxes.into_iter().enumerate() {
            boxes.push(match b {
                Some(a) => Some(
                    BoundingBox::from_array(a)
                        .map_err(|e| prefix_field("boxes", e))
                        .map_err(|e| match e {
                            StvgError::Validation { message, .. } => {
                                StvgError::validation(format!("boxes[{k}]"), message)
                            }
                            other => other,
                        })?,
                ),
                None => None,
            });
        }
        let t = Tubelet {
            object_id: self.object_id,
            class_label: self.class,
            frame_start: self.frame_start,
            boxes,
            confidence: self.confidence,
            ground_truth: self.gt,
        };
        t.validate()?;
        Ok(t)
    }
}

fn video_to_record(v: &VideoRecord) -> VideoRec {
    VideoRec {
        id: v.id.clone(),
        width: v.width,
        height: v.height,
        n_frames: v.n_frames,
        fps: v.fps,
        split: v.split,
        objects: v
            .objects
            .iter()
            .map(|o| ObjectRec {
                object_id: o.object_id.clone(),
                class: o.class_label.clone(),
                attributes: o.attributes.clone(),
                frame_start: o.track.frame_start,
                boxes: o.track.boxes.iter().map(|b| b.map(|b| b.to_array())).collect(),
            })
            .collect(),
    }
}

fn video_from_record(r: VideoRec) -> Result<VideoRecord> {
    if !(r.width > 0.0 && r.height > 0.0) {
        return Err(StvgError::validation("width", "image size must be positive"));
    }
    if r.n_frames == 0 {
        return Err(StvgError::validation("n_frames", "video has no frames"));
    }
    let mut objects = Vec::with_capacity(r.objects.len());
    for (k, o) in r.objects.into_iter().enumerate() {
        let track = TubeletRec {
            object_id: o.object_id.clone(),
            class: o.class.clone(),
            frame_start: o.frame_start,
            boxes: o.boxes,
            confidence: None,
            gt: true,
        }
        .into_tubelet()
        .map_err(|e| prefix_field(&format!("objects[{k}]"), e))?;
        objects.push(SceneObject {
            object_id: o.object_id,
            class_label: o.class,
            attributes: o.attributes,
            track,
        });
    }
    Ok(VideoRecord {
        id: r.id,
        width: r.width,
        height: r.height,
        n_frames: r.n_frames,
        fps: r.fps,
        split: r.split,
        objects,
    })
}

fn instance_to_record(i: &GroundingInstance) -> InstanceRec {
    InstanceRec {
        id: i.id.clone(),
        video_id: i.video_id.clone(),
        interval: [i.interval.start, i.interval.end],
        expression: ExpressionRec {
            raw: i.expression.raw_text.clone(),
            tokens: i.expression.tokens.clone(),
            pos: i.expression.pos_tags.clone(),
        },
        candidates: i.candidates.iter().map(TubeletRec::from_tubelet).collect(),
        target_index: i.target_index,
        attributes: i.attributes.iter().cloned().collect(),
    }
}

fn instance_from_record(r: InstanceRec) -> Result<GroundingInstance> {
    let interval = TemporalInterval::new(r.interval[0], r.interval[1])?;
    let expression = Expression {
        tokens: r.expression.tokens,
        pos_tags: r.expression.pos,
        raw_text: r.expression.raw,
    };
    let mut candidates = Vec::with_capacity(r.candidates.len());
    for (k, c) in r.candidates.into_iter().enumerate() {
        candidates.push(c.into_tubelet().map_err(|e| prefix_field(&format!("candidates[{k}]"), e))?);
    }
    let inst = GroundingInstance {
        id: r.id,
        video_id: r.video_id,
        interval,
        expression,
        candidates,
        target_index: r.target_index,
        attributes: r.attributes.into_iter().collect::<BTreeSet<_>>(),
    };
    inst.validate()?;
    Ok(inst)
}

/// Serializes a dataset to any writer.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| StvgError::io("<writer>", e);
    let mut by_video: BTreeMap<&str, Vec<&GroundingInstance>> = BTreeMap::new();
    for inst in &dataset.instances {
        by_video.entry(inst.video_id.as_str()).or_default().push(inst);
    }
    let meta = Record::Meta(MetaRecord {
        format: FORMAT_VERSION.to_string(),
        n_videos: dataset.videos.len(),
        n_instances: dataset.instances.len(),
    });
    let line = |r: &Record| serde_json::to_string(r).expect("records serialize");
    writeln!(out, "{}", line(&meta)).map_err(io)?;
    for v in &dataset.videos {
        writeln!(out, "{}", line(&Record::Video(video_to_record(v)))).map_err(io)?;
        for inst in by_video.get(v.id.as_str()).into_iter().flatten() {
            writeln!(out, "{}", line(&Record::Instance(instance_to_record(inst)))).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Parses a dataset from any reader, validating every record.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset> {
    let reader = BufReader::new(input);
    let mut videos: Vec<VideoRecord> = Vec::new();
    let mut instances = Vec::new();
    let mut seen_meta = false;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| StvgError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| StvgError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        match record {
            Record::Meta(m) => {
                if seen_meta || !videos.is_empty() || !instances.is_empty() {
                    return Err(StvgError::Parse {
                        line: lineno,
                        message: "meta record must be the first line".into(),
                    });
                }
                if m.format != FORMAT_VERSION {
                    return Err(StvgError::Parse {
                        line: lineno,
                        message: format!("unsupported format `{}`, expected `{FORMAT_VERSION}`", m.format),
                    });
                }
                seen_meta = true;
            }
            _ if !seen_meta => {
                return Err(StvgError::Parse {
                    line: lineno,
                    message: "missing meta record".into(),
                })
            }
            Record::Video(v) => {
                let v = video_from_record(v).map_err(|e| at_line(lineno, e))?;
                if let Some(prev) = videos.iter().find(|p| p.id == v.id) {
                    return Err(at_line(
                        lineno,
                        StvgError::validation(
                            "split",
                            format!("video `{}` declared twice ({} and {})", v.id, prev.split, v.split),
                        ),
                    ));
                }
                videos.push(v);
            }
            Record::Instance(r) => {
                let inst = instance_from_record(r).map_err(|e| at_line(lineno, e))?;
                if !videos.iter().any(|v| v.id == inst.video_id) {
                    return Err(at_line(
                        lineno,
                        StvgError::validation(
                            "video_id",
                            format!("instance references undeclared video `{}`", inst.video_id),
                        ),
                    ));
                }
                instances.push(inst);
            }
        }
    }
    if !seen_meta {
        return Err(StvgError::Parse {
            line: 1,
            message: "missing meta record".into(),
        });
    }
    Dataset::new(videos, instances)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| StvgError::io(path, e))?;
    write_dataset(dataset, BufWriter::new(file)).map_err(|e| match e {
        StvgError::Io { source, .. } => StvgError::io(path, source),
        other => other,
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| StvgError::io(path, e))?;
    read_dataset(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    const META: &str = r#"{"type":"meta","format":"stvg/1"}"#;
    const VIDEO: &str = r#"{"type":"video","id":"v0","width":100,"height":100,"n_frames":10,"fps":30,"split":"train"}"#;

    fn instance(target: usize, class_b: &str) -> String {
        format!(
            r#"{{"type":"instance","id":"i0","video_id":"v0","interval":[0,2],"expression":{{"raw":"the panda","tokens":["the","panda"],"pos":["DT","NN"]}},"candidates":[{{"object_id":"a","class":"panda","frame_start":0,"boxes":[[0,0,5,5],[0,0,5,5]],"gt":true}},{{"object_id":"b","class":"{class_b}","frame_start":0,"boxes":[[10,10,20,20],null]}}],"target_index":{target},"attributes":[]}}"#
        )
    }

    fn parse(lines: &[&str]) -> Result<Dataset> {
        read_dataset(lines.join("\n").as_bytes())
    }

    #[test]
    fn parses_well_formed_record() {
        let inst = instance(1, "panda");
        let ds = parse(&[META, VIDEO, &inst]).unwrap();
        assert_eq!(ds.instances.len(), 1);
        assert!(ds.instances[0].candidates[1].boxes[1].is_none());
    }

    #[test]
    fn target_index_out_of_range() {
        let inst = instance(2, "panda");
        let err = parse(&[META, VIDEO, &inst]).unwrap_err();
        assert!(matches!(err, StvgError::Validation { ref field, .. } if field == "target_index"), "{err}");
    }

    #[test]
    fn mixed_classes_rejected() {
        let inst = instance(0, "dog");
        let err = parse(&[META, VIDEO, &inst]).unwrap_err();
        assert!(matches!(err, StvgError::Validation { ref field, .. } if field == "candidates"), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse(&[META, VIDEO, "{not json"]).unwrap_err();
        assert!(matches!(err, StvgError::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn video_in_two_splits_rejected() {
        let other = VIDEO.replace("train", "test");
        let err = parse(&[META, VIDEO, &other]).unwrap_err();
        assert!(matches!(err, StvgError::Validation { ref field, .. } if field == "split"), "{err}");
    }

    #[test]
    fn missing_meta_rejected() {
        assert!(matches!(parse(&[VIDEO]), Err(StvgError::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_dataset_round_trips() {
        let mut buf = Vec::new();
        write_dataset(&Dataset::default(), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), Dataset::default());
    }
}
