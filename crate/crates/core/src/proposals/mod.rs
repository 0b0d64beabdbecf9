//! Tubelet proposals from per-frame detections and temporal interval
//! proposals from multi-scale windows.

mod link;
mod windows;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{BoundingBox, VideoRecord};
use crate::error::{Result, StvgError};
use crate::synth::fnv1a;

pub use link::{link_paths, link_tubelets, LinkedPath, DEFAULT_LINK_IOU, DEFAULT_MAX_TUBELETS};
pub use windows::{
    chunk_sequence, enumerate_windows, event_intervals, propose_intervals, recall_at_k,
    ClassifierLog, WindowClassifier, WindowClassifierConfig, WindowConfig, WindowExample, WindowProposal,
};

/// Boxes kept per frame after sorting by confidence.
pub const MAX_BOXES_PER_FRAME: usize = 300;
pub const DETS_FORMAT: &str = "stvg-dets/1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub confidence: f64,
}

/// Detections of one object class in one video, frame by frame starting at `frame_start`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameDetections {
    pub video_id: String,
    pub class_label: String,
    pub frame_start: usize,
    pub frames: Vec<Vec<Detection>>,
}

impl FrameDetections {
    /// Sorts every frame by descending confidence (stable) and keeps the top 300.
    pub fn new(
        video_id: impl Into<String>,
        class_label: impl Into<String>,
        frame_start: usize,
        mut frames: Vec<Vec<Detection>>,
    ) -> Result<Self> {
        for (f, frame) in frames.iter_mut().enumerate() {
            for d in frame.iter() {
                if !(0.0..=1.0).contains(&d.confidence) {
                    return Err(StvgError::validation(
                        format!("frames[{f}].confidence"),
                        format!("{} is outside [0, 1]", d.confidence),
                    ));
                }
                d.bbox.validate()?;
            }
            frame.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
            frame.truncate(MAX_BOXES_PER_FRAME);
        }
        Ok(FrameDetections {
            video_id: video_id.into(),
            class_label: class_label.into(),
            frame_start,
            frames,
        })
    }

    pub fn n_boxes(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }
}

/// Detector-style corruption of ground-truth tracks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    /// Per-coordinate jitter, as a fraction of box width or height.
    pub jitter: f64,
    /// Probability that a box is missed in a frame.
    pub drop_rate: f64,
    pub seed: u64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation {
            jitter: 0.1,
            drop_rate: 0.1,
            seed: 7,
        }
    }
}

impl Perturbation {
    pub fn none() -> Self {
        Perturbation {
            jitter: 0.0,
            drop_rate: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(StvgError::Config(format!("jitter must be non-negative, got {}", self.jitter)));
        }
        if !(0.0..=1.0).contains(&self.drop_rate) {
            return Err(StvgError::Config(format!("drop rate must lie in [0, 1], got {}", self.drop_rate)));
        }
        Ok(())
    }
}

/// Simulated detections from the annotated object tracks of `video`. Each kept
/// box is jittered, clamped to the image and given a confidence in [0.5, 1].
pub fn synthesize_detections(video: &VideoRecord, p: &Perturbation) -> Result<FrameDetections> {
    p.validate()?;
    if video.objects.is_empty() {
        return Err(StvgError::validation("objects", format!("video `{}` has no annotated objects", video.id)));
    }
    let mut frames = vec![Vec::new(); video.n_frames];
    for o in &video.objects {
        for f in o.track.present_frames() {
            let Some(b) = o.track.box_at(f) else { continue };
            if f >= video.n_frames {
                continue;
            }
            let key = fnv1a(&[
                &p.seed.to_le_bytes(),
                video.id.as_bytes(),
                o.object_id.as_bytes(),
                &(f as u64).to_le_bytes(),
            ]);
            let mut rng = ChaCha8Rng::seed_from_u64(key);
            if rng.random::<f64>() < p.drop_rate {
                continue;
            }
            let (w, h) = (b.width(), b.height());
            let mut n = |s: f64| -> f64 { p.jitter * s * rng.sample::<f64, _>(StandardNormal) };
            let x0 = (b.x_min + n(w)).clamp(0.0, video.width - 1.0);
            let y0 = (b.y_min + n(h)).clamp(0.0, video.height - 1.0);
            let x1 = (b.x_max + n(w)).clamp(x0 + 1.0, video.width);
            let y1 = (b.y_max + n(h)).clamp(y0 + 1.0, video.height);
            let confidence = rng.random_range(0.5..=1.0);
            frames[f].push(Detection {
                bbox: BoundingBox::new(x0, y0, x1, y1)?,
                confidence,
            });
        }
    }
    let class = video.objects[0].class_label.clone();
    FrameDetections::new(video.id.clone(), class, 0, frames)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum DetsRecord {
    Meta { format: String },
    Video(VideoDets),
}

#[derive(Serialize, Deserialize)]
struct DetRec {
    #[serde(rename = "box")]
    bbox: [f64; 4],
    confidence: f64,
}

#[derive(Serialize, Deserialize)]
struct VideoDets {
    video_id: String,
    class: String,
    #[serde(default)]
    frame_start: usize,
    frames: Vec<Vec<DetRec>>,
}

/// Writes detections as line-delimited JSON: a meta line, then one line per video.
pub fn write_detections<W: Write>(dets: &[FrameDetections], mut out: W) -> Result<()> {
    let io = |e: std::io::Error| StvgError::Invalid(format!("writing detections: {e}"));
    let line = |r: &DetsRecord, out: &mut W| -> Result<()> {
        serde_json::to_writer(&mut *out, r).map_err(|e| StvgError::Invalid(e.to_string()))?;
        out.write_all(b"\n").map_err(io)
    };
    line(
        &DetsRecord::Meta {
            format: DETS_FORMAT.to_string(),
        },
        &mut out,
    )?;
    for d in dets {
        let rec = DetsRecord::Video(VideoDets {
            video_id: d.video_id.clone(),
            class: d.class_label.clone(),
            frame_start: d.frame_start,
            frames: d
                .frames
                .iter()
                .map(|fr| {
                    fr.iter()
                        .map(|x| DetRec {
                            bbox: x.bbox.to_array(),
                            confidence: x.confidence,
                        })
                        .collect()
                })
                .collect(),
        });
        line(&rec, &mut out)?;
    }
    out.flush().map_err(io)
}

pub fn read_detections<R: Read>(input: R) -> Result<Vec<FrameDetections>> {
    let mut out = Vec::new();
    let mut seen_meta = false;
    for (k, line) in BufReader::new(input).lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| StvgError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetsRecord = serde_json::from_str(&line).map_err(|e| StvgError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match rec {
            DetsRecord::Meta { format } => {
                if format != DETS_FORMAT {
                    return Err(StvgError::validation(
                        "format",
                        format!("expected `{DETS_FORMAT}`, found `{format}`"),
                    ));
                }
                seen_meta = true;
            }
            DetsRecord::Video(v) => {
                if !seen_meta {
                    return Err(StvgError::validation("format", format!("missing meta line before line {line_no}")));
                }
                let mut frames = Vec::with_capacity(v.frames.len());
                for fr in v.frames {
                    let mut dets = Vec::with_capacity(fr.len());
                    for d in fr {
                        dets.push(Detection {
                            bbox: BoundingBox::from_array(d.bbox)?,
                            confidence: d.confidence,
                        });
                    }
                    frames.push(dets);
                }
                out.push(
                    FrameDetections::new(v.video_id, v.class, v.frame_start, frames).map_err(|e| match e {
                        StvgError::Validation { field, message } => {
                            StvgError::validation(field, format!("{message} (line {line_no})"))
                        }
                        other => other,
                    })?,
                );
            }
        }
    }
    if !seen_meta {
        return Err(StvgError::validation("format", "empty detections file"));
    }
    Ok(out)
}

pub fn save_detections(dets: &[FrameDetections], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| StvgError::io(path, e))?;
    write_detections(dets, BufWriter::new(f))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<FrameDetections>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| StvgError::io(path, e))?;
    read_detections(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, Preset, SynthConfig};

    #[test]
    fn truncates_and_sorts_frames() {
        let frame: Vec<Detection> = (0..350)
            .map(|k| Detection {
                bbox: BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap(),
                confidence: (k % 100) as f64 / 100.0,
            })
            .collect();
        let d = FrameDetections::new("v", "c", 0, vec![frame]).unwrap();
        assert_eq!(d.frames[0].len(), MAX_BOXES_PER_FRAME);
        assert!(d.frames[0].windows(2).all(|w| w[0].confidence >= w[1].confidence));
    }

    #[test]
    fn rejects_confidence_above_one() {
        let d = Detection {
            bbox: BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            confidence: 1.5,
        };
        assert!(FrameDetections::new("v", "c", 0, vec![vec![d]]).is_err());
    }

    #[test]
    fn detections_round_trip_and_perturb_deterministically() {
        let ds = build_dataset(15, Preset::Mixed, &SynthConfig::default(), 3).unwrap();
        let v = &ds.videos[0];
        let clean = synthesize_detections(v, &Perturbation::none()).unwrap();
        let total: usize = v.objects.iter().map(|o| o.track.present_frames().count()).sum();
        assert_eq!(clean.n_boxes(), total);
        let noisy = synthesize_detections(v, &Perturbation::default()).unwrap();
        assert!(noisy.n_boxes() < total);
        assert_eq!(noisy, synthesize_detections(v, &Perturbation::default()).unwrap());
        let mut buf = Vec::new();
        write_detections(&[noisy.clone()], &mut buf).unwrap();
        let back = read_detections(buf.as_slice()).unwrap();
        assert_eq!(back, vec![noisy]);
    }
}
