//! Best-path tubelet linking over per-frame detections.

use super::FrameDetections;
use crate::data::{BoundingBox, Tubelet};
use crate::metrics::box_iou;

pub const DEFAULT_LINK_IOU: f64 = 0.5;
pub const DEFAULT_MAX_TUBELETS: usize = 8;

/// A linked path: start frame (relative to the detections) and one box index per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkedPath {
    pub start: usize,
    pub boxes: Vec<usize>,
    pub score: f64,
}

/// Successor lists: `links[f][i]` holds the boxes of frame `f + 1` that box `i`
/// of frame `f` may link to, ascending.
fn link_lists(dets: &FrameDetections, link_iou: f64) -> Vec<Vec<Vec<usize>>> {
    let frames = &dets.frames;
    (0..frames.len().saturating_sub(1))
        .map(|f| {
            frames[f]
                .iter()
                .map(|a| {
                    frames[f + 1]
                        .iter()
                        .enumerate()
                        .filter(|(_, b)| box_iou::<f64>(&a.bbox, &b.bbox) >= link_iou)
                        .map(|(j, _)| j)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// Highest scoring path among unused boxes. Ties go to the earliest start
/// frame, then to the lexicographically smallest box-index sequence (a path
/// that stops is smaller than any of its extensions).
fn best_path(dets: &FrameDetections, links: &[Vec<Vec<usize>>], used: &[Vec<bool>]) -> Option<LinkedPath> {
    let n = dets.frames.len();
    // Backward pass: best[f][i] is the best suffix score starting at (f, i).
    let mut best: Vec<Vec<f64>> = dets.frames.iter().map(|fr| vec![f64::NEG_INFINITY; fr.len()]).collect();
    let mut next: Vec<Vec<Option<usize>>> = dets.frames.iter().map(|fr| vec![None; fr.len()]).collect();
    for f in (0..n).rev() {
        for i in 0..dets.frames[f].len() {
            if used[f][i] {
                continue;
            }
            let mut score = dets.frames[f][i].confidence;
            let mut succ = None;
            if f + 1 < n {
                let mut top = 0.0;
                for &j in &links[f][i] {
                    if !used[f + 1][j] && best[f + 1][j] > top {
                        top = best[f + 1][j];
                        succ = Some(j);
                    }
                }
                score += top;
            }
            best[f][i] = score;
            next[f][i] = succ;
        }
    }
    let mut start: Option<(usize, usize)> = None;
    let mut top = 0.0;
    for (f, row) in best.iter().enumerate() {
        for (i, s) in row.iter().enumerate() {
            if *s > top {
                top = *s;
                start = Some((f, i));
            }
        }
    }
    let (f0, i0) = start?;
    let mut boxes = vec![i0];
    let (mut f, mut i) = (f0, i0);
    while let Some(j) = next[f][i] {
        boxes.push(j);
        f += 1;
        i = j;
    }
    Some(LinkedPath {
        start: f0,
        boxes,
        score: top,
    })
}

/// Repeatedly extracts the best path and removes its boxes, up to `max_tubelets`
/// paths or until no path with positive score remains.
pub fn link_paths(dets: &FrameDetections, link_iou: f64, max_tubelets: usize) -> Vec<LinkedPath> {
    let links = link_lists(dets, link_iou);
    let mut used: Vec<Vec<bool>> = dets.frames.iter().map(|fr| vec![false; fr.len()]).collect();
    let mut out = Vec::new();
    while out.len() < max_tubelets {
        let Some(path) = best_path(dets, &links, &used) else {
            break;
        };
        for (k, &i) in path.boxes.iter().enumerate() {
            used[path.start + k][i] = true;
        }
        out.push(path);
    }
    out
}

/// Links detections into at most `max_tubelets` box-disjoint tubelets, best first.
pub fn link_tubelets(dets: &FrameDetections, link_iou: f64, max_tubelets: usize) -> Vec<Tubelet> {
    link_paths(dets, link_iou, max_tubelets)
        .into_iter()
        .enumerate()
        .map(|(k, p)| {
            let boxes: Vec<Option<BoundingBox>> = p
                .boxes
                .iter()
                .enumerate()
                .map(|(o, &i)| Some(dets.frames[p.start + o][i].bbox))
                .collect();
            let conf = p
                .boxes
                .iter()
                .enumerate()
                .map(|(o, &i)| dets.frames[p.start + o][i].confidence)
                .collect();
            let mut t = Tubelet::new(format!("t{k}"), dets.class_label.clone(), dets.frame_start + p.start, boxes);
            t.confidence = Some(conf);
            t
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::Detection;
    use super::*;

    fn det(x: f64, c: f64) -> Detection {
        Detection {
            bbox: BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap(),
            confidence: c,
        }
    }

    #[test]
    fn single_track_spans_all_frames() {
        let d = FrameDetections::new("v", "ball", 3, (0..5).map(|f| vec![det(f as f64, 0.9)]).collect()).unwrap();
        let t = link_tubelets(&d, 0.5, 8);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].frame_start, 3);
        assert_eq!(t[0].boxes.len(), 5);
    }

    #[test]
    fn disjoint_clusters_never_mix() {
        let frames = (0..4).map(|f| vec![det(f as f64, 0.8), det(200.0 + f as f64, 0.7)]).collect();
        let d = FrameDetections::new("v", "ball", 0, frames).unwrap();
        let t = link_tubelets(&d, 0.5, 8);
        assert_eq!(t.len(), 2);
        for tub in &t {
            let xs: Vec<f64> = tub.boxes.iter().map(|b| b.unwrap().x_min).collect();
            assert!(xs.iter().all(|x| *x < 100.0) || xs.iter().all(|x| *x >= 200.0));
        }
    }

    #[test]
    fn empty_detections_link_to_nothing() {
        let d = FrameDetections::new("v", "ball", 0, vec![vec![], vec![]]).unwrap();
        assert!(link_tubelets(&d, 0.5, 8).is_empty());
    }
}
