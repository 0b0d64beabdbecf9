//! Brute-force oracles shared by the property tests and the acceptance run.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use stvg::data::Tubelet;
use stvg::proposals::{link_paths, Detection, FrameDetections};
use stvg::BoundingBox;

// Independent recount: areas from raw coordinates, frames from explicit sets.
pub fn area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

pub fn box_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = w * h;
    inter / (area(a) + area(b) - inter)
}

pub fn tubelet_iou(a: &[(usize, [f64; 4])], b: &[(usize, [f64; 4])]) -> Option<f64> {
    let fa: BTreeSet<usize> = a.iter().map(|x| x.0).collect();
    let fb: BTreeSet<usize> = b.iter().map(|x| x.0).collect();
    let union: BTreeSet<usize> = fa.union(&fb).copied().collect();
    if union.is_empty() {
        return None;
    }
    let mut hits = 0;
    for (f, ba) in a {
        for (g, bb) in b {
            if f == g && box_iou(*ba, *bb) > 0.5 {
                hits += 1;
            }
        }
    }
    Some(hits as f64 / union.len() as f64)
}

pub fn random_track(rng: &mut ChaCha8Rng, pool: &[[f64; 4]]) -> (Tubelet, Vec<(usize, [f64; 4])>) {
    let start = rng.random_range(0..3);
    let len = rng.random_range(1..=6 - start);
    let mut boxes = Vec::new();
    let mut present = Vec::new();
    for k in 0..len {
        if rng.random_bool(0.25) {
            boxes.push(None);
        } else {
            let b = pool[rng.random_range(0..pool.len())];
            boxes.push(Some(BoundingBox::from_array(b).unwrap()));
            present.push((start + k, b));
        }
    }
    (Tubelet::new("o", "c", start, boxes), present)
}

pub fn random_box(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let x = rng.random_range(0.0..10.0);
    let y = rng.random_range(0.0..10.0);
    [x, y, x + rng.random_range(1.0..8.0), y + rng.random_range(1.0..8.0)]
}

/// Every path through consecutive frames, scored and compared exhaustively.
pub fn linked_paths(frames: &[Vec<([f64; 4], f64)>], link: f64, max: usize) -> Vec<(usize, Vec<usize>, f64)> {
    let mut used: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    let mut out = Vec::new();
    while out.len() < max {
        let mut all: Vec<(usize, Vec<usize>)> = Vec::new();
        fn extend(
            frames: &[Vec<([f64; 4], f64)>],
            used: &[Vec<bool>],
            link: f64,
            start: usize,
            path: &mut Vec<usize>,
            all: &mut Vec<(usize, Vec<usize>)>,
        ) {
            all.push((start, path.clone()));
            let f = start + path.len();
            if f >= frames.len() {
                return;
            }
            let last = frames[f - 1][*path.last().unwrap()].0;
            for j in 0..frames[f].len() {
                if !used[f][j] && box_iou(last, frames[f][j].0) >= link {
                    path.push(j);
                    extend(frames, used, link, start, path, all);
                    path.pop();
                }
            }
        }
        for f in 0..frames.len() {
            for i in 0..frames[f].len() {
                if !used[f][i] {
                    extend(frames, &used, link, f, &mut vec![i], &mut all);
                }
            }
        }
        let score = |(s, p): &(usize, Vec<usize>)| -> f64 { p.iter().enumerate().map(|(k, &i)| frames[s + k][i].1).sum() };
        let best = all
            .iter()
            .filter(|p| score(p) > 0.0)
            .min_by(|a, b| score(b).total_cmp(&score(a)).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let Some(best) = best.cloned() else { break };
        for (k, &i) in best.1.iter().enumerate() {
            used[best.0 + k][i] = true;
        }
        let s = score(&best);
        out.push((best.0, best.1, s));
    }
    out
}

pub fn micro_instance(rng: &mut ChaCha8Rng) -> Vec<Vec<([f64; 4], f64)>> {
    let n_frames = rng.random_range(1..=4);
    // A few anchor boxes so that links and ties are common.
    let anchors: Vec<[f64; 4]> = (0..3)
        .map(|_| {
            let x = rng.random_range(0.0..20.0f64).round();
            let y = rng.random_range(0.0..20.0f64).round();
            [x, y, x + 10.0, y + 10.0]
        })
        .collect();
    (0..n_frames)
        .map(|_| {
            (0..rng.random_range(0..=3))
                .map(|_| {
                    let a = anchors[rng.random_range(0..anchors.len())];
                    let dx = rng.random_range(-2..=2) as f64;
                    // Dyadic confidences make sums exact, so ties are genuine.
                    let c = rng.random_range(0..=8) as f64 / 8.0;
                    ([a[0] + dx + 5.0, a[1] + 5.0, a[2] + dx + 5.0, a[3] + 5.0], c)
                })
                .collect()
        })
        .collect()
}

pub fn to_dets(frames: &[Vec<([f64; 4], f64)>]) -> FrameDetections {
    let dets = frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|(b, c)| Detection {
                    bbox: BoundingBox::from_array(*b).unwrap(),
                    confidence: *c,
                })
                .collect()
        })
        .collect();
    FrameDetections::new("v", "ball", 0, dets).unwrap()
}


/// Checks `link_paths` against the exhaustive oracle on `n` micro-instances.
/// Returns how many instances linked a path longer than one frame.
pub fn check_linking(rng: &mut ChaCha8Rng, n: usize) -> Result<usize, String> {
    let mut nontrivial = 0;
    for case in 0..n {
        let mut frames = micro_instance(rng);
        let dets = to_dets(&frames);
        // The oracle sees frames in the same confidence order as the linker.
        for f in frames.iter_mut() {
            f.sort_by(|a, b| b.1.total_cmp(&a.1));
        }
        let max = rng.random_range(1..=4);
        let expected = linked_paths(&frames, 0.5, max);
        let got: Vec<_> = link_paths(&dets, 0.5, max).into_iter().map(|g| (g.start, g.boxes, g.score)).collect();
        if got != expected {
            return Err(format!("case {case}: {got:?} vs {expected:?}"));
        }
        if expected.iter().any(|p| p.1.len() > 1) {
            nontrivial += 1;
        }
    }
    Ok(nontrivial)
}
