//! Box, tubelet and temporal IoU, and the evaluation protocols built on them.

use serde::{Deserialize, Serialize};

use crate::data::{BoundingBox, GroundingInstance, TemporalInterval, Tubelet};
use crate::error::{Result, StvgError};
use crate::scalar::Scalar;

/// Per-frame box IoU a frame must strictly exceed to count as a hit in tubelet IoU.
pub const FRAME_HIT_IOU: f64 = 0.5;

/// Default threshold of the thresholded protocols (strict `>`).
pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn box_iou<T: Scalar>(a: &BoundingBox<T>, b: &BoundingBox<T>) -> T {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).min(T::one())
}

/// Fraction of union frames whose boxes overlap with IoU strictly above 0.5.
///
/// A union frame is a frame where at least one of the two tubelets has a box.
/// Frames covered by only one side count in the denominator only.
pub fn tubelet_iou<T: Scalar>(pred: &Tubelet<T>, gt: &Tubelet<T>) -> Result<T> {
    let lo = pred.frame_start.min(gt.frame_start);
    let hi = (pred.frame_start + pred.boxes.len()).max(gt.frame_start + gt.boxes.len());
    let hit = T::lit(FRAME_HIT_IOU);
    let mut union = 0usize;
    let mut hits = 0usize;
    for f in lo..hi {
        match (pred.box_at(f), gt.box_at(f)) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                union += 1;
                if box_iou(a, b) > hit {
                    hits += 1;
                }
            }
            _ => union += 1,
        }
    }
    if union == 0 {
        return Err(StvgError::Invalid("empty tubelets".into()));
    }
    Ok(T::lit(hits as f64) / T::lit(union as f64))
}

/// 1-D IoU of half-open frame intervals.
pub fn temporal_iou<T: Scalar>(a: &TemporalInterval, b: &TemporalInterval) -> T {
    let inter = a.intersection_len(b);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return T::zero();
    }
    T::lit(inter as f64) / T::lit(union as f64)
}

/// Outcome of one instance under a protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceOutcome {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_index: Option<usize>,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tubelet_iou: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal_iou: Option<f64>,
    /// Set when no prediction was supplied for the instance.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing: bool,
}

impl InstanceOutcome {
    fn new(id: &str) -> Self {
        InstanceOutcome {
            instance_id: id.to_string(),
            predicted_index: None,
            correct: false,
            tubelet_iou: None,
            temporal_iou: None,
            missing: false,
        }
    }
}

/// Result of an evaluation protocol. Fields that do not apply are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: String,
    pub n_instances: usize,
    pub accuracy: Option<f64>,
    pub map_tubelet_iou: Option<f64>,
    pub map_temporal_iou: Option<f64>,
    pub map_spatiotemporal: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub per_instance: Vec<InstanceOutcome>,
}

impl EvalReport {
    fn new(protocol: &str, per_instance: Vec<InstanceOutcome>) -> Self {
        EvalReport {
            protocol: protocol.to_string(),
            n_instances: per_instance.len(),
            accuracy: None,
            map_tubelet_iou: None,
            map_temporal_iou: None,
            map_spatiotemporal: None,
            flags: Vec::new(),
            per_instance,
        }
    }

    /// Mean correctness over instances.
    pub fn mean_correct(&self) -> f64 {
        if self.per_instance.is_empty() {
            return 0.0;
        }
        self.per_instance.iter().filter(|o| o.correct).count() as f64 / self.per_instance.len() as f64
    }

    /// The headline number of whichever protocol produced this report.
    pub fn headline(&self) -> f64 {
        self.accuracy
            .or(self.map_spatiotemporal)
            .or(self.map_temporal_iou)
            .or(self.map_tubelet_iou)
            .unwrap_or(0.0)
    }
}

fn check_lengths(predictions: usize, instances: usize) -> Result<()> {
    if instances == 0 {
        return Err(StvgError::Invalid("no instances to evaluate".into()));
    }
    if predictions != instances {
        return Err(StvgError::Invalid(format!(
            "{predictions} predictions for {instances} instances"
        )));
    }
    Ok(())
}

/// Fraction of instances whose predicted candidate is the target.
pub fn localization_accuracy(predictions: &[usize], instances: &[&GroundingInstance]) -> Result<f64> {
    check_lengths(predictions.len(), instances.len())?;
    let hits = predictions
        .iter()
        .zip(instances)
        .filter(|(p, i)| **p == i.target_index)
        .count();
    Ok(hits as f64 / instances.len() as f64)
}

/// Accuracy on ground-truth candidates, with per-instance outcomes.
pub fn eval_localization(predictions: &[Option<usize>], instances: &[&GroundingInstance]) -> Result<EvalReport> {
    check_lengths(predictions.len(), instances.len())?;
    let outcomes: Vec<_> = predictions
        .iter()
        .zip(instances)
        .map(|(p, inst)| {
            let mut o = InstanceOutcome::new(&inst.id);
            o.predicted_index = *p;
            o.missing = p.is_none();
            o.correct = *p == Some(inst.target_index);
            o
        })
        .collect();
    let mut report = EvalReport::new("localization", outcomes);
    report.accuracy = Some(report.mean_correct());
    flag_missing(&mut report);
    Ok(report)
}

fn flag_missing(report: &mut EvalReport) {
    let missing = report.per_instance.iter().filter(|o| o.missing).count();
    if missing > 0 {
        report.flags.push(format!("{missing} instance(s) without prediction counted incorrect"));
    }
}

/// Tubelet IoU protocol: a prediction is correct when its tubelet IoU against
/// the target strictly exceeds `iou_threshold`.
pub fn eval_tubelet_detection(
    predicted: &[Option<Tubelet>],
    instances: &[&GroundingInstance],
    iou_threshold: f64,
) -> Result<EvalReport> {
    check_lengths(predicted.len(), instances.len())?;
    let mut outcomes = Vec::with_capacity(instances.len());
    for (p, inst) in predicted.iter().zip(instances) {
        let mut o = InstanceOutcome::new(&inst.id);
        match p {
            None => o.missing = true,
            Some(t) => {
                let iou = tubelet_iou(t, inst.target()).unwrap_or(0.0);
                o.tubelet_iou = Some(iou);
                o.correct = iou > iou_threshold;
            }
        }
        outcomes.push(o);
    }
    let mut report = EvalReport::new("tubelet_iou", outcomes);
    report.map_tubelet_iou = Some(report.mean_correct());
    flag_missing(&mut report);
    Ok(report)
}

/// How a ranked list of predictions is reduced to a per-instance score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankedMode {
    /// Correct if any of the first `k` predictions passes.
    TopK(usize),
    /// Average precision with one positive per instance: `1 / rank` of the first hit.
    AveragePrecision,
}

/// Average precision of a ranked hit list when the instance has exactly one positive.
pub fn single_positive_ap(hits: &[bool]) -> f64 {
    hits.iter()
        .position(|h| *h)
        .map(|r| 1.0 / (r + 1) as f64)
        .unwrap_or(0.0)
}

/// Temporal IoU protocol over ranked interval predictions (best first).
pub fn eval_temporal(
    predicted: &[Vec<TemporalInterval>],
    instances: &[&GroundingInstance],
    tiou_threshold: f64,
    mode: RankedMode,
) -> Result<EvalReport> {
    check_lengths(predicted.len(), instances.len())?;
    let mut outcomes = Vec::with_capacity(instances.len());
    let mut total = 0.0;
    for (ranked, inst) in predicted.iter().zip(instances) {
        let mut o = InstanceOutcome::new(&inst.id);
        o.missing = ranked.is_empty();
        let ious: Vec<f64> = ranked.iter().map(|p| temporal_iou(p, &inst.interval)).collect();
        let hits: Vec<bool> = ious.iter().map(|v| *v > tiou_threshold).collect();
        o.temporal_iou = ious.first().copied();
        let score = match mode {
            RankedMode::TopK(k) => {
                o.correct = hits.iter().take(k.max(1)).any(|h| *h);
                if o.correct {
                    1.0
                } else {
                    0.0
                }
            }
            RankedMode::AveragePrecision => {
                let ap = single_positive_ap(&hits);
                o.correct = hits.first().copied().unwrap_or(false);
                ap
            }
        };
        total += score;
        outcomes.push(o);
    }
    let mut report = EvalReport::new("temporal_iou", outcomes);
    report.map_temporal_iou = Some(total / instances.len() as f64);
    flag_missing(&mut report);
    Ok(report)
}

/// Two-step protocol: temporal IoU first, then tubelet IoU restricted to the
/// frames of the predicted interval.
pub fn eval_spatiotemporal(
    predicted: &[Option<(TemporalInterval, Tubelet)>],
    instances: &[&GroundingInstance],
    tiou_threshold: f64,
    iou_threshold: f64,
) -> Result<EvalReport> {
    check_lengths(predicted.len(), instances.len())?;
    let mut outcomes = Vec::with_capacity(instances.len());
    for (p, inst) in predicted.iter().zip(instances) {
        let mut o = InstanceOutcome::new(&inst.id);
        match p {
            None => o.missing = true,
            Some((interval, tubelet)) => {
                if !tubelet.covers(interval) {
                    return Err(StvgError::validation(
                        "tubelet",
                        format!(
                            "predicted tubelet for `{}` does not cover its interval {interval}",
                            inst.id
                        ),
                    ));
                }
                let tiou: f64 = temporal_iou(interval, &inst.interval);
                o.temporal_iou = Some(tiou);
                if tiou > tiou_threshold {
                    let pred = tubelet.restrict(interval);
                    let gt = inst.target().restrict(interval);
                    let iou = tubelet_iou(&pred, &gt).unwrap_or(0.0);
                    o.tubelet_iou = Some(iou);
                    o.correct = iou > iou_threshold;
                }
            }
        }
        outcomes.push(o);
    }
    let mut report = EvalReport::new("spatiotemporal", outcomes);
    report.map_spatiotemporal = Some(report.mean_correct());
    flag_missing(&mut report);
    Ok(report)
}
