//! Evaluation pipelines shared by the command line and the acceptance suite:
//! localization accuracy, ablation ladders, word-attention statistics and
//! evaluation on linked detector tubelets.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundingInstance, SplitName, Tubelet};
use crate::error::{Result, StvgError};
use crate::features::{extract_for_tubelets, FeatureProvider};
use crate::language::{aggregate_attention_by_pos, AttentionTable};
use crate::metrics::{eval_localization, eval_tubelet_detection, EvalReport};
use crate::model::GroundingModel;
use crate::proposals::{link_tubelets, synthesize_detections, Perturbation};
use crate::scalar::Scalar;
use crate::train::{extract_bundles, rank_all};
use crate::visual::{ModuleKind, PreparedCandidate};

/// One ranked instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub predicted_index: usize,
    pub totals: Vec<f64>,
}

/// Instances of a split with their prepared candidate features.
pub struct PreparedSplit<'a> {
    pub instances: Vec<&'a GroundingInstance>,
    pub candidates: Vec<Vec<PreparedCandidate>>,
}

impl<'a> PreparedSplit<'a> {
    pub fn new<T: Scalar>(
        model: &GroundingModel<T>,
        provider: &dyn FeatureProvider,
        dataset: &'a Dataset,
        split: SplitName,
    ) -> Result<Self> {
        let instances = dataset.instances_in(split);
        if instances.is_empty() {
            return Err(StvgError::validation("split", format!("no instances in the {} split", split.as_str())));
        }
        let bundles = extract_bundles(provider, dataset, &instances)?;
        let candidates = bundles.par_iter().map(|b| model.prepare(b)).collect();
        Ok(PreparedSplit { instances, candidates })
    }

    pub fn predict<T: Scalar>(&self, model: &GroundingModel<T>) -> Result<Vec<Prediction>> {
        let rankings = rank_all(model, &self.instances, &self.candidates)?;
        Ok(rankings
            .iter()
            .zip(&self.instances)
            .map(|(r, inst)| Prediction {
                instance_id: inst.id.clone(),
                predicted_index: r.best(),
                totals: r.totals(),
            })
            .collect())
    }

    pub fn evaluate<T: Scalar>(&self, model: &GroundingModel<T>) -> Result<EvalReport> {
        let preds = self.predict(model)?;
        evaluate_predictions(&preds, &self.instances)
    }
}

/// Localization report for predictions matched to instances by id.
pub fn evaluate_predictions(predictions: &[Prediction], instances: &[&GroundingInstance]) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, usize> = predictions
        .iter()
        .map(|p| (p.instance_id.as_str(), p.predicted_index))
        .collect();
    let picks: Vec<Option<usize>> = instances.iter().map(|i| by_id.get(i.id.as_str()).copied()).collect();
    eval_localization(&picks, instances)
}

/// Expected accuracy of a uniform random pick: one over the mean candidate count.
pub fn random_baseline(instances: &[&GroundingInstance]) -> Option<f64> {
    if instances.is_empty() {
        return None;
    }
    let mean = instances.iter().map(|i| i.candidates.len() as f64).sum::<f64>() / instances.len() as f64;
    Some(1.0 / mean)
}

/// Order in which modules are added along the ablation ladder.
pub const LADDER_ORDER: [ModuleKind; 6] = [
    ModuleKind::Subj,
    ModuleKind::Loc,
    ModuleKind::Rel,
    ModuleKind::SubjMotion,
    ModuleKind::RelMotion,
    ModuleKind::MovingLoc,
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub enabled: Vec<ModuleKind>,
    pub disabled: Vec<ModuleKind>,
    pub accuracy: f64,
    /// Set when every module is disabled and ranking falls back to the tie rule.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub all_disabled: bool,
}

/// Accuracy with `disabled` modules zeroed out.
pub fn ablation_row<T: Scalar>(
    model: &GroundingModel<T>,
    split: &PreparedSplit<'_>,
    disabled: &[ModuleKind],
) -> Result<AblationRow> {
    for m in disabled {
        if !model.modules().contains(m) {
            return Err(StvgError::validation("disable", format!("module `{m}` is not active in this model")));
        }
    }
    let ablated = model.ablated(disabled)?;
    let enabled: Vec<ModuleKind> = model
        .modules()
        .iter()
        .copied()
        .filter(|m| !ablated.config.disabled.contains(m))
        .collect();
    let label = if enabled.is_empty() {
        "(none)".to_string()
    } else {
        enabled.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
    };
    Ok(AblationRow {
        label,
        all_disabled: enabled.is_empty(),
        enabled,
        disabled: ablated.config.disabled.iter().copied().collect(),
        accuracy: split.evaluate(&ablated)?.headline(),
    })
}

/// Incremental rows: subject plus location, then each further active module in ladder order.
pub fn ablation_ladder<T: Scalar>(model: &GroundingModel<T>, split: &PreparedSplit<'_>) -> Result<Vec<AblationRow>> {
    let active: Vec<ModuleKind> = LADDER_ORDER
        .iter()
        .copied()
        .filter(|m| model.modules().contains(m))
        .collect();
    let first = active.len().min(2);
    (first..=active.len())
        .map(|k| ablation_row(model, split, &active[k..]))
        .collect()
}

/// Per-tag attention over the expressions of a split.
pub fn attention_table<T: Scalar>(model: &GroundingModel<T>, instances: &[&GroundingInstance]) -> Result<AttentionTable> {
    let encodings = instances
        .par_iter()
        .map(|i| model.encode(&i.expression))
        .collect::<Result<Vec<_>>>()?;
    let exprs: Vec<_> = instances.iter().map(|i| &i.expression).collect();
    aggregate_attention_by_pos(&encodings, &exprs)
}

/// Verb attention of a motion module next to its appearance counterpart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbAttentionPair {
    pub motion: ModuleKind,
    pub appearance: ModuleKind,
    pub motion_attention: f64,
    pub appearance_attention: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbAttention {
    pub pairs: Vec<VerbAttentionPair>,
    pub motion_total: f64,
    pub appearance_total: f64,
}

impl VerbAttention {
    pub fn motion_focuses_on_verbs(&self) -> bool {
        !self.pairs.is_empty() && self.motion_total > self.appearance_total
    }
}

/// Pairs every motion module that has an active appearance counterpart.
pub fn verb_attention(table: &AttentionTable) -> VerbAttention {
    let mut pairs = Vec::new();
    for m in &table.modules {
        let Some(app) = m.appearance_counterpart() else { continue };
        if let (Some(a), Some(b)) = (table.verb(*m), table.verb(app)) {
            pairs.push(VerbAttentionPair {
                motion: *m,
                appearance: app,
                motion_attention: a,
                appearance_attention: b,
            });
        }
    }
    VerbAttention {
        motion_total: pairs.iter().map(|p| p.motion_attention).sum(),
        appearance_total: pairs.iter().map(|p| p.appearance_attention).sum(),
        pairs,
    }
}

/// Tubelet-IoU reports on annotated candidates and on tubelets linked from perturbed detections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorComparison {
    pub perturbation: Perturbation,
    pub ground_truth: EvalReport,
    pub detected: EvalReport,
    /// Mean number of linked tubelets overlapping an instance interval.
    pub mean_detected_candidates: f64,
}

pub fn detector_comparison<T: Scalar>(
    model: &GroundingModel<T>,
    provider: &dyn FeatureProvider,
    dataset: &Dataset,
    split: SplitName,
    perturbation: &Perturbation,
    link_iou: f64,
    max_tubelets: usize,
) -> Result<DetectorComparison> {
    let prepared = PreparedSplit::new(model, provider, dataset, split)?;
    let gt_preds = prepared.predict(model)?;
    let gt_tubelets: Vec<Option<Tubelet>> = gt_preds
        .iter()
        .zip(&prepared.instances)
        .map(|(p, inst)| Some(inst.candidates[p.predicted_index].clone()))
        .collect();
    let ground_truth = eval_tubelet_detection(&gt_tubelets, &prepared.instances, 0.5)?;

    let linked: BTreeMap<&str, Vec<Tubelet>> = dataset
        .videos_in(split)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|v| {
            let dets = synthesize_detections(v, perturbation)?;
            Ok((v.id.as_str(), link_tubelets(&dets, link_iou, max_tubelets)))
        })
        .collect::<Result<_>>()?;
    let picks: Vec<(Option<Tubelet>, usize)> = prepared
        .instances
        .par_iter()
        .map(|inst| {
            let video = dataset
                .video(&inst.video_id)
                .ok_or_else(|| StvgError::validation("video_id", format!("unknown video `{}`", inst.video_id)))?;
            let cands: Vec<Tubelet> = linked[inst.video_id.as_str()]
                .iter()
                .filter(|t| inst.interval.frames().any(|f| t.box_at(f).is_some()))
                .map(|t| t.restrict(&inst.interval))
                .collect();
            if cands.is_empty() {
                return Ok((None, 0));
            }
            let bundle = extract_for_tubelets(provider, video, inst.interval, &cands)?;
            let ranking = model.rank_candidates(&model.prepare(&bundle), &inst.expression)?;
            Ok((Some(cands[ranking.best()].clone()), cands.len()))
        })
        .collect::<Result<_>>()?;
    let n_cands: usize = picks.iter().map(|p| p.1).sum();
    let det_tubelets: Vec<Option<Tubelet>> = picks.into_iter().map(|p| p.0).collect();
    let detected = eval_tubelet_detection(&det_tubelets, &prepared.instances, 0.5)?;
    Ok(DetectorComparison {
        perturbation: *perturbation,
        ground_truth,
        detected,
        mean_detected_candidates: n_cands as f64 / prepared.instances.len() as f64,
    })
}

/// One variant's accuracies across paired seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
}

impl ComparisonRow {
    pub fn mean(&self) -> f64 {
        if self.accuracies.is_empty() {
            return 0.0;
        }
        self.accuracies.iter().sum::<f64>() / self.accuracies.len() as f64
    }
}

/// Percent table with one row per variant and one column per seed.
pub fn render_comparison(rows: &[ComparisonRow]) -> String {
    let seeds: Vec<u64> = rows.iter().flat_map(|r| r.seeds.iter().copied()).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let mut out = format!("{:<10}", "model");
    for s in &seeds {
        out.push_str(&format!(" {:>9}", format!("seed {s}")));
    }
    out.push_str(&format!(" {:>8}\n", "mean"));
    for r in rows {
        out.push_str(&format!("{:<10}", r.name));
        for s in &seeds {
            match r.seeds.iter().position(|x| x == s) {
                Some(k) => out.push_str(&format!(" {:>9.2}", 100.0 * r.accuracies[k])),
                None => out.push_str(&format!(" {:>9}", "-")),
            }
        }
        out.push_str(&format!(" {:>8.2}\n", 100.0 * r.mean()));
    }
    out
}

pub fn render_ladder(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(7).max(7);
    let mut out = format!("{:<width$} {:>8}\n", "modules", "accuracy");
    for r in rows {
        out.push_str(&format!("{:<width$} {:>8.2}\n", r.label, 100.0 * r.accuracy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparison_table_lists_means() {
        let rows = vec![
            ComparisonRow {
                name: "random".into(),
                seeds: vec![1, 2],
                accuracies: vec![0.25, 0.35],
            },
            ComparisonRow {
                name: "fused1".into(),
                seeds: vec![1],
                accuracies: vec![0.5],
            },
        ];
        let t = render_comparison(&rows);
        assert!(t.contains("30.00"));
        assert!(t.lines().nth(2).unwrap().contains('-'));
    }

    #[test]
    fn verb_attention_pairs_motion_with_appearance() {
        let table = AttentionTable {
            modules: vec![ModuleKind::Subj, ModuleKind::Loc, ModuleKind::SubjMotion],
            verbs: Some(vec![0.1, 0.2, 0.4]),
            ..Default::default()
        };
        let v = verb_attention(&table);
        assert_eq!(v.pairs.len(), 1);
        assert!(v.motion_focuses_on_verbs());
    }
}
