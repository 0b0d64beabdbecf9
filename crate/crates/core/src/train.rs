//! Feature preparation, minibatch SGD training and prediction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroundingInstance, SplitName};
use crate::error::{Result, StvgError};
use crate::features::{extract_bundle, FeatureBundle, FeatureProvider};
use crate::language::Vocabulary;
use crate::model::{attribute_targets, GroundingModel, ModelConfig, Ranking, TrainingExample};
use crate::nn::{Graph, Grads, Sgd};
use crate::scalar::Scalar;
use crate::visual::{FeatureNorm, PreparedCandidate};

/// Feature bundles for `instances`, computed in parallel.
pub fn extract_bundles(
    provider: &dyn FeatureProvider,
    dataset: &Dataset,
    instances: &[&GroundingInstance],
) -> Result<Vec<FeatureBundle>> {
    instances
        .par_iter()
        .map(|inst| {
            let video = dataset.video(&inst.video_id).ok_or_else(|| {
                StvgError::validation("video_id", format!("unknown video `{}`", inst.video_id))
            })?;
            extract_bundle(provider, video, inst)
        })
        .collect()
}

/// Sorted attribute vocabulary of the given instances.
pub fn attribute_vocabulary(instances: &[&GroundingInstance]) -> Vec<String> {
    let set: BTreeSet<&String> = instances.iter().flat_map(|i| i.attributes.iter()).collect();
    set.into_iter().cloned().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were returned (1-based, 0 = initialization).
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    pub n_examples: usize,
    /// Training instances without a usable distractor.
    pub skipped: usize,
}

/// A training instance with its negatives resolved.
struct Sample {
    index: usize,
    distractors: Vec<usize>,
    /// Instances whose expression describes another candidate of this instance.
    negative_expressions: Vec<usize>,
    attributes: Vec<f64>,
}

fn build_samples(instances: &[&GroundingInstance], attributes: &[String]) -> (Vec<Sample>, usize) {
    let mut groups: BTreeMap<(&str, usize, usize), Vec<usize>> = BTreeMap::new();
    for (k, inst) in instances.iter().enumerate() {
        groups
            .entry((inst.video_id.as_str(), inst.interval.start, inst.interval.end))
            .or_default()
            .push(k);
    }
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (k, inst) in instances.iter().enumerate() {
        let distractors: Vec<usize> = (0..inst.candidates.len()).filter(|c| *c != inst.target_index).collect();
        if distractors.is_empty() {
            log::warn!("instance `{}` has no distractor; skipped", inst.id);
            skipped += 1;
            continue;
        }
        let target_id = &inst.target().object_id;
        let cand_ids: BTreeSet<&str> = inst.candidates.iter().map(|c| c.object_id.as_str()).collect();
        let negative_expressions = groups[&(inst.video_id.as_str(), inst.interval.start, inst.interval.end)]
            .iter()
            .copied()
            .filter(|j| {
                let other = instances[*j].target();
                *j != k && &other.object_id != target_id && cand_ids.contains(other.object_id.as_str())
            })
            .collect();
        samples.push(Sample {
            index: k,
            distractors,
            negative_expressions,
            attributes: attribute_targets(&inst.attributes, attributes),
        });
    }
    (samples, skipped)
}

/// Predicted rankings for every instance, in parallel.
pub fn rank_all<T: Scalar>(
    model: &GroundingModel<T>,
    instances: &[&GroundingInstance],
    prepared: &[Vec<PreparedCandidate>],
) -> Result<Vec<Ranking>> {
    instances
        .par_iter()
        .zip(prepared.par_iter())
        .map(|(inst, cands)| model.rank_candidates(cands, &inst.expression))
        .collect()
}

pub fn accuracy_of(rankings: &[Ranking], instances: &[&GroundingInstance]) -> Option<f64> {
    if instances.is_empty() {
        return None;
    }
    let hits = rankings
        .iter()
        .zip(instances)
        .filter(|(r, i)| r.best() == i.target_index)
        .count();
    Some(hits as f64 / instances.len() as f64)
}

/// Trains on the train split, selecting the epoch with the best validation accuracy.
pub fn train<T: Scalar>(
    dataset: &Dataset,
    provider: &dyn FeatureProvider,
    config: ModelConfig,
) -> Result<(GroundingModel<T>, TrainingLog)> {
    config.validate()?;
    let train_insts = dataset.instances_in(SplitName::Train);
    if train_insts.is_empty() {
        return Err(StvgError::validation("split", "training split is empty"));
    }
    let val_insts = dataset.instances_in(SplitName::Val);
    let train_bundles = extract_bundles(provider, dataset, &train_insts)?;
    let val_bundles = extract_bundles(provider, dataset, &val_insts)?;
    let norm = FeatureNorm::fit(provider.appearance_dim(), provider.motion_dim(), train_bundles.iter());
    let vocab = Vocabulary::build(train_insts.iter().map(|i| &i.expression));
    let attributes = attribute_vocabulary(&train_insts);
    let mut model = GroundingModel::<T>::new(config, vocab, attributes, norm)?;
    let train_prep: Vec<Vec<PreparedCandidate>> = train_bundles.iter().map(|b| model.prepare(b)).collect();
    let val_prep: Vec<Vec<PreparedCandidate>> = val_bundles.iter().map(|b| model.prepare(b)).collect();
    let (samples, skipped) = build_samples(&train_insts, &model.attributes);
    if samples.is_empty() {
        return Err(StvgError::validation("candidates", "no training instance has a distractor"));
    }
    let cfg = model.config.clone();
    // Decay only the visual side; the language attention is left free to sharpen.
    let mut opt = Sgd::new(&model.store, T::lit(cfg.lr), T::lit(cfg.momentum)).with_weight_decay(
        &model.store,
        T::lit(cfg.weight_decay),
        |name| name.starts_with("vis."),
    );
    let val_accuracy = |m: &GroundingModel<T>| -> Result<Option<f64>> {
        let r = rank_all(m, &val_insts, &val_prep)?;
        Ok(accuracy_of(&r, &val_insts))
    };
    let mut log_out = TrainingLog {
        n_examples: samples.len(),
        skipped,
        ..Default::default()
    };
    let mut best = (val_accuracy(&model)?, 0usize, model.store.clone());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle_rng.set_stream(epoch as u64);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(f64, Grads<T>)>> = chunk
                .par_iter()
                .map(|&s| {
                    let sample = &samples[s];
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
                    rng.set_stream(((epoch as u64) << 32) | s as u64);
                    let inst = train_insts[sample.index];
                    let cands = &train_prep[sample.index];
                    let neg_obj = sample.distractors[rng.random_range(0..sample.distractors.len())];
                    let neg_expr = (!sample.negative_expressions.is_empty()).then(|| {
                        let j = sample.negative_expressions[rng.random_range(0..sample.negative_expressions.len())];
                        train_insts[j].expression.tokens.as_slice()
                    });
                    let ex = TrainingExample {
                        target: &cands[inst.target_index],
                        negative_object: Some(&cands[neg_obj]),
                        expression: &inst.expression.tokens,
                        negative_expression: neg_expr,
                        attribute_targets: &sample.attributes,
                    };
                    let mut g = Graph::new(&model.store);
                    let loss = model.example_loss(&mut g, &ex)?;
                    Ok((g.tape.scalar(loss).as_f64(), g.gradients(loss)))
                })
                .collect();
            let mut total = Grads::zeros_like(&model.store);
            for r in results {
                let (l, g) = r?;
                epoch_loss += l;
                total.accumulate(&g);
            }
            total.scale(T::one() / T::lit(chunk.len() as f64));
            if let Some(clip) = cfg.grad_clip {
                let norm = total.global_norm().as_f64();
                if norm > clip {
                    total.scale(T::lit(clip / norm));
                }
            }
            opt.step(&mut model.store, &total);
        }
        let acc = val_accuracy(&model)?;
        let train_loss = epoch_loss / samples.len() as f64;
        log::info!(
            "{} epoch {epoch}: loss {train_loss:.4} val acc {}",
            cfg.variant,
            acc.map_or("n/a".to_string(), |a| format!("{a:.3}"))
        );
        log_out.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_accuracy: acc,
        });
        if acc.is_none() || acc >= best.0 {
            best = (acc, epoch, model.store.clone());
        }
    }
    log_out.best_epoch = best.1;
    log_out.best_val_accuracy = best.0;
    model.store = best.2;
    Ok((model, log_out))
}
