//! Multi-scale sliding windows scored by a two-layer recurrent event/background classifier.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::data::{Dataset, TemporalInterval, VideoRecord};
use crate::error::{Result, StvgError};
use crate::features::FeatureProvider;
use crate::metrics::temporal_iou;
use crate::nn::{Grads, Graph, Linear, Lstm, ParamStore, Sgd, Standardizer};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub base_length: usize,
    pub stride: usize,
    /// Number of scales to try; `None` keeps doubling while the window fits.
    pub n_scales: Option<usize>,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            base_length: 16,
            stride: 8,
            n_scales: None,
        }
    }
}

/// Windows `[i·s, i·s + L_k)` with `L_k = base·2^k ≤ n_frames`, ordered by (start, length).
pub fn enumerate_windows(n_frames: usize, cfg: &WindowConfig) -> Result<Vec<TemporalInterval>> {
    if cfg.base_length == 0 || cfg.stride == 0 {
        return Err(StvgError::Config("window base length and stride must be positive".into()));
    }
    if cfg.base_length > n_frames {
        log::warn!("base window length {} exceeds {n_frames} frames; no windows", cfg.base_length);
        return Ok(Vec::new());
    }
    let mut set = BTreeSet::new();
    let mut len = cfg.base_length;
    let mut k = 0;
    while len <= n_frames && cfg.n_scales.is_none_or(|n| k < n) {
        let mut start = 0;
        while start + len <= n_frames {
            set.insert((start, len));
            start += cfg.stride;
        }
        len *= 2;
        k += 1;
    }
    Ok(set
        .into_iter()
        .map(|(s, l)| TemporalInterval { start: s, end: s + l })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowProposal {
    pub interval: TemporalInterval,
    /// Event probability.
    pub score: f64,
}

/// One descriptor per whole chunk of the window; a trailing partial chunk is dropped.
pub fn chunk_sequence(
    provider: &dyn FeatureProvider,
    video: &VideoRecord,
    window: &TemporalInterval,
    chunk_len: usize,
) -> Result<Vec<Vec<f64>>> {
    if chunk_len == 0 || window.len() < chunk_len {
        return Err(StvgError::validation(
            "window",
            format!("window {window} is shorter than one chunk of {chunk_len} frames"),
        ));
    }
    Ok((0..window.len() / chunk_len)
        .map(|c| {
            let s = window.start + c * chunk_len;
            provider.chunk_descriptor(video, TemporalInterval { start: s, end: s + chunk_len })
        })
        .collect())
}

/// Distinct grounding intervals of a video, ascending.
pub fn event_intervals(dataset: &Dataset, video_id: &str) -> Vec<TemporalInterval> {
    let set: BTreeSet<(usize, usize)> = dataset
        .instances
        .iter()
        .filter(|i| i.video_id == video_id)
        .map(|i| (i.interval.start, i.interval.end))
        .collect();
    set.into_iter().map(|(s, e)| TemporalInterval { start: s, end: e }).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowClassifierConfig {
    pub windows: WindowConfig,
    pub chunk_len: usize,
    pub hidden: usize,
    /// A window is labeled event when its temporal IoU with some event exceeds this.
    pub positive_tiou: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for WindowClassifierConfig {
    fn default() -> Self {
        WindowClassifierConfig {
            windows: WindowConfig::default(),
            chunk_len: 16,
            hidden: 16,
            positive_tiou: 0.5,
            lr: 0.05,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            seed: 7,
        }
    }
}

impl WindowClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_len == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(StvgError::Config("chunk length, hidden size and batch size must be positive".into()));
        }
        if self.windows.base_length < self.chunk_len {
            return Err(StvgError::Config(format!(
                "base window length {} is shorter than the chunk length {}",
                self.windows.base_length, self.chunk_len
            )));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(StvgError::Config("learning rate must be positive and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowExample {
    pub video_id: String,
    pub interval: TemporalInterval,
    pub sequence: Vec<Vec<f64>>,
    pub label: bool,
}

impl WindowExample {
    /// All windows of the given videos, labeled against their events.
    pub fn collect(
        provider: &dyn FeatureProvider,
        videos: &[(&VideoRecord, Vec<TemporalInterval>)],
        cfg: &WindowClassifierConfig,
    ) -> Result<Vec<WindowExample>> {
        let per_video: Vec<Result<Vec<WindowExample>>> = videos
            .par_iter()
            .map(|(video, events)| {
                enumerate_windows(video.n_frames, &cfg.windows)?
                    .into_iter()
                    .map(|w| {
                        let label = events.iter().any(|e| temporal_iou::<f64>(&w, e) > cfg.positive_tiou);
                        Ok(WindowExample {
                            video_id: video.id.clone(),
                            interval: w,
                            sequence: chunk_sequence(provider, video, &w, cfg.chunk_len)?,
                            label,
                        })
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::new();
        for v in per_video {
            out.extend(v?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassifierLog {
    pub epoch_losses: Vec<f64>,
    pub n_positive: usize,
    pub n_negative: usize,
}

#[derive(Clone, Debug)]
pub struct WindowClassifier<T> {
    pub config: WindowClassifierConfig,
    pub input_dim: usize,
    pub norm: Standardizer,
    pub store: ParamStore<T>,
    layer1: Lstm,
    layer2: Lstm,
    head: Linear,
}

impl<T: Scalar> WindowClassifier<T> {
    pub fn new(config: WindowClassifierConfig, input_dim: usize, norm: Standardizer) -> Result<Self> {
        config.validate()?;
        if norm.dim() != input_dim {
            return Err(StvgError::Dimension {
                context: "window classifier standardizer".into(),
                expected: input_dim,
                actual: norm.dim(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let layer1 = Lstm::new(&mut store, "win.lstm1", input_dim, config.hidden, &mut rng);
        let layer2 = Lstm::new(&mut store, "win.lstm2", config.hidden, config.hidden, &mut rng);
        let head = Linear::new(&mut store, "win.head", config.hidden, 1, true, &mut rng);
        Ok(WindowClassifier {
            config,
            input_dim,
            norm,
            store,
            layer1,
            layer2,
            head,
        })
    }

    fn logit(&self, g: &mut Graph<'_, T>, sequence: &[Vec<f64>]) -> Result<Var> {
        if sequence.is_empty() {
            return Err(StvgError::validation("sequence", "window has no whole chunk"));
        }
        let mut steps = Vec::with_capacity(sequence.len());
        let mut row = Vec::with_capacity(self.input_dim);
        for d in sequence {
            if d.len() != self.input_dim {
                return Err(StvgError::Dimension {
                    context: "chunk descriptor".into(),
                    expected: self.input_dim,
                    actual: d.len(),
                });
            }
            row.clear();
            self.norm.apply_into(d, &mut row);
            steps.push(g.input(1, self.input_dim, &row));
        }
        let h1 = self.layer1.run(g, &steps);
        let h2 = self.layer2.run(g, &h1);
        let last = *h2.last().expect("non-empty sequence");
        Ok(self.head.forward(g, last))
    }

    /// Event probability of one window.
    pub fn probability(&self, sequence: &[Vec<f64>]) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let z = self.logit(&mut g, sequence)?;
        let p = g.tape.sigmoid(z);
        Ok(g.tape.scalar(p).as_f64())
    }

    pub fn probabilities(&self, sequences: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
        sequences.par_iter().map(|s| self.probability(s)).collect()
    }

    /// Fraction of examples classified correctly at threshold 0.5.
    pub fn accuracy(&self, examples: &[WindowExample]) -> Result<Option<f64>> {
        if examples.is_empty() {
            return Ok(None);
        }
        let seqs: Vec<Vec<Vec<f64>>> = examples.iter().map(|e| e.sequence.clone()).collect();
        let probs = self.probabilities(&seqs)?;
        let hits = probs.iter().zip(examples).filter(|(p, e)| (**p > 0.5) == e.label).count();
        Ok(Some(hits as f64 / examples.len() as f64))
    }

    /// Class-balanced binary cross-entropy with minibatch momentum SGD.
    pub fn fit(examples: &[WindowExample], config: WindowClassifierConfig) -> Result<(Self, ClassifierLog)> {
        config.validate()?;
        let Some(first) = examples.iter().find_map(|e| e.sequence.first()) else {
            return Err(StvgError::validation("examples", "no training windows"));
        };
        let dim = first.len();
        let norm = Standardizer::fit(dim, examples.iter().flat_map(|e| e.sequence.iter().map(Vec::as_slice)));
        let mut model = Self::new(config, dim, norm)?;
        let n_pos = examples.iter().filter(|e| e.label).count();
        let n_neg = examples.len() - n_pos;
        let weight = |label: bool| {
            let n = if label { n_pos } else { n_neg };
            examples.len() as f64 / (2.0 * n.max(1) as f64)
        };
        let cfg = model.config.clone();
        let mut opt = Sgd::new(&model.store, T::lit(cfg.lr), T::lit(cfg.momentum));
        let mut log = ClassifierLog {
            n_positive: n_pos,
            n_negative: n_neg,
            ..Default::default()
        };
        let mut order: Vec<usize> = (0..examples.len()).collect();
        for epoch in 1..=cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(epoch as u64);
            order.shuffle(&mut rng);
            let mut total_loss = 0.0;
            for chunk in order.chunks(cfg.batch_size) {
                let results: Vec<Result<(f64, Grads<T>)>> = chunk
                    .par_iter()
                    .map(|&k| {
                        let ex = &examples[k];
                        let mut g = Graph::new(&model.store);
                        let z = model.logit(&mut g, &ex.sequence)?;
                        let y = if ex.label { T::one() } else { T::zero() };
                        let bce = g.tape.bce_with_logits(z, &[y]);
                        let loss = g.tape.scale(bce, T::lit(weight(ex.label)));
                        Ok((g.tape.scalar(loss).as_f64(), g.gradients(loss)))
                    })
                    .collect();
                let mut grads = Grads::zeros_like(&model.store);
                for r in results {
                    let (l, gr) = r?;
                    total_loss += l;
                    grads.accumulate(&gr);
                }
                grads.scale(T::one() / T::lit(chunk.len() as f64));
                let norm = grads.global_norm().as_f64();
                if norm > 5.0 {
                    grads.scale(T::lit(5.0 / norm));
                }
                opt.step(&mut model.store, &grads);
            }
            let mean = total_loss / examples.len() as f64;
            log::debug!("window classifier epoch {epoch}: loss {mean:.4}");
            log.epoch_losses.push(mean);
        }
        Ok((model, log))
    }
}

/// Scores every window of `video` and keeps the `top_k` most probable events;
/// ties go to the earlier start, then the shorter window.
pub fn propose_intervals<T: Scalar>(
    classifier: &WindowClassifier<T>,
    provider: &dyn FeatureProvider,
    video: &VideoRecord,
    top_k: usize,
) -> Result<Vec<WindowProposal>> {
    let cfg = &classifier.config;
    let windows = enumerate_windows(video.n_frames, &cfg.windows)?;
    let mut proposals: Vec<WindowProposal> = windows
        .par_iter()
        .map(|w| {
            let seq = chunk_sequence(provider, video, w, cfg.chunk_len)?;
            Ok(WindowProposal {
                interval: *w,
                score: classifier.probability(&seq)?,
            })
        })
        .collect::<Result<_>>()?;
    proposals.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.interval.start.cmp(&b.interval.start))
            .then(a.interval.end.cmp(&b.interval.end))
    });
    proposals.truncate(top_k);
    Ok(proposals)
}

/// Fraction of events matched (temporal IoU above `tiou`) by one of the first
/// `k` proposals of their video. `None` when there are no events.
pub fn recall_at_k(proposals: &[Vec<WindowProposal>], events: &[Vec<TemporalInterval>], k: usize, tiou: f64) -> Option<f64> {
    let total: usize = events.iter().map(Vec::len).sum();
    if total == 0 {
        return None;
    }
    let hits: usize = proposals
        .iter()
        .zip(events)
        .map(|(props, evs)| {
            evs.iter()
                .filter(|e| props.iter().take(k).any(|p| temporal_iou::<f64>(&p.interval, e) > tiou))
                .count()
        })
        .sum();
    Some(hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_four_frames_give_thirteen_windows() {
        let w = enumerate_windows(64, &WindowConfig::default()).unwrap();
        assert_eq!(w.len(), 13);
        assert_eq!(w[0], TemporalInterval { start: 0, end: 16 });
        assert!(w.windows(2).all(|p| (p[0].start, p[0].len()) < (p[1].start, p[1].len())));
    }

    #[test]
    fn base_length_equal_to_video_gives_one_window() {
        let cfg = WindowConfig {
            n_scales: Some(3),
            ..Default::default()
        };
        assert_eq!(enumerate_windows(16, &cfg).unwrap().len(), 1);
        assert!(enumerate_windows(8, &cfg).unwrap().is_empty());
    }

    #[test]
    fn probability_lies_in_unit_interval() {
        let c = WindowClassifier::<f64>::new(WindowClassifierConfig::default(), 3, Standardizer::identity(3)).unwrap();
        for s in [vec![vec![100.0, -50.0, 3.0]], vec![vec![0.0; 3]; 4]] {
            let p = c.probability(&s).unwrap();
            assert!((0.0..=1.0).contains(&p));
            assert_eq!(p, c.probability(&s).unwrap());
        }
    }

    #[test]
    fn recall_counts_matched_events() {
        let p = |s, e, score| WindowProposal {
            interval: TemporalInterval { start: s, end: e },
            score,
        };
        let props = vec![vec![p(0, 32, 0.9), p(64, 96, 0.8)]];
        let events = vec![vec![TemporalInterval { start: 0, end: 40 }, TemporalInterval { start: 60, end: 100 }]];
        assert_eq!(recall_at_k(&props, &events, 2, 0.5), Some(1.0));
        assert_eq!(recall_at_k(&props, &events, 1, 0.5), Some(0.5));
    }
}
