#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stvg::data::{Dataset, SplitName};
use stvg::language::Vocabulary;
use stvg::model::{attribute_targets, GroundingModel, ModelConfig, TrainingExample, Variant};
use stvg::nn::Graph;
use stvg::scalar::Scalar;
use stvg::synth::{build_dataset, Preset, SynthConfig, SynthProvider};
use stvg::train::{attribute_vocabulary, extract_bundles};
use stvg::visual::{FeatureNorm, PreparedCandidate};

pub struct Fixture {
    pub dataset: Dataset,
    pub provider: SynthProvider,
}

pub fn fixture(seed: u64) -> Fixture {
    let cfg = SynthConfig::default();
    Fixture {
        dataset: build_dataset(15, Preset::Motion, &cfg, seed).unwrap(),
        provider: SynthProvider::new(seed, &cfg),
    }
}

impl Fixture {
    /// Untrained model with normalization fitted on the training split.
    pub fn model<T: Scalar>(&self, variant: Variant, seed: u64) -> GroundingModel<T> {
        let mut cfg = ModelConfig::for_variant(variant);
        cfg.seed = seed;
        self.model_with(cfg)
    }

    pub fn model_with<T: Scalar>(&self, cfg: ModelConfig) -> GroundingModel<T> {
        let train = self.dataset.instances_in(SplitName::Train);
        let bundles = extract_bundles(&self.provider, &self.dataset, &train).unwrap();
        let norm = FeatureNorm::fit(6, 3, bundles.iter());
        let vocab = Vocabulary::build(train.iter().map(|i| &i.expression));
        GroundingModel::new(cfg, vocab, attribute_vocabulary(&train), norm).unwrap()
    }

    pub fn prepared<T: Scalar>(&self, model: &GroundingModel<T>, split: SplitName) -> Vec<Vec<PreparedCandidate>> {
        let insts = self.dataset.instances_in(split);
        let bundles = extract_bundles(&self.provider, &self.dataset, &insts).unwrap();
        bundles.iter().map(|b| model.prepare(b)).collect()
    }
}

fn loss_value(model: &GroundingModel<f64>, ex: &TrainingExample<'_>) -> f64 {
    let mut g = Graph::new(&model.store);
    let l = model.example_loss(&mut g, ex).unwrap();
    g.tape.scalar(l)
}

/// Largest relative error between analytic and central-difference gradients
/// over `samples` parameter entries with a non-zero analytic gradient.
pub fn max_gradient_error(variant: Variant, seed: u64, samples: usize) -> f64 {
    let fx = fixture(31);
    let mut cfg = ModelConfig::for_variant(variant);
    cfg.seed = seed;
    // A wide margin keeps both hinges active so the loss is smooth around the sample point.
    cfg.margin = 2.0;
    let mut model = fx.model_with::<f64>(cfg);
    let insts = fx.dataset.instances_in(SplitName::Train);
    let prepared: Vec<Vec<PreparedCandidate>> = fx.prepared(&model, SplitName::Train);
    let k = insts
        .iter()
        .position(|i| i.candidates.len() >= 3)
        .expect("an instance with two distractors");
    let inst = insts[k];
    let cands = &prepared[k];
    let sibling = insts
        .iter()
        .find(|j| j.video_id == inst.video_id && j.interval == inst.interval && j.id != inst.id)
        .expect("a sibling expression");
    let targets = attribute_targets(&inst.attributes, &model.attributes);
    let neg = (inst.target_index + 1) % cands.len();
    let ex = TrainingExample {
        target: &cands[inst.target_index],
        negative_object: Some(&cands[neg]),
        expression: &inst.expression.tokens,
        negative_expression: Some(&sibling.expression.tokens),
        attribute_targets: &targets,
    };
    let analytic = {
        let mut g = Graph::new(&model.store);
        let l = model.example_loss(&mut g, &ex).unwrap();
        g.gradients(l)
    };
    // Entries the example does not touch have zero gradient on both sides; sample among the rest.
    let ids: Vec<_> = model.store.ids().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut attempts = 0;
    while checked < samples {
        attempts += 1;
        assert!(attempts < 10_000);
        let id = ids[rng.random_range(0..ids.len())];
        let n = model.store.get(id).data.len();
        let e = rng.random_range(0..n);
        let a = analytic.get(id).data[e];
        if a == 0.0 {
            continue;
        }
        let orig = model.store.get(id).data[e];
        model.store.get_mut(id).data[e] = orig + h;
        let up = loss_value(&model, &ex);
        model.store.get_mut(id).data[e] = orig - h;
        let down = loss_value(&model, &ex);
        model.store.get_mut(id).data[e] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        log::debug!("{} [{e}]: analytic {a:e} numeric {numeric:e}", model.store.name(id));
        worst = worst.max(rel);
        checked += 1;
    }
    worst
}

