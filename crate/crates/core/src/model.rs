//! Grounding model: language-weighted sum of module scores, ranking,
//! ranking and attribute losses, ablation and parameter files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::data::Expression;
use crate::error::{Result, StvgError};
use crate::features::FeatureBundle;
use crate::language::{EncodedVars, LanguageConfig, LanguageEncoder, LanguageEncoding, Vocabulary};
use crate::nn::{Graph, NamedTensor, ParamStore};
use crate::scalar::Scalar;
use crate::visual::{
    column_values, mean_pool, prepare, FeatureNorm, ModuleKind, ModuleScore, PreparedCandidate, VisualBatch,
    VisualConfig, VisualModules,
};

pub const PARAMS_FORMAT: &str = "stvg-params/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rgb,
    Flow,
    Flow5,
    Fused1,
    Fused5,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Rgb, Variant::Flow, Variant::Flow5, Variant::Fused1, Variant::Fused5];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rgb => "rgb",
            Variant::Flow => "flow",
            Variant::Flow5 => "flow5",
            Variant::Fused1 => "fused1",
            Variant::Fused5 => "fused5",
        }
    }

    pub fn modules(self) -> Vec<ModuleKind> {
        use ModuleKind::*;
        match self {
            Variant::Rgb => vec![Subj, Loc, Rel],
            Variant::Flow | Variant::Flow5 => vec![SubjMotion, Loc, RelMotion],
            Variant::Fused1 => vec![Subj, Loc, Rel, SubjMotion, RelMotion],
            Variant::Fused5 => vec![Subj, Loc, Rel, SubjMotion, RelMotion, MovingLoc],
        }
    }

    /// Motion descriptors stacked over five frames.
    pub fn stacked(self) -> bool {
        matches!(self, Variant::Flow5 | Variant::Fused5)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = StvgError;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| StvgError::Config(format!("unknown variant `{s}` (rgb|flow|flow5|fused1|fused5)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub proj_hidden: usize,
    pub moving_loc_hidden: usize,
    pub delta_seq_hidden: usize,
    /// Location-sequence LSTM inside the relationship-motion module; unset means on for fused5 only.
    pub rel_motion_loc_seq: Option<bool>,
    pub margin: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_att: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Modules whose weight is forced to zero.
    pub disabled: BTreeSet<ModuleKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Fused1,
            embed_dim: 32,
            hidden_dim: 32,
            proj_hidden: 32,
            moving_loc_hidden: 16,
            delta_seq_hidden: 8,
            rel_motion_loc_seq: None,
            margin: 0.1,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda_att: 0.5,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.01,
            epochs: 30,
            batch_size: 8,
            grad_clip: Some(5.0),
            seed: 7,
            disabled: BTreeSet::new(),
        }
    }
}

impl ModelConfig {
    pub fn for_variant(variant: Variant) -> Self {
        ModelConfig {
            variant,
            ..Default::default()
        }
    }

    pub fn active_modules(&self) -> Vec<ModuleKind> {
        self.variant.modules()
    }

    pub fn loc_seq(&self) -> bool {
        self.rel_motion_loc_seq.unwrap_or(self.variant == Variant::Fused5)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("margin", self.margin),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda_att", self.lambda_att),
        ] {
            if !(v >= 0.0) {
                return Err(StvgError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.proj_hidden == 0 {
            return Err(StvgError::Config("layer sizes must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(StvgError::Config("batch size must be positive".into()));
        }
        let active = self.active_modules();
        if let Some(m) = self.disabled.iter().find(|m| !active.contains(m)) {
            return Err(StvgError::Config(format!("module `{m}` is not active in variant {}", self.variant)));
        }
        Ok(())
    }

    /// Weight mask in active-module order.
    pub fn mask(&self) -> Vec<f64> {
        self.active_modules()
            .iter()
            .map(|m| if self.disabled.contains(m) { 0.0 } else { 1.0 })
            .collect()
    }
}

/// Configuration with the weights of `modules` zeroed (no renormalization).
pub fn ablate(config: &ModelConfig, modules: &[ModuleKind]) -> Result<ModelConfig> {
    let mut c = config.clone();
    c.disabled.extend(modules.iter().copied());
    c.validate()?;
    Ok(c)
}

/// Interpretability record of one (candidate, expression) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub total: f64,
    pub modules: BTreeMap<ModuleKind, ModuleScore>,
    pub module_weights: BTreeMap<ModuleKind, f64>,
    pub attentions: BTreeMap<ModuleKind, Vec<f64>>,
}

impl ScoreBreakdown {
    /// `Σ_m w_m · s_m` over the recorded modules.
    pub fn recompose(&self) -> f64 {
        self.modules
            .iter()
            .map(|(m, s)| self.module_weights.get(m).copied().unwrap_or(0.0) * s.score)
            .sum()
    }
}

/// Candidate order by descending total; ties keep the lower index first.
pub fn rank_by_totals(totals: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by(|a, b| totals[*b].total_cmp(&totals[*a]).then(a.cmp(b)));
    order
}

/// `λ1·max(0, Δ + S(o_i,r_j) − S(o_i,r_i)) + λ2·max(0, Δ + S(o_k,r_i) − S(o_i,r_i))`.
pub fn hinge_loss(s_pos: f64, s_neg_expr: f64, s_neg_obj: f64, margin: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    if !(margin >= 0.0 && lambda1 >= 0.0 && lambda2 >= 0.0) {
        return Err(StvgError::Config("margin and loss weights must be non-negative".into()));
    }
    Ok(lambda1 * (margin + s_neg_expr - s_pos).max(0.0) + lambda2 * (margin + s_neg_obj - s_pos).max(0.0))
}

/// Multi-hot target over `vocab`; gold labels outside it are dropped with a warning.
pub fn attribute_targets(gold: &BTreeSet<String>, vocab: &[String]) -> Vec<f64> {
    for a in gold {
        if !vocab.contains(a) {
            log::warn!("attribute `{a}` is not in the attribute vocabulary; ignored");
        }
    }
    vocab.iter().map(|a| if gold.contains(a) { 1.0 } else { 0.0 }).collect()
}

/// Mean binary cross-entropy of attribute logits against the gold set.
pub fn attribute_loss(logits: &[f64], gold: &BTreeSet<String>, vocab: &[String]) -> Result<f64> {
    if logits.len() != vocab.len() {
        return Err(StvgError::dim("attribute logits", vocab.len(), logits.len()));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let y = attribute_targets(gold, vocab);
    let total: f64 = logits
        .iter()
        .zip(&y)
        .map(|(z, y)| z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln())
        .sum();
    Ok(total / logits.len() as f64)
}

/// Result of ranking the candidates of one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub order: Vec<usize>,
    pub breakdowns: Vec<ScoreBreakdown>,
}

impl Ranking {
    pub fn best(&self) -> usize {
        self.order[0]
    }

    pub fn totals(&self) -> Vec<f64> {
        self.breakdowns.iter().map(|b| b.total).collect()
    }
}

/// Tape nodes of a scored batch.
struct ScoredVars {
    totals: Var,
    pooled: Vec<Var>,
    per_frame: Vec<Var>,
    weights: Var,
}

/// One training example in prepared form.
pub struct TrainingExample<'a> {
    pub target: &'a PreparedCandidate,
    pub negative_object: Option<&'a PreparedCandidate>,
    pub expression: &'a [String],
    pub negative_expression: Option<&'a [String]>,
    pub attribute_targets: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct GroundingModel<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub language: LanguageEncoder,
    pub visual: VisualModules,
    pub norm: FeatureNorm,
    pub attributes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ParamsFile {
    format: String,
    config: ModelConfig,
    vocabulary: Vec<String>,
    attributes: Vec<String>,
    appearance_dim: usize,
    motion_dim: usize,
    norm: FeatureNorm,
    tensors: Vec<NamedTensor>,
}

impl<T: Scalar> GroundingModel<T> {
    /// Freshly initialized model; initialization is a function of `config.seed`.
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        attributes: Vec<String>,
        norm: FeatureNorm,
    ) -> Result<Self> {
        config.validate()?;
        let appearance_dim = norm.appearance.dim();
        let motion_dim = norm.motion.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let modules = config.active_modules();
        let language = LanguageEncoder::new(
            &mut store,
            vocab,
            LanguageConfig {
                embed_dim: config.embed_dim,
                hidden_dim: config.hidden_dim,
            },
            modules.clone(),
            &mut rng,
        );
        let vcfg = VisualConfig {
            embed_dim: config.embed_dim,
            proj_hidden: config.proj_hidden,
            appearance_dim,
            motion_dim,
            stacked: config.variant.stacked(),
            rel_motion_loc_seq: config.loc_seq(),
            moving_loc_hidden: config.moving_loc_hidden,
            delta_seq_hidden: config.delta_seq_hidden,
            n_attributes: attributes.len(),
        };
        let visual = VisualModules::new(&mut store, vcfg, modules, &mut rng);
        Ok(GroundingModel {
            config,
            store,
            language,
            visual,
            norm,
            attributes,
        })
    }

    pub fn modules(&self) -> &[ModuleKind] {
        &self.visual.modules
    }

    /// Copy of this model under a different configuration of disabled modules.
    pub fn ablated(&self, modules: &[ModuleKind]) -> Result<Self> {
        let mut m = self.clone();
        m.config = ablate(&self.config, modules)?;
        Ok(m)
    }

    pub fn prepare(&self, bundle: &FeatureBundle) -> Vec<PreparedCandidate> {
        prepare(bundle, &self.norm, &self.visual.config)
    }

    fn score_vars(&self, g: &mut Graph<'_, T>, batch: &VisualBatch, enc: &EncodedVars) -> ScoredVars {
        let mut pooled = Vec::new();
        let mut per_frame = Vec::new();
        for (k, m) in self.visual.modules.iter().enumerate() {
            let q = g.tape.select_rows(enc.queries, &[k]);
            let (pf, p) = self.visual.scores(g, batch, *m, q);
            per_frame.push(pf);
            pooled.push(p);
        }
        let s = g.tape.concat_cols(&pooled);
        let mask = self.config.mask();
        let mask = g.input(1, mask.len(), &mask);
        let weights = g.tape.mul(enc.weights, mask);
        let wt = g.tape.transpose(weights);
        let totals = g.tape.matmul(s, wt);
        ScoredVars {
            totals,
            pooled,
            per_frame,
            weights,
        }
    }

    /// Scores every candidate against `expr`.
    pub fn score_candidates(&self, cands: &[PreparedCandidate], expr: &Expression) -> Result<Vec<ScoreBreakdown>> {
        let mut g = Graph::new(&self.store);
        let refs: Vec<&PreparedCandidate> = cands.iter().collect();
        let batch = self.visual.embed(&mut g, &refs)?;
        let enc = self.language.forward(&mut g, &expr.tokens)?;
        let sv = self.score_vars(&mut g, &batch, &enc);
        let lang = self.language.values(&g, &enc);
        let weights: Vec<f64> = g.tape.value(sv.weights).data.iter().map(|v| v.as_f64()).collect();
        let totals = g.tape.value(sv.totals);
        let mut out = Vec::with_capacity(cands.len());
        for (i, rows) in batch.frame_rows.iter().enumerate() {
            let mut modules = BTreeMap::new();
            let mut module_weights = BTreeMap::new();
            let mut attentions = BTreeMap::new();
            for (k, m) in self.visual.modules.iter().enumerate() {
                let per_frame = column_values(g.tape.value(sv.per_frame[k]), rows.clone());
                let score = g.tape.value(sv.pooled[k]).at(i, 0).as_f64();
                debug_assert!((score - mean_pool(&per_frame)).abs() < 1e-6);
                modules.insert(
                    *m,
                    ModuleScore {
                        module: *m,
                        score,
                        per_frame,
                    },
                );
                module_weights.insert(*m, weights[k]);
                attentions.insert(*m, lang.attentions[k].clone());
            }
            out.push(ScoreBreakdown {
                total: totals.at(i, 0).as_f64(),
                modules,
                module_weights,
                attentions,
            });
        }
        Ok(out)
    }

    /// Candidates sorted by descending total, ties to the lower index.
    pub fn rank_candidates(&self, cands: &[PreparedCandidate], expr: &Expression) -> Result<Ranking> {
        let breakdowns = self.score_candidates(cands, expr)?;
        let totals: Vec<f64> = breakdowns.iter().map(|b| b.total).collect();
        Ok(Ranking {
            order: rank_by_totals(&totals),
            breakdowns,
        })
    }

    pub fn encode(&self, expr: &Expression) -> Result<LanguageEncoding> {
        self.language.encode(&self.store, expr)
    }

    /// Builds the training objective of one example on `g`.
    pub fn example_loss(&self, g: &mut Graph<'_, T>, ex: &TrainingExample<'_>) -> Result<Var> {
        let c = &self.config;
        let mut cands = vec![ex.target];
        cands.extend(ex.negative_object);
        let batch = self.visual.embed(g, &cands)?;
        let enc = self.language.forward(g, ex.expression)?;
        let pos = self.score_vars(g, &batch, &enc);
        let s_pos = g.tape.select_rows(pos.totals, &[0]);
        let mut terms = Vec::new();
        let hinge = |g: &mut Graph<'_, T>, s_neg: Var, lambda: f64| {
            let d = g.tape.sub(s_neg, s_pos);
            let d = g.tape.offset(d, T::lit(c.margin));
            let h = g.tape.relu(d);
            g.tape.scale(h, T::lit(lambda))
        };
        if let Some(neg) = ex.negative_expression {
            let enc2 = self.language.forward(g, neg)?;
            let sv = self.score_vars(g, &batch, &enc2);
            let s = g.tape.select_rows(sv.totals, &[0]);
            terms.push(hinge(g, s, c.lambda1));
        }
        if ex.negative_object.is_some() {
            let s = g.tape.select_rows(pos.totals, &[1]);
            terms.push(hinge(g, s, c.lambda2));
        }
        if c.lambda_att > 0.0 && !ex.attribute_targets.is_empty() {
            if let Some(logits) = self.visual.attribute_logits(g, &batch) {
                let row = g.tape.select_rows(logits, &[0]);
                let y: Vec<T> = ex.attribute_targets.iter().map(|v| T::lit(*v)).collect();
                let bce = g.tape.bce_with_logits(row, &y);
                terms.push(g.tape.scale(bce, T::lit(c.lambda_att)));
            }
        }
        if terms.is_empty() {
            return Ok(g.tape.constant(T::zero()));
        }
        let all = g.tape.concat_cols(&terms);
        Ok(g.tape.sum_all(all))
    }

    pub fn write_params<W: Write>(&self, out: W) -> Result<()> {
        let file = ParamsFile {
            format: PARAMS_FORMAT.to_string(),
            config: self.config.clone(),
            vocabulary: self.language.vocab.words().to_vec(),
            attributes: self.attributes.clone(),
            appearance_dim: self.visual.config.appearance_dim,
            motion_dim: self.visual.config.motion_dim,
            norm: self.norm.clone(),
            tensors: self.store.to_named(),
        };
        serde_json::to_writer(out, &file).map_err(|e| StvgError::Invalid(format!("writing parameters: {e}")))
    }

    pub fn read_params<R: Read>(input: R) -> Result<Self> {
        let file: ParamsFile = serde_json::from_reader(input).map_err(|e| StvgError::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        if file.format != PARAMS_FORMAT {
            return Err(StvgError::validation(
                "format",
                format!("expected `{PARAMS_FORMAT}`, found `{}`", file.format),
            ));
        }
        if file.norm.appearance.dim() != file.appearance_dim || file.norm.motion.dim() != file.motion_dim {
            return Err(StvgError::validation("norm", "standardizer widths disagree with feature widths"));
        }
        let vocab = Vocabulary::from_words(file.vocabulary)?;
        let mut model = GroundingModel::new(file.config, vocab, file.attributes, file.norm)?;
        model.store.load_named(&file.tensors)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| StvgError::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_params(&mut w)?;
        w.flush().map_err(|e| StvgError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| StvgError::io(path, e))?;
        Self::read_params(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_hand_case() {
        assert!((hinge_loss(0.5, 0.55, 0.3, 0.1, 1.0, 1.0).unwrap() - 0.15).abs() < 1e-15);
        assert_eq!(hinge_loss(0.9, 0.2, 0.3, 0.1, 1.0, 1.0).unwrap(), 0.0);
        assert!(hinge_loss(0.5, 0.5, 0.5, -0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn ranking_ties_go_to_lower_index() {
        assert_eq!(rank_by_totals(&[0.1, 0.9, 0.4]), vec![1, 2, 0]);
        assert_eq!(rank_by_totals(&[0.5, 0.7, 0.7]), vec![1, 2, 0]);
    }

    #[test]
    fn attribute_loss_limits() {
        let vocab: Vec<String> = ["red", "blue", "green"].iter().map(|s| s.to_string()).collect();
        let gold = BTreeSet::from(["red".to_string()]);
        let uniform = attribute_loss(&[0.0, 0.0, 0.0], &gold, &vocab).unwrap();
        assert!((uniform - std::f64::consts::LN_2).abs() < 1e-15);
        let confident = attribute_loss(&[10.0, -10.0, -10.0], &gold, &vocab).unwrap();
        assert!(confident <= 1e-3);
        let none = attribute_loss(&[-10.0, -10.0, -10.0], &BTreeSet::new(), &vocab).unwrap();
        assert!(none <= 1e-3);
    }

    #[test]
    fn variant_module_sets() {
        assert_eq!(Variant::Rgb.modules().len(), 3);
        assert_eq!(Variant::Fused1.modules().len(), 5);
        assert_eq!(Variant::Fused5.modules().len(), 6);
        assert!(!ModelConfig::for_variant(Variant::Fused1).loc_seq());
        assert!(ModelConfig::for_variant(Variant::Fused5).loc_seq());
    }

    #[test]
    fn ablation_must_target_active_modules() {
        let c = ModelConfig::for_variant(Variant::Rgb);
        assert!(ablate(&c, &[ModuleKind::SubjMotion]).is_err());
        let a = ablate(&c, &[ModuleKind::Rel]).unwrap();
        assert_eq!(a.mask(), vec![1.0, 1.0, 0.0]);
    }
}
