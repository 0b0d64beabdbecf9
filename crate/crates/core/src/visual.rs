//! Visual modules scoring a candidate against a module query: subject,
//! location, relationship, their motion counterparts and moving location.
//!
//! Every module maps a per-frame descriptor into the joint embedding, takes
//! the cosine with the query and average-pools over the frames where the
//! candidate has a box.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, Var};
use crate::error::{Result, StvgError};
use crate::features::{FeatureBundle, LOC_DIM, LOC_INPUT_DIM, MAX_CONTEXTS, STACK};
use crate::nn::{Graph, Linear, Lstm, ParamStore, Standardizer};
use crate::scalar::Scalar;

/// Relationship score when no context object is present.
pub const NO_CONTEXT_SCORE: f64 = -1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Subj,
    Loc,
    Rel,
    SubjMotion,
    RelMotion,
    MovingLoc,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 6] = [
        ModuleKind::Subj,
        ModuleKind::Loc,
        ModuleKind::Rel,
        ModuleKind::SubjMotion,
        ModuleKind::RelMotion,
        ModuleKind::MovingLoc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::Subj => "subj",
            ModuleKind::Loc => "loc",
            ModuleKind::Rel => "rel",
            ModuleKind::SubjMotion => "subj_motion",
            ModuleKind::RelMotion => "rel_motion",
            ModuleKind::MovingLoc => "moving_loc",
        }
    }

    pub fn is_motion(self) -> bool {
        matches!(self, ModuleKind::SubjMotion | ModuleKind::RelMotion | ModuleKind::MovingLoc)
    }

    /// Appearance-stream module with the same architecture.
    pub fn appearance_counterpart(self) -> Option<ModuleKind> {
        match self {
            ModuleKind::SubjMotion => Some(ModuleKind::Subj),
            ModuleKind::RelMotion => Some(ModuleKind::Rel),
            ModuleKind::MovingLoc => Some(ModuleKind::Loc),
            _ => None,
        }
    }

    fn is_relational(self) -> bool {
        matches!(self, ModuleKind::Rel | ModuleKind::RelMotion)
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModuleKind {
    type Err = StvgError;
    fn from_str(s: &str) -> Result<Self> {
        ModuleKind::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| StvgError::Config(format!("unknown module `{s}`")))
    }
}

/// Module score of one candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleScore {
    pub module: ModuleKind,
    pub score: f64,
    pub per_frame: Vec<f64>,
}

/// Column standardizers fitted on training descriptors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub appearance: Standardizer,
    pub motion: Standardizer,
    pub location: Standardizer,
    pub delta: Standardizer,
}

impl FeatureNorm {
    pub fn identity(appearance_dim: usize, motion_dim: usize) -> Self {
        FeatureNorm {
            appearance: Standardizer::identity(appearance_dim),
            motion: Standardizer::identity(motion_dim),
            location: Standardizer::identity(LOC_DIM),
            delta: Standardizer::identity(LOC_DIM),
        }
    }

    pub fn fit<'a>(appearance_dim: usize, motion_dim: usize, bundles: impl IntoIterator<Item = &'a FeatureBundle>) -> Self {
        let (mut app, mut mot, mut loc, mut del): (Vec<&[f64]>, Vec<&[f64]>, Vec<&[f64]>, Vec<&[f64]>) =
            Default::default();
        for b in bundles {
            for c in &b.candidates {
                for p in c.present_positions() {
                    app.push(&c.appearance[p]);
                    mot.push(&c.motion[p]);
                    loc.push(&c.location[p]);
                    for j in &c.contexts[p] {
                        if let Some(d) = &c.deltas[p][*j] {
                            del.push(d);
                        }
                    }
                }
            }
        }
        FeatureNorm {
            appearance: Standardizer::fit(appearance_dim, app),
            motion: Standardizer::fit(motion_dim, mot),
            location: Standardizer::fit(LOC_DIM, loc),
            delta: Standardizer::fit(LOC_DIM, del),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualConfig {
    pub embed_dim: usize,
    pub proj_hidden: usize,
    pub appearance_dim: usize,
    pub motion_dim: usize,
    /// Motion descriptors stacked over t−2..t+2.
    pub stacked: bool,
    /// Relationship-motion module encodes the context offset sequence with an LSTM.
    pub rel_motion_loc_seq: bool,
    pub moving_loc_hidden: usize,
    pub delta_seq_hidden: usize,
    pub n_attributes: usize,
}

impl VisualConfig {
    pub fn motion_input_dim(&self) -> usize {
        if self.stacked {
            self.motion_dim * STACK
        } else {
            self.motion_dim
        }
    }

    pub fn input_dim(&self, m: ModuleKind) -> usize {
        match m {
            ModuleKind::Subj => self.appearance_dim,
            ModuleKind::Loc => LOC_INPUT_DIM,
            ModuleKind::Rel => self.appearance_dim + LOC_DIM,
            ModuleKind::SubjMotion => self.motion_input_dim(),
            ModuleKind::RelMotion if self.rel_motion_loc_seq => self.motion_input_dim() + STACK * self.delta_seq_hidden,
            ModuleKind::RelMotion => self.motion_input_dim() + LOC_DIM,
            ModuleKind::MovingLoc => STACK * self.moving_loc_hidden,
        }
    }
}

/// Standardized model inputs of one candidate over its present frames.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCandidate {
    /// Interval positions with a box.
    pub positions: Vec<usize>,
    pub appearance: Vec<f64>,
    pub location: Vec<f64>,
    pub motion: Vec<f64>,
    /// Context count per present frame.
    pub contexts_per_frame: Vec<usize>,
    /// `[appearance; δ]` per context row.
    pub ctx_appearance: Vec<f64>,
    /// Context motion per context row.
    pub ctx_motion: Vec<f64>,
    /// `δ` per context row.
    pub ctx_delta: Vec<f64>,
    /// Five steps of `δ` per context row (t−2..t+2).
    pub ctx_delta_seq: Vec<Vec<f64>>,
    /// Five steps of location input per frame (t−2..t+2).
    pub loc_seq: Vec<Vec<f64>>,
}

impl PreparedCandidate {
    pub fn n_frames(&self) -> usize {
        self.positions.len()
    }

    pub fn n_context_rows(&self) -> usize {
        self.contexts_per_frame.iter().sum()
    }
}

fn standardized(s: &Standardizer, row: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(row.len());
    s.apply_into(row, &mut out);
    out
}

fn location_row(norm: &FeatureNorm, c: &crate::features::CandidateFeatures, p: usize) -> Vec<f64> {
    if !c.present[p] {
        return vec![0.0; LOC_INPUT_DIM];
    }
    let mut out = standardized(&norm.location, &c.location[p]);
    for j in &c.contexts[p] {
        if let Some(d) = &c.deltas[p][*j] {
            out.extend(standardized(&norm.delta, d));
        }
    }
    out.resize(LOC_INPUT_DIM, 0.0);
    out
}

/// Builds standardized inputs for every candidate of a bundle.
pub fn prepare(bundle: &FeatureBundle, norm: &FeatureNorm, config: &VisualConfig) -> Vec<PreparedCandidate> {
    let motion_row = |c: &crate::features::CandidateFeatures, p: usize| -> Vec<f64> {
        if config.stacked {
            c.stack_positions(p)
                .iter()
                .flat_map(|q| {
                    if c.present[*q] {
                        standardized(&norm.motion, &c.motion[*q])
                    } else {
                        vec![0.0; config.motion_dim]
                    }
                })
                .collect()
        } else {
            standardized(&norm.motion, &c.motion[p])
        }
    };
    bundle
        .candidates
        .iter()
        .map(|c| {
            let positions = c.present_positions();
            let mut out = PreparedCandidate {
                positions: positions.clone(),
                appearance: Vec::new(),
                location: Vec::new(),
                motion: Vec::new(),
                contexts_per_frame: Vec::new(),
                ctx_appearance: Vec::new(),
                ctx_motion: Vec::new(),
                ctx_delta: Vec::new(),
                ctx_delta_seq: vec![Vec::new(); STACK],
                loc_seq: vec![Vec::new(); STACK],
            };
            for &p in &positions {
                out.appearance.extend(standardized(&norm.appearance, &c.appearance[p]));
                out.location.extend(location_row(norm, c, p));
                out.motion.extend(motion_row(c, p));
                let stack = c.stack_positions(p);
                for (s, q) in stack.iter().enumerate() {
                    out.loc_seq[s].extend(location_row(norm, c, *q));
                }
                let ctxs = &c.contexts[p];
                out.contexts_per_frame.push(ctxs.len());
                for j in ctxs {
                    let other = &bundle.candidates[*j];
                    let d = standardized(&norm.delta, &c.deltas[p][*j].expect("context delta"));
                    out.ctx_appearance.extend(standardized(&norm.appearance, &other.appearance[p]));
                    out.ctx_appearance.extend(&d);
                    out.ctx_motion.extend(motion_row(other, p));
                    out.ctx_delta.extend(&d);
                    for (s, q) in stack.iter().enumerate() {
                        match c.deltas[*q][*j] {
                            Some(dq) => out.ctx_delta_seq[s].extend(standardized(&norm.delta, &dq)),
                            None => out.ctx_delta_seq[s].extend([0.0; LOC_DIM]),
                        }
                    }
                }
            }
            debug_assert!(out.contexts_per_frame.iter().all(|n| *n <= MAX_CONTEXTS));
            out
        })
        .collect()
}

/// Two-layer perceptron `in → hidden → E` with a tanh in between.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub first: Linear,
    pub second: Linear,
}

impl Projection {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        Projection {
            first: Linear::new(store, &format!("{name}.fc1"), input, hidden, true, rng),
            second: Linear::new(store, &format!("{name}.fc2"), hidden, output, true, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let h = self.first.forward(g, x);
        let h = g.tape.tanh(h);
        self.second.forward(g, h)
    }
}

#[derive(Clone, Debug)]
pub struct VisualModules {
    pub config: VisualConfig,
    pub modules: Vec<ModuleKind>,
    pub projections: BTreeMap<ModuleKind, Projection>,
    pub moving_loc_lstm: Option<Lstm>,
    pub delta_seq_lstm: Option<Lstm>,
    /// Attribute logits from the pooled subject embedding.
    pub attribute_head: Option<Linear>,
}

/// Embedded candidates of one forward pass.
#[derive(Clone, Debug)]
pub struct VisualBatch {
    pub n_candidates: usize,
    /// Frame rows of each candidate.
    pub frame_rows: Vec<Range<usize>>,
    /// `n×F` averaging matrix over each candidate's frames.
    pub pool: Var,
    /// `n×1`: −1 for candidates without frames, 0 otherwise.
    pub empty_offset: Var,
    /// Context rows of each frame.
    pub context_segments: Vec<Range<usize>>,
    pub embeddings: BTreeMap<ModuleKind, Var>,
}

fn rows_input<T: Scalar>(g: &mut Graph<'_, T>, parts: &[&[f64]], cols: usize) -> Var {
    let data: Vec<f64> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    g.input(data.len() / cols.max(1), cols, &data)
}

impl VisualModules {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        config: VisualConfig,
        modules: Vec<ModuleKind>,
        rng: &mut R,
    ) -> Self {
        let mut projections = BTreeMap::new();
        let mut moving_loc_lstm = None;
        let mut delta_seq_lstm = None;
        for &m in &modules {
            if m == ModuleKind::MovingLoc {
                moving_loc_lstm = Some(Lstm::new(store, "vis.moving_loc.lstm", LOC_INPUT_DIM, config.moving_loc_hidden, rng));
            }
            if m == ModuleKind::RelMotion && config.rel_motion_loc_seq {
                delta_seq_lstm = Some(Lstm::new(store, "vis.rel_motion.lstm", LOC_DIM, config.delta_seq_hidden, rng));
            }
            let p = Projection::new(
                store,
                &format!("vis.{}", m.name()),
                config.input_dim(m),
                config.proj_hidden,
                config.embed_dim,
                rng,
            );
            projections.insert(m, p);
        }
        let attribute_head = (modules.contains(&ModuleKind::Subj) && config.n_attributes > 0)
            .then(|| Linear::new(store, "vis.subj.attributes", config.embed_dim, config.n_attributes, true, rng));
        VisualModules {
            config,
            modules,
            projections,
            moving_loc_lstm,
            delta_seq_lstm,
            attribute_head,
        }
    }

    /// Projects the descriptors of `cands` into the joint space for every active module.
    pub fn embed<T: Scalar>(&self, g: &mut Graph<'_, T>, cands: &[&PreparedCandidate]) -> Result<VisualBatch> {
        let cfg = &self.config;
        let n = cands.len();
        let mut frame_rows = Vec::with_capacity(n);
        let mut f = 0;
        for c in cands {
            frame_rows.push(f..f + c.n_frames());
            f += c.n_frames();
        }
        let mut pool = vec![0.0; n * f];
        let mut empty = vec![0.0; n];
        for (i, r) in frame_rows.iter().enumerate() {
            if r.is_empty() {
                empty[i] = NO_CONTEXT_SCORE;
            }
            for k in r.clone() {
                pool[i * f + k] = 1.0 / r.len() as f64;
            }
        }
        let pool = g.input(n, f, &pool);
        let empty_offset = g.input(n, 1, &empty);
        let mut context_segments = Vec::with_capacity(f);
        let mut r = 0;
        for c in cands {
            for k in &c.contexts_per_frame {
                context_segments.push(r..r + k);
                r += k;
            }
        }
        let check = |name: &str, data: &[f64], rows: usize, cols: usize| -> Result<()> {
            if data.len() != rows * cols {
                return Err(StvgError::dim(name.to_string(), rows * cols, data.len()));
            }
            Ok(())
        };
        let mut embeddings = BTreeMap::new();
        for &m in &self.modules {
            let proj = self.projections[&m];
            let x = match m {
                ModuleKind::Subj => {
                    for c in cands {
                        check("appearance", &c.appearance, c.n_frames(), cfg.appearance_dim)?;
                    }
                    let parts: Vec<&[f64]> = cands.iter().map(|c| c.appearance.as_slice()).collect();
                    rows_input(g, &parts, cfg.appearance_dim)
                }
                ModuleKind::Loc => {
                    for c in cands {
                        check("location", &c.location, c.n_frames(), LOC_INPUT_DIM)?;
                    }
                    let parts: Vec<&[f64]> = cands.iter().map(|c| c.location.as_slice()).collect();
                    rows_input(g, &parts, LOC_INPUT_DIM)
                }
                ModuleKind::Rel => {
                    let d = cfg.appearance_dim + LOC_DIM;
                    for c in cands {
                        check("context appearance", &c.ctx_appearance, c.n_context_rows(), d)?;
                    }
                    let parts: Vec<&[f64]> = cands.iter().map(|c| c.ctx_appearance.as_slice()).collect();
                    rows_input(g, &parts, d)
                }
                ModuleKind::SubjMotion => {
                    let d = cfg.motion_input_dim();
                    for c in cands {
                        check("motion", &c.motion, c.n_frames(), d)?;
                    }
                    let parts: Vec<&[f64]> = cands.iter().map(|c| c.motion.as_slice()).collect();
                    rows_input(g, &parts, d)
                }
                ModuleKind::RelMotion => {
                    let d = cfg.motion_input_dim();
                    for c in cands {
                        check("context motion", &c.ctx_motion, c.n_context_rows(), d)?;
                    }
                    let parts: Vec<&[f64]> = cands.iter().map(|c| c.ctx_motion.as_slice()).collect();
                    let motion = rows_input(g, &parts, d);
                    match &self.delta_seq_lstm {
                        Some(lstm) => {
                            let steps: Vec<Var> = (0..STACK)
                                .map(|s| {
                                    let parts: Vec<&[f64]> =
                                        cands.iter().map(|c| c.ctx_delta_seq[s].as_slice()).collect();
                                    rows_input(g, &parts, LOC_DIM)
                                })
                                .collect();
                            let hs = lstm.run(g, &steps);
                            let mut all = vec![motion];
                            all.extend(hs);
                            g.tape.concat_cols(&all)
                        }
                        None => {
                            let parts: Vec<&[f64]> = cands.iter().map(|c| c.ctx_delta.as_slice()).collect();
                            let delta = rows_input(g, &parts, LOC_DIM);
                            g.tape.concat_cols(&[motion, delta])
                        }
                    }
                }
                ModuleKind::MovingLoc => {
                    let lstm = self.moving_loc_lstm.as_ref().expect("moving location LSTM");
                    for c in cands {
                        if c.loc_seq.len() != STACK {
                            return Err(StvgError::dim("moving location steps", STACK, c.loc_seq.len()));
                        }
                        for s in &c.loc_seq {
                            check("location sequence", s, c.n_frames(), LOC_INPUT_DIM)?;
                        }
                    }
                    let steps: Vec<Var> = (0..STACK)
                        .map(|s| {
                            let parts: Vec<&[f64]> = cands.iter().map(|c| c.loc_seq[s].as_slice()).collect();
                            rows_input(g, &parts, LOC_INPUT_DIM)
                        })
                        .collect();
                    let hs = lstm.run(g, &steps);
                    g.tape.concat_cols(&hs)
                }
            };
            embeddings.insert(m, proj.forward(g, x));
        }
        Ok(VisualBatch {
            n_candidates: n,
            frame_rows,
            pool,
            empty_offset,
            context_segments,
            embeddings,
        })
    }

    /// Per-frame (`F×1`) and pooled (`n×1`) cosine scores of module `m` against query `q` (`1×E`).
    pub fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, batch: &VisualBatch, m: ModuleKind, q: Var) -> (Var, Var) {
        let emb = batch.embeddings[&m];
        let cos = g.tape.row_cosine(emb, q);
        let per_frame = if m.is_relational() {
            g.tape.segment_max(cos, &batch.context_segments, T::lit(NO_CONTEXT_SCORE))
        } else {
            cos
        };
        let pooled = g.tape.matmul(batch.pool, per_frame);
        let pooled = g.tape.add(pooled, batch.empty_offset);
        (per_frame, pooled)
    }

    /// Attribute logits (`n×A`) from each candidate's mean subject embedding.
    pub fn attribute_logits<T: Scalar>(&self, g: &mut Graph<'_, T>, batch: &VisualBatch) -> Option<Var> {
        let head = self.attribute_head?;
        let subj = *batch.embeddings.get(&ModuleKind::Subj)?;
        let mean = g.tape.matmul(batch.pool, subj);
        Some(head.forward(g, mean))
    }
}

/// Mean of per-frame values, the pooling used by every module.
pub fn mean_pool(per_frame: &[f64]) -> f64 {
    if per_frame.is_empty() {
        NO_CONTEXT_SCORE
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    }
}

pub(crate) fn column_values<T: Scalar>(m: &Matrix<T>, rows: Range<usize>) -> Vec<f64> {
    rows.map(|r| m.at(r, 0).as_f64()).collect()
}
