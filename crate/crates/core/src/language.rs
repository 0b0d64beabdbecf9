//! Expression encoder: word embeddings, bidirectional LSTM, per-module word
//! attention, module queries and module weights.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, Var};
use crate::data::Expression;
use crate::error::{Result, StvgError};
use crate::nn::{Graph, Linear, Lstm, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::visual::ModuleKind;

pub const UNK: &str = "<unk>";

/// Word list with the shared out-of-vocabulary token at index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn build<'a>(expressions: impl IntoIterator<Item = &'a Expression>) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for e in expressions {
            for t in &e.tokens {
                set.insert(t.clone());
            }
        }
        set.remove(UNK);
        let mut words = vec![UNK.to_string()];
        words.extend(set);
        Vocabulary { words }
    }

    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.first().map(String::as_str) != Some(UNK) || !words[1..].windows(2).all(|w| w[0] < w[1]) {
            return Err(StvgError::validation("vocabulary", "expected <unk> followed by sorted unique words"));
        }
        Ok(Vocabulary { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.words[1..]
            .binary_search_by(|w| w.as_str().cmp(token))
            .map_or(0, |k| k + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for LanguageConfig {
    fn default() -> Self {
        LanguageConfig {
            embed_dim: 32,
            hidden_dim: 32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LanguageEncoder {
    pub vocab: Vocabulary,
    pub config: LanguageConfig,
    pub modules: Vec<ModuleKind>,
    pub embedding: ParamId,
    pub forward_lstm: Lstm,
    pub backward_lstm: Lstm,
    pub attention: Linear,
    pub weighting: Linear,
}

/// Tape nodes of one encoded expression.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    /// `T×E`
    pub embeddings: Var,
    /// `T×2H`
    pub hidden: Var,
    /// `T×M`, each column sums to one.
    pub attention: Var,
    /// `M×E`
    pub queries: Var,
    /// `1×M`, sums to one.
    pub weights: Var,
}

/// Values of one encoded expression, modules in encoder order.
#[derive(Clone, Debug, PartialEq)]
pub struct LanguageEncoding {
    pub modules: Vec<ModuleKind>,
    pub word_embeddings: Matrix<f64>,
    pub hidden_states: Matrix<f64>,
    pub attentions: Vec<Vec<f64>>,
    pub module_weights: Vec<f64>,
    pub queries: Vec<Vec<f64>>,
}

impl LanguageEncoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        vocab: Vocabulary,
        config: LanguageConfig,
        modules: Vec<ModuleKind>,
        rng: &mut R,
    ) -> Self {
        let (e, h, m) = (config.embed_dim, config.hidden_dim, modules.len());
        let emb = Matrix::from_vec(
            vocab.len(),
            e,
            (0..vocab.len() * e).map(|_| T::lit(rng.random_range(-0.5..0.5))).collect(),
        );
        let embedding = store.add("lang.embedding", emb);
        let forward_lstm = Lstm::new(store, "lang.lstm_fwd", e, h, rng);
        let backward_lstm = Lstm::new(store, "lang.lstm_bwd", e, h, rng);
        let attention = Linear::new(store, "lang.attention", 2 * h, m, true, rng);
        let weighting = Linear::new(store, "lang.weights", 4 * h, m, true, rng);
        LanguageEncoder {
            vocab,
            config,
            modules,
            embedding,
            forward_lstm,
            backward_lstm,
            attention,
            weighting,
        }
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[String]) -> Result<EncodedVars> {
        if tokens.is_empty() {
            return Err(StvgError::validation("expression.tokens", "empty expression"));
        }
        let ids = self.token_ids(tokens);
        let table = g.param(self.embedding);
        let embeddings = g.tape.select_rows(table, &ids);
        let steps: Vec<Var> = (0..ids.len()).map(|t| g.tape.select_rows(embeddings, &[t])).collect();
        let fwd = self.forward_lstm.run(g, &steps);
        let rev: Vec<Var> = steps.iter().rev().copied().collect();
        let mut bwd = self.backward_lstm.run(g, &rev);
        bwd.reverse();
        let rows: Vec<Var> = fwd
            .iter()
            .zip(&bwd)
            .map(|(f, b)| g.tape.concat_cols(&[*f, *b]))
            .collect();
        let hidden = g.tape.concat_rows(&rows);
        let logits = self.attention.forward(g, hidden);
        let attention = g.tape.softmax_cols(logits);
        let at = g.tape.transpose(attention);
        let queries = g.tape.matmul(at, embeddings);
        let ends = g.tape.concat_cols(&[rows[0], rows[rows.len() - 1]]);
        let wl = self.weighting.forward(g, ends);
        let weights = g.tape.softmax_rows(wl);
        Ok(EncodedVars {
            embeddings,
            hidden,
            attention,
            queries,
            weights,
        })
    }

    /// Forward pass returning plain values.
    pub fn encode<T: Scalar>(&self, store: &ParamStore<T>, expr: &Expression) -> Result<LanguageEncoding> {
        let mut g = Graph::new(store);
        let v = self.forward(&mut g, &expr.tokens)?;
        Ok(self.values(&g, &v))
    }

    pub fn values<T: Scalar>(&self, g: &Graph<'_, T>, v: &EncodedVars) -> LanguageEncoding {
        let to64 = |m: &Matrix<T>| Matrix::from_vec(m.rows, m.cols, m.data.iter().map(|x| x.as_f64()).collect());
        let att = to64(g.tape.value(v.attention));
        let q = to64(g.tape.value(v.queries));
        LanguageEncoding {
            modules: self.modules.clone(),
            word_embeddings: to64(g.tape.value(v.embeddings)),
            hidden_states: to64(g.tape.value(v.hidden)),
            attentions: (0..att.cols).map(|m| (0..att.rows).map(|t| att.at(t, m)).collect()).collect(),
            module_weights: to64(g.tape.value(v.weights)).data,
            queries: (0..q.rows).map(|m| q.row(m).to_vec()).collect(),
        }
    }
}

/// Mean word attention per (tag, module), plus a verbs-only row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionTable {
    pub modules: Vec<ModuleKind>,
    /// tag → per-module mean attention (module order as in `modules`).
    pub rows: BTreeMap<String, Vec<f64>>,
    /// tag → number of tokens carrying it.
    pub counts: BTreeMap<String, usize>,
    /// Mean over every token whose tag starts with `VB`.
    pub verbs: Option<Vec<f64>>,
}

impl AttentionTable {
    pub fn cell(&self, tag: &str, module: ModuleKind) -> Option<f64> {
        let m = self.modules.iter().position(|k| *k == module)?;
        self.rows.get(tag).map(|r| r[m])
    }

    pub fn verb(&self, module: ModuleKind) -> Option<f64> {
        let m = self.modules.iter().position(|k| *k == module)?;
        self.verbs.as_ref().map(|r| r[m])
    }

    /// Aligned text rendering.
    pub fn render(&self) -> String {
        let mut out = format!("{:<6} {:>6}", "tag", "n");
        for m in &self.modules {
            out.push_str(&format!(" {:>11}", m.name()));
        }
        out.push('\n');
        let mut line = |name: &str, n: usize, vals: &[f64]| {
            out.push_str(&format!("{name:<6} {n:>6}"));
            for v in vals {
                out.push_str(&format!(" {v:>11.4}"));
            }
            out.push('\n');
        };
        for (tag, vals) in &self.rows {
            line(tag, self.counts[tag], vals);
        }
        if let Some(v) = &self.verbs {
            let n = self
                .counts
                .iter()
                .filter(|(t, _)| t.starts_with("VB"))
                .map(|(_, c)| c)
                .sum();
            line("VB*", n, v);
        }
        out
    }
}

/// Buckets attention weights by POS tag across a corpus.
pub fn aggregate_attention_by_pos(encodings: &[LanguageEncoding], expressions: &[&Expression]) -> Result<AttentionTable> {
    if encodings.len() != expressions.len() {
        return Err(StvgError::dim("attention aggregation", expressions.len(), encodings.len()));
    }
    let Some(first) = encodings.first() else {
        return Ok(AttentionTable::default());
    };
    let modules = first.modules.clone();
    let m = modules.len();
    let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut verb_sum = vec![0.0; m];
    let mut verb_n = 0usize;
    for (enc, expr) in encodings.iter().zip(expressions) {
        if enc.modules != modules {
            return Err(StvgError::validation("modules", "encodings use different module sets"));
        }
        for (t, tag) in expr.pos_tags.iter().enumerate() {
            let s = sums.entry(tag.clone()).or_insert_with(|| vec![0.0; m]);
            for k in 0..m {
                s[k] += enc.attentions[k][t];
            }
            *counts.entry(tag.clone()).or_default() += 1;
            if tag.starts_with("VB") {
                for k in 0..m {
                    verb_sum[k] += enc.attentions[k][t];
                }
                verb_n += 1;
            }
        }
    }
    let rows = sums
        .into_iter()
        .map(|(tag, s)| {
            let n = counts[&tag] as f64;
            (tag, s.into_iter().map(|v| v / n).collect())
        })
        .collect();
    Ok(AttentionTable {
        modules,
        rows,
        counts,
        verbs: (verb_n > 0).then(|| verb_sum.into_iter().map(|v| v / verb_n as f64).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validator::expression_from_text;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(store: &mut ParamStore<f64>) -> LanguageEncoder {
        let exprs = [
            expression_from_text("the red ball runs right across the grass field").unwrap(),
            expression_from_text("the blue ball slides down the snow slope").unwrap(),
        ];
        let vocab = Vocabulary::build(exprs.iter());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        LanguageEncoder::new(
            store,
            vocab,
            LanguageConfig::default(),
            vec![ModuleKind::Subj, ModuleKind::Loc, ModuleKind::Rel],
            &mut rng,
        )
    }

    #[test]
    fn vocabulary_lookup_and_oov() {
        let v = Vocabulary::build([&expression_from_text("the ball the dog").unwrap()]);
        assert_eq!(v.words(), &["<unk>", "ball", "dog", "the"]);
        assert_eq!(v.id("dog"), 2);
        assert_eq!(v.id("zebra"), 0);
    }

    #[test]
    fn single_token_attention_is_one() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let e = enc.encode(&store, &expression_from_text("ball").unwrap()).unwrap();
        for a in &e.attentions {
            assert_eq!(a, &vec![1.0]);
        }
    }

    #[test]
    fn normalization_and_convex_queries() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let e = enc
            .encode(&store, &expression_from_text("the red ball slides down the zebra slope").unwrap())
            .unwrap();
        for a in &e.attentions {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(a.iter().all(|v| *v >= 0.0));
        }
        assert!((e.module_weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let emb = &e.word_embeddings;
        for q in &e.queries {
            for (c, v) in q.iter().enumerate() {
                let col: Vec<f64> = (0..emb.rows).map(|t| emb.at(t, c)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn token_order_matters() {
        let mut store = ParamStore::new();
        let enc = encoder(&mut store);
        let a = enc.encode(&store, &expression_from_text("the red ball").unwrap()).unwrap();
        let b = enc.encode(&store, &expression_from_text("ball red the").unwrap()).unwrap();
        assert_ne!(a.hidden_states.row(1), b.hidden_states.row(1));
    }

    #[test]
    fn empty_tokens_rejected() {
        let mut store = ParamStore::<f64>::new();
        let enc = encoder(&mut store);
        let mut g = Graph::new(&store);
        assert!(enc.forward(&mut g, &[]).is_err());
    }

    #[test]
    fn uniform_attention_aggregates_to_inverse_length() {
        let e = expression_from_text("the ball runs").unwrap();
        let enc = LanguageEncoding {
            modules: vec![ModuleKind::Subj],
            word_embeddings: Matrix::zeros(3, 1),
            hidden_states: Matrix::zeros(3, 1),
            attentions: vec![vec![1.0 / 3.0; 3]],
            module_weights: vec![1.0],
            queries: vec![vec![0.0]],
        };
        let t = aggregate_attention_by_pos(&[enc], &[&e]).unwrap();
        assert_eq!(t.cell("DT", ModuleKind::Subj), Some(1.0 / 3.0));
        assert_eq!(t.verb(ModuleKind::Subj), Some(1.0 / 3.0));
        assert_eq!(t.cell("JJ", ModuleKind::Subj), None);
    }
}
