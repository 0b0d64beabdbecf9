//! Grammatical constraint on identifying descriptions: a valid expression
//! contains a noun phrase, a verb phrase and at least one of a prepositional,
//! adverb or conjunction phrase.
//!
//! Chunk grammar over tags, matched longest-first left to right:
//!
//! ```text
//! NP    = DT JJ* (NN|NNS)+
//! VP    = (VBZ|VBG|VBD|VBP|VB) RB*
//! PP    = IN NP
//! ADVP  = RB+            (outside a VP)
//! CONJP = CC | "then"
//! ```

mod tagger;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Expression;
use crate::error::{Result, StvgError};

pub use tagger::{pos_tag, tokenize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChunkLabel {
    NP,
    VP,
    PP,
    ADVP,
    CONJP,
    O,
}

impl fmt::Display for ChunkLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChunkLabel::NP => "NP",
            ChunkLabel::VP => "VP",
            ChunkLabel::PP => "PP",
            ChunkLabel::ADVP => "ADVP",
            ChunkLabel::CONJP => "CONJP",
            ChunkLabel::O => "O",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpan {
    pub label: ChunkLabel,
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChunkedExpression {
    pub expression: Expression,
    pub spans: Vec<ChunkSpan>,
}

impl ChunkedExpression {
    pub fn labels(&self) -> impl Iterator<Item = ChunkLabel> + '_ {
        self.spans.iter().map(|s| s.label)
    }

    /// Bracketed rendering, e.g. `[NP the panda] [VP slides]`.
    pub fn bracketed(&self) -> String {
        self.spans
            .iter()
            .map(|s| {
                let words = self.expression.tokens[s.start..s.end].join(" ");
                format!("[{} {}]", s.label, words)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn is_verb(tag: &str) -> bool {
    matches!(tag, "VBZ" | "VBG" | "VBD" | "VBP" | "VB")
}

fn is_noun(tag: &str) -> bool {
    matches!(tag, "NN" | "NNS")
}

fn is_conj(tok: &str, tag: &str) -> bool {
    tag == "CC" || tok == "then"
}

fn is_adverb(tok: &str, tag: &str) -> bool {
    tag == "RB" && tok != "then"
}

fn match_np(tags: &[String], at: usize) -> Option<usize> {
    let mut k = at;
    if tags.get(k).map(String::as_str) != Some("DT") {
        return None;
    }
    k += 1;
    while tags.get(k).map(String::as_str) == Some("JJ") {
        k += 1;
    }
    let nouns_from = k;
    while tags.get(k).is_some_and(|t| is_noun(t)) {
        k += 1;
    }
    (k > nouns_from).then_some(k)
}

fn match_at(tokens: &[String], tags: &[String], at: usize) -> Option<(ChunkLabel, usize)> {
    let (tok, tag) = (tokens[at].as_str(), tags[at].as_str());
    if is_conj(tok, tag) {
        return Some((ChunkLabel::CONJP, at + 1));
    }
    if tag == "IN" {
        return match_np(tags, at + 1).map(|end| (ChunkLabel::PP, end));
    }
    if tag == "DT" {
        return match_np(tags, at).map(|end| (ChunkLabel::NP, end));
    }
    if is_verb(tag) {
        let mut k = at + 1;
        while k < tokens.len() && is_adverb(&tokens[k], &tags[k]) {
            k += 1;
        }
        return Some((ChunkLabel::VP, k));
    }
    if is_adverb(tok, tag) {
        let mut k = at + 1;
        while k < tokens.len() && is_adverb(&tokens[k], &tags[k]) {
            k += 1;
        }
        return Some((ChunkLabel::ADVP, k));
    }
    None
}

/// Chunks a tagged expression. Tokens not covered by any phrase get `O` spans.
pub fn chunk(expr: &Expression) -> Result<ChunkedExpression> {
    expr.validate()?;
    let (tokens, tags) = (&expr.tokens, &expr.pos_tags);
    let mut spans = Vec::new();
    let mut at = 0;
    while at < tokens.len() {
        match match_at(tokens, tags, at) {
            Some((label, end)) => {
                spans.push(ChunkSpan { label, start: at, end });
                at = end;
            }
            None => {
                spans.push(ChunkSpan {
                    label: ChunkLabel::O,
                    start: at,
                    end: at + 1,
                });
                at += 1;
            }
        }
    }
    Ok(ChunkedExpression {
        expression: expr.clone(),
        spans,
    })
}

/// Requirement of the grammatical constraint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Requirement {
    #[serde(rename = "NP")]
    NounPhrase,
    #[serde(rename = "VP")]
    VerbPhrase,
    #[serde(rename = "PP|ADVP|CONJP")]
    Modifier,
}

impl fmt::Display for Requirement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Requirement::NounPhrase => "NP",
            Requirement::VerbPhrase => "VP",
            Requirement::Modifier => "PP|ADVP|CONJP",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub valid: bool,
    pub missing: BTreeSet<Requirement>,
}

fn verdict_of(labels: impl Iterator<Item = ChunkLabel>) -> Verdict {
    let labels: BTreeSet<ChunkLabel> = labels.collect();
    let mut missing = BTreeSet::new();
    if !labels.contains(&ChunkLabel::NP) {
        missing.insert(Requirement::NounPhrase);
    }
    if !labels.contains(&ChunkLabel::VP) {
        missing.insert(Requirement::VerbPhrase);
    }
    if ![ChunkLabel::PP, ChunkLabel::ADVP, ChunkLabel::CONJP]
        .iter()
        .any(|l| labels.contains(l))
    {
        missing.insert(Requirement::Modifier);
    }
    Verdict {
        valid: missing.is_empty(),
        missing,
    }
}

/// Checks the constraint using the expression's own tags.
pub fn validate(expr: &Expression) -> Verdict {
    match chunk(expr) {
        Ok(c) => verdict_of(c.labels()),
        Err(_) => verdict_of(std::iter::empty()),
    }
}

/// Tokenizes and tags free text.
pub fn expression_from_text(text: &str) -> Result<Expression> {
    let tokens = tokenize(text);
    let tags = pos_tag(&tokens);
    Expression::new(tokens, tags, text)
}

/// Tokenizes, tags and validates free text.
pub fn validate_text(text: &str) -> Verdict {
    match expression_from_text(text) {
        Ok(e) => validate(&e),
        Err(_) => verdict_of(std::iter::empty()),
    }
}

/// Token-level tag frequencies in percent.
pub fn corpus_pos_stats<'a>(expressions: impl IntoIterator<Item = &'a Expression>) -> Result<BTreeMap<String, f64>> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    let mut n_expr = 0usize;
    for e in expressions {
        n_expr += 1;
        for t in &e.pos_tags {
            *counts.entry(t.clone()).or_default() += 1;
            total += 1;
        }
    }
    if n_expr == 0 || total == 0 {
        return Err(StvgError::Invalid("corpus is empty".into()));
    }
    Ok(counts
        .into_iter()
        .map(|(t, c)| (t, 100.0 * c as f64 / total as f64))
        .collect())
}

/// Tag with the highest frequency (ties go to the lexicographically first tag).
pub fn modal_tag(stats: &BTreeMap<String, f64>) -> Option<&str> {
    stats
        .iter()
        .fold(None::<(&String, f64)>, |best, (t, p)| match best {
            Some((_, bp)) if bp >= *p => best,
            _ => Some((t, *p)),
        })
        .map(|(t, _)| t.as_str())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chunks(text: &str) -> String {
        chunk(&expression_from_text(text).unwrap()).unwrap().bracketed()
    }

    #[test]
    fn hand_chunked_examples() {
        assert_eq!(chunks("the panda slides"), "[NP the panda] [VP slides]");
        assert_eq!(chunks("down the slope"), "[PP down the slope]");
        assert_eq!(
            chunks("the panda slides then stops"),
            "[NP the panda] [VP slides] [CONJP then] [VP stops]"
        );
    }

    #[test]
    fn empty_expression_is_rejected() {
        let e = Expression {
            tokens: vec![],
            pos_tags: vec![],
            raw_text: String::new(),
        };
        assert!(chunk(&e).is_err());
        assert!(!validate(&e).valid);
    }

    #[test]
    fn exemplar_sentence_is_valid() {
        let v = validate_text("A man in a green uniform kicking the ball then running toward the net.");
        assert!(v.valid, "{v:?}");
    }

    #[test]
    fn validity_examples() {
        let v = validate_text("the panda slides");
        assert!(!v.valid);
        assert_eq!(v.missing, BTreeSet::from([Requirement::Modifier]));
        assert!(validate_text("the panda slides down the slope").valid);
        let v = validate_text("quickly");
        assert_eq!(v.missing, BTreeSet::from([Requirement::NounPhrase, Requirement::VerbPhrase]));
    }

    #[test]
    fn pos_stats() {
        let e = expression_from_text("panda").unwrap();
        let s = corpus_pos_stats([&e]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s["NN"], 100.0);
        assert!(corpus_pos_stats(std::iter::empty()).is_err());
    }

    const WORDS: &[&str] = &[
        "the", "a", "red", "panda", "dog", "slides", "moves", "quickly", "left", "then", "and", "down", "in",
        "field", "running", "toward", "net", "green", "to", "his",
    ];

    proptest! {
        #[test]
        fn spans_partition_tokens(idx in prop::collection::vec(0..WORDS.len(), 1..14)) {
            let text = idx.iter().map(|i| WORDS[*i]).collect::<Vec<_>>().join(" ");
            let c = chunk(&expression_from_text(&text).unwrap()).unwrap();
            let mut at = 0;
            for s in &c.spans {
                prop_assert_eq!(s.start, at);
                prop_assert!(s.end > s.start);
                at = s.end;
            }
            prop_assert_eq!(at, c.expression.tokens.len());
        }

        #[test]
        fn appending_never_loses_requirements(
            idx in prop::collection::vec(0..WORDS.len(), 1..10),
            extra in prop::collection::vec(0..WORDS.len(), 1..6),
        ) {
            let base: Vec<String> = idx.iter().map(|i| WORDS[*i].to_string()).collect();
            let mut longer = base.clone();
            longer.extend(extra.iter().map(|i| WORDS[*i].to_string()));
            // Tags of the prefix come from the tagger on the longer sentence so
            // that right-context tagging decisions are shared.
            let tags = pos_tag(&longer);
            let short = Expression::new(base.clone(), tags[..base.len()].to_vec(), "").unwrap();
            let long = Expression::new(longer, tags, "").unwrap();
            let (vs, vl) = (validate(&short), validate(&long));
            prop_assert!(vl.missing.is_subset(&vs.missing), "{:?} vs {:?}", vs, vl);
        }

        #[test]
        fn percentages_sum_to_100(idx in prop::collection::vec(prop::collection::vec(0..WORDS.len(), 1..8), 1..6)) {
            let exprs: Vec<Expression> = idx
                .iter()
                .map(|s| expression_from_text(&s.iter().map(|i| WORDS[*i]).collect::<Vec<_>>().join(" ")).unwrap())
                .collect();
            let stats = corpus_pos_stats(exprs.iter()).unwrap();
            let sum: f64 = stats.values().sum();
            prop_assert!((sum - 100.0).abs() < 0.1);
        }
    }
}
