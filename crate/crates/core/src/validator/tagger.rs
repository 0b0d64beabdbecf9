//! Deterministic rule-based part-of-speech tagger (Penn Treebank tags).
//!
//! Closed-class words and the synthetic vocabulary come from a lexicon;
//! everything else falls back to suffix rules and finally `NN`.

const DETERMINERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "each", "every", "another", "some",
];
const PREPOSITIONS: &[&str] = &[
    "in", "on", "at", "with", "near", "toward", "towards", "across", "over", "under", "into", "onto", "from",
    "behind", "beside", "by", "of", "through", "along", "past", "inside", "outside", "after", "before",
    "between", "against", "without", "around", "above", "below", "beneath", "next",
];
/// Particles that act as prepositions when an NP follows, adverbs otherwise.
const PARTICLES: &[&str] = &["up", "down", "off", "out"];
const POSSESSIVES: &[&str] = &["his", "her", "its", "their", "my", "your", "our"];
const PRONOUNS: &[&str] = &["he", "she", "it", "they", "him", "them", "i", "we", "you"];
const COORDINATORS: &[&str] = &["and", "or", "but", "nor", "yet"];
const ADJECTIVES: &[&str] = &[
    "red", "green", "blue", "yellow", "white", "black", "orange", "purple", "brown", "gray", "grey", "pink",
    "big", "small", "large", "little", "tall", "short", "other", "male", "female", "young", "old", "lucky",
];
const ADVERBS: &[&str] = &[
    "then", "left", "right", "away", "again", "forward", "backward", "back", "fast", "just", "also",
    "together", "still", "first", "later", "here", "there", "not", "very",
];
const VERB_BASES: &[&str] = &[
    "move", "run", "slide", "climb", "jump", "turn", "stop", "stay", "wait", "walk", "kick", "hit", "reach",
    "go", "play", "fly", "swim", "chase", "follow", "catch", "throw", "save", "block", "push", "pull",
    "roll", "spin", "land", "fall", "rise", "drop", "cross", "approach", "leave", "enter", "pass", "sit",
    "stand", "lie", "eat", "look",
];
const IRREGULAR_VBZ: &[&str] = &["is", "has", "does", "goes"];
const IRREGULAR_VBD: &[&str] = &["was", "were", "ran", "slid", "fell", "rose", "sat", "stood", "went", "caught", "threw"];

fn is_verb_third_person(tok: &str) -> bool {
    if IRREGULAR_VBZ.contains(&tok) {
        return true;
    }
    if let Some(stem) = tok.strip_suffix("es") {
        if VERB_BASES.contains(&stem) {
            return true;
        }
    }
    if let Some(stem) = tok.strip_suffix("ies") {
        let base = format!("{stem}y");
        if VERB_BASES.contains(&base.as_str()) {
            return true;
        }
    }
    match tok.strip_suffix('s') {
        Some(stem) => VERB_BASES.contains(&stem),
        None => false,
    }
}

/// Tag of one token in isolation (no right context).
fn lexical_tag(tok: &str) -> &'static str {
    if DETERMINERS.contains(&tok) {
        "DT"
    } else if tok == "to" {
        "TO"
    } else if PREPOSITIONS.contains(&tok) {
        "IN"
    } else if POSSESSIVES.contains(&tok) {
        "PRP$"
    } else if PRONOUNS.contains(&tok) {
        "PRP"
    } else if COORDINATORS.contains(&tok) {
        "CC"
    } else if ADJECTIVES.contains(&tok) {
        "JJ"
    } else if ADVERBS.contains(&tok) || PARTICLES.contains(&tok) {
        "RB"
    } else if VERB_BASES.contains(&tok) {
        "VB"
    } else if is_verb_third_person(tok) {
        "VBZ"
    } else if IRREGULAR_VBD.contains(&tok) {
        "VBD"
    } else if tok.chars().all(|c| c.is_ascii_digit()) && !tok.is_empty() {
        "CD"
    } else if tok.len() > 4 && tok.ends_with("ing") {
        "VBG"
    } else if tok.len() > 3 && tok.ends_with("ly") {
        "RB"
    } else if tok.len() > 3 && tok.ends_with("ed") {
        "VBD"
    } else if tok.len() > 3 && tok.ends_with('s') && !["ss", "us", "is"].iter().any(|s| tok.ends_with(s)) {
        "NNS"
    } else {
        "NN"
    }
}

/// Lowercases and splits on whitespace, trimming edge punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Tags each token; deterministic and total.
pub fn pos_tag<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let base: Vec<&'static str> = tokens.iter().map(|t| lexical_tag(t.as_ref())).collect();
    base.iter()
        .enumerate()
        .map(|(k, tag)| {
            let tok = tokens[k].as_ref();
            if PARTICLES.contains(&tok) {
                let next = base.get(k + 1).copied();
                if matches!(next, Some("DT") | Some("PRP$")) {
                    return "IN".to_string();
                }
            }
            tag.to_string()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<String> {
        pos_tag(&tokenize(s))
    }

    #[test]
    fn closed_class_and_suffix_rules() {
        assert_eq!(tags("the"), ["DT"]);
        assert_eq!(tags("quickly"), ["RB"]);
        assert_eq!(tags("panda"), ["NN"]);
        assert_eq!(tags("kicking"), ["VBG"]);
        assert_eq!(tags("slides"), ["VBZ"]);
        assert_eq!(tags("reaches"), ["VBZ"]);
        assert_eq!(tags("flies"), ["VBZ"]);
        assert_eq!(tags("pandas"), ["NNS"]);
        assert_eq!(tags("grass"), ["NN"]);
    }

    #[test]
    fn particles_depend_on_right_context() {
        assert_eq!(tags("slides down the slope"), ["VBZ", "IN", "DT", "NN"]);
        assert_eq!(tags("climbs up"), ["VBZ", "RB"]);
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(tokenize("The net.  Then, GO!"), ["the", "net", "then", "go"]);
    }
}
