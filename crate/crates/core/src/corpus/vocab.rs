use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::{Corpus, CorpusError};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Token list with fixed padding (0) and unknown (1) entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens; `<pad>` and `<unk>` are prepended.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all = vec![PAD.to_string(), UNK.to_string()];
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_full_list(all)
    }

    fn from_full_list(tokens: Vec<String>) -> Result<Self, CorpusError> {
        if tokens.len() < 2 || tokens[PAD_INDEX] != PAD || tokens[UNK_INDEX] != UNK {
            return Err(CorpusError::InvalidCorpus(
                "vocabulary must start with <pad> and <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CorpusError::InvalidCorpus(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(CorpusError::InvalidCorpus(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, or the unknown index.
    pub fn lookup(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_INDEX)
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        Self::from_full_list(text.lines().filter(|l| !l.is_empty()).map(str::to_string).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Collects tokens from n-best texts and context acts occurring at least
/// `min_count` times, ordered by descending count then lexicographically.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for turn in &corpus.turns {
        let hyp_tokens = turn.nbest.iter().flat_map(|h| h.tokens.iter());
        let act_tokens = turn.context_acts.iter().flatten();
        for tok in hyp_tokens.chain(act_tokens) {
            if tok == PAD || tok == UNK {
                continue;
            }
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut entries: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_tokens(entries.into_iter().map(|(t, _)| t)).expect("corpus tokens are whitespace-free and distinct")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Hypothesis, Split, Turn};
    use std::collections::BTreeMap;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus {
            heads: vec![],
            split: Split::Train,
            turns: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Turn {
                    id: format!("t{i}"),
                    nbest: vec![Hypothesis::new(t, 1.0)],
                    context_acts: vec![],
                    labels: BTreeMap::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn includes_every_token_with_tie_rule() {
        let v = build_vocab(&corpus(&["b a"]), 1);
        assert_eq!(v.tokens(), &[PAD, UNK, "a", "b"]);
        let v = build_vocab(&corpus(&["b a", "b"]), 1);
        assert_eq!(v.tokens(), &[PAD, UNK, "b", "a"]);
    }

    #[test]
    fn high_min_count_leaves_specials_only() {
        let v = build_vocab(&corpus(&["a b", "a"]), 10);
        assert_eq!(v.tokens(), &[PAD, UNK]);
        assert_eq!(v.lookup("a"), UNK_INDEX);
    }

    #[test]
    fn order_invariant_to_turn_permutation() {
        let a = build_vocab(&corpus(&["x y z", "y z", "q"]), 1);
        let b = build_vocab(&corpus(&["q", "y z", "x y z"]), 1);
        assert_eq!(a, b);
    }

    #[test]
    fn text_round_trip() {
        let v = build_vocab(&corpus(&["x y z", "y"]), 1);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}
