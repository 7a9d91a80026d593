//! Turns, corpora, vocabularies, embeddings and the synthetic corpus generator.
//!
//! Corpus files are line-delimited JSON: a header line
//! `{"heads":[...],"split":"train"}` followed by one turn per line,
//! `{"id":..,"nbest":[{"text":..,"score":..}],"context_acts":[..],"labels":{..}}`.

mod embeddings;
mod synth;
mod vocab;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

pub use embeddings::{load_embeddings, EmbeddingTable, OOV_INIT_RANGE};
pub use synth::{generate_synthetic, synthetic_embeddings, HeadSpec, SynthConfig, SyntheticCorpora};
pub use vocab::{build_vocab, Vocabulary, PAD, PAD_INDEX, UNK, UNK_INDEX};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("turn {id}: {message}")]
    InvalidTurn { id: String, message: String },
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("synthetic config: {0}")]
    Config(String),
    #[error("embedding for {word:?} has {found} values, expected {expected}")]
    DimensionMismatch {
        word: String,
        expected: usize,
        found: usize,
    },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CorpusError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// Annotation state of one head on one turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Present,
    Absent,
    Unannotated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<String>,
    pub score: f64,
}

impl Hypothesis {
    pub fn new(text: &str, score: f64) -> Self {
        Hypothesis {
            tokens: text.split_whitespace().map(str::to_string).collect(),
            score,
        }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub id: String,
    pub nbest: Vec<Hypothesis>,
    /// System acts before this turn, most recent last.
    pub context_acts: Vec<Vec<String>>,
    pub labels: BTreeMap<String, bool>,
}

impl Turn {
    pub fn label(&self, head: &str) -> Label {
        match self.labels.get(head) {
            Some(true) => Label::Present,
            Some(false) => Label::Absent,
            None => Label::Unannotated,
        }
    }

    /// Training target for `head`; an unannotated head counts as absent.
    pub fn target(&self, head: &str) -> bool {
        self.label(head) == Label::Present
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: String| CorpusError::InvalidTurn {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() || self.id.chars().any(char::is_whitespace) {
            return Err(bad("id must be non-empty and contain no whitespace".into()));
        }
        if self.nbest.is_empty() {
            return Err(bad("empty n-best list".into()));
        }
        for (k, hyp) in self.nbest.iter().enumerate() {
            if !hyp.score.is_finite() || !(0.0..=1.0).contains(&hyp.score) {
                return Err(bad(format!("hypothesis {k} has confidence {} outside [0,1]", hyp.score)));
            }
            if k > 0 && hyp.score > self.nbest[k - 1].score {
                return Err(bad(format!("n-best not sorted by confidence at rank {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub turns: Vec<Turn>,
    pub heads: Vec<String>,
    pub split: Split,
}

impl Corpus {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut heads = BTreeSet::new();
        for h in &self.heads {
            if !heads.insert(h.as_str()) {
                return Err(CorpusError::InvalidCorpus(format!("duplicate head {h:?}")));
            }
        }
        let mut ids = BTreeSet::new();
        for turn in &self.turns {
            turn.validate()?;
            if !ids.insert(turn.id.as_str()) {
                return Err(CorpusError::InvalidTurn {
                    id: turn.id.clone(),
                    message: "duplicate turn id".into(),
                });
            }
            if let Some(unknown) = turn.labels.keys().find(|k| !heads.contains(k.as_str())) {
                return Err(CorpusError::InvalidTurn {
                    id: turn.id.clone(),
                    message: format!("label for undeclared head {unknown:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn positive_count(&self, head: &str) -> usize {
        self.turns.iter().filter(|t| t.target(head)).count()
    }

    /// Serialized form: header line followed by one JSON record per turn.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            heads: self.heads.clone(),
            split: self.split,
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for turn in &self.turns {
            let rec = TurnRecord {
                id: turn.id.clone(),
                nbest: turn
                    .nbest
                    .iter()
                    .map(|h| HypRecord {
                        text: h.text(),
                        score: h.score,
                    })
                    .collect(),
                context_acts: turn.context_acts.iter().map(|a| a.join(" ")).collect(),
                labels: LabelMap(turn.labels.clone()),
            };
            out.push_str(&serde_json::to_string(&rec).expect("turn serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str, origin: &str) -> Result<Self, CorpusError> {
        Self::from_reader(text.as_bytes(), origin)
    }

    fn from_reader<R: BufRead>(reader: R, origin: &str) -> Result<Self, CorpusError> {
        let parse_err = |line: usize, message: String| CorpusError::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut header: Option<Header> = None;
        let mut turns = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| parse_err(line_no, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            if header.is_none() {
                header = Some(serde_json::from_str(&line).map_err(|e| parse_err(line_no, format!("header: {e}")))?);
                continue;
            }
            let rec: TurnRecord = serde_json::from_str(&line).map_err(|e| parse_err(line_no, e.to_string()))?;
            turns.push(Turn {
                id: rec.id,
                nbest: rec.nbest.iter().map(|h| Hypothesis::new(&h.text, h.score)).collect(),
                context_acts: rec
                    .context_acts
                    .iter()
                    .map(|a| a.split_whitespace().map(str::to_string).collect())
                    .collect(),
                labels: rec.labels.0,
            });
        }
        let header = header.ok_or_else(|| parse_err(1, "missing header line".into()))?;
        let corpus = Corpus {
            turns,
            heads: header.heads,
            split: header.split,
        };
        corpus.validate()?;
        Ok(corpus)
    }
}

/// Loads and validates a corpus file; malformed records are rejected.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    Corpus::from_reader(BufReader::new(file), &path.display().to_string())
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    std::fs::write(path, corpus.to_jsonl()).map_err(|e| CorpusError::io(path, e))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    heads: Vec<String>,
    split: Split,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HypRecord {
    text: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    id: String,
    nbest: Vec<HypRecord>,
    #[serde(default)]
    context_acts: Vec<String>,
    #[serde(default)]
    labels: LabelMap,
}

/// Label object that rejects duplicate keys instead of keeping the last one.
#[derive(Default, Serialize)]
#[serde(transparent)]
struct LabelMap(BTreeMap<String, bool>);

impl<'de> Deserialize<'de> for LabelMap {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = LabelMap;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a map from head name to bool")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<LabelMap, A::Error> {
                let mut out = BTreeMap::new();
                while let Some((k, v)) = map.next_entry::<String, bool>()? {
                    if out.insert(k.clone(), v).is_some() {
                        return Err(serde::de::Error::custom(format!("duplicate label {k:?}")));
                    }
                }
                Ok(LabelMap(out))
            }
        }
        de.deserialize_map(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Corpus {
        let mut labels = BTreeMap::new();
        labels.insert("hastv".to_string(), true);
        Corpus {
            heads: vec!["hastv".into(), "near".into()],
            split: Split::Train,
            turns: vec![
                Turn {
                    id: "t0".into(),
                    nbest: vec![Hypothesis::new("with a tv", 0.9), Hypothesis::new("with tea", 0.4)],
                    context_acts: vec![vec!["hello".into()], vec!["request".into(), "area".into()]],
                    labels,
                },
                Turn {
                    id: "t1".into(),
                    nbest: vec![Hypothesis::new("", 1.0)],
                    context_acts: vec![],
                    labels: BTreeMap::new(),
                },
            ],
        }
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Corpus::from_jsonl(&c.to_jsonl(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn confidence_out_of_range_names_turn() {
        let text = sample().to_jsonl().replace("\"score\":0.9", "\"score\":1.3");
        match Corpus::from_jsonl(&text, "mem").unwrap_err() {
            CorpusError::InvalidTurn { id, .. } => assert_eq!(id, "t0"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn undeclared_head_is_rejected() {
        let text = sample().to_jsonl().replace("{\"hastv\":true}", "{\"hasradio\":true}");
        assert!(matches!(
            Corpus::from_jsonl(&text, "mem").unwrap_err(),
            CorpusError::InvalidTurn { .. }
        ));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let text = sample()
            .to_jsonl()
            .replace("{\"hastv\":true}", "{\"hastv\":true,\"hastv\":false}");
        match Corpus::from_jsonl(&text, "mem").unwrap_err() {
            CorpusError::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("duplicate"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mut text = sample().to_jsonl();
        text.push_str("{not json}\n");
        match Corpus::from_jsonl(&text, "mem").unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unsorted_nbest_and_duplicate_ids() {
        let mut c = sample();
        c.turns[0].nbest.swap(0, 1);
        assert!(c.validate().is_err());
        let mut c = sample();
        c.turns[1].id = "t0".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn unannotated_means_absent_for_training() {
        let c = sample();
        assert_eq!(c.turns[0].label("near"), Label::Unannotated);
        assert!(!c.turns[0].target("near"));
        assert!(c.turns[0].target("hastv"));
    }
}
