//! Synthetic rare-slot corpora.
//!
//! Every head owns a carrier word (shared by heads of the same family) and
//! 2–4 cue tokens. A positive turn for a head contains the phrase
//! `<cue> <carrier>` embedded among filler tokens; negatives contain none of
//! the head's cues. A head whose family names another head is a value of
//! that slot, so its positives are positives of the family head too. N-best lists are substitution-corrupted copies of the
//! reference with confidences `c·r^k`.
//!
//! A head flagged `skewed` gets a non-Gaussian score profile on purpose: some
//! of its positives lose the carrier word and some negatives carry a decoy
//! token whose embedding sits near the head's cue direction.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, EmbeddingTable, Hypothesis, Split, Turn, Vocabulary, PAD_INDEX};

const FUNCTION_WORDS: &[&str] = &[
    "i", "want", "a", "the", "please", "uh", "um", "in", "of", "for", "and", "is",
];
const ACT_TYPES: &[&str] = &["hello", "request", "confirm", "inform", "offer", "reqmore", "select"];
const MIN_DISTRACTORS: usize = 20;
const DECOYS_PER_SKEWED_HEAD: usize = 2;

fn default_cues() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: String,
    pub train_positive: usize,
    pub test_positive: usize,
    /// Carrier word shared by heads of one family; defaults to the head name.
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default = "default_cues")]
    pub cues: usize,
    #[serde(default)]
    pub skewed: bool,
}

impl HeadSpec {
    pub fn new(name: &str, train_positive: usize, test_positive: usize) -> Self {
        HeadSpec {
            name: name.to_string(),
            train_positive,
            test_positive,
            family: None,
            cues: default_cues(),
            skewed: false,
        }
    }

    pub fn with_family(mut self, family: &str) -> Self {
        self.family = Some(family.to_string());
        self
    }

    pub fn skewed(mut self) -> Self {
        self.skewed = true;
        self
    }

    pub fn carrier(&self) -> &str {
        self.family.as_deref().unwrap_or(&self.name)
    }

    /// Nearly zero-shot or zero-shot: at most four training positives.
    pub fn is_rare(&self) -> bool {
        self.train_positive <= 4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub vocab_size: usize,
    pub nbest_size: usize,
    pub train_turns: usize,
    pub test_turns: usize,
    /// Per-token substitution probability when producing hypotheses.
    pub corruption_rate: f64,
    /// Ratio `r` in the rank-`k` confidence `c·r^k`.
    pub confidence_decay: f64,
    pub max_context_acts: usize,
    /// Dimension of the generated word vectors.
    pub embedding_dim: usize,
    /// At most one head's phrase per turn.
    #[serde(default)]
    pub exclusive: bool,
    pub heads: Vec<HeadSpec>,
}

impl Default for SynthConfig {
    /// Desk-scale benchmark: four nearly zero-shot slots with 1–4 training
    /// positives and test counts in the proportions of the reference corpus,
    /// two zero-shot values (one forced skewed), and frequent slots.
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            vocab_size: 300,
            nbest_size: 3,
            train_turns: 1200,
            test_turns: 3000,
            corruption_rate: 0.1,
            confidence_decay: 0.8,
            max_context_acts: 6,
            embedding_dim: 24,
            exclusive: true,
            heads: vec![
                HeadSpec::new("area", 150, 430),
                HeadSpec::new("food", 280, 620),
                HeadSpec::new("pricerange", 125, 210),
                HeadSpec::new("facilities", 150, 180),
                HeadSpec::new("hastv", 1, 64).with_family("facilities"),
                HeadSpec::new("childrenallowed", 2, 32).with_family("facilities"),
                HeadSpec::new("near", 3, 20).with_family("area"),
                HeadSpec::new("hasinternet", 4, 57).with_family("facilities"),
                HeadSpec::new("food_american", 0, 24).with_family("food"),
                HeadSpec::new("area_romsey", 0, 34).with_family("area").skewed(),
            ],
        }
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self, CorpusError> {
        toml::from_str(text).map_err(|e| CorpusError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        if self.heads.is_empty() {
            return err("at least one head is required".into());
        }
        if self.nbest_size == 0 {
            return err("nbest_size must be positive".into());
        }
        if self.embedding_dim == 0 {
            return err("embedding_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return err(format!("corruption_rate {} outside [0,1]", self.corruption_rate));
        }
        if !(self.confidence_decay > 0.0 && self.confidence_decay <= 1.0) {
            return err(format!("confidence_decay {} outside (0,1]", self.confidence_decay));
        }
        let mut names = std::collections::BTreeSet::new();
        for h in &self.heads {
            if h.name.is_empty() || h.name.chars().any(char::is_whitespace) {
                return err(format!("invalid head name {:?}", h.name));
            }
            if !names.insert(h.name.as_str()) {
                return err(format!("duplicate head {:?}", h.name));
            }
            if !(2..=4).contains(&h.cues) {
                return err(format!("head {} must own 2-4 cue tokens, got {}", h.name, h.cues));
            }
            if h.train_positive > self.train_turns || h.test_positive > self.test_turns {
                return err(format!("head {} has more positives than turns", h.name));
            }
        }
        if !self.heads.iter().any(|h| h.train_positive <= 4 && h.test_positive >= 50) {
            return err("no nearly zero-shot head (train positives <= 4, test positives >= 50)".into());
        }
        if !self.heads.iter().any(|h| h.train_positive == 0 && h.test_positive > 0) {
            return err("no zero-shot head (train positives = 0, test positives > 0)".into());
        }
        if self.exclusive {
            let (train, test) = self
                .heads
                .iter()
                .fold((0, 0), |(a, b), h| (a + h.train_positive, b + h.test_positive));
            if train > self.train_turns || test > self.test_turns {
                return err("exclusive heads need at least as many turns as positives in total".into());
            }
        }
        Lexicon::build(self).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpora {
    pub train: Corpus,
    pub test: Corpus,
}

struct Lexicon {
    carriers: Vec<String>,
    cues: Vec<Vec<String>>,
    decoys: Vec<Vec<String>>,
    head_carrier: Vec<usize>,
    distractors: Vec<String>,
}

impl Lexicon {
    fn build(config: &SynthConfig) -> Result<Self, CorpusError> {
        let mut carriers: Vec<String> = Vec::new();
        let mut head_carrier = Vec::new();
        for h in &config.heads {
            let c = h.carrier();
            let idx = match carriers.iter().position(|x| x == c) {
                Some(i) => i,
                None => {
                    carriers.push(c.to_string());
                    carriers.len() - 1
                }
            };
            head_carrier.push(idx);
        }
        let cues: Vec<Vec<String>> = config
            .heads
            .iter()
            .map(|h| (0..h.cues).map(|k| format!("{}_c{k}", h.name)).collect())
            .collect();
        let decoys: Vec<Vec<String>> = config
            .heads
            .iter()
            .map(|h| {
                if h.skewed {
                    (0..DECOYS_PER_SKEWED_HEAD).map(|k| format!("{}_x{k}", h.name)).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        let reserved = FUNCTION_WORDS.len()
            + ACT_TYPES.len()
            + carriers.len()
            + cues.iter().map(Vec::len).sum::<usize>()
            + decoys.iter().map(Vec::len).sum::<usize>();
        if config.vocab_size < reserved + MIN_DISTRACTORS {
            return Err(CorpusError::Config(format!(
                "vocab_size {} too small: {} tokens reserved for cues, carriers and function words, \
                 plus at least {MIN_DISTRACTORS} distractors",
                config.vocab_size, reserved
            )));
        }
        let fixed: std::collections::BTreeSet<&str> = FUNCTION_WORDS.iter().chain(ACT_TYPES).copied().collect();
        if let Some(c) = carriers.iter().find(|c| fixed.contains(c.as_str())) {
            return Err(CorpusError::Config(format!("carrier {c:?} collides with a reserved word")));
        }
        let distractors = (0..config.vocab_size - reserved).map(|i| format!("w{i}")).collect();
        Ok(Lexicon {
            carriers,
            cues,
            decoys,
            head_carrier,
            distractors,
        })
    }

    fn filler<R: Rng>(&self, rng: &mut R) -> String {
        if rng.random_bool(0.35) {
            FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())].to_string()
        } else {
            self.distractors[rng.random_range(0..self.distractors.len())].clone()
        }
    }
}

/// Generates the train/test pair. Pure in `config`: equal configs yield
/// equal corpora, and per-head positive counts match the configuration.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpora, CorpusError> {
    config.validate()?;
    let lex = Lexicon::build(config)?;
    let train = generate_split(config, &lex, Split::Train)?;
    let test = generate_split(config, &lex, Split::Test)?;
    Ok(SyntheticCorpora { train, test })
}

fn generate_split(config: &SynthConfig, lex: &Lexicon, split: Split) -> Result<Corpus, CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(match split {
        Split::Train => 1,
        Split::Test => 2,
    });
    let n = match split {
        Split::Train => config.train_turns,
        Split::Test => config.test_turns,
    };
    let mut positives = vec![vec![false; config.heads.len()]; n];
    for (h, spec) in config.heads.iter().enumerate() {
        let k = match split {
            Split::Train => spec.train_positive,
            Split::Test => spec.test_positive,
        };
        if config.exclusive {
            let free: Vec<usize> = (0..n).filter(|&i| !positives[i].iter().any(|&p| p)).collect();
            for j in sample(&mut rng, free.len(), k) {
                positives[free[j]][h] = true;
            }
        } else {
            for i in sample(&mut rng, n, k) {
                positives[i][h] = true;
            }
        }
    }

    let mut turns = Vec::with_capacity(n);
    for (i, pos) in positives.iter().enumerate() {
        let len = rng.random_range(4..=9);
        let mut reference: Vec<String> = (0..len).map(|_| lex.filler(&mut rng)).collect();
        for (h, spec) in config.heads.iter().enumerate() {
            let carrier = &lex.carriers[lex.head_carrier[h]];
            let phrase = if pos[h] {
                let cue = lex.cues[h][rng.random_range(0..lex.cues[h].len())].clone();
                if spec.skewed && rng.random_bool(0.35) {
                    vec![cue]
                } else {
                    vec![cue, carrier.clone()]
                }
            } else if spec.skewed && rng.random_bool(0.15) {
                let decoy = lex.decoys[h][rng.random_range(0..lex.decoys[h].len())].clone();
                vec![decoy, carrier.clone()]
            } else {
                continue;
            };
            let at = rng.random_range(0..=reference.len());
            reference.splice(at..at, phrase);
        }

        let top = rng.random_range(0.5..=1.0);
        let nbest = (0..config.nbest_size)
            .map(|k| {
                let tokens = reference
                    .iter()
                    .map(|t| {
                        if config.corruption_rate > 0.0 && rng.random_bool(config.corruption_rate) {
                            lex.filler(&mut rng)
                        } else {
                            t.clone()
                        }
                    })
                    .collect();
                Hypothesis {
                    tokens,
                    score: top * config.confidence_decay.powi(k as i32),
                }
            })
            .collect();

        let n_acts = rng.random_range(0..=config.max_context_acts);
        let mut context_acts: Vec<Vec<String>> = (0..n_acts)
            .map(|_| {
                let mut act = vec![ACT_TYPES[rng.random_range(0..ACT_TYPES.len())].to_string()];
                if rng.random_bool(0.5) {
                    act.push(lex.carriers[rng.random_range(0..lex.carriers.len())].clone());
                }
                act
            })
            .collect();
        if let Some(h) = pos.iter().position(|&p| p) {
            if !context_acts.is_empty() && rng.random_bool(0.3) {
                let last = context_acts.len() - 1;
                context_acts[last] = vec!["request".into(), lex.carriers[lex.head_carrier[h]].clone()];
            }
        }

        let mut labels: BTreeMap<String, bool> = config
            .heads
            .iter()
            .zip(pos)
            .map(|(spec, &p)| (spec.name.clone(), p))
            .collect();
        for (spec, &p) in config.heads.iter().zip(pos) {
            if p && spec.family.is_some() {
                if let Some(l) = labels.get_mut(spec.carrier()) {
                    *l = true;
                }
            }
        }
        turns.push(Turn {
            id: format!("{split}-{i:05}"),
            nbest,
            context_acts,
            labels,
        });
    }
    let corpus = Corpus {
        turns,
        heads: config.heads.iter().map(|h| h.name.clone()).collect(),
        split,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Word vectors for the synthetic lexicon: cue tokens share a content
/// direction plus family and head directions, decoys sit near their head's
/// direction, everything else is random. Tokens of `vocab` outside the
/// lexicon get random vectors; padding is zero.
pub fn synthetic_embeddings(config: &SynthConfig, vocab: &Vocabulary) -> Result<EmbeddingTable, CorpusError> {
    config.validate()?;
    let lex = Lexicon::build(config)?;
    let dim = config.embedding_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(3);
    let normal = Normal::new(0.0, 0.15).expect("valid normal");
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..dim).map(|_| normal.sample(rng)).collect() };

    let content = draw(&mut rng);
    let family_dirs: Vec<Vec<f64>> = lex.carriers.iter().map(|_| draw(&mut rng)).collect();
    let head_dirs: Vec<Vec<f64>> = config.heads.iter().map(|_| draw(&mut rng)).collect();

    let mut known: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (h, cues) in lex.cues.iter().enumerate() {
        let fam = &family_dirs[lex.head_carrier[h]];
        for cue in cues {
            let noise = draw(&mut rng);
            let v = (0..dim)
                .map(|j| 2.0 * content[j] + 0.5 * fam[j] + 1.0 * head_dirs[h][j] + 0.35 * noise[j])
                .collect();
            known.insert(cue.as_str(), v);
        }
        for decoy in &lex.decoys[h] {
            let noise = draw(&mut rng);
            let v = (0..dim)
                .map(|j| 0.8 * content[j] + 0.6 * head_dirs[h][j] + 0.6 * noise[j])
                .collect();
            known.insert(decoy.as_str(), v);
        }
    }

    let mut vectors = vec![0.0; vocab.len() * dim];
    for (i, tok) in vocab.tokens().iter().enumerate() {
        if i == PAD_INDEX {
            continue;
        }
        let v = match known.get(tok.as_str()) {
            Some(v) => v.clone(),
            None => draw(&mut rng),
        };
        vectors[i * dim..(i + 1) * dim].copy_from_slice(&v);
    }
    EmbeddingTable::new(dim, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_turns: 300,
            test_turns: 400,
            heads: vec![
                HeadSpec::new("food", 60, 80),
                HeadSpec::new("hastv", 1, 239),
                HeadSpec::new("american", 0, 12).with_family("food"),
            ],
            ..SynthConfig::default()
        }
    }

    #[test]
    fn positive_counts_match_configuration() {
        let c = generate_synthetic(&small()).unwrap();
        assert_eq!(c.train.positive_count("hastv"), 1);
        assert_eq!(c.test.positive_count("hastv"), 239);
        assert_eq!(c.train.positive_count("american"), 0);
        assert_eq!(c.test.positive_count("food"), 80 + 12);
    }

    #[test]
    fn family_positives_imply_slot_positives() {
        let c = generate_synthetic(&small()).unwrap();
        for t in &c.test.turns {
            if t.target("american") {
                assert!(t.target("food"));
            }
        }
    }

    #[test]
    fn exclusive_turns_carry_one_phrase() {
        let c = generate_synthetic(&small()).unwrap();
        for t in c.train.turns.iter().chain(&c.test.turns) {
            let own = ["hastv", "american"].iter().filter(|h| t.target(h)).count();
            assert!(own <= 1);
            assert!(!(t.target("hastv") && t.target("food")));
        }
        let mut cfg = small();
        cfg.train_turns = 50;
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.train.to_jsonl(), b.train.to_jsonl());
        assert_eq!(a.test.to_jsonl(), b.test.to_jsonl());
        let mut other = small();
        other.seed += 1;
        assert_ne!(generate_synthetic(&other).unwrap().train.to_jsonl(), a.train.to_jsonl());
    }

    #[test]
    fn zero_corruption_copies_reference() {
        let cfg = SynthConfig {
            corruption_rate: 0.0,
            ..small()
        };
        let c = generate_synthetic(&cfg).unwrap();
        for t in c.train.turns.iter().chain(&c.test.turns) {
            assert!(t.nbest.iter().all(|h| h.tokens == t.nbest[0].tokens));
        }
    }

    #[test]
    fn positives_contain_own_cue_and_negatives_do_not() {
        let c = generate_synthetic(&small()).unwrap();
        let cfg = SynthConfig {
            corruption_rate: 0.0,
            ..small()
        };
        let c0 = generate_synthetic(&cfg).unwrap();
        for t in &c0.test.turns {
            let has_cue = t.nbest[0].tokens.iter().any(|tok| tok.starts_with("hastv_c"));
            assert_eq!(has_cue, t.target("hastv"), "turn {}", t.id);
        }
        assert!(c.test.turns.iter().all(|t| t.nbest.windows(2).all(|w| w[0].score >= w[1].score)));
    }

    #[test]
    fn vocab_too_small_is_a_config_error() {
        let cfg = SynthConfig {
            vocab_size: 30,
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(CorpusError::Config(_))));
    }

    #[test]
    fn regime_invariants_are_enforced() {
        let mut cfg = small();
        cfg.heads.retain(|h| h.name != "american");
        assert!(generate_synthetic(&cfg).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SynthConfig::default();
        assert_eq!(SynthConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn synthetic_embeddings_cover_vocab() {
        let cfg = small();
        let c = generate_synthetic(&cfg).unwrap();
        let vocab = super::super::build_vocab(&c.train, 1);
        let e = synthetic_embeddings(&cfg, &vocab).unwrap();
        assert_eq!(e.len(), vocab.len());
        assert!(e.vector(PAD_INDEX).iter().all(|&v| v == 0.0));
    }
}
