use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, Vocabulary, PAD_INDEX};

/// Half-width of the uniform range used for tokens without a file vector.
pub const OOV_INIT_RANGE: f64 = 0.25;

/// One `dim`-length vector per vocabulary entry, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: Vec<f64>) -> Result<Self, CorpusError> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(CorpusError::InvalidCorpus(format!(
                "embedding buffer of {} values is not a multiple of dim {dim}",
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::InvalidCorpus("non-finite embedding value".into()));
        }
        Ok(EmbeddingTable { dim, vectors })
    }

    /// Random table: every entry uniform in `[-0.25, 0.25]`, padding zero.
    pub fn random(vocab: &Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors = vec![0.0; vocab.len() * dim];
        for i in 0..vocab.len() {
            if i == PAD_INDEX {
                continue;
            }
            for v in &mut vectors[i * dim..(i + 1) * dim] {
                *v = rng.random_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE);
            }
        }
        EmbeddingTable { dim, vectors }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, index: usize) -> &[f64] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.vectors
    }

    /// Word-per-line text: `word v1 ... vdim`.
    pub fn to_text(&self, vocab: &Vocabulary) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for (i, tok) in vocab.tokens().iter().enumerate() {
            out.push_str(tok);
            for v in self.vector(i) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text(vocab)).map_err(|e| CorpusError::io(path, e))
    }
}

/// Reads a word-vector file. In-vocabulary words take their file vector;
/// remaining entries (including `<unk>`) are drawn uniformly from
/// `[-0.25, 0.25]^dim` with `seed`; `<pad>` is always zero.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_embeddings(BufReader::new(file), &path.display().to_string(), vocab, dim, seed)
}

pub(crate) fn parse_embeddings<R: BufRead>(
    reader: R,
    origin: &str,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    if dim == 0 {
        return Err(CorpusError::InvalidCorpus("embedding dim must be positive".into()));
    }
    let mut found: HashMap<usize, Vec<f64>> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Parse {
            path: origin.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values = parts
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message: format!("{word}: {e}"),
            })?;
        if values.len() != dim {
            return Err(CorpusError::DimensionMismatch {
                word: word.to_string(),
                expected: dim,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CorpusError::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message: format!("{word}: non-finite value"),
            });
        }
        if let Some(i) = vocab.get(word) {
            found.insert(i, values);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = vec![0.0; vocab.len() * dim];
    for i in 0..vocab.len() {
        let slot = &mut vectors[i * dim..(i + 1) * dim];
        if i == PAD_INDEX {
            continue;
        }
        match found.get(&i) {
            Some(v) => slot.copy_from_slice(v),
            None => slot
                .iter_mut()
                .for_each(|x| *x = rng.random_range(-OOV_INIT_RANGE..=OOV_INIT_RANGE)),
        }
    }
    Ok(EmbeddingTable { dim, vectors })
}
