//! Checkpoint and hidden-vector files.
//!
//! Checkpoint layout (all text, one item per line):
//!
//! ```text
//! rmtune-checkpoint 1
//! mode joint
//! config {...model config as JSON...}
//! vocab <n>
//! <n tokens>
//! tensor embeddings <V>x<d>
//! <values>
//! models <k>
//! model <index> <head> <head> ...
//! tensor history <epochs>
//! <values>
//! tensor conv.filter.w3 <maps>x<3·d>
//! ...
//! end
//! ```

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::{DecoderModel, HeadWeights, HeadsError, ModelConfig, ModelParams, TrainMode, TrainedDecoder};
use crate::corpus::{EmbeddingTable, Vocabulary};
use crate::encoder::Encoder;
use crate::tensor::Tensor;

const MAGIC: &str = "rmtune-checkpoint";
const VERSION: u32 = 1;

fn io_err(path: &Path, e: std::io::Error) -> HeadsError {
    HeadsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn checkpoint_text(decoder: &TrainedDecoder) -> String {
    let mut out = String::new();
    let first = &decoder.models[0];
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "mode {}", decoder.mode);
    let _ = writeln!(
        out,
        "config {}",
        serde_json::to_string(&first.config).expect("config serializes")
    );
    let _ = writeln!(out, "vocab {}", first.vocab.len());
    for tok in first.vocab.tokens() {
        let _ = writeln!(out, "{tok}");
    }
    let emb = Tensor {
        name: "embeddings".into(),
        shape: vec![first.embeddings.len(), first.embeddings.dim()],
        data: first.embeddings.as_slice().to_vec(),
    };
    emb.write_text(&mut out);
    let _ = writeln!(out, "models {}", decoder.models.len());
    for (k, model) in decoder.models.iter().enumerate() {
        let _ = writeln!(out, "model {k} {}", model.head_names().join(" "));
        let history = decoder.epoch_losses.get(k).cloned().unwrap_or_default();
        Tensor {
            name: "history".into(),
            shape: vec![history.len()],
            data: history,
        }
        .write_text(&mut out);
        for t in model.params.tensors() {
            t.write_text(&mut out);
        }
    }
    out.push_str("end\n");
    out
}

pub fn save_checkpoint(decoder: &TrainedDecoder, path: impl AsRef<Path>) -> Result<(), HeadsError> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_text(decoder)).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedDecoder, HeadsError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_checkpoint(&text)
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str), HeadsError> {
        let (i, l) = self
            .inner
            .next()
            .ok_or_else(|| HeadsError::Checkpoint(format!("unexpected end of file after line {}", self.last)))?;
        self.last = i + 1;
        Ok((i + 1, l))
    }

    fn keyword(&mut self, key: &str) -> Result<(usize, &'a str), HeadsError> {
        let (n, l) = self.next()?;
        match l.strip_prefix(key).and_then(|r| r.strip_prefix(' ').or(if r.is_empty() { Some("") } else { None })) {
            Some(rest) => Ok((n, rest)),
            None => Err(HeadsError::Checkpoint(format!("line {n}: expected {key:?}, found {l:?}"))),
        }
    }

    fn tensor(&mut self, name: &str, shape: &[usize]) -> Result<Tensor, HeadsError> {
        let (n, header) = self.next()?;
        let (_, values) = self.next()?;
        let t = Tensor::parse_text(header, values, n)?;
        if t.name != name {
            return Err(HeadsError::Checkpoint(format!(
                "line {n}: expected tensor {name}, found {}",
                t.name
            )));
        }
        t.expect_shape(shape)?;
        Ok(t)
    }
}

pub fn parse_checkpoint(text: &str) -> Result<TrainedDecoder, HeadsError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, version) = lines.keyword(MAGIC)?;
    if version.trim() != VERSION.to_string() {
        return Err(HeadsError::Checkpoint(format!("unsupported version {version:?}")));
    }
    let (n, mode) = lines.keyword("mode")?;
    let mode = match mode {
        "joint" => TrainMode::Joint,
        "independent" => TrainMode::Independent,
        other => return Err(HeadsError::Checkpoint(format!("line {n}: unknown mode {other:?}"))),
    };
    let (n, config) = lines.keyword("config")?;
    let config: ModelConfig =
        serde_json::from_str(config).map_err(|e| HeadsError::Checkpoint(format!("line {n}: {e}")))?;
    let (n, vocab_len) = lines.keyword("vocab")?;
    let vocab_len: usize = vocab_len
        .parse()
        .map_err(|e| HeadsError::Checkpoint(format!("line {n}: {e}")))?;
    let mut tokens = Vec::with_capacity(vocab_len);
    for _ in 0..vocab_len {
        tokens.push(lines.next()?.1.to_string());
    }
    let vocab = Arc::new(
        Vocabulary::from_text(&tokens.join("\n")).map_err(|e| HeadsError::Checkpoint(e.to_string()))?,
    );
    let (n, header) = lines.next()?;
    let (_, values) = lines.next()?;
    let emb = Tensor::parse_text(header, values, n)?;
    if emb.name != "embeddings" || emb.shape.len() != 2 || emb.shape[0] != vocab_len {
        return Err(HeadsError::Checkpoint(format!("line {n}: malformed embedding tensor")));
    }
    let dim = emb.shape[1];
    let embeddings = Arc::new(EmbeddingTable::new(dim, emb.data).map_err(|e| HeadsError::Checkpoint(e.to_string()))?);

    let (n, count) = lines.keyword("models")?;
    let count: usize = count
        .parse()
        .map_err(|e| HeadsError::Checkpoint(format!("line {n}: {e}")))?;
    let mut models = Vec::with_capacity(count);
    let mut epoch_losses = Vec::with_capacity(count);
    for k in 0..count {
        let (n, rest) = lines.keyword("model")?;
        let mut parts = rest.split_whitespace();
        if parts.next() != Some(k.to_string().as_str()) {
            return Err(HeadsError::Checkpoint(format!("line {n}: expected model {k}")));
        }
        let heads: Vec<String> = parts.map(str::to_string).collect();
        let (hn, hheader) = lines.next()?;
        let (_, hvalues) = lines.next()?;
        let history = Tensor::parse_text(hheader, hvalues, hn)?;
        if history.name != "history" {
            return Err(HeadsError::Checkpoint(format!("line {hn}: expected history tensor")));
        }
        let mut params = ModelParams {
            encoder: Encoder::zeros(&config.encoder, dim),
            heads: heads
                .iter()
                .map(|h| HeadWeights::zeros(h, config.encoder.hidden_dim, config.head_bias))
                .collect(),
        };
        for slot in params.tensors_mut() {
            let t = lines.tensor(&slot.name, &slot.shape)?;
            *slot = t;
        }
        models.push(DecoderModel {
            config: config.clone(),
            vocab: vocab.clone(),
            embeddings: embeddings.clone(),
            params,
        });
        epoch_losses.push(history.data);
    }
    lines.keyword("end")?;
    if models.is_empty() {
        return Err(HeadsError::Checkpoint("no models".into()));
    }
    Ok(TrainedDecoder {
        mode,
        models,
        epoch_losses,
    })
}

/// Hidden vectors keyed by turn id.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSet {
    pub hidden_dim: usize,
    pub ids: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
}

impl HiddenSet {
    pub fn from_pairs(hidden_dim: usize, pairs: Vec<(String, Vec<f64>)>) -> Self {
        let (ids, vectors) = pairs.into_iter().unzip();
        HiddenSet {
            hidden_dim,
            ids,
            vectors,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("hidden_dim {}\n", self.hidden_dim);
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            out.push_str(id);
            for x in v {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, HeadsError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| HeadsError::Checkpoint("empty hidden file".into()))?;
        let hidden_dim: usize = header
            .strip_prefix("hidden_dim ")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| HeadsError::Checkpoint(format!("line 1: bad hidden header {header:?}")))?;
        let mut ids = Vec::new();
        let mut vectors = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let id = parts.next().expect("non-empty line").to_string();
            let v = parts
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| HeadsError::Checkpoint(format!("line {}: {e}", i + 1)))?;
            if v.len() != hidden_dim || v.iter().any(|x| !x.is_finite()) {
                return Err(HeadsError::Checkpoint(format!(
                    "line {}: expected {hidden_dim} finite values",
                    i + 1
                )));
            }
            ids.push(id);
            vectors.push(v);
        }
        Ok(HiddenSet {
            hidden_dim,
            ids,
            vectors,
        })
    }
}

pub fn write_hidden(set: &HiddenSet, path: impl AsRef<Path>) -> Result<(), HeadsError> {
    let path = path.as_ref();
    std::fs::write(path, set.to_text()).map_err(|e| io_err(path, e))
}

pub fn read_hidden(path: impl AsRef<Path>) -> Result<HiddenSet, HeadsError> {
    let path = path.as_ref();
    HiddenSet::from_text(&std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}
