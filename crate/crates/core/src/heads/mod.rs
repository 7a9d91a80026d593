//! Binary softmax heads over the shared hidden vector, supervised training
//! (joint or independent) and gradient verification.

mod checkpoint;
mod gradcheck;
mod train;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, EmbeddingTable, Vocabulary};
use crate::encoder::{Encoder, EncoderConfig, EncoderError, TurnInput};
use crate::tensor::{dot, Tensor, TensorError};

pub use checkpoint::{
    checkpoint_text, load_checkpoint, parse_checkpoint, read_hidden, save_checkpoint, write_hidden, HiddenSet,
};
pub use gradcheck::{gradient_check, GradientReport};
pub use train::{joint_loss, train, train_heads, TrainConfig, TrainMode, TrainedDecoder};

#[derive(Debug, Error)]
pub enum HeadsError {
    #[error("non-finite hidden vector")]
    NonFiniteInput,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("unknown head {0:?}")]
    UnknownHead(String),
    #[error("training diverged at epoch {epoch}, batch {batch} (loss {loss})")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

/// Weights of one binary head: row 0 scores "absent", row 1 "present".
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    pub name: String,
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl HeadWeights {
    pub fn zeros(name: &str, hidden_dim: usize, with_bias: bool) -> Self {
        HeadWeights {
            name: name.to_string(),
            weights: Tensor::zeros(format!("head.{name}.weights"), &[2, hidden_dim]),
            bias: with_bias.then(|| Tensor::zeros(format!("head.{name}.bias"), &[2])),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `v = W₁ − W₀`; probabilities and hinge margins depend on `W` only through `v`.
    pub fn margin_vector(&self) -> Vec<f64> {
        self.weights
            .row(1)
            .iter()
            .zip(self.weights.row(0))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Replaces `W₁` with `W₀ + v`, keeping `W₀`.
    pub fn with_margin_vector(&self, v: &[f64]) -> Self {
        let mut out = self.clone();
        let w0 = self.weights.row(0).to_vec();
        for ((w1, a), b) in out.weights.row_mut(1).iter_mut().zip(&w0).zip(v) {
            *w1 = a + b;
        }
        out
    }

    pub fn bias_margin(&self) -> f64 {
        self.bias.as_ref().map_or(0.0, |b| b.data[1] - b.data[0])
    }

    /// `α₁ − α₀` for hidden vector `h`.
    pub fn margin(&self, h: &[f64]) -> f64 {
        self.logits(h).map(|(a0, a1)| a1 - a0).unwrap_or(f64::NAN)
    }

    fn logits(&self, h: &[f64]) -> Option<(f64, f64)> {
        if h.len() != self.hidden_dim() {
            return None;
        }
        let (b0, b1) = self.bias.as_ref().map_or((0.0, 0.0), |b| (b.data[0], b.data[1]));
        Some((dot(self.weights.row(0), h) + b0, dot(self.weights.row(1), h) + b1))
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        std::iter::once(&self.weights).chain(self.bias.as_ref()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        std::iter::once(&mut self.weights).chain(self.bias.as_mut()).collect()
    }
}

/// `(P(Y=0|h), P(Y=1|h))` with max-subtraction.
pub fn head_forward(h: &[f64], head: &HeadWeights) -> Result<(f64, f64), HeadsError> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(HeadsError::NonFiniteInput);
    }
    let (a0, a1) = head.logits(h).ok_or_else(|| {
        HeadsError::Dimension(format!("h has {} entries, head {} expects {}", h.len(), head.name, head.hidden_dim()))
    })?;
    Ok(softmax2(a0, a1))
}

pub(crate) fn softmax2(a0: f64, a1: f64) -> (f64, f64) {
    let m = a0.max(a1);
    let e0 = (a0 - m).exp();
    let e1 = (a1 - m).exp();
    let z = e0 + e1;
    (e0 / z, e1 / z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    /// Adds a per-class bias to every head (off by default).
    pub head_bias: bool,
    /// Half-width of the uniform initialization of non-embedding weights.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::default(),
            head_bias: false,
            init_scale: 0.05,
        }
    }
}

/// Trainable parameters: shared encoder plus one head per name.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Encoder,
    pub heads: Vec<HeadWeights>,
}

impl ModelParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.tensors();
        for h in &self.heads {
            out.extend(h.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        for h in &mut self.heads {
            out.extend(h.tensors_mut());
        }
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderModel {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub embeddings: Arc<EmbeddingTable>,
    pub params: ModelParams,
}

impl DecoderModel {
    /// Model with every non-embedding weight drawn from `U[-init_scale, init_scale]`.
    pub fn init<R: rand::Rng>(
        config: &ModelConfig,
        vocab: Arc<Vocabulary>,
        embeddings: Arc<EmbeddingTable>,
        heads: &[String],
        rng: &mut R,
    ) -> Result<Self, HeadsError> {
        config.encoder.validate()?;
        if embeddings.len() != vocab.len() {
            return Err(HeadsError::Dimension(format!(
                "{} embeddings for {} vocabulary entries",
                embeddings.len(),
                vocab.len()
            )));
        }
        let encoder = Encoder::init_uniform(&config.encoder, embeddings.dim(), config.init_scale, rng);
        let mut head_weights = Vec::with_capacity(heads.len());
        for name in heads {
            let mut hw = HeadWeights::zeros(name, config.encoder.hidden_dim, config.head_bias);
            for t in hw.tensors_mut() {
                for v in &mut t.data {
                    *v = rng.random_range(-config.init_scale..=config.init_scale);
                }
            }
            head_weights.push(hw);
        }
        let mut names = std::collections::BTreeSet::new();
        if let Some(dup) = heads.iter().find(|h| !names.insert(h.as_str())) {
            return Err(HeadsError::Config(format!("duplicate head {dup:?}")));
        }
        Ok(DecoderModel {
            config: config.clone(),
            vocab,
            embeddings,
            params: ModelParams {
                encoder,
                heads: head_weights,
            },
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.encoder.hidden_dim()
    }

    pub fn head_names(&self) -> Vec<&str> {
        self.params.heads.iter().map(|h| h.name.as_str()).collect()
    }

    pub fn head_index(&self, name: &str) -> Result<usize, HeadsError> {
        self.params
            .heads
            .iter()
            .position(|h| h.name == name)
            .ok_or_else(|| HeadsError::UnknownHead(name.to_string()))
    }

    pub fn head(&self, name: &str) -> Result<&HeadWeights, HeadsError> {
        Ok(&self.params.heads[self.head_index(name)?])
    }

    /// Copy of the model with one head's weights replaced.
    pub fn with_head(&self, head: HeadWeights) -> Result<Self, HeadsError> {
        let i = self.head_index(&head.name)?;
        if head.hidden_dim() != self.hidden_dim() {
            return Err(HeadsError::Dimension(format!(
                "head {} has width {}, model hidden_dim is {}",
                head.name,
                head.hidden_dim(),
                self.hidden_dim()
            )));
        }
        let mut out = self.clone();
        out.params.heads[i] = head;
        Ok(out)
    }

    pub fn inputs(&self, corpus: &Corpus) -> Vec<TurnInput> {
        corpus.turns.iter().map(|t| TurnInput::new(t, &self.vocab)).collect()
    }

    /// `h` for every input, dropout off.
    pub fn hidden_vectors(&self, inputs: &[TurnInput]) -> Vec<Vec<f64>> {
        inputs
            .iter()
            .map(|x| self.params.encoder.hidden(x, &self.embeddings))
            .collect()
    }
}

/// `(turn id, h)` for every turn of `corpus`, in corpus order, dropout off.
pub fn export_hidden(model: &DecoderModel, corpus: &Corpus) -> Vec<(String, Vec<f64>)> {
    let inputs = model.inputs(corpus);
    corpus
        .turns
        .iter()
        .map(|t| t.id.clone())
        .zip(model.hidden_vectors(&inputs))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(w0: &[f64], w1: &[f64]) -> HeadWeights {
        let mut h = HeadWeights::zeros("x", w0.len(), false);
        h.weights.row_mut(0).copy_from_slice(w0);
        h.weights.row_mut(1).copy_from_slice(w1);
        h
    }

    #[test]
    fn zero_weights_give_half() {
        let p = head_forward(&[0.3, -0.2], &head(&[0.0, 0.0], &[0.0, 0.0])).unwrap();
        assert_eq!(p, (0.5, 0.5));
    }

    #[test]
    fn log_three_margin_gives_three_quarters() {
        let l3 = 3f64.ln();
        let (p0, p1) = head_forward(&[1.0, 0.0], &head(&[0.0, 0.0], &[l3, 0.0])).unwrap();
        assert!((p0 - 0.25).abs() < 1e-12 && (p1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let (p0, p1) = head_forward(&[1.0], &head(&[-800.0], &[800.0])).unwrap();
        assert!(p0 >= 0.0 && p1 == 1.0);
        assert!(head_forward(&[f64::NAN], &head(&[0.0], &[0.0])).is_err());
        assert!(head_forward(&[1.0, 2.0], &head(&[0.0], &[0.0])).is_err());
    }

    #[test]
    fn margin_vector_round_trip() {
        let h = head(&[0.1, 0.2], &[0.5, -0.4]);
        let v = h.margin_vector();
        assert!((v[0] - 0.4).abs() < 1e-15 && (v[1] + 0.6).abs() < 1e-15);
        let h2 = h.with_margin_vector(&[1.0, 1.0]);
        assert_eq!(h2.weights.row(0), h.weights.row(0));
        assert!((h2.margin(&[1.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
