//! Shared hidden representation `h = tanh(W_conv·sent + W_ctx·ctxt)`.
//!
//! `sent` comes from a one-layer convolution over each N-best hypothesis,
//! max-pooled over time and averaged across hypotheses. `ctxt` is the final
//! state of a four-gate recurrent cell run over the last `window` system
//! acts (or the plain mean of the act vectors in [`ContextMode::MeanOfActs`]).
//!
//! Every forward pass has a cached variant and a matching backward pass used
//! by supervised training. Word vectors are static and receive no gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{EmbeddingTable, Hypothesis, Turn, Vocabulary, PAD_INDEX};
use crate::tensor::{dot, sigmoid, Tensor};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

/// How per-hypothesis sentence encodings are pooled across the N-best list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NbestPooling {
    /// Encode each hypothesis, average with normalized confidences.
    Weighted,
    /// Encode each hypothesis, plain average.
    Uniform,
    /// Concatenate hypotheses (padding-separated) and encode once.
    Concatenate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    Recurrent,
    MeanOfActs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub widths: Vec<usize>,
    pub maps: usize,
    pub context_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
    pub pooling: NbestPooling,
    pub context_mode: ContextMode,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            widths: vec![3, 4, 5],
            maps: 100,
            context_dim: 100,
            hidden_dim: 100,
            window: 4,
            pooling: NbestPooling::Weighted,
            context_mode: ContextMode::Recurrent,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(EncoderError::Config("filter widths must be positive and non-empty".into()));
        }
        if self.maps == 0 || self.hidden_dim == 0 || self.context_dim == 0 {
            return Err(EncoderError::Config("maps, context_dim and hidden_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn sentence_dim(&self) -> usize {
        self.widths.len() * self.maps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEncoderParams {
    pub widths: Vec<usize>,
    pub maps: usize,
    pub dim: usize,
    pub pooling: NbestPooling,
    /// Per width: `maps × (width·dim)`.
    pub filters: Vec<Tensor>,
    /// Per width: `maps`.
    pub biases: Vec<Tensor>,
}

impl SentenceEncoderParams {
    pub fn zeros(widths: &[usize], maps: usize, dim: usize, pooling: NbestPooling) -> Self {
        SentenceEncoderParams {
            widths: widths.to_vec(),
            maps,
            dim,
            pooling,
            filters: widths
                .iter()
                .map(|&w| Tensor::zeros(format!("conv.filter.w{w}"), &[maps, w * dim]))
                .collect(),
            biases: widths
                .iter()
                .map(|&w| Tensor::zeros(format!("conv.bias.w{w}"), &[maps]))
                .collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.widths.len() * self.maps
    }

    fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoderParams {
    pub mode: ContextMode,
    pub input_dim: usize,
    pub state_dim: usize,
    /// Gate blocks stacked as `[input; forget; output; candidate]`, `4S × d`.
    pub w_input: Tensor,
    /// `4S × S`.
    pub w_recurrent: Tensor,
    /// `4S`.
    pub bias: Tensor,
}

impl ContextEncoderParams {
    pub fn zeros(mode: ContextMode, input_dim: usize, state_dim: usize) -> Self {
        let (s, d) = match mode {
            ContextMode::Recurrent => (state_dim, input_dim),
            ContextMode::MeanOfActs => (0, 0),
        };
        ContextEncoderParams {
            mode,
            input_dim,
            state_dim: match mode {
                ContextMode::Recurrent => state_dim,
                ContextMode::MeanOfActs => input_dim,
            },
            w_input: Tensor::zeros("ctx.w_input", &[4 * s, d]),
            w_recurrent: Tensor::zeros("ctx.w_recurrent", &[4 * s, s]),
            bias: Tensor::zeros("ctx.bias", &[4 * s]),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.state_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinerParams {
    pub hidden_dim: usize,
    /// `hidden × sent_dim`.
    pub w_conv: Tensor,
    /// `hidden × ctxt_dim`.
    pub w_context: Tensor,
}

impl CombinerParams {
    pub fn zeros(hidden_dim: usize, sent_dim: usize, ctxt_dim: usize) -> Self {
        CombinerParams {
            hidden_dim,
            w_conv: Tensor::zeros("comb.w_conv", &[hidden_dim, sent_dim]),
            w_context: Tensor::zeros("comb.w_context", &[hidden_dim, ctxt_dim]),
        }
    }
}

/// All trainable encoder parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub window: usize,
    pub sentence: SentenceEncoderParams,
    pub context: ContextEncoderParams,
    pub combiner: CombinerParams,
}

impl Encoder {
    pub fn zeros(config: &EncoderConfig, emb_dim: usize) -> Self {
        let sentence = SentenceEncoderParams::zeros(&config.widths, config.maps, emb_dim, config.pooling);
        let context = ContextEncoderParams::zeros(config.context_mode, emb_dim, config.context_dim);
        let combiner = CombinerParams::zeros(config.hidden_dim, sentence.out_dim(), context.out_dim());
        Encoder {
            window: config.window,
            sentence,
            context,
            combiner,
        }
    }

    /// Uniform `[-scale, scale]` initialization of every tensor.
    pub fn init_uniform<R: Rng>(config: &EncoderConfig, emb_dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut enc = Encoder::zeros(config, emb_dim);
        for t in enc.tensors_mut() {
            for v in &mut t.data {
                *v = rng.random_range(-scale..=scale);
            }
        }
        enc
    }

    pub fn hidden_dim(&self) -> usize {
        self.combiner.hidden_dim
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::new();
        out.extend(self.sentence.filters.iter());
        out.extend(self.sentence.biases.iter());
        out.push(&self.context.w_input);
        out.push(&self.context.w_recurrent);
        out.push(&self.context.bias);
        out.push(&self.combiner.w_conv);
        out.push(&self.combiner.w_context);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.sentence.filters.iter_mut());
        out.extend(self.sentence.biases.iter_mut());
        out.push(&mut self.context.w_input);
        out.push(&mut self.context.w_recurrent);
        out.push(&mut self.context.bias);
        out.push(&mut self.combiner.w_conv);
        out.push(&mut self.combiner.w_context);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        z
    }

    /// `h` for one turn, no caching.
    pub fn hidden(&self, input: &TurnInput, emb: &EmbeddingTable) -> Vec<f64> {
        self.forward(input, emb).0
    }

    pub(crate) fn forward(&self, input: &TurnInput, emb: &EmbeddingTable) -> (Vec<f64>, EncoderCache) {
        let (sent, sent_cache) = sentence_forward(&input.hyps, emb, &self.sentence);
        let (ctxt, ctx_cache) = context_forward(&input.acts, emb, &self.context, self.window);
        let mut z = self.combiner.w_conv.matvec(&sent);
        for (zi, ci) in z.iter_mut().zip(self.combiner.w_context.matvec(&ctxt)) {
            *zi += ci;
        }
        let h: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
        (
            h.clone(),
            EncoderCache {
                sent,
                ctxt,
                h,
                sent_cache,
                ctx_cache,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` given `dL/dh`.
    pub(crate) fn backward(&self, cache: &EncoderCache, grad_h: &[f64], grads: &mut Encoder) {
        let dz: Vec<f64> = grad_h
            .iter()
            .zip(&cache.h)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        grads.combiner.w_conv.outer_acc(&dz, &cache.sent);
        grads.combiner.w_context.outer_acc(&dz, &cache.ctxt);
        let mut d_sent = vec![0.0; cache.sent.len()];
        self.combiner.w_conv.matvec_t_acc(&dz, &mut d_sent);
        let mut d_ctxt = vec![0.0; cache.ctxt.len()];
        self.combiner.w_context.matvec_t_acc(&dz, &mut d_ctxt);
        sentence_backward(&cache.sent_cache, &d_sent, &self.sentence, &mut grads.sentence);
        context_backward(&cache.ctx_cache, &d_ctxt, &self.context, &mut grads.context);
    }
}

/// Token indices for one turn, resolved against a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnInput {
    pub hyps: Vec<(Vec<usize>, f64)>,
    pub acts: Vec<Vec<usize>>,
}

impl TurnInput {
    pub fn new(turn: &Turn, vocab: &Vocabulary) -> Self {
        TurnInput {
            hyps: turn
                .nbest
                .iter()
                .map(|h| (h.tokens.iter().map(|t| vocab.lookup(t)).collect(), h.score))
                .collect(),
            acts: turn
                .context_acts
                .iter()
                .map(|a| a.iter().map(|t| vocab.lookup(t)).collect())
                .collect(),
        }
    }
}

pub(crate) struct EncoderCache {
    sent: Vec<f64>,
    ctxt: Vec<f64>,
    pub(crate) h: Vec<f64>,
    sent_cache: SentenceCache,
    ctx_cache: ContextCache,
}

struct SequenceCache {
    /// Gathered embeddings, `len × dim`.
    x: Vec<f64>,
    /// Argmax window start per (width, map), flattened width-major.
    argmax: Vec<usize>,
    weight: f64,
}

struct SentenceCache {
    seqs: Vec<SequenceCache>,
}

fn gather(tokens: &[usize], min_len: usize, emb: &EmbeddingTable) -> Vec<f64> {
    let d = emb.dim();
    let len = tokens.len().max(min_len).max(1);
    let mut x = vec![0.0; len * d];
    for (p, &tok) in tokens.iter().enumerate() {
        if tok != PAD_INDEX {
            x[p * d..(p + 1) * d].copy_from_slice(emb.vector(tok));
        }
    }
    x
}

fn pooling_weights(hyps: &[(Vec<usize>, f64)], pooling: NbestPooling) -> Vec<f64> {
    let n = hyps.len() as f64;
    let total: f64 = hyps.iter().map(|h| h.1).sum();
    match pooling {
        NbestPooling::Weighted if total > 0.0 => hyps.iter().map(|h| h.1 / total).collect(),
        _ => vec![1.0 / n; hyps.len()],
    }
}

fn sentence_forward(
    hyps: &[(Vec<usize>, f64)],
    emb: &EmbeddingTable,
    params: &SentenceEncoderParams,
) -> (Vec<f64>, SentenceCache) {
    let d = params.dim;
    let min_len = params.max_width();
    let sequences: Vec<(Vec<usize>, f64)> = match params.pooling {
        NbestPooling::Concatenate => {
            let mut joined = Vec::new();
            for (k, (toks, _)) in hyps.iter().enumerate() {
                if k > 0 {
                    joined.push(PAD_INDEX);
                }
                joined.extend_from_slice(toks);
            }
            vec![(joined, 1.0)]
        }
        pooling => {
            // Repeated hypotheses share one encoding with their weights summed.
            let mut merged: Vec<(Vec<usize>, f64)> = Vec::with_capacity(hyps.len());
            for (h, w) in hyps.iter().zip(pooling_weights(hyps, pooling)) {
                match merged.iter_mut().find(|(t, _)| *t == h.0) {
                    Some(m) => m.1 += w,
                    None => merged.push((h.0.clone(), w)),
                }
            }
            merged
        }
    };
    let mut out = vec![0.0; params.out_dim()];
    let mut seqs = Vec::with_capacity(sequences.len());
    for (tokens, weight) in sequences {
        let x = gather(&tokens, min_len, emb);
        let len = x.len() / d;
        let mut argmax = Vec::with_capacity(params.out_dim());
        for (wi, &w) in params.widths.iter().enumerate() {
            let filt = &params.filters[wi];
            let bias = &params.biases[wi];
            for j in 0..params.maps {
                let row = filt.row(j);
                let mut best = f64::NEG_INFINITY;
                let mut best_p = 0;
                for p in 0..=(len - w) {
                    let v = dot(row, &x[p * d..(p + w) * d]);
                    if v > best {
                        best = v;
                        best_p = p;
                    }
                }
                out[wi * params.maps + j] += weight * (best + bias.data[j]);
                argmax.push(best_p);
            }
        }
        seqs.push(SequenceCache { x, argmax, weight });
    }
    (out, SentenceCache { seqs })
}

fn sentence_backward(
    cache: &SentenceCache,
    grad: &[f64],
    params: &SentenceEncoderParams,
    grads: &mut SentenceEncoderParams,
) {
    let d = params.dim;
    for seq in &cache.seqs {
        for (wi, &w) in params.widths.iter().enumerate() {
            for j in 0..params.maps {
                let k = wi * params.maps + j;
                let g = seq.weight * grad[k];
                if g == 0.0 {
                    continue;
                }
                let p = seq.argmax[k];
                grads.biases[wi].data[j] += g;
                for (dw, xv) in grads.filters[wi].row_mut(j).iter_mut().zip(&seq.x[p * d..(p + w) * d]) {
                    *dw += g * xv;
                }
            }
        }
    }
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i; f; o; g]`.
    gates: Vec<f64>,
    c: Vec<f64>,
}

struct ContextCache {
    steps: Vec<StepCache>,
}

fn act_vectors(acts: &[Vec<usize>], emb: &EmbeddingTable, window: usize) -> Vec<Vec<f64>> {
    let d = emb.dim();
    let start = acts.len().saturating_sub(window);
    acts[start..]
        .iter()
        .map(|act| {
            let mut v = vec![0.0; d];
            if !act.is_empty() {
                for &tok in act {
                    for (a, b) in v.iter_mut().zip(emb.vector(tok)) {
                        *a += b;
                    }
                }
                let n = act.len() as f64;
                v.iter_mut().for_each(|a| *a /= n);
            }
            v
        })
        .collect()
}

fn context_forward(
    acts: &[Vec<usize>],
    emb: &EmbeddingTable,
    params: &ContextEncoderParams,
    window: usize,
) -> (Vec<f64>, ContextCache) {
    let xs = act_vectors(acts, emb, window);
    if params.mode == ContextMode::MeanOfActs {
        let mut mean = vec![0.0; params.state_dim];
        if !xs.is_empty() {
            for x in &xs {
                for (m, v) in mean.iter_mut().zip(x) {
                    *m += v;
                }
            }
            let n = xs.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        return (mean, ContextCache { steps: Vec::new() });
    }
    let s = params.state_dim;
    let mut h = vec![0.0; s];
    let mut c = vec![0.0; s];
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let mut z = params.w_input.matvec(&x);
        for (zi, (ri, bi)) in z
            .iter_mut()
            .zip(params.w_recurrent.matvec(&h).into_iter().zip(&params.bias.data))
        {
            *zi += ri + bi;
        }
        let mut gates = z;
        for v in &mut gates[..3 * s] {
            *v = sigmoid(*v);
        }
        for v in &mut gates[3 * s..] {
            *v = v.tanh();
        }
        let mut c_new = vec![0.0; s];
        let mut h_new = vec![0.0; s];
        for k in 0..s {
            let (i, f, o, g) = (gates[k], gates[s + k], gates[2 * s + k], gates[3 * s + k]);
            c_new[k] = f * c[k] + i * g;
            h_new[k] = o * c_new[k].tanh();
        }
        steps.push(StepCache {
            x,
            h_prev: std::mem::replace(&mut h, h_new),
            c_prev: std::mem::replace(&mut c, c_new.clone()),
            gates,
            c: c_new,
        });
    }
    (h, ContextCache { steps })
}

fn context_backward(
    cache: &ContextCache,
    grad: &[f64],
    params: &ContextEncoderParams,
    grads: &mut ContextEncoderParams,
) {
    if params.mode == ContextMode::MeanOfActs || cache.steps.is_empty() {
        return;
    }
    let s = params.state_dim;
    let mut dh = grad.to_vec();
    let mut dc = vec![0.0; s];
    let mut dz = vec![0.0; 4 * s];
    for step in cache.steps.iter().rev() {
        for k in 0..s {
            let (i, f, o, g) = (
                step.gates[k],
                step.gates[s + k],
                step.gates[2 * s + k],
                step.gates[3 * s + k],
            );
            let tc = step.c[k].tanh();
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * o * (1.0 - tc * tc);
            let d_i = dc[k] * g;
            let d_g = dc[k] * i;
            let d_f = dc[k] * step.c_prev[k];
            dz[k] = d_i * i * (1.0 - i);
            dz[s + k] = d_f * f * (1.0 - f);
            dz[2 * s + k] = d_o * o * (1.0 - o);
            dz[3 * s + k] = d_g * (1.0 - g * g);
            dc[k] *= f;
        }
        grads.w_input.outer_acc(&dz, &step.x);
        grads.w_recurrent.outer_acc(&dz, &step.h_prev);
        for (b, g) in grads.bias.data.iter_mut().zip(&dz) {
            *b += g;
        }
        dh.iter_mut().for_each(|v| *v = 0.0);
        params.w_recurrent.matvec_t_acc(&dz, &mut dh);
    }
}

/// Sentence encoding of an N-best list.
pub fn encode_sentence(
    nbest: &[Hypothesis],
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
    params: &SentenceEncoderParams,
) -> Result<Vec<f64>, EncoderError> {
    if nbest.is_empty() {
        return Err(EncoderError::Shape("empty n-best list".into()));
    }
    if embeddings.dim() != params.dim {
        return Err(EncoderError::Shape(format!(
            "embedding dim {} vs filter dim {}",
            embeddings.dim(),
            params.dim
        )));
    }
    let hyps: Vec<(Vec<usize>, f64)> = nbest
        .iter()
        .map(|h| (h.tokens.iter().map(|t| vocab.lookup(t)).collect(), h.score))
        .collect();
    Ok(sentence_forward(&hyps, embeddings, params).0)
}

/// Context encoding of the last `window` system acts (oldest first).
pub fn encode_context(
    context_acts: &[Vec<String>],
    vocab: &Vocabulary,
    embeddings: &EmbeddingTable,
    params: &ContextEncoderParams,
    window: usize,
) -> Vec<f64> {
    let acts: Vec<Vec<usize>> = context_acts
        .iter()
        .map(|a| a.iter().map(|t| vocab.lookup(t)).collect())
        .collect();
    context_forward(&acts, embeddings, params, window).0
}

/// `h = tanh(W_conv·sent + W_ctx·ctxt)`.
pub fn combine(sent: &[f64], ctxt: &[f64], params: &CombinerParams) -> Result<Vec<f64>, EncoderError> {
    if params.w_conv.cols() != sent.len() || params.w_context.cols() != ctxt.len() {
        return Err(EncoderError::Shape(format!(
            "combiner expects sent {} / ctxt {}, got {} / {}",
            params.w_conv.cols(),
            params.w_context.cols(),
            sent.len(),
            ctxt.len()
        )));
    }
    let a = params.w_conv.matvec(sent);
    let b = params.w_context.matvec(ctxt);
    Ok(a.iter().zip(&b).map(|(x, y)| (x + y).tanh()).collect())
}
