use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax2, DecoderModel, HeadsError, ModelConfig, ModelParams};
use crate::corpus::{Corpus, EmbeddingTable, Turn, Vocabulary};
use crate::encoder::TurnInput;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// One shared encoder, every head trained from the summed loss.
    Joint,
    /// One full model per head, each trained on its own head's loss.
    Independent,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Joint => "joint",
            TrainMode::Independent => "independent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Inverted-dropout rate on `h`, training only.
    pub dropout: f64,
    /// Adadelta decay.
    pub rho: f64,
    /// Adadelta stabilizer.
    pub epsilon: f64,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 25,
            batch_size: 50,
            dropout: 0.5,
            rho: 0.95,
            epsilon: 1e-6,
            seed: 0,
            mode: TrainMode::Joint,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HeadsError> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(HeadsError::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.batch_size == 0 {
            return Err(HeadsError::Config("batch_size must be at least 1".into()));
        }
        if !(self.rho > 0.0 && self.rho < 1.0) || self.epsilon <= 0.0 {
            return Err(HeadsError::Config("adadelta needs rho in (0,1) and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Result of supervised training: one model (joint) or one per head
/// (independent), with the mean training loss of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDecoder {
    pub mode: TrainMode,
    pub models: Vec<DecoderModel>,
    pub epoch_losses: Vec<Vec<f64>>,
}

impl TrainedDecoder {
    /// Model carrying `head`, and the head's index in it.
    pub fn locate(&self, head: &str) -> Result<(&DecoderModel, usize), HeadsError> {
        for m in &self.models {
            if let Ok(i) = m.head_index(head) {
                return Ok((m, i));
            }
        }
        Err(HeadsError::UnknownHead(head.to_string()))
    }

    pub fn head_names(&self) -> Vec<String> {
        self.models
            .iter()
            .flat_map(|m| m.head_names().into_iter().map(str::to_string))
            .collect()
    }

    pub fn replace_head(&mut self, head: super::HeadWeights) -> Result<(), HeadsError> {
        for m in &mut self.models {
            if m.head_index(&head.name).is_ok() {
                *m = m.with_head(head)?;
                return Ok(());
            }
        }
        Err(HeadsError::UnknownHead(head.name))
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains every head of `corpus` in the configured mode.
pub fn train(
    corpus: &Corpus,
    vocab: Arc<Vocabulary>,
    embeddings: Arc<EmbeddingTable>,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<TrainedDecoder, HeadsError> {
    train_heads(corpus, vocab, embeddings, model_config, config, &corpus.heads)
}

/// [`train`] restricted to a subset of heads.
pub fn train_heads(
    corpus: &Corpus,
    vocab: Arc<Vocabulary>,
    embeddings: Arc<EmbeddingTable>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    heads: &[String],
) -> Result<TrainedDecoder, HeadsError> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(HeadsError::Config("empty training corpus".into()));
    }
    let groups: Vec<Vec<String>> = match config.mode {
        TrainMode::Joint => vec![heads.to_vec()],
        TrainMode::Independent => heads.iter().map(|h| vec![h.clone()]).collect(),
    };
    let inputs: Vec<TurnInput> = corpus.turns.iter().map(|t| TurnInput::new(t, &vocab)).collect();
    let mut models = Vec::with_capacity(groups.len());
    let mut epoch_losses = Vec::with_capacity(groups.len());
    for (m, group) in groups.iter().enumerate() {
        let base = 3 * m as u64;
        let mut init_rng = stream_rng(config.seed, base);
        let mut model = DecoderModel::init(model_config, vocab.clone(), embeddings.clone(), group, &mut init_rng)?;
        let targets: Vec<Vec<bool>> = corpus
            .turns
            .iter()
            .map(|t| group.iter().map(|h| t.target(h)).collect())
            .collect();
        let losses = fit(&mut model, &inputs, &targets, config, base)?;
        models.push(model);
        epoch_losses.push(losses);
    }
    Ok(TrainedDecoder {
        mode: config.mode,
        models,
        epoch_losses,
    })
}

struct Adadelta {
    rho: f64,
    eps: f64,
    sq_grad: Vec<Vec<f64>>,
    sq_step: Vec<Vec<f64>>,
}

impl Adadelta {
    fn new(params: &ModelParams, rho: f64, eps: f64) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Adadelta {
            rho,
            eps,
            sq_grad: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            sq_step: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let rho = self.rho;
        let eps = self.eps;
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads.tensors()).enumerate() {
            let eg = &mut self.sq_grad[k];
            let ex = &mut self.sq_step[k];
            for i in 0..p.data.len() {
                let gi = g.data[i];
                eg[i] = rho * eg[i] + (1.0 - rho) * gi * gi;
                let dx = -((ex[i] + eps).sqrt() / (eg[i] + eps).sqrt()) * gi;
                ex[i] = rho * ex[i] + (1.0 - rho) * dx * dx;
                p.data[i] += dx;
            }
        }
    }
}

fn fit(
    model: &mut DecoderModel,
    inputs: &[TurnInput],
    targets: &[Vec<bool>],
    config: &TrainConfig,
    stream_base: u64,
) -> Result<Vec<f64>, HeadsError> {
    let mut shuffle_rng = stream_rng(config.seed, stream_base + 1);
    let mut dropout_rng = stream_rng(config.seed, stream_base + 2);
    let mut opt = Adadelta::new(&model.params, config.rho, config.epsilon);
    let mut grads = model.params.zeros_like();
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            grads.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
            let batch: Vec<(&TurnInput, &[bool])> =
                chunk.iter().map(|&i| (&inputs[i], targets[i].as_slice())).collect();
            let loss = batch_loss(
                &model.params,
                &model.embeddings,
                &batch,
                Some((config.dropout, &mut dropout_rng)),
                Some(&mut grads),
            );
            if !loss.is_finite() || grads.tensors().iter().any(|t| !t.is_finite()) {
                return Err(HeadsError::Divergence {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut model.params, &grads);
        }
        losses.push(total / inputs.len() as f64);
    }
    Ok(losses)
}

/// Mean over turns of `Σ_heads −log P(Y = label)`. When `grads` is given,
/// the gradient of that mean is accumulated into it.
pub(crate) fn batch_loss(
    params: &ModelParams,
    embeddings: &EmbeddingTable,
    batch: &[(&TurnInput, &[bool])],
    mut dropout: Option<(f64, &mut ChaCha8Rng)>,
    mut grads: Option<&mut ModelParams>,
) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let scale = 1.0 / batch.len() as f64;
    let hidden = params.encoder.hidden_dim();
    let mut total = 0.0;
    for (input, targets) in batch {
        let (h, cache) = params.encoder.forward(input, embeddings);
        let mask: Option<Vec<f64>> = match dropout.as_mut() {
            Some((rate, rng)) if *rate > 0.0 => {
                let keep = 1.0 / (1.0 - *rate);
                Some((0..hidden).map(|_| if rng.random_bool(*rate) { 0.0 } else { keep }).collect())
            }
            _ => None,
        };
        let hd: Vec<f64> = match &mask {
            Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => h.clone(),
        };
        let mut d_hd = vec![0.0; hidden];
        for (k, head) in params.heads.iter().enumerate() {
            let (b0, b1) = head.bias.as_ref().map_or((0.0, 0.0), |b| (b.data[0], b.data[1]));
            let a0 = crate::tensor::dot(head.weights.row(0), &hd) + b0;
            let a1 = crate::tensor::dot(head.weights.row(1), &hd) + b1;
            let y = targets[k];
            let (ay, ao) = if y { (a1, a0) } else { (a0, a1) };
            // −log softmax_y = log(1 + e^{a_other − a_y})
            let diff = ao - ay;
            total += if diff > 0.0 { diff + (-diff).exp().ln_1p() } else { diff.exp().ln_1p() };
            if let Some(g) = grads.as_deref_mut() {
                let (p0, p1) = softmax2(a0, a1);
                let d0 = scale * (p0 - if y { 0.0 } else { 1.0 });
                let d1 = scale * (p1 - if y { 1.0 } else { 0.0 });
                let gh = &mut g.heads[k];
                accumulate_row(&mut gh.weights, 0, d0, &hd);
                accumulate_row(&mut gh.weights, 1, d1, &hd);
                if let Some(gb) = gh.bias.as_mut() {
                    gb.data[0] += d0;
                    gb.data[1] += d1;
                }
                for ((d, w0), w1) in d_hd.iter_mut().zip(head.weights.row(0)).zip(head.weights.row(1)) {
                    *d += d0 * w0 + d1 * w1;
                }
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            if let Some(m) = &mask {
                d_hd.iter_mut().zip(m).for_each(|(d, k)| *d *= k);
            }
            params.encoder.backward(&cache, &d_hd, &mut g.encoder);
        }
    }
    total * scale
}

fn accumulate_row(t: &mut Tensor, row: usize, coef: f64, x: &[f64]) {
    for (w, xv) in t.row_mut(row).iter_mut().zip(x) {
        *w += coef * xv;
    }
}

/// Mean per-turn joint loss of `turns` under `model`, dropout off.
/// Unannotated heads count as absent.
pub fn joint_loss(turns: &[Turn], model: &DecoderModel) -> f64 {
    let inputs: Vec<TurnInput> = turns.iter().map(|t| TurnInput::new(t, &model.vocab)).collect();
    let names = model.head_names();
    let targets: Vec<Vec<bool>> = turns
        .iter()
        .map(|t| names.iter().map(|h| t.target(h)).collect())
        .collect();
    let batch: Vec<(&TurnInput, &[bool])> = inputs.iter().zip(&targets).map(|(i, t)| (i, t.as_slice())).collect();
    batch_loss(&model.params, &model.embeddings, &batch, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_synthetic, HeadSpec, Hypothesis, Split, SynthConfig};
    use crate::encoder::EncoderConfig;
    use std::collections::BTreeMap;

    fn small_model_config() -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                widths: vec![2, 3],
                maps: 4,
                context_dim: 4,
                hidden_dim: 6,
                ..EncoderConfig::default()
            },
            ..ModelConfig::default()
        }
    }

    fn tiny_corpus(heads: &[&str]) -> Corpus {
        let mut labels = BTreeMap::new();
        labels.insert(heads[0].to_string(), true);
        Corpus {
            heads: heads.iter().map(|s| s.to_string()).collect(),
            split: Split::Train,
            turns: vec![Turn {
                id: "t".into(),
                nbest: vec![Hypothesis::new("a b", 1.0)],
                context_acts: vec![],
                labels,
            }],
        }
    }

    fn zero_model(corpus: &Corpus) -> DecoderModel {
        let vocab = Arc::new(build_vocab(corpus, 1));
        let emb = Arc::new(EmbeddingTable::random(&vocab, 3, 0));
        let mut m = DecoderModel::init(
            &small_model_config(),
            vocab,
            emb,
            &corpus.heads,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        m.params.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        m
    }

    #[test]
    fn zero_weights_give_h_ln2() {
        let c = tiny_corpus(&["a", "b", "c"]);
        let m = zero_model(&c);
        assert!((joint_loss(&c.turns, &m) - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn three_quarter_probability_loss() {
        let c = tiny_corpus(&["a"]);
        let mut m = zero_model(&c);
        // make h = tanh(1) on unit 0 through the conv bias path
        m.params.encoder.sentence.biases[0].data[0] = 1.0;
        m.params.encoder.combiner.w_conv.data[0] = 1.0;
        let h0 = 1f64.tanh();
        m.params.heads[0].weights.row_mut(1)[0] = 3f64.ln() / h0;
        assert!((joint_loss(&c.turns, &m) - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((joint_loss(&c.turns, &m) - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn confident_model_has_near_zero_loss() {
        let c = tiny_corpus(&["a"]);
        let mut m = zero_model(&c);
        m.params.encoder.sentence.biases[0].data[0] = 5.0;
        m.params.encoder.combiner.w_conv.data[0] = 1.0;
        m.params.heads[0].weights.row_mut(1)[0] = 60.0;
        assert!(joint_loss(&c.turns, &m) < 1e-20);
    }

    fn synth() -> (Corpus, Arc<Vocabulary>, Arc<EmbeddingTable>) {
        let cfg = SynthConfig {
            train_turns: 200,
            test_turns: 100,
            corruption_rate: 0.0,
            heads: vec![
                HeadSpec::new("food", 60, 20),
                HeadSpec::new("near", 2, 50),
                HeadSpec::new("american", 0, 5).with_family("food"),
            ],
            ..SynthConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let vocab = Arc::new(build_vocab(&data.train, 1));
        let emb = Arc::new(crate::corpus::synthetic_embeddings(&cfg, &vocab).unwrap());
        (data.train, vocab, emb)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (c, v, e) = synth();
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let t = train(&c, v.clone(), e.clone(), &small_model_config(), &cfg).unwrap();
        let init = DecoderModel::init(&small_model_config(), v, e, &c.heads, &mut stream_rng(5, 0)).unwrap();
        assert_eq!(t.models[0], init);
    }

    #[test]
    fn independent_mode_builds_one_model_per_head() {
        let (c, v, e) = synth();
        let cfg = TrainConfig {
            epochs: 1,
            mode: TrainMode::Independent,
            ..TrainConfig::default()
        };
        let t = train(&c, v, e, &small_model_config(), &cfg).unwrap();
        assert_eq!(t.models.len(), 3);
        assert_eq!(t.locate("near").unwrap().1, 0);
        assert_eq!(t.head_names(), c.heads);
    }

    #[test]
    fn training_is_deterministic() {
        let (c, v, e) = synth();
        let cfg = TrainConfig {
            epochs: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&c, v.clone(), e.clone(), &small_model_config(), &cfg).unwrap();
        let b = train(&c, v, e, &small_model_config(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (c, v, e) = synth();
        let cfg = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(&c, v.clone(), e.clone(), &small_model_config(), &cfg).is_err());
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train(&c, v, e, &small_model_config(), &cfg).is_err());
    }
}
