use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::train::batch_loss;
use super::DecoderModel;
use crate::corpus::Turn;
use crate::encoder::TurnInput;

/// Coordinates compared per tensor (all of them when the tensor is smaller).
pub const COORDS_PER_TENSOR: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradientReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }
}

/// Compares the analytic gradient of the joint loss over `batch` with central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, dropout off. Relative error is
/// `|ga − gn| / max(|ga|, |gn|, 1e-8)`.
pub fn gradient_check(model: &DecoderModel, batch: &[Turn], epsilon: f64) -> GradientReport {
    let names = model.head_names();
    let inputs: Vec<TurnInput> = batch.iter().map(|t| TurnInput::new(t, &model.vocab)).collect();
    let targets: Vec<Vec<bool>> = batch
        .iter()
        .map(|t| names.iter().map(|h| t.target(h)).collect())
        .collect();
    let pairs: Vec<(&TurnInput, &[bool])> = inputs.iter().zip(&targets).map(|(i, t)| (i, t.as_slice())).collect();

    let mut grads = model.params.zeros_like();
    batch_loss(&model.params, &model.embeddings, &pairs, None, Some(&mut grads));
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.data.clone()).collect();

    let mut params = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let count = params.tensors().len();
    let mut report = Vec::with_capacity(count);
    for k in 0..count {
        let (name, len) = {
            let t = &params.tensors()[k];
            (t.name.clone(), t.len())
        };
        let coords: Vec<usize> = if len <= COORDS_PER_TENSOR {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let orig = params.tensors()[k].data[i];
            params.tensors_mut()[k].data[i] = orig + epsilon;
            let plus = batch_loss(&params, &model.embeddings, &pairs, None, None);
            params.tensors_mut()[k].data[i] = orig - epsilon;
            let minus = batch_loss(&params, &model.embeddings, &pairs, None, None);
            params.tensors_mut()[k].data[i] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let ga = analytic[k][i];
            let denom = ga.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((ga - numeric).abs() / denom);
        }
        report.push(TensorCheck {
            name,
            checked: coords.len(),
            max_rel_error: worst,
        });
    }
    GradientReport { tensors: report }
}
