//! Unsupervised tuning of one head's margin vector by coordinate-wise
//! finite-difference descent on the closed-form risk of its margins.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::heads::HeadWeights;
use crate::risk::{closed_form_risk, RiskError, RiskEstimate};
use crate::scoremodel::{
    assign_components, check_priors, fit_gmm, EmConfig, MinorityClass, PriorMode, ScoreGaussians, ScoreModelError,
    MIN_FIT_SCORES,
};

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid tuning configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    ScoreModel(#[from] ScoreModelError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub delta: f64,
    pub learning_rate: f64,
    /// Number of full coordinate sweeps.
    pub max_iters: usize,
    /// Relative risk change over a sweep below which tuning stops.
    pub tol: f64,
    pub priors: (f64, f64),
    pub prior_mode: PriorMode,
    /// Reject updates that raise the risk.
    pub guard: bool,
    pub em_max_iters: usize,
    pub em_tol: f64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            delta: 1e-2,
            learning_rate: 0.1,
            max_iters: 2000,
            tol: 1e-6,
            priors: (0.99, 0.01),
            prior_mode: PriorMode::Fixed,
            guard: true,
            em_max_iters: 200,
            em_tol: 1e-8,
        }
    }
}

impl TuneConfig {
    /// `max_iters = 0` is accepted and leaves the weights untouched.
    pub fn validate(&self) -> Result<(), TunerError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(TunerError::Config(format!("delta must be positive (got {})", self.delta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TunerError::Config(format!(
                "learning rate must be positive (got {})",
                self.learning_rate
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(TunerError::Config(format!("tolerance must be non-negative (got {})", self.tol)));
        }
        if self.em_max_iters == 0 {
            return Err(TunerError::Config("EM needs at least one iteration".into()));
        }
        check_priors(self.priors.0, self.priors.1)?;
        Ok(())
    }

    fn em(&self) -> EmConfig {
        EmConfig {
            priors: (self.prior_mode == PriorMode::Fixed).then_some(self.priors),
            max_iters: self.em_max_iters,
            tol: self.em_tol,
        }
    }

    fn minority(&self) -> MinorityClass {
        if self.priors.1 <= self.priors.0 {
            MinorityClass::Positive
        } else {
            MinorityClass::Negative
        }
    }
}

/// One accepted coordinate update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuneRecord {
    pub iteration: usize,
    pub coordinate: usize,
    pub risk_before: f64,
    pub risk_after: f64,
    pub delta_applied: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneTrace {
    pub records: Vec<TuneRecord>,
    pub initial_risk: Option<f64>,
    pub final_risk: Option<f64>,
    pub final_gaussians: Option<ScoreGaussians>,
    pub final_weights: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Why tuning stopped before the first sweep, if it did.
    pub aborted: Option<String>,
}

impl TuneTrace {
    pub fn is_monotone(&self) -> bool {
        self.records.iter().all(|r| r.risk_after <= r.risk_before)
            && self.records.windows(2).all(|w| w[1].risk_before <= w[0].risk_after)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("iteration coordinate risk_before risk_after delta_applied\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{} {} {} {} {}",
                r.iteration, r.coordinate, r.risk_before, r.risk_after, r.delta_applied
            );
        }
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| x.to_string());
        let _ = writeln!(
            s,
            "summary converged={} sweeps={} accepted={} initial_risk={} final_risk={} aborted={}",
            self.converged,
            self.sweeps,
            self.records.len(),
            opt(self.initial_risk),
            opt(self.final_risk),
            self.aborted.as_deref().unwrap_or("none").replace(' ', "_")
        );
        s
    }
}

/// Hidden vectors stored column-wise, so one coordinate's values are contiguous.
struct Columns {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Columns {
    fn new(hidden: &[Vec<f64>], dim: usize) -> Result<Self, TunerError> {
        if hidden.len() < MIN_FIT_SCORES {
            return Err(ScoreModelError::TooFewScores {
                needed: MIN_FIT_SCORES,
                found: hidden.len(),
            }
            .into());
        }
        let n = hidden.len();
        let mut data = vec![0.0; n * dim];
        for (j, h) in hidden.iter().enumerate() {
            if h.len() != dim {
                return Err(TunerError::Dimension(format!(
                    "hidden vector {j} has {} entries, expected {dim}",
                    h.len()
                )));
            }
            for (i, x) in h.iter().enumerate() {
                data[i * n + j] = *x;
            }
        }
        Ok(Columns { n, dim, data })
    }

    fn col(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    fn margins(&self, v: &[f64], offset: f64) -> Vec<f64> {
        let mut m = vec![offset; self.n];
        for (i, vi) in v.iter().enumerate().take(self.dim) {
            for (mj, h) in m.iter_mut().zip(self.col(i)) {
                *mj += vi * h;
            }
        }
        m
    }
}

fn risk_of_margins(
    margins: &[f64],
    config: &TuneConfig,
    warm: Option<&ScoreGaussians>,
) -> Result<RiskEstimate, TunerError> {
    let fit = fit_gmm(margins, &config.em(), warm)?;
    let g = assign_components(&fit.gaussians, config.minority())?;
    Ok(closed_form_risk(&g)?)
}

/// Closed-form risk of margins `v·h_j` under the mixture fitted to them.
pub fn risk_of_weights(v: &[f64], hidden: &[Vec<f64>], config: &TuneConfig) -> Result<RiskEstimate, TunerError> {
    config.validate()?;
    let cols = Columns::new(hidden, v.len())?;
    risk_of_margins(&cols.margins(v, 0.0), config, None)
}

/// Tunes the margin vector `v = W₁ − W₀` of `head` on unlabeled `hidden`
/// vectors and returns the head with `W₁ = W₀ + v̂`.
///
/// Each sweep visits every coordinate in order: the forward difference
/// `(R(v + δeᵢ) − R(v))/δ` gives the step `−lr·gᵢ`, applied immediately. With
/// the guard on, a step that raises the risk is rolled back. A perturbation
/// whose margins cannot be fitted leaves that coordinate untouched. Tuning
/// stops when a sweep changes the risk by less than `tol` relative, or after
/// `max_iters` sweeps.
pub fn tune(head: &HeadWeights, hidden: &[Vec<f64>], config: &TuneConfig) -> Result<(HeadWeights, TuneTrace), TunerError> {
    config.validate()?;
    let dim = head.hidden_dim();
    let cols = Columns::new(hidden, dim)?;
    let offset = head.bias_margin();
    let mut v = head.margin_vector();
    let mut trace = TuneTrace {
        records: Vec::new(),
        initial_risk: None,
        final_risk: None,
        final_gaussians: None,
        final_weights: v.clone(),
        sweeps: 0,
        converged: false,
        aborted: None,
    };

    let mut margins = cols.margins(&v, offset);
    let mut base = match risk_of_margins(&margins, config, None) {
        Ok(r) => r,
        Err(TunerError::ScoreModel(e)) => {
            trace.aborted = Some(format!("initial margins: {e}"));
            return Ok((head.clone(), trace));
        }
        Err(e) => return Err(e),
    };
    trace.initial_risk = Some(base.value);
    trace.final_risk = Some(base.value);
    trace.final_gaussians = base.gaussians;
    if config.tol == f64::INFINITY {
        trace.converged = true;
        return Ok((head.clone(), trace));
    }

    let mut trial = vec![0.0; cols.n];
    for sweep in 0..config.max_iters {
        let start = base.value;
        for i in 0..dim {
            let col = cols.col(i);
            for ((t, m), h) in trial.iter_mut().zip(&margins).zip(col) {
                *t = m + config.delta * h;
            }
            let warm = base.gaussians;
            let Ok(perturbed) = risk_of_margins(&trial, config, warm.as_ref()) else {
                continue;
            };
            let grad = (perturbed.value - base.value) / config.delta;
            let step = -config.learning_rate * grad;
            if step == 0.0 || !step.is_finite() {
                continue;
            }
            let mut candidate = v.clone();
            candidate[i] += step;
            let cand_margins = cols.margins(&candidate, offset);
            let Ok(after) = risk_of_margins(&cand_margins, config, warm.as_ref()) else {
                continue;
            };
            if config.guard && after.value > base.value {
                continue;
            }
            trace.records.push(TuneRecord {
                iteration: sweep,
                coordinate: i,
                risk_before: base.value,
                risk_after: after.value,
                delta_applied: step,
            });
            v = candidate;
            margins = cand_margins;
            base = after;
        }
        trace.sweeps = sweep + 1;
        let change = (start - base.value).abs() / start.abs().max(f64::MIN_POSITIVE);
        if change < config.tol {
            trace.converged = true;
            break;
        }
    }
    trace.final_risk = Some(base.value);
    trace.final_gaussians = base.gaussians;
    let out = updated(head, &trace.final_weights, &v);
    trace.final_weights = v;
    Ok((out, trace))
}

/// Rewrites `W₁` only at coordinates that moved, so untouched weights keep
/// their exact bits.
fn updated(head: &HeadWeights, before: &[f64], after: &[f64]) -> HeadWeights {
    let mut out = head.clone();
    let w0 = head.weights.row(0).to_vec();
    for (i, w1) in out.weights.row_mut(1).iter_mut().enumerate() {
        if before[i] != after[i] {
            *w1 = w0[i] + after[i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::closed_form_risk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Hidden vectors `h_j = (m_j / c)·u` for unit `u`, with margins drawn from
    /// `p0·N(mu0, s) + p1·N(mu1, s)`; `v = c·u` reproduces the margins.
    fn aligned(n: usize, dim: usize, p1: f64, mu: (f64, f64), s: f64, c: f64, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let u = 1.0 / (dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = (0..n)
            .map(|_| {
                let mean = if rng.random::<f64>() < p1 { mu.1 } else { mu.0 };
                let m = mean + s * rng.sample::<f64, _>(StandardNormal);
                vec![m / c * u; dim]
            })
            .collect();
        (vec![c * u; dim], hidden)
    }

    fn head_with(v: &[f64]) -> HeadWeights {
        let mut h = HeadWeights::zeros("x", v.len(), false);
        h.weights.row_mut(0).iter_mut().for_each(|w| *w = 0.25);
        h.with_margin_vector(v)
    }

    #[test]
    fn zero_vector_is_degenerate() {
        let (_, hidden) = aligned(100, 4, 0.5, (-1.0, 1.0), 0.5, 4.0, 1);
        let err = risk_of_weights(&[0.0; 4], &hidden, &TuneConfig::default()).unwrap_err();
        assert!(matches!(err, TunerError::ScoreModel(ScoreModelError::Degenerate { .. })));
        let (out, trace) = tune(&head_with(&[0.0; 4]), &hidden, &TuneConfig::default()).unwrap();
        assert!(trace.aborted.is_some());
        assert_eq!(out, head_with(&[0.0; 4]));
    }

    fn probit(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0, 40.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if crate::risk::normal_cdf(mid) < p { lo = mid } else { hi = mid }
        }
        0.5 * (lo + hi)
    }

    /// Like [`aligned`], but class margins sit at the mid-quantiles of their
    /// Gaussians, so the sample follows the generator almost exactly.
    fn stratified(n: usize, dim: usize, p1: f64, mu: (f64, f64), s: f64, c: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let u = 1.0 / (dim as f64).sqrt();
        let n1 = (n as f64 * p1).round() as usize;
        let mut hidden = Vec::with_capacity(n);
        for (count, mean) in [(n - n1, mu.0), (n1, mu.1)] {
            for k in 0..count {
                let m = mean + s * probit((k as f64 + 0.5) / count as f64);
                hidden.push(vec![m / c * u; dim]);
            }
        }
        (vec![c * u; dim], hidden)
    }

    #[test]
    fn constructed_margins_recover_generator_risk() {
        let (v, hidden) = stratified(200_000, 8, 0.01, (-4.0, 4.0), 1.0, 8.0);
        let got = risk_of_weights(&v, &hidden, &TuneConfig::default()).unwrap().value;
        let want = closed_form_risk(&ScoreGaussians::new(-4.0, 1.0, 4.0, 1.0, 0.99, 0.01)).unwrap().value;
        assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
    }

    #[test]
    fn scaling_v_scales_the_fit() {
        let (v, hidden) = aligned(5_000, 4, 0.1, (-1.0, 1.5), 0.6, 4.0, 3);
        let cfg = TuneConfig {
            priors: (0.9, 0.1),
            ..TuneConfig::default()
        };
        let a = risk_of_weights(&v, &hidden, &cfg).unwrap().gaussians.unwrap();
        let v2: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        let b = risk_of_weights(&v2, &hidden, &cfg).unwrap().gaussians.unwrap();
        assert!((b.mu0 - 2.0 * a.mu0).abs() < 1e-6 * a.mu0.abs().max(1.0));
        assert!((b.sigma1 - 2.0 * a.sigma1).abs() < 1e-6 * a.sigma1);
    }

    #[test]
    fn near_optimal_instance_is_a_fixed_point() {
        let (v, hidden) = aligned(20_000, 8, 0.01, (-4.0, 4.0), 0.5, 8.0, 4);
        let head = head_with(&v);
        let cfg = TuneConfig::default();
        let (out, trace) = tune(&head, &hidden, &cfg).unwrap();
        let change = (trace.final_risk.unwrap() - trace.initial_risk.unwrap()).abs();
        assert!(change < 1e-3);
        let moved = out
            .margin_vector()
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved < 10.0 * cfg.learning_rate * 1e-3, "{moved}");
        assert!(trace.is_monotone());
    }

    fn flipped_instance() -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hidden = (0..4_000)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                (0..4)
                    .map(|_| 0.5 * s + 0.2 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        (vec![1.0, 1.0, 1.0, -1.0], hidden)
    }

    #[test]
    fn flipped_coordinate_is_restored() {
        let (v, hidden) = flipped_instance();
        let cfg = TuneConfig {
            priors: (0.5, 0.5),
            ..TuneConfig::default()
        };
        let (out, trace) = tune(&head_with(&v), &hidden, &cfg).unwrap();
        assert!(out.margin_vector()[3] > 0.0, "{:?}", out.margin_vector());
        assert!(trace.final_risk.unwrap() < trace.initial_risk.unwrap());
        assert!(trace.is_monotone());
    }

    #[test]
    fn no_op_settings_return_the_input() {
        let (v, hidden) = flipped_instance();
        let head = head_with(&v);
        for cfg in [
            TuneConfig {
                tol: f64::INFINITY,
                ..TuneConfig::default()
            },
            TuneConfig {
                max_iters: 0,
                ..TuneConfig::default()
            },
        ] {
            let (out, trace) = tune(&head, &hidden, &cfg).unwrap();
            assert_eq!(out, head);
            assert!(trace.records.is_empty());
        }
    }

    #[test]
    fn untouched_weights_keep_their_bits() {
        let (_, hidden) = flipped_instance();
        let mut head = HeadWeights::zeros("x", 4, false);
        head.weights.data = vec![0.1, -0.7, 0.3, 0.9, 1.3, 0.17, -0.29, 1.1];
        let cfg = TuneConfig {
            max_iters: 0,
            ..TuneConfig::default()
        };
        let (out, _) = tune(&head, &hidden, &cfg).unwrap();
        assert_eq!(out.weights.data, head.weights.data);
    }

    #[test]
    fn tuning_is_deterministic_and_pure() {
        let (v, hidden) = flipped_instance();
        let head = head_with(&v);
        let cfg = TuneConfig {
            priors: (0.5, 0.5),
            max_iters: 5,
            ..TuneConfig::default()
        };
        let before = head.clone();
        let a = tune(&head, &hidden, &cfg).unwrap();
        let b = tune(&head, &hidden, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(head, before);
        assert_eq!(a.0.weights.row(0), head.weights.row(0));
    }

    #[test]
    fn trace_text_has_one_line_per_record() {
        let (v, hidden) = flipped_instance();
        let cfg = TuneConfig {
            priors: (0.5, 0.5),
            max_iters: 3,
            ..TuneConfig::default()
        };
        let (_, trace) = tune(&head_with(&v), &hidden, &cfg).unwrap();
        let text = trace.to_text();
        assert_eq!(text.lines().count(), trace.records.len() + 2);
        assert!(text.lines().last().unwrap().starts_with("summary converged="));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let (v, hidden) = flipped_instance();
        for cfg in [
            TuneConfig { delta: 0.0, ..TuneConfig::default() },
            TuneConfig { learning_rate: -1.0, ..TuneConfig::default() },
            TuneConfig { priors: (0.5, 0.6), ..TuneConfig::default() },
        ] {
            assert!(tune(&head_with(&v), &hidden, &cfg).is_err());
        }
        assert!(matches!(
            tune(&head_with(&[1.0, 2.0]), &hidden, &TuneConfig::default()),
            Err(TunerError::Dimension(_))
        ));
    }
}
