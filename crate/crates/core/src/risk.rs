//! Hinge loss on head margins and the expected-hinge risk of a Gaussian
//! margin mixture: closed form, trapezoidal quadrature, Monte Carlo, and a
//! supervised plug-in estimate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoremodel::{ScoreGaussians, ScoreModelError};

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid mixture parameters: {0}")]
    Parameters(#[from] ScoreModelError),
    #[error("invalid quadrature settings: {0}")]
    Quadrature(String),
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("empty input")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub value: f64,
    /// Standard error for sampling estimates.
    pub std_error: Option<f64>,
    pub gaussians: Option<ScoreGaussians>,
    pub method: RiskMethod,
}

/// Sign `s_y`: +1 for the positive class, −1 for the negative one.
#[inline]
pub fn class_sign(y: usize) -> f64 {
    if y == 1 { 1.0 } else { -1.0 }
}

/// `(1 + α_{1−y} − α_y)₊`.
#[inline]
pub fn hinge_loss(y: usize, alpha0: f64, alpha1: f64) -> f64 {
    let (own, other) = if y == 1 { (alpha1, alpha0) } else { (alpha0, alpha1) };
    (1.0 + other - own).max(0.0)
}

/// `(1 − s_y·m)₊` for margin `m = α₁ − α₀`.
#[inline]
pub fn hinge_margin(y: usize, m: f64) -> f64 {
    (1.0 - class_sign(y) * m).max(0.0)
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `E[(1 − s_y·m)₊]` for `m ~ N(mu, sigma)`: with `d = 1 − s_y·mu`,
/// `d·Φ(d/σ) + σ·φ(d/σ)`.
pub fn class_risk(y: usize, mu: f64, sigma: f64) -> f64 {
    let d = 1.0 - class_sign(y) * mu;
    let t = d / sigma;
    (d * normal_cdf(t) + sigma * normal_pdf(t)).max(0.0)
}

/// `E[(1 − s_y·m)₊²]` for `m ~ N(mu, sigma)`: `(d² + σ²)·Φ(d/σ) + d·σ·φ(d/σ)`.
pub fn class_second_moment(y: usize, mu: f64, sigma: f64) -> f64 {
    let d = 1.0 - class_sign(y) * mu;
    let t = d / sigma;
    ((d * d + sigma * sigma) * normal_cdf(t) + d * sigma * normal_pdf(t)).max(0.0)
}

/// Exact standard error of the `samples`-draw Monte Carlo mean under `g`.
/// Unlike the sample estimate it stays positive when no draw reaches the
/// hinge and is not correlated with the estimate itself.
pub fn monte_carlo_standard_error(g: &ScoreGaussians, samples: usize) -> Result<f64, RiskError> {
    g.validate()?;
    let mean: f64 = (0..2).map(|y| g.prior(y) * class_risk(y, g.mu(y), g.sigma(y))).sum();
    let second: f64 = (0..2).map(|y| g.prior(y) * class_second_moment(y, g.mu(y), g.sigma(y))).sum();
    Ok(((second - mean * mean).max(0.0) / samples as f64).sqrt())
}

pub fn closed_form_risk(g: &ScoreGaussians) -> Result<RiskEstimate, RiskError> {
    g.validate()?;
    let value = (0..2).map(|y| g.prior(y) * class_risk(y, g.mu(y), g.sigma(y))).sum();
    Ok(RiskEstimate {
        value,
        std_error: None,
        gaussians: Some(*g),
        method: RiskMethod::ClosedForm,
    })
}

pub const DEFAULT_QUADRATURE_POINTS: usize = 20_001;
pub const DEFAULT_HALF_WIDTH_SIGMAS: f64 = 10.0;

/// Trapezoidal integration of `P(y)·N(m; μ_y, σ_y)·(1 − s_y·m)₊`.
///
/// Each class is integrated over `μ_y ± w·σ_y`, clipped at its hinge point
/// `m = s_y` so the kink sits on a panel boundary, with `points` nodes per
/// class. The composite rule carries the end correction
/// `−h²/12·(f′(b) − f′(a))`, which makes it fourth order on the smooth pieces.
pub fn quadrature_risk(g: &ScoreGaussians, half_width_sigmas: f64, points: usize) -> Result<RiskEstimate, RiskError> {
    g.validate()?;
    if points < 1000 {
        return Err(RiskError::Quadrature(format!("points must be at least 1000 (got {points})")));
    }
    if !(half_width_sigmas >= 8.0) || !half_width_sigmas.is_finite() {
        return Err(RiskError::Quadrature(format!(
            "half width must be at least 8 sigmas (got {half_width_sigmas})"
        )));
    }
    let mut value = 0.0;
    for y in 0..2 {
        let (p, mu, sigma, s) = (g.prior(y), g.mu(y), g.sigma(y), class_sign(y));
        if p == 0.0 {
            continue;
        }
        let (mut a, mut b) = (mu - half_width_sigmas * sigma, mu + half_width_sigmas * sigma);
        if y == 1 {
            b = b.min(1.0);
        } else {
            a = a.max(-1.0);
        }
        if b <= a {
            continue;
        }
        let dens = |m: f64| normal_pdf((m - mu) / sigma) / sigma;
        let f = |m: f64| dens(m) * (1.0 - s * m);
        let df = |m: f64| dens(m) * (-(m - mu) / (sigma * sigma) * (1.0 - s * m) - s);
        let panels = points - 1;
        let h = (b - a) / panels as f64;
        let mut sum = 0.5 * (f(a) + f(b));
        for k in 1..panels {
            sum += f(a + k as f64 * h);
        }
        let integral = h * sum - h * h / 12.0 * (df(b) - df(a));
        value += p * integral;
    }
    Ok(RiskEstimate {
        value: value.max(0.0),
        std_error: None,
        gaussians: Some(*g),
        method: RiskMethod::Quadrature,
    })
}

pub const MIN_MONTE_CARLO_SAMPLES: usize = 10_000;

/// Draws the class by prior and the margin from that class's Gaussian;
/// reports the mean hinge loss and its standard error.
pub fn monte_carlo_risk(g: &ScoreGaussians, samples: usize, seed: u64) -> Result<RiskEstimate, RiskError> {
    g.validate()?;
    if samples < MIN_MONTE_CARLO_SAMPLES {
        return Err(RiskError::TooFewSamples {
            needed: MIN_MONTE_CARLO_SAMPLES,
            found: samples,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let y = usize::from(rng.random::<f64>() < g.prior1);
        let z: f64 = rng.sample(StandardNormal);
        let loss = hinge_margin(y, g.mu(y) + g.sigma(y) * z);
        sum += loss;
        sum_sq += loss * loss;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(RiskEstimate {
        value: mean,
        std_error: Some((var / n).sqrt()),
        gaussians: Some(*g),
        method: RiskMethod::MonteCarlo,
    })
}

/// Mean hinge loss over labeled `(y, margin)` pairs.
pub fn empirical_risk(pairs: &[(usize, f64)]) -> Result<RiskEstimate, RiskError> {
    if pairs.is_empty() {
        return Err(RiskError::Empty);
    }
    let n = pairs.len() as f64;
    let losses: Vec<f64> = pairs.iter().map(|&(y, m)| hinge_margin(y, m)).collect();
    let mean = losses.iter().sum::<f64>() / n;
    let std_error = (pairs.len() > 1).then(|| {
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(RiskEstimate {
        value: mean,
        std_error,
        gaussians: None,
        method: RiskMethod::Empirical,
    })
}

pub const GRID_MEANS: [f64; 5] = [-3.0, -1.0, 0.0, 1.0, 3.0];
pub const GRID_SIGMAS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];
pub const QUADRATURE_REL_TOL: f64 = 1e-8;
pub const MONTE_CARLO_SE_MULTIPLE: f64 = 4.0;
/// Absolute slack for points whose risk and standard error underflow to zero.
pub const MONTE_CARLO_ABS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridCheck {
    pub gaussians: ScoreGaussians,
    pub closed_form: f64,
    pub quadrature: f64,
    pub quadrature_rel_diff: f64,
    pub monte_carlo: Option<f64>,
    pub monte_carlo_se: Option<f64>,
    pub quadrature_pass: bool,
    pub monte_carlo_pass: bool,
}

impl GridCheck {
    pub fn pass(&self) -> bool {
        self.quadrature_pass && self.monte_carlo_pass
    }
}

/// SplitMix64 finalizer over `(seed, k)`, so nearby base seeds never share
/// a point stream.
pub fn point_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((k as u64).wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// All 625 mixtures with `μ₀, μ₁ ∈ GRID_MEANS` and `σ₀, σ₁ ∈ GRID_SIGMAS`.
pub fn grid(priors: (f64, f64)) -> Vec<ScoreGaussians> {
    let mut out = Vec::with_capacity(625);
    for &mu0 in &GRID_MEANS {
        for &mu1 in &GRID_MEANS {
            for &sigma0 in &GRID_SIGMAS {
                for &sigma1 in &GRID_SIGMAS {
                    out.push(ScoreGaussians::new(mu0, sigma0, mu1, sigma1, priors.0, priors.1));
                }
            }
        }
    }
    out
}

/// Compares the closed form with quadrature (relative) and, when
/// `mc_samples > 0`, with Monte Carlo (standard errors) at every grid point.
/// Point `k` draws from its own stream, [`point_seed`]`(seed, k)`.
pub fn grid_check(priors: (f64, f64), mc_samples: usize, seed: u64) -> Result<Vec<GridCheck>, RiskError> {
    grid(priors)
        .into_par_iter()
        .enumerate()
        .map(|(k, g)| {
            let closed = closed_form_risk(&g)?.value;
            let quad = quadrature_risk(&g, DEFAULT_HALF_WIDTH_SIGMAS, DEFAULT_QUADRATURE_POINTS)?.value;
            let rel = (quad - closed).abs() / closed.max(1e-12);
            let (mc, se, mc_pass) = if mc_samples > 0 {
                let est = monte_carlo_risk(&g, mc_samples, point_seed(seed, k))?;
                let se = monte_carlo_standard_error(&g, mc_samples)?;
                let pass = (est.value - closed).abs() <= MONTE_CARLO_SE_MULTIPLE * se + MONTE_CARLO_ABS_FLOOR;
                (Some(est.value), Some(se), pass)
            } else {
                (None, None, true)
            };
            Ok(GridCheck {
                gaussians: g,
                closed_form: closed,
                quadrature: quad,
                quadrature_rel_diff: rel,
                monte_carlo: mc,
                monte_carlo_se: se,
                quadrature_pass: rel < QUADRATURE_REL_TOL,
                monte_carlo_pass: mc_pass,
            })
        })
        .collect()
}
