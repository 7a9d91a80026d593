//! Two-component 1-D Gaussian mixture over head margins, class assignment by
//! marginal rank, and moment-based Gaussianity diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to both component standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;
pub const MIN_FIT_SCORES: usize = 10;
pub const MIN_DIAGNOSTIC_SCORES: usize = 30;

#[derive(Debug, Error)]
pub enum ScoreModelError {
    #[error("need at least {needed} scores, found {found}")]
    TooFewScores { needed: usize, found: usize },
    #[error("score {index} is not finite")]
    NonFinite { index: usize },
    #[error("degenerate data: all scores equal {value}")]
    Degenerate { value: f64 },
    #[error("ambiguous rank: estimated weights {w0} and {w1} are equal")]
    AmbiguousRank { w0: f64, w1: f64 },
    #[error("invalid priors ({0}, {1}): each must lie in (0,1) and they must sum to 1")]
    InvalidPriors(f64, f64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    Fixed,
    Estimated,
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PriorMode::Fixed => "fixed",
            PriorMode::Estimated => "estimated",
        })
    }
}

/// Which class has the smaller marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MinorityClass {
    Positive,
    Negative,
}

/// Class-conditional Gaussians `N(mu_y, sigma_y)` with priors `P(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreGaussians {
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub prior0: f64,
    pub prior1: f64,
    pub prior_mode: PriorMode,
}

impl ScoreGaussians {
    pub fn new(mu0: f64, sigma0: f64, mu1: f64, sigma1: f64, prior0: f64, prior1: f64) -> Self {
        ScoreGaussians {
            mu0,
            sigma0,
            mu1,
            sigma1,
            prior0,
            prior1,
            prior_mode: PriorMode::Fixed,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreModelError> {
        let all = [self.mu0, self.sigma0, self.mu1, self.sigma1, self.prior0, self.prior1];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ScoreModelError::InvalidParameters("non-finite parameter".into()));
        }
        if self.sigma0 <= 0.0 || self.sigma1 <= 0.0 {
            return Err(ScoreModelError::InvalidParameters(format!(
                "sigmas must be positive (got {}, {})",
                self.sigma0, self.sigma1
            )));
        }
        if !(0.0..=1.0).contains(&self.prior0)
            || !(0.0..=1.0).contains(&self.prior1)
            || (self.prior0 + self.prior1 - 1.0).abs() > 1e-12
        {
            return Err(ScoreModelError::InvalidPriors(self.prior0, self.prior1));
        }
        Ok(())
    }

    pub fn mu(&self, y: usize) -> f64 {
        if y == 1 { self.mu1 } else { self.mu0 }
    }

    pub fn sigma(&self, y: usize) -> f64 {
        if y == 1 { self.sigma1 } else { self.sigma0 }
    }

    pub fn prior(&self, y: usize) -> f64 {
        if y == 1 { self.prior1 } else { self.prior0 }
    }

    /// Same mixture with the component labels exchanged.
    pub fn swapped(&self) -> Self {
        ScoreGaussians {
            mu0: self.mu1,
            sigma0: self.sigma1,
            mu1: self.mu0,
            sigma1: self.sigma0,
            prior0: self.prior1,
            prior1: self.prior0,
            prior_mode: self.prior_mode,
        }
    }

    pub fn to_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "prior_mode {}", self.prior_mode);
        for (k, v) in [
            ("mu0", self.mu0),
            ("sigma0", self.sigma0),
            ("mu1", self.mu1),
            ("sigma1", self.sigma1),
            ("prior0", self.prior0),
            ("prior1", self.prior1),
        ] {
            let _ = writeln!(s, "{k} {v}");
        }
        s
    }
}

pub fn check_priors(p0: f64, p1: f64) -> Result<(), ScoreModelError> {
    if !(p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0) || (p0 + p1 - 1.0).abs() > 1e-12 {
        return Err(ScoreModelError::InvalidPriors(p0, p1));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Fixed mixture weights `(p0, p1)`; `None` estimates them.
    pub priors: Option<(f64, f64)>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            priors: Some((0.99, 0.01)),
            max_iters: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    /// Component 0 is the one initialized at the lower end of the scores.
    pub gaussians: ScoreGaussians,
    /// Log-likelihood before each M-step plus the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GmmFit {
    pub fn final_log_likelihood(&self) -> f64 {
        *self.log_likelihood.last().expect("at least one evaluation")
    }

    /// True when no step lowered the log-likelihood by more than
    /// `slack·|LL|` (summation rounding).
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.log_likelihood.windows(2).all(|w| w[1] >= w[0] - slack * w[0].abs())
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Fits a two-component mixture by EM.
///
/// Initialization is deterministic: means at the 10th and 90th percentiles
/// (min and max if those coincide), both sigmas at the overall standard
/// deviation, weights at the fixed priors or `(0.5, 0.5)`. `init`, when given,
/// replaces the means and sigmas (warm start). Scores are sorted before
/// iterating, so the result does not depend on input order.
pub fn fit_gmm(scores: &[f64], config: &EmConfig, init: Option<&ScoreGaussians>) -> Result<GmmFit, ScoreModelError> {
    if scores.len() < MIN_FIT_SCORES {
        return Err(ScoreModelError::TooFewScores {
            needed: MIN_FIT_SCORES,
            found: scores.len(),
        });
    }
    if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
        return Err(ScoreModelError::NonFinite { index });
    }
    if let Some((p0, p1)) = config.priors {
        check_priors(p0, p1)?;
    }
    let mut x = scores.to_vec();
    x.sort_unstable_by(f64::total_cmp);
    let (min, max) = (x[0], x[x.len() - 1]);
    if min == max {
        return Err(ScoreModelError::Degenerate { value: min });
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return Err(ScoreModelError::Degenerate { value: min });
    }
    // EM runs on standardized scores so that an affine change of the input
    // changes nothing but the final back-transform.
    let z: Vec<f64> = x.iter().map(|v| (v - mean) / sd).collect();
    let floor = SIGMA_FLOOR / sd;

    let (w0, w1, prior_mode) = match config.priors {
        Some((p0, p1)) => (p0, p1, PriorMode::Fixed),
        None => (0.5, 0.5, PriorMode::Estimated),
    };
    let mut g = match init {
        Some(s) => {
            let (p0, p1) = if prior_mode == PriorMode::Estimated && s.prior_mode == PriorMode::Estimated {
                (s.prior0, s.prior1)
            } else {
                (w0, w1)
            };
            ScoreGaussians {
                mu0: (s.mu0 - mean) / sd,
                sigma0: (s.sigma0 / sd).max(floor),
                mu1: (s.mu1 - mean) / sd,
                sigma1: (s.sigma1 / sd).max(floor),
                prior0: p0,
                prior1: p1,
                prior_mode,
            }
        }
        None => {
            let (mut lo, mut hi) = (percentile(&z, 0.1), percentile(&z, 0.9));
            if lo == hi {
                (lo, hi) = (z[0], z[z.len() - 1]);
            }
            ScoreGaussians {
                mu0: lo,
                sigma0: 1.0,
                mu1: hi,
                sigma1: 1.0,
                prior0: w0,
                prior1: w1,
                prior_mode,
            }
        }
    };

    let log_sd = sd.ln();
    let mut resp = vec![0.0; z.len()];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut ll = e_step(&z, &g, &mut resp);
    history.push(ll - n * log_sd);
    while iterations < config.max_iters {
        m_step(&z, &resp, &mut g, floor);
        iterations += 1;
        let next = e_step(&z, &g, &mut resp);
        history.push(next - n * log_sd);
        let change = (next - ll).abs() / ll.abs().max(f64::MIN_POSITIVE);
        ll = next;
        if change < config.tol {
            converged = true;
            break;
        }
    }
    let gaussians = ScoreGaussians {
        mu0: mean + sd * g.mu0,
        sigma0: (sd * g.sigma0).max(SIGMA_FLOOR),
        mu1: mean + sd * g.mu1,
        sigma1: (sd * g.sigma1).max(SIGMA_FLOOR),
        ..g
    };
    Ok(GmmFit {
        gaussians,
        log_likelihood: history,
        iterations,
        converged,
    })
}

/// Fills `resp` with `P(component 1 | x)` and returns the log-likelihood.
fn e_step(x: &[f64], g: &ScoreGaussians, resp: &mut [f64]) -> f64 {
    let c0 = g.prior0.ln() - g.sigma0.ln() - LN_SQRT_2PI;
    let c1 = g.prior1.ln() - g.sigma1.ln() - LN_SQRT_2PI;
    let (i0, i1) = (0.5 / (g.sigma0 * g.sigma0), 0.5 / (g.sigma1 * g.sigma1));
    let mut ll = 0.0;
    for (xi, r) in x.iter().zip(resp.iter_mut()) {
        let l0 = c0 - (xi - g.mu0).powi(2) * i0;
        let l1 = c1 - (xi - g.mu1).powi(2) * i1;
        let e = (-(l0 - l1).abs()).exp();
        *r = if l1 >= l0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
        ll += l0.max(l1) + e.ln_1p();
    }
    ll
}

fn m_step(x: &[f64], resp: &[f64], g: &mut ScoreGaussians, floor: f64) {
    let (mut n0, mut n1, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0);
    for (xi, r) in x.iter().zip(resp) {
        n1 += r;
        n0 += 1.0 - r;
        s1 += r * xi;
        s0 += (1.0 - r) * xi;
    }
    if n0 > 0.0 {
        g.mu0 = s0 / n0;
    }
    if n1 > 0.0 {
        g.mu1 = s1 / n1;
    }
    let (mut v0, mut v1) = (0.0, 0.0);
    for (xi, r) in x.iter().zip(resp) {
        v1 += r * (xi - g.mu1).powi(2);
        v0 += (1.0 - r) * (xi - g.mu0).powi(2);
    }
    if n0 > 0.0 {
        g.sigma0 = (v0 / n0).sqrt().max(floor);
    }
    if n1 > 0.0 {
        g.sigma1 = (v1 / n1).sqrt().max(floor);
    }
    if g.prior_mode == PriorMode::Estimated {
        let total = n0 + n1;
        g.prior0 = n0 / total;
        g.prior1 = 1.0 - g.prior0;
    }
}

/// Labels fitted components with classes. Fixed-prior fits are returned as is;
/// estimated fits give the smaller-weight component to the minority class.
pub fn assign_components(fit: &ScoreGaussians, minority: MinorityClass) -> Result<ScoreGaussians, ScoreModelError> {
    if fit.prior_mode == PriorMode::Fixed {
        return Ok(*fit);
    }
    if (fit.prior0 - fit.prior1).abs() <= 1e-9 {
        return Err(ScoreModelError::AmbiguousRank {
            w0: fit.prior0,
            w1: fit.prior1,
        });
    }
    let smaller_is_1 = fit.prior1 < fit.prior0;
    let want_smaller_is_1 = minority == MinorityClass::Positive;
    Ok(if smaller_is_1 == want_smaller_is_1 { *fit } else { fit.swapped() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Plausible,
    Skewed,
    HeavyTailed,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Plausible => "plausible",
            Verdict::Skewed => "skewed",
            Verdict::HeavyTailed => "heavy-tailed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticThresholds {
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Default for DiagnosticThresholds {
    fn default() -> Self {
        DiagnosticThresholds {
            skewness: 0.5,
            excess_kurtosis: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub n: usize,
    pub verdict: Verdict,
}

impl GaussianityReport {
    pub fn to_report(&self) -> String {
        format!(
            "n {}\nskewness {}\nexcess_kurtosis {}\nverdict {}\n",
            self.n, self.skewness, self.excess_kurtosis, self.verdict
        )
    }
}

/// Bias-corrected skewness `G1` and excess kurtosis `G2` with a verdict.
/// A sample with zero spread reports both moments as zero.
pub fn gaussianity_diagnostic(
    scores: &[f64],
    thresholds: &DiagnosticThresholds,
) -> Result<GaussianityReport, ScoreModelError> {
    let n = scores.len();
    if n < MIN_DIAGNOSTIC_SCORES {
        return Err(ScoreModelError::TooFewScores {
            needed: MIN_DIAGNOSTIC_SCORES,
            found: n,
        });
    }
    if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
        return Err(ScoreModelError::NonFinite { index });
    }
    let nf = n as f64;
    let mean = scores.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in scores {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    let (g1, g2) = if m2 > 0.0 {
        let b1 = m3 / m2.powf(1.5);
        let b2 = m4 / (m2 * m2) - 3.0;
        let g1 = (nf * (nf - 1.0)).sqrt() / (nf - 2.0) * b1;
        let g2 = (nf - 1.0) / ((nf - 2.0) * (nf - 3.0)) * ((nf + 1.0) * b2 + 6.0);
        (g1, g2)
    } else {
        (0.0, 0.0)
    };
    let verdict = if g1.abs() > thresholds.skewness {
        Verdict::Skewed
    } else if g2.abs() > thresholds.excess_kurtosis {
        Verdict::HeavyTailed
    } else {
        Verdict::Plausible
    };
    Ok(GaussianityReport {
        skewness: g1,
        excess_kurtosis: g2,
        n,
        verdict,
    })
}

pub fn parse_scores(text: &str) -> Result<Vec<f64>, ScoreModelError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v: f64 = t.parse().map_err(|e| ScoreModelError::Parse {
            line: i + 1,
            message: format!("{t:?}: {e}"),
        })?;
        if !v.is_finite() {
            return Err(ScoreModelError::Parse {
                line: i + 1,
                message: "non-finite score".into(),
            });
        }
        out.push(v);
    }
    Ok(out)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<f64>, ScoreModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScoreModelError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scores(&text)
}

pub fn scores_to_text(scores: &[f64]) -> String {
    let mut s = String::with_capacity(scores.len() * 20);
    for v in scores {
        let _ = writeln!(s, "{v}");
    }
    s
}
