//! Randomized invariant checks shared by the property tests and the
//! acceptance run. Each check runs `cases` generated inputs and returns the
//! first counterexample as an error message.

#![allow(dead_code)]

pub mod cli;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmtune::corpus::EmbeddingTable;
use rmtune::encoder::{ContextMode, Encoder, EncoderConfig, NbestPooling, TurnInput};
use rmtune::eval::{macro_f, predict, ConfusionCounts};
use rmtune::heads::{head_forward, HeadWeights};
use rmtune::risk::{hinge_loss, hinge_margin};
use rmtune::scoremodel::{fit_gmm, EmConfig, ScoreGaussians};
use rmtune::tensor::Tensor;

pub const CASES: u32 = 1000;

pub type PropResult = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn check<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> PropResult {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Random small encoder and turn. Weights and word vectors stay within
/// `±0.25`, which keeps every pre-activation below 19, where `tanh` would
/// round to exactly 1 in double precision.
pub fn tanh_bound(cases: u32) -> PropResult {
    check(cases, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pooling = [NbestPooling::Weighted, NbestPooling::Uniform, NbestPooling::Concatenate][rng.random_range(0..3)];
        let context_mode = [ContextMode::Recurrent, ContextMode::MeanOfActs][rng.random_range(0..2)];
        let widths: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=3)).collect();
        let config = EncoderConfig {
            widths,
            maps: rng.random_range(1..=6),
            context_dim: rng.random_range(1..=5),
            hidden_dim: rng.random_range(1..=8),
            window: rng.random_range(1..=4),
            pooling,
            context_mode,
        };
        let dim = rng.random_range(1..=6);
        let vocab = 12;
        let mut vectors: Vec<f64> = (0..vocab * dim).map(|_| rng.random_range(-0.25..=0.25)).collect();
        vectors[..dim].iter_mut().for_each(|v| *v = 0.0);
        let emb = EmbeddingTable::new(dim, vectors).unwrap();
        let enc = Encoder::init_uniform(&config, dim, rng.random_range(0.01..=0.25), &mut rng);
        let hyps = (0..rng.random_range(1..=4))
            .map(|_| {
                let toks = (0..rng.random_range(1..=6)).map(|_| rng.random_range(1..vocab)).collect();
                (toks, rng.random_range(0.01..=1.0))
            })
            .collect();
        let acts = (0..rng.random_range(0..=5))
            .map(|_| (0..rng.random_range(1..=4)).map(|_| rng.random_range(1..vocab)).collect())
            .collect();
        let h = enc.hidden(&TurnInput { hyps, acts }, &emb);
        prop_assert_eq!(h.len(), config.hidden_dim);
        for v in &h {
            prop_assert!(v.abs() < 1.0, "h = {:?}", h);
        }
        Ok(())
    })
}

fn head_from(name: &str, w0: &[f64], w1: &[f64]) -> HeadWeights {
    let mut head = HeadWeights::zeros(name, w0.len(), false);
    head.weights.row_mut(0).copy_from_slice(w0);
    head.weights.row_mut(1).copy_from_slice(w1);
    head
}

fn vec_of(len: usize, range: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-range..range, len)
}

/// Probabilities sum to one, and adding the same vector to both weight rows
/// (a common shift of both logits) leaves them unchanged.
pub fn softmax(cases: u32) -> PropResult {
    let strategy = (1usize..12).prop_flat_map(|n| (vec_of(n, 5.0), vec_of(n, 5.0), vec_of(n, 5.0), vec_of(n, 1.0)));
    check(cases, strategy, |(w0, w1, shift, h)| {
        let head = head_from("p", &w0, &w1);
        let (p0, p1) = head_forward(&h, &head).unwrap();
        prop_assert!((p0 + p1 - 1.0).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p0) && (0.0..=1.0).contains(&p1));
        let s0: Vec<f64> = w0.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let s1: Vec<f64> = w1.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let (q0, q1) = head_forward(&h, &head_from("p", &s0, &s1)).unwrap();
        prop_assert!((p0 - q0).abs() < 1e-9 && (p1 - q1).abs() < 1e-9, "{} {} vs {} {}", p0, p1, q0, q1);
        Ok(())
    })
}

/// The hinge loss depends on the logits only through `α₁ − α₀`.
pub fn hinge_margin_dependence(cases: u32) -> PropResult {
    check(cases, (0usize..2, -50.0..50.0f64, -50.0..50.0f64, -100.0..100.0f64), |(y, a0, a1, c)| {
        let direct = hinge_loss(y, a0, a1);
        prop_assert!(close(direct, hinge_margin(y, a1 - a0), 1e-12));
        prop_assert!(close(direct, hinge_loss(y, a0 + c, a1 + c), 1e-12));
        Ok(())
    })
}

fn mixture_sample() -> impl Strategy<Value = Vec<f64>> {
    (any::<u64>(), 40usize..300, -3.0..3.0f64, 0.5..6.0f64, 0.2..2.0f64, 0.2..2.0f64, 0.05..0.5f64).prop_map(
        |(seed, n, mu0, gap, s0, s1, w1)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    if rng.random::<f64>() < w1 { mu0 + gap + s1 * z } else { mu0 + s0 * z }
                })
                .collect()
        },
    )
}

const EM_TOL: f64 = 1e-6;

fn components(g: &ScoreGaussians) -> [(f64, f64, f64); 2] {
    [(g.mu0, g.sigma0, g.prior0), (g.mu1, g.sigma1, g.prior1)]
}

fn same_component(a: (f64, f64, f64), b: (f64, f64, f64), scale: f64) -> bool {
    close(a.0, b.0, EM_TOL * scale) && close(a.1, b.1, EM_TOL * scale) && close(a.2, b.2, EM_TOL)
}

/// `fit(a·x + b)` equals the affine image of `fit(x)`. With fixed priors the
/// component labels must carry over (`a > 0`); with estimated priors the two
/// components are compared as a set, so negative `a` is allowed.
pub fn gmm_affine_equivariance(cases: u32) -> PropResult {
    let strategy = (mixture_sample(), 0.05..20.0f64, -50.0..50.0f64, any::<bool>(), any::<bool>());
    check(cases, strategy, |(x, a_abs, b, estimated, negate)| {
        let config = EmConfig {
            priors: if estimated { None } else { Some((0.8, 0.2)) },
            ..EmConfig::default()
        };
        let a = if estimated && negate { -a_abs } else { a_abs };
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let fx = fit_gmm(&x, &config, None).map_err(|e| TestCaseError::reject(e.to_string()))?;
        let fy = fit_gmm(&y, &config, None).map_err(|e| TestCaseError::reject(e.to_string()))?;
        let mapped = components(&fx.gaussians).map(|(m, s, w)| (a * m + b, a.abs() * s, w));
        let got = components(&fy.gaussians);
        let scale = a.abs() + b.abs();
        let ok = if estimated {
            (same_component(mapped[0], got[0], scale) && same_component(mapped[1], got[1], scale))
                || (same_component(mapped[0], got[1], scale) && same_component(mapped[1], got[0], scale))
        } else {
            same_component(mapped[0], got[0], scale) && same_component(mapped[1], got[1], scale)
        };
        prop_assert!(ok, "a={} b={} mapped {:?} got {:?}", a, b, mapped, got);
        Ok(())
    })
}

/// Reordering the scores does not change the fit.
pub fn gmm_permutation_invariance(cases: u32) -> PropResult {
    check(cases, (mixture_sample(), any::<u64>(), any::<bool>()), |(x, seed, estimated)| {
        let config = EmConfig {
            priors: if estimated { None } else { Some((0.9, 0.1)) },
            ..EmConfig::default()
        };
        let mut shuffled = x.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = fit_gmm(&x, &config, None).map_err(|e| TestCaseError::reject(e.to_string()))?;
        let b = fit_gmm(&shuffled, &config, None).unwrap();
        prop_assert_eq!(a.gaussians, b.gaussians);
        prop_assert_eq!(a.iterations, b.iterations);
        Ok(())
    })
}

/// Exchanging the roles of the two classes leaves macro-F unchanged.
pub fn macro_f_swap_symmetry(cases: u32) -> PropResult {
    check(cases, (0u64..500, 0u64..500, 0u64..500, 0u64..5000), |(tp, fp, fn_, tn)| {
        let c = ConfusionCounts::new(tp, fp, fn_, tn);
        if c.total() == 0 {
            return Err(TestCaseError::reject("empty"));
        }
        let a = macro_f("x", c).unwrap();
        let b = macro_f("x", c.swapped()).unwrap();
        prop_assert!((a.macro_f - b.macro_f).abs() < 1e-15);
        prop_assert_eq!(a.f_pos, b.f_neg);
        Ok(())
    })
}

/// Scaling both weight rows by `c > 0` keeps every prediction. Turns whose
/// margin is within rounding of zero are skipped.
pub fn predict_scaling_invariance(cases: u32) -> PropResult {
    let strategy = (2usize..10).prop_flat_map(|n| {
        (
            vec_of(n, 3.0),
            vec_of(n, 3.0),
            proptest::collection::vec(vec_of(n, 1.0), 1..40),
            1e-3..1e3f64,
        )
    });
    check(cases, strategy, |(w0, w1, hidden, c)| {
        let head = head_from("s", &w0, &w1);
        let mut scaled = head.clone();
        scaled.weights = Tensor {
            data: head.weights.data.iter().map(|w| c * w).collect(),
            ..head.weights.clone()
        };
        let a = predict(&head, &hidden);
        let b = predict(&scaled, &hidden);
        for (k, h) in hidden.iter().enumerate() {
            if head.margin(h).abs() > 1e-9 {
                prop_assert_eq!(a[k], b[k], "margin {}", head.margin(h));
            }
        }
        Ok(())
    })
}

/// Every property by name, for the acceptance summary.
pub fn all(cases: u32) -> Vec<(&'static str, PropResult)> {
    vec![
        ("tanh bound", tanh_bound(cases)),
        ("softmax normalization and shift invariance", softmax(cases)),
        ("hinge margin-dependence", hinge_margin_dependence(cases)),
        ("GMM affine equivariance", gmm_affine_equivariance(cases)),
        ("GMM permutation invariance", gmm_permutation_invariance(cases)),
        ("macro-F class-swap symmetry", macro_f_swap_symmetry(cases)),
        ("predict positive-scaling invariance", predict_scaling_invariance(cases)),
    ]
}
