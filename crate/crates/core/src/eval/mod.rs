//! Per-head macro-F evaluation and the independent / joint / tuned benchmark.

mod benchmark;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::heads::{HeadWeights, TrainedDecoder};

pub use benchmark::{
    run_benchmark, BenchmarkConfig, BenchmarkReport, BenchmarkRow, Condition, RunSummary,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no turns to evaluate")]
    Empty,
    #[error("{predictions} predictions for {labels} labels")]
    Length { predictions: usize, labels: usize },
    #[error("{context}: {message}")]
    Component { context: String, message: String },
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
}

/// Confusion counts with the positive class meaning "present".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self, EvalError> {
        if predicted.len() != actual.len() {
            return Err(EvalError::Length {
                predictions: predicted.len(),
                labels: actual.len(),
            });
        }
        let mut c = ConfusionCounts::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts with the roles of the two classes exchanged.
    pub fn swapped(&self) -> Self {
        ConfusionCounts::new(self.tn, self.fn_, self.fp, self.tp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub head: String,
    pub counts: ConfusionCounts,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f_pos: f64,
    pub precision_neg: f64,
    pub recall_neg: f64,
    pub f_neg: f64,
    pub macro_f: f64,
}

fn prf(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Per-class precision, recall and F1; macro-F is the mean of the two F1s.
pub fn macro_f(head: &str, counts: ConfusionCounts) -> Result<HeadReport, EvalError> {
    if counts.total() == 0 {
        return Err(EvalError::Empty);
    }
    let (pp, rp, fp) = prf(counts.tp, counts.fp, counts.fn_);
    let (pn, rn, fneg) = prf(counts.tn, counts.fn_, counts.fp);
    Ok(HeadReport {
        head: head.to_string(),
        counts,
        precision_pos: pp,
        recall_pos: rp,
        f_pos: fp,
        precision_neg: pn,
        recall_neg: rn,
        f_neg: fneg,
        macro_f: (fp + fneg) / 2.0,
    })
}

/// Positive iff `P(Y=1|h) > 0.5`, i.e. the margin is strictly positive;
/// a tie goes to the negative class.
pub fn predict(head: &HeadWeights, hidden: &[Vec<f64>]) -> Vec<bool> {
    hidden.iter().map(|h| head.margin(h) > 0.0).collect()
}

/// Report for every head of `decoder` on `corpus` (dropout off).
pub fn evaluate(decoder: &TrainedDecoder, corpus: &Corpus) -> Result<Vec<HeadReport>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut out = Vec::new();
    for model in &decoder.models {
        let hidden = model.hidden_vectors(&model.inputs(corpus));
        for head in &model.params.heads {
            let predicted = predict(head, &hidden);
            let actual: Vec<bool> = corpus.turns.iter().map(|t| t.target(&head.name)).collect();
            out.push(macro_f(&head.name, ConfusionCounts::from_predictions(&predicted, &actual)?)?);
        }
    }
    Ok(out)
}

pub fn reports_table(reports: &[HeadReport]) -> String {
    let width = reports.iter().map(|r| r.head.len()).max().unwrap_or(4).max(4);
    let mut s = format!(
        "{:<width$}  {:>6} {:>6} {:>6} {:>6} {:>6} {:>6} {:>7}\n",
        "head", "tp", "fp", "fn", "tn", "F_pos", "F_neg", "macro_F"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<width$}  {:>6} {:>6} {:>6} {:>6} {:>6.4} {:>6.4} {:>7.4}",
            r.head, r.counts.tp, r.counts.fp, r.counts.fn_, r.counts.tn, r.f_pos, r.f_neg, r.macro_f
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        assert_eq!(macro_f("x", ConfusionCounts::new(5, 0, 0, 95)).unwrap().macro_f, 1.0);
    }

    #[test]
    fn hand_computed_counts() {
        let r = macro_f("x", ConfusionCounts::new(3, 2, 1, 94)).unwrap();
        assert!((r.f_pos - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f_neg - 188.0 / 191.0).abs() < 1e-12);
        assert!((r.macro_f - 0.8255).abs() < 5e-5);
    }

    #[test]
    fn all_negative_predictor() {
        let r = macro_f("x", ConfusionCounts::new(0, 0, 10, 990)).unwrap();
        assert_eq!((r.precision_pos, r.recall_pos, r.f_pos), (0.0, 0.0, 0.0));
        assert!((r.f_neg - 1980.0 / 1990.0).abs() < 1e-12);
        assert!((r.macro_f - 0.4975).abs() < 5e-5);
        assert!(macro_f("x", ConfusionCounts::default()).is_err());
    }

    #[test]
    fn tie_is_negative() {
        let head = HeadWeights::zeros("x", 2, false);
        assert_eq!(predict(&head, &[vec![0.3, 0.9]]), vec![false]);
        let pos = head.with_margin_vector(&[1.0, 1.0]);
        assert_eq!(predict(&pos, &[vec![0.3, 0.9], vec![2.0, 0.1]]), vec![true, true]);
    }

    #[test]
    fn counts_from_predictions() {
        let c = ConfusionCounts::from_predictions(&[true, true, false, false], &[true, false, true, false]).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 1));
        assert!(ConfusionCounts::from_predictions(&[true], &[]).is_err());
    }
}
