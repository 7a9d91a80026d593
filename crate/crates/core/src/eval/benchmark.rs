use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{macro_f, predict, ConfusionCounts, EvalError, HeadReport};
use crate::corpus::{build_vocab, generate_synthetic, synthetic_embeddings, Corpus, SynthConfig, SyntheticCorpora};
use crate::encoder::EncoderConfig;
use crate::heads::{train_heads, ModelConfig, TrainConfig, TrainMode};
use crate::scoremodel::{gaussianity_diagnostic, DiagnosticThresholds, Verdict, MIN_DIAGNOSTIC_SCORES};
use crate::tuner::{tune, TuneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Independent,
    Joint,
    JointRm,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Condition::Independent => "independent",
            Condition::Joint => "joint",
            Condition::JointRm => "joint+rm",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tune: TuneConfig,
    /// Training seeds; one full run per seed.
    pub seeds: Vec<u64>,
    /// Reported heads; empty means every head with at most four training positives.
    pub heads: Vec<String>,
    pub thresholds: DiagnosticThresholds,
    /// Worker threads; parallelism is only across independent runs.
    pub jobs: usize,
}

impl Default for BenchmarkConfig {
    /// Desk-scale settings: a small encoder trained for 60 epochs without
    /// dropout and at most 60 tuning sweeps.
    fn default() -> Self {
        BenchmarkConfig {
            synth: SynthConfig::default(),
            model: ModelConfig {
                encoder: EncoderConfig {
                    widths: vec![2, 3],
                    maps: 24,
                    context_dim: 8,
                    hidden_dim: 48,
                    ..EncoderConfig::default()
                },
                ..ModelConfig::default()
            },
            train: TrainConfig {
                epochs: 60,
                dropout: 0.0,
                ..TrainConfig::default()
            },
            tune: TuneConfig {
                max_iters: 60,
                ..TuneConfig::default()
            },
            seeds: (0..5).collect(),
            heads: Vec::new(),
            thresholds: DiagnosticThresholds::default(),
            jobs: 1,
        }
    }
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn report_heads(&self) -> Vec<String> {
        if self.heads.is_empty() {
            self.synth
                .heads
                .iter()
                .filter(|h| h.is_rare())
                .map(|h| h.name.clone())
                .collect()
        } else {
            self.heads.clone()
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.seeds.is_empty() {
            return Err(EvalError::Config("at least one seed is required".into()));
        }
        if self.jobs == 0 {
            return Err(EvalError::Config("jobs must be at least 1".into()));
        }
        let known: Vec<&str> = self.synth.heads.iter().map(|h| h.name.as_str()).collect();
        if let Some(h) = self.report_heads().iter().find(|h| !known.contains(&h.as_str())) {
            return Err(EvalError::Config(format!("unknown head {h:?}")));
        }
        self.synth
            .validate()
            .map_err(|e| EvalError::Config(e.to_string()))?;
        self.tune.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| EvalError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One (head, condition, seed) cell, or a mean over seeds when `seed` is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub head: String,
    pub condition: Condition,
    pub seed: Option<u64>,
    pub precision_pos: f64,
    pub recall_pos: f64,
    pub f_pos: f64,
    pub f_neg: f64,
    pub macro_f: f64,
    pub gaussianity_verdict: Verdict,
    pub note: String,
}

/// Per (head, seed) facts used by the acceptance checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub head: String,
    pub seed: u64,
    pub train_positive: usize,
    pub independent_macro_f: f64,
    pub joint_macro_f: f64,
    pub rm_macro_f: f64,
    pub verdict: Verdict,
    /// Skewness of each class's test margins, where that class has enough turns.
    pub skewness: [Option<f64>; 2],
    pub initial_risk: Option<f64>,
    pub final_risk: Option<f64>,
    pub trace_monotone: bool,
    pub accepted_updates: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub runs: Vec<RunSummary>,
}

fn component<E: std::fmt::Display>(context: String) -> impl FnOnce(E) -> EvalError {
    move |e| EvalError::Component {
        context,
        message: e.to_string(),
    }
}

/// Combined verdict over both classes: skewed beats heavy-tailed beats plausible.
fn class_conditional_verdict(
    margins: &[f64],
    labels: &[bool],
    thresholds: &DiagnosticThresholds,
) -> (Verdict, [Option<f64>; 2]) {
    let mut verdict = Verdict::Plausible;
    let mut skew = [None, None];
    for (y, slot) in skew.iter_mut().enumerate() {
        let class: Vec<f64> = margins
            .iter()
            .zip(labels)
            .filter(|(_, &l)| usize::from(l) == y)
            .map(|(m, _)| *m)
            .collect();
        if class.len() < MIN_DIAGNOSTIC_SCORES {
            continue;
        }
        if let Ok(r) = gaussianity_diagnostic(&class, thresholds) {
            *slot = Some(r.skewness);
            verdict = match (verdict, r.verdict) {
                (Verdict::Skewed, _) | (_, Verdict::Skewed) => Verdict::Skewed,
                (Verdict::HeavyTailed, _) | (_, Verdict::HeavyTailed) => Verdict::HeavyTailed,
                _ => Verdict::Plausible,
            };
        }
    }
    (verdict, skew)
}

fn merged(corpora: &SyntheticCorpora) -> Corpus {
    let mut all = corpora.train.clone();
    all.turns.extend(corpora.test.turns.iter().cloned());
    all
}

struct SeedResult {
    reports: Vec<(String, Condition, HeadReport)>,
    runs: Vec<RunSummary>,
}

fn run_seed(
    config: &BenchmarkConfig,
    corpora: &SyntheticCorpora,
    vocab: &Arc<crate::corpus::Vocabulary>,
    embeddings: &Arc<crate::corpus::EmbeddingTable>,
    heads: &[String],
    seed: u64,
) -> Result<SeedResult, EvalError> {
    let (train, test) = (&corpora.train, &corpora.test);
    let joint_cfg = TrainConfig {
        seed,
        mode: TrainMode::Joint,
        ..config.train.clone()
    };
    let indep_cfg = TrainConfig {
        seed,
        mode: TrainMode::Independent,
        ..config.train.clone()
    };
    let all_heads = train.heads.clone();
    let (joint, indep) = rayon::join(
        || train_heads(train, vocab.clone(), embeddings.clone(), &config.model, &joint_cfg, &all_heads),
        || train_heads(train, vocab.clone(), embeddings.clone(), &config.model, &indep_cfg, heads),
    );
    let joint = joint.map_err(component(format!("seed {seed}, joint training")))?;
    let indep = indep.map_err(component(format!("seed {seed}, independent training")))?;

    let joint_model = &joint.models[0];
    let joint_hidden = joint_model.hidden_vectors(&joint_model.inputs(test));

    let per_head: Vec<Result<(Vec<(String, Condition, HeadReport)>, RunSummary), EvalError>> = heads
        .par_iter()
        .map(|name| {
            let ctx = |what: &str| format!("head {name}, seed {seed}, {what}");
            let actual: Vec<bool> = test.turns.iter().map(|t| t.target(name)).collect();
            let score = |pred: &[bool], what: &str| -> Result<HeadReport, EvalError> {
                let counts = ConfusionCounts::from_predictions(pred, &actual)?;
                macro_f(name, counts).map_err(component(ctx(what)))
            };

            let (imodel, ii) = indep.locate(name).map_err(component(ctx("independent")))?;
            let ihidden = imodel.hidden_vectors(&imodel.inputs(test));
            let indep_report = score(&predict(&imodel.params.heads[ii], &ihidden), "independent")?;

            let head = joint_model.head(name).map_err(component(ctx("joint")))?;
            let joint_report = score(&predict(head, &joint_hidden), "joint")?;

            let margins: Vec<f64> = joint_hidden.iter().map(|h| head.margin(h)).collect();
            let (verdict, skewness) = class_conditional_verdict(&margins, &actual, &config.thresholds);

            let (tuned, trace) = tune(head, &joint_hidden, &config.tune).map_err(component(ctx("tuning")))?;
            let rm_report = score(&predict(&tuned, &joint_hidden), "joint+rm")?;

            let summary = RunSummary {
                head: name.clone(),
                seed,
                train_positive: train.positive_count(name),
                independent_macro_f: indep_report.macro_f,
                joint_macro_f: joint_report.macro_f,
                rm_macro_f: rm_report.macro_f,
                verdict,
                skewness,
                initial_risk: trace.initial_risk,
                final_risk: trace.final_risk,
                trace_monotone: trace.is_monotone(),
                accepted_updates: trace.records.len(),
                sweeps: trace.sweeps,
                converged: trace.converged,
                aborted: trace.aborted.clone(),
            };
            Ok((
                vec![
                    (name.clone(), Condition::Independent, indep_report),
                    (name.clone(), Condition::Joint, joint_report),
                    (name.clone(), Condition::JointRm, rm_report),
                ],
                summary,
            ))
        })
        .collect();

    let mut reports = Vec::new();
    let mut runs = Vec::new();
    for r in per_head {
        let (rep, run) = r?;
        reports.extend(rep);
        runs.push(run);
    }
    Ok(SeedResult { reports, runs })
}

fn note_for(condition: Condition, verdict: Verdict) -> String {
    match (condition, verdict) {
        (Condition::JointRm, Verdict::Skewed) => "gaussianity violated: skewed margins".into(),
        (Condition::JointRm, Verdict::HeavyTailed) => "gaussianity violated: heavy tails".into(),
        _ => String::new(),
    }
}

/// Generates the synthetic corpora, then for every seed trains joint and
/// independent decoders, tunes each reported head of the joint decoder on the
/// test hiddens, and evaluates all three conditions on the test corpus.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport, EvalError> {
    config.validate()?;
    let corpora = generate_synthetic(&config.synth).map_err(component("corpus generation".into()))?;
    let vocab = Arc::new(build_vocab(&merged(&corpora), 1));
    let embeddings =
        Arc::new(synthetic_embeddings(&config.synth, &vocab).map_err(component("embeddings".into()))?);
    let heads = config.report_heads();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let results: Vec<Result<SeedResult, EvalError>> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&s| run_seed(config, &corpora, &vocab, &embeddings, &heads, s))
            .collect()
    });

    let mut rows = Vec::new();
    let mut runs = Vec::new();
    let mut by_cell: BTreeMap<(usize, Condition), Vec<HeadReport>> = BTreeMap::new();
    let mut verdicts: BTreeMap<(String, u64), Verdict> = BTreeMap::new();
    for (result, &seed) in results.into_iter().zip(&config.seeds) {
        let r = result?;
        for run in &r.runs {
            verdicts.insert((run.head.clone(), seed), run.verdict);
        }
        for (head, cond, rep) in r.reports {
            let verdict = verdicts[&(head.clone(), seed)];
            rows.push(BenchmarkRow {
                head: head.clone(),
                condition: cond,
                seed: Some(seed),
                precision_pos: rep.precision_pos,
                recall_pos: rep.recall_pos,
                f_pos: rep.f_pos,
                f_neg: rep.f_neg,
                macro_f: rep.macro_f,
                gaussianity_verdict: verdict,
                note: note_for(cond, verdict),
            });
            let hi = heads.iter().position(|h| *h == head).expect("reported head");
            by_cell.entry((hi, cond)).or_default().push(rep);
        }
        runs.extend(r.runs);
    }
    rows.sort_by(|a, b| {
        let ka = heads.iter().position(|h| *h == a.head);
        let kb = heads.iter().position(|h| *h == b.head);
        (ka, a.condition, a.seed).cmp(&(kb, b.condition, b.seed))
    });
    for ((hi, cond), reps) in &by_cell {
        let n = reps.len() as f64;
        let mean = |f: fn(&HeadReport) -> f64| reps.iter().map(f).sum::<f64>() / n;
        let head = &heads[*hi];
        let head_verdicts: Vec<Verdict> = config.seeds.iter().map(|s| verdicts[&(head.clone(), *s)]).collect();
        let verdict = majority(&head_verdicts);
        rows.push(BenchmarkRow {
            head: head.clone(),
            condition: *cond,
            seed: None,
            precision_pos: mean(|r| r.precision_pos),
            recall_pos: mean(|r| r.recall_pos),
            f_pos: mean(|r| r.f_pos),
            f_neg: mean(|r| r.f_neg),
            macro_f: mean(|r| r.macro_f),
            gaussianity_verdict: verdict,
            note: note_for(*cond, verdict),
        });
    }
    Ok(BenchmarkReport { rows, runs })
}

/// Most frequent verdict; ties resolved toward the less favourable one.
pub fn majority(verdicts: &[Verdict]) -> Verdict {
    let count = |v: Verdict| verdicts.iter().filter(|&&x| x == v).count();
    [Verdict::Skewed, Verdict::HeavyTailed, Verdict::Plausible]
        .into_iter()
        .max_by_key(|&v| (count(v), matches!(v, Verdict::Skewed) as u8 * 2 + matches!(v, Verdict::HeavyTailed) as u8))
        .expect("non-empty")
}

impl BenchmarkReport {
    pub fn mean_rows(&self) -> impl Iterator<Item = &BenchmarkRow> {
        self.rows.iter().filter(|r| r.seed.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "head,condition,seed,precision_pos,recall_pos,F_pos,F_neg,macro_F,gaussianity_verdict,note\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.head,
                r.condition,
                r.seed.map_or_else(|| "mean".to_string(), |x| x.to_string()),
                r.precision_pos,
                r.recall_pos,
                r.f_pos,
                r.f_neg,
                r.macro_f,
                r.gaussianity_verdict,
                r.note
            );
        }
        s
    }

    pub fn to_table(&self) -> String {
        let hw = self.rows.iter().map(|r| r.head.len()).max().unwrap_or(4).max(4);
        let mut s = format!(
            "{:<hw$}  {:<11}  {:>4}  {:>8}  {:>8}  {:>6}  {:>6}  {:>7}  {:<12}  {}\n",
            "head", "condition", "seed", "prec_pos", "rec_pos", "F_pos", "F_neg", "macro_F", "gaussianity", "note"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<hw$}  {:<11}  {:>4}  {:>8.2}  {:>8.2}  {:>6.2}  {:>6.2}  {:>7.2}  {:<12}  {}",
                r.head,
                r.condition.to_string(),
                r.seed.map_or_else(|| "mean".to_string(), |x| x.to_string()),
                100.0 * r.precision_pos,
                100.0 * r.recall_pos,
                100.0 * r.f_pos,
                100.0 * r.f_neg,
                100.0 * r.macro_f,
                r.gaussianity_verdict.to_string(),
                r.note
            );
        }
        s.trim_end_matches(' ').to_string()
    }
}
