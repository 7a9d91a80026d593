//! `rmtune` command line: corpus generation, training, hidden export, tuning,
//! diagnostics, evaluation, the benchmark and the risk oracle check.
//!
//! Every command that writes files records a JSON run manifest next to its
//! output, once before the run and again after it with output checksums.
//! `rerun --manifest` replays one.

mod manifest;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::corpus::{
    build_vocab, generate_synthetic, load_corpus, load_embeddings, synthetic_embeddings, Corpus, EmbeddingTable,
    SynthConfig, Vocabulary, PAD, UNK,
};
use crate::encoder::{ContextMode, EncoderConfig, NbestPooling};
use crate::eval::{evaluate, reports_table, run_benchmark, BenchmarkConfig};
use crate::heads::{
    checkpoint_text, export_hidden, load_checkpoint, read_hidden, train, HiddenSet, ModelConfig, TrainConfig,
    TrainMode, TrainedDecoder,
};
use crate::risk::grid_check;
use crate::scoremodel::{
    gaussianity_diagnostic, read_scores, DiagnosticThresholds, GaussianityReport, PriorMode,
};
use crate::tuner::{tune, TuneConfig, TuneTrace};
use crate::{Error, Result};

pub use manifest::{checksums, manifest_path, sha256_file, RunManifest, RunStatus};

#[derive(Debug, Parser)]
#[command(name = "rmtune", version, about = "Unsupervised risk-minimization tuning of binary decoder heads")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic train/test corpora, vocabulary and word vectors.
    Gen(GenArgs),
    /// Train a decoder (joint or independent heads).
    Train(TrainArgs),
    /// Write the hidden vector of every turn of a corpus.
    ExportHidden(ExportArgs),
    /// Tune head margin vectors on unlabeled hidden vectors.
    Tune(TuneArgs),
    /// Moment-based Gaussianity check of head margins or a scores file.
    Diagnose(DiagnoseArgs),
    /// Per-head macro-F on a labeled corpus.
    Eval(EvalArgs),
    /// Independent vs joint vs joint+RM on the synthetic rare-slot benchmark.
    Benchmark(BenchmarkArgs),
    /// Cross-check the closed-form risk against quadrature and Monte Carlo.
    RiskCheck(RiskCheckArgs),
    /// Replay a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

fn parse_priors(s: &str) -> std::result::Result<(f64, f64), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b] = parts.as_slice() else {
        return Err(format!("expected p0,p1 (got {s:?})"));
    };
    let p0: f64 = a.parse().map_err(|e| format!("{a:?}: {e}"))?;
    let p1: f64 = b.parse().map_err(|e| format!("{b:?}: {e}"))?;
    crate::scoremodel::check_priors(p0, p1).map_err(|e| e.to_string())?;
    Ok((p0, p1))
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator settings (TOML); built-in benchmark settings when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = TrainMode::Joint)]
    pub mode: TrainMode,
    #[arg(long, default_value_t = 25)]
    pub epochs: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Word-vector file (`word v1 ... vd` per line); its words join the vocabulary.
    #[arg(long)]
    pub emb: Option<PathBuf>,
    /// Dimension of random word vectors when no file is given.
    #[arg(long, default_value_t = 100)]
    pub emb_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub context_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub maps: usize,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub widths: Vec<usize>,
    /// Number of previous system acts fed to the context encoder.
    #[arg(long, default_value_t = 4)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = NbestPooling::Weighted)]
    pub pooling: NbestPooling,
    #[arg(long, value_enum, default_value_t = ContextMode::Recurrent)]
    pub context_mode: ContextMode,
    #[arg(long)]
    pub head_bias: bool,
    #[arg(long, default_value_t = 0.05)]
    pub init_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Selects the model of an independent checkpoint.
    #[arg(long)]
    pub head: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Unlabeled hidden vectors (from export-hidden).
    #[arg(long, conflicts_with = "corpus")]
    pub hidden: Option<PathBuf>,
    /// Unlabeled corpus whose hidden vectors are computed on the fly.
    #[arg(long, required_unless_present = "hidden")]
    pub corpus: Option<PathBuf>,
    /// Heads to tune (repeatable); every head when absent.
    #[arg(long)]
    pub head: Vec<String>,
    #[arg(long, value_parser = parse_priors, default_value = "0.99,0.01")]
    pub priors: (f64, f64),
    #[arg(long, value_enum, default_value_t = PriorMode::Fixed)]
    pub prior_mode: PriorMode,
    #[arg(long, default_value_t = 1e-2)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = OnOff::On)]
    pub guard: OnOff,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Tuned checkpoint; traces go to `<out>.<head>.trace`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// One score per line.
    #[arg(long, conflicts_with_all = ["model", "hidden", "corpus"])]
    pub scores: Option<PathBuf>,
    #[arg(long, required_unless_present = "scores")]
    pub model: Option<PathBuf>,
    #[arg(long, required_unless_present = "scores")]
    pub head: Option<String>,
    #[arg(long, conflicts_with = "corpus")]
    pub hidden: Option<PathBuf>,
    /// Labeled corpus; adds a per-class diagnostic of the margins.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub skew_threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kurtosis_threshold: f64,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Table file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Benchmark settings (JSON); built-in desk-scale settings when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Number of seeds, `0..n`.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Tuning sweeps per head.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RiskCheckArgs {
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_priors, default_value = "0.99,0.01")]
    pub priors: (f64, f64),
    /// Table file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fail unless every output checksum matches the manifest.
    #[arg(long)]
    pub verify: bool,
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

struct Recorder {
    manifest: RunManifest,
    path: Option<PathBuf>,
}

impl Recorder {
    fn start(
        command: &str,
        argv: &[String],
        config: serde_json::Value,
        seeds: Vec<u64>,
        inputs: &[&Path],
        out: Option<(&Path, bool)>,
    ) -> Result<Self> {
        let inputs: Vec<PathBuf> = inputs.iter().map(|p| p.to_path_buf()).collect();
        let manifest = RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            config,
            seeds,
            inputs: checksums(&inputs)?,
            outputs: Default::default(),
            status: RunStatus::Started,
        };
        let path = out.map(|(p, is_dir)| manifest_path(p, is_dir));
        let r = Recorder { manifest, path };
        r.write()?;
        Ok(r)
    }

    fn write(&self) -> Result<()> {
        match &self.path {
            Some(p) => write_atomic(p, self.manifest.to_json().as_bytes()),
            None => Ok(()),
        }
    }

    fn finish(mut self, outputs: &[PathBuf]) -> Result<()> {
        self.manifest.outputs = checksums(outputs)?;
        self.manifest.status = RunStatus::Completed;
        self.write()
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<Vec<PathBuf>> {
    match out {
        Some(p) => {
            write_atomic(p, text.as_bytes())?;
            Ok(vec![p.to_path_buf()])
        }
        None => {
            print!("{text}");
            Ok(Vec::new())
        }
    }
}

fn cmd_gen(args: &GenArgs, argv: &[String]) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => SynthConfig::from_toml(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    let rec = Recorder::start(
        "gen",
        argv,
        serde_json::to_value(&config).expect("serializes"),
        vec![config.seed],
        &inputs,
        Some((&args.out, true)),
    )?;
    let corpora = generate_synthetic(&config)?;
    let mut all = corpora.train.clone();
    all.turns.extend(corpora.test.turns.iter().cloned());
    let vocab = build_vocab(&all, 1);
    let emb = synthetic_embeddings(&config, &vocab)?;
    let files = [
        ("train.jsonl", corpora.train.to_jsonl()),
        ("test.jsonl", corpora.test.to_jsonl()),
        ("vocab.txt", vocab.to_text()),
        ("embeddings.txt", emb.to_text(&vocab)),
        ("synth.toml", config.to_toml()),
    ];
    let mut outputs = Vec::new();
    for (name, text) in files {
        let p = args.out.join(name);
        write_atomic(&p, text.as_bytes())?;
        outputs.push(p);
    }
    rec.finish(&outputs)
}

/// Words of a word-vector file and its dimension (from the first line).
fn embedding_file_words(path: &Path) -> Result<(Vec<String>, usize)> {
    let text = read_text(path)?;
    let mut words = Vec::new();
    let mut dim = None;
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let Some(w) = parts.next() else { continue };
        if dim.is_none() {
            dim = Some(parts.count());
        }
        words.push(w.to_string());
    }
    let dim = dim.filter(|&d| d > 0).ok_or_else(|| Error::Cli(format!("{}: no word vectors", path.display())))?;
    Ok((words, dim))
}

fn cmd_train(args: &TrainArgs, argv: &[String]) -> Result<()> {
    let corpus = load_corpus(&args.corpus)?;
    let model_config = ModelConfig {
        encoder: EncoderConfig {
            widths: args.widths.clone(),
            maps: args.maps,
            context_dim: args.context_dim,
            hidden_dim: args.hidden_dim,
            window: args.window,
            pooling: args.pooling,
            context_mode: args.context_mode,
        },
        head_bias: args.head_bias,
        init_scale: args.init_scale,
    };
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        dropout: args.dropout,
        seed: args.seed,
        mode: args.mode,
        ..TrainConfig::default()
    };
    model_config.encoder.validate()?;
    train_config.validate()?;
    let mut inputs = vec![args.corpus.as_path()];
    inputs.extend(args.emb.as_deref());
    let rec = Recorder::start(
        "train",
        argv,
        json!({ "model": model_config, "train": train_config, "emb_dim": args.emb_dim }),
        vec![args.seed],
        &inputs,
        Some((&args.out, false)),
    )?;

    let base = build_vocab(&corpus, 1);
    let (vocab, emb) = match &args.emb {
        Some(path) => {
            let (words, dim) = embedding_file_words(path)?;
            let mut tokens: Vec<String> = base.tokens()[2..].to_vec();
            let known: std::collections::BTreeSet<String> = tokens.iter().cloned().collect();
            let mut seen = known;
            for w in words {
                if w != PAD && w != UNK && seen.insert(w.clone()) {
                    tokens.push(w);
                }
            }
            let vocab = Vocabulary::from_tokens(tokens)?;
            let emb = load_embeddings(path, &vocab, dim, args.seed)?;
            (vocab, emb)
        }
        None => {
            let emb = EmbeddingTable::random(&base, args.emb_dim, args.seed);
            (base, emb)
        }
    };
    let decoder = train(&corpus, Arc::new(vocab), Arc::new(emb), &model_config, &train_config)?;
    write_atomic(&args.out, checkpoint_text(&decoder).as_bytes())?;
    rec.finish(std::slice::from_ref(&args.out))
}

fn select_model<'a>(decoder: &'a TrainedDecoder, head: Option<&str>) -> Result<&'a crate::heads::DecoderModel> {
    match head {
        Some(h) => Ok(decoder.locate(h)?.0),
        None if decoder.models.len() == 1 => Ok(&decoder.models[0]),
        None => Err(Error::Cli(format!(
            "checkpoint holds {} models; choose one with --head",
            decoder.models.len()
        ))),
    }
}

fn cmd_export_hidden(args: &ExportArgs, argv: &[String]) -> Result<()> {
    let rec = Recorder::start(
        "export-hidden",
        argv,
        json!({ "head": args.head }),
        Vec::new(),
        &[&args.model, &args.corpus],
        Some((&args.out, false)),
    )?;
    let decoder = load_checkpoint(&args.model)?;
    let corpus = load_corpus(&args.corpus)?;
    let model = select_model(&decoder, args.head.as_deref())?;
    let set = HiddenSet::from_pairs(model.hidden_dim(), export_hidden(model, &corpus));
    write_atomic(&args.out, set.to_text().as_bytes())?;
    rec.finish(std::slice::from_ref(&args.out))
}

fn trace_path(out: &Path, head: &str) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(format!(".{head}.trace"));
    PathBuf::from(s)
}

fn cmd_tune(args: &TuneArgs, argv: &[String]) -> Result<()> {
    let config = TuneConfig {
        delta: args.delta,
        learning_rate: args.lr,
        max_iters: args.iters,
        tol: args.tol,
        priors: args.priors,
        prior_mode: args.prior_mode,
        guard: args.guard == OnOff::On,
        ..TuneConfig::default()
    };
    config.validate()?;
    let mut inputs = vec![args.model.as_path()];
    inputs.extend(args.hidden.as_deref());
    inputs.extend(args.corpus.as_deref());
    let rec = Recorder::start(
        "tune",
        argv,
        json!({ "tune": config, "heads": args.head, "jobs": args.jobs }),
        Vec::new(),
        &inputs,
        Some((&args.out, false)),
    )?;
    let mut decoder = load_checkpoint(&args.model)?;
    let heads: Vec<String> = if args.head.is_empty() {
        decoder.head_names()
    } else {
        args.head.clone()
    };
    for h in &heads {
        decoder.locate(h)?;
    }

    // Hidden vectors per model index.
    let mut hidden_by_model: Vec<Option<Vec<Vec<f64>>>> = vec![None; decoder.models.len()];
    let model_index = |h: &str| -> usize {
        decoder
            .models
            .iter()
            .position(|m| m.head_index(h).is_ok())
            .expect("located above")
    };
    match (&args.hidden, &args.corpus) {
        (Some(path), _) => {
            let models: std::collections::BTreeSet<usize> = heads.iter().map(|h| model_index(h)).collect();
            if models.len() != 1 {
                return Err(Error::Cli(
                    "a hidden file serves one model; pass --corpus to tune heads of several models".into(),
                ));
            }
            let set = read_hidden(path)?;
            let k = *models.iter().next().expect("one model");
            hidden_by_model[k] = Some(set.vectors);
        }
        (None, Some(path)) => {
            let corpus = load_corpus(path)?;
            for h in &heads {
                let k = model_index(h);
                if hidden_by_model[k].is_none() {
                    let m = &decoder.models[k];
                    hidden_by_model[k] = Some(m.hidden_vectors(&m.inputs(&corpus)));
                }
            }
        }
        (None, None) => unreachable!("clap requires one of --hidden/--corpus"),
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::Cli(e.to_string()))?;
    let results: Vec<Result<(crate::heads::HeadWeights, TuneTrace)>> = pool.install(|| {
        heads
            .par_iter()
            .map(|h| {
                let k = model_index(h);
                let head = decoder.models[k].head(h)?;
                let hidden = hidden_by_model[k].as_ref().expect("computed above");
                Ok(tune(head, hidden, &config)?)
            })
            .collect()
    });
    let mut outputs = vec![args.out.clone()];
    let mut tuned = Vec::new();
    for (h, r) in heads.iter().zip(results) {
        let (w, trace) = r?;
        let p = trace_path(&args.out, h);
        write_atomic(&p, trace.to_text().as_bytes())?;
        outputs.push(p);
        tuned.push(w);
    }
    for w in tuned {
        decoder.replace_head(w)?;
    }
    write_atomic(&args.out, checkpoint_text(&decoder).as_bytes())?;
    rec.finish(&outputs)
}

fn prefixed(prefix: &str, r: &GaussianityReport) -> String {
    r.to_report()
        .lines()
        .map(|l| format!("{prefix}{l}\n"))
        .collect()
}

fn cmd_diagnose(args: &DiagnoseArgs, argv: &[String]) -> Result<()> {
    let thresholds = DiagnosticThresholds {
        skewness: args.skew_threshold,
        excess_kurtosis: args.kurtosis_threshold,
    };
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(args.scores.as_deref());
    inputs.extend(args.model.as_deref());
    inputs.extend(args.hidden.as_deref());
    inputs.extend(args.corpus.as_deref());
    let rec = Recorder::start(
        "diagnose",
        argv,
        json!({ "thresholds": thresholds, "head": args.head }),
        Vec::new(),
        &inputs,
        args.out.as_deref().map(|p| (p, false)),
    )?;
    let mut report = String::new();
    if let Some(path) = &args.scores {
        let scores = read_scores(path)?;
        report.push_str(&gaussianity_diagnostic(&scores, &thresholds)?.to_report());
    } else {
        let model_path = args.model.as_ref().expect("clap requires --model");
        let head_name = args.head.as_deref().expect("clap requires --head");
        let decoder = load_checkpoint(model_path)?;
        let model = decoder.locate(head_name)?.0;
        let head = model.head(head_name)?;
        let (hidden, labels) = match (&args.hidden, &args.corpus) {
            (Some(p), _) => (read_hidden(p)?.vectors, None),
            (None, Some(p)) => {
                let corpus = load_corpus(p)?;
                let labels: Vec<bool> = corpus.turns.iter().map(|t| t.target(head_name)).collect();
                (model.hidden_vectors(&model.inputs(&corpus)), Some(labels))
            }
            (None, None) => return Err(Error::Cli("diagnose needs --scores, --hidden or --corpus".into())),
        };
        let margins: Vec<f64> = hidden.iter().map(|h| head.margin(h)).collect();
        let _ = writeln!(report, "head {head_name}");
        report.push_str(&prefixed("all.", &gaussianity_diagnostic(&margins, &thresholds)?));
        if let Some(labels) = labels {
            for y in [0usize, 1] {
                let class: Vec<f64> = margins
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| usize::from(l) == y)
                    .map(|(m, _)| *m)
                    .collect();
                match gaussianity_diagnostic(&class, &thresholds) {
                    Ok(r) => report.push_str(&prefixed(&format!("class{y}."), &r)),
                    Err(e) => {
                        let _ = writeln!(report, "class{y}.skipped {}", e.to_string().replace(' ', "_"));
                    }
                }
            }
        }
    }
    let outputs = emit(args.out.as_deref(), &report)?;
    rec.finish(&outputs)
}

fn cmd_eval(args: &EvalArgs, argv: &[String]) -> Result<()> {
    let rec = Recorder::start(
        "eval",
        argv,
        json!({}),
        Vec::new(),
        &[&args.model, &args.corpus],
        args.out.as_deref().map(|p| (p, false)),
    )?;
    let decoder = load_checkpoint(&args.model)?;
    let corpus: Corpus = load_corpus(&args.corpus)?;
    let reports = evaluate(&decoder, &corpus)?;
    let outputs = emit(args.out.as_deref(), &reports_table(&reports))?;
    rec.finish(&outputs)
}

fn cmd_benchmark(args: &BenchmarkArgs, argv: &[String]) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => BenchmarkConfig::from_json(&read_text(p)?)?,
        None => BenchmarkConfig::default(),
    };
    if let Some(n) = args.seeds {
        config.seeds = (0..n as u64).collect();
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(i) = args.iters {
        config.tune.max_iters = i;
    }
    config.jobs = args.jobs;
    config.validate()?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let inputs: Vec<&Path> = args.config.iter().map(PathBuf::as_path).collect();
    let rec = Recorder::start(
        "benchmark",
        argv,
        serde_json::to_value(&config).expect("serializes"),
        config.seeds.clone(),
        &inputs,
        Some((&args.out, true)),
    )?;
    let report = run_benchmark(&config)?;
    let table = report.to_table();
    print!("{table}");
    let files = [
        ("benchmark.csv", report.to_csv()),
        ("benchmark.txt", table),
        ("runs.json", serde_json::to_string_pretty(&report.runs).expect("serializes") + "\n"),
        ("config.json", config.to_json() + "\n"),
    ];
    let mut outputs = Vec::new();
    for (name, text) in files {
        let p = args.out.join(name);
        write_atomic(&p, text.as_bytes())?;
        outputs.push(p);
    }
    rec.finish(&outputs)
}

fn cmd_risk_check(args: &RiskCheckArgs, argv: &[String]) -> Result<()> {
    let rec = Recorder::start(
        "risk-check",
        argv,
        json!({ "samples": args.samples, "priors": [args.priors.0, args.priors.1] }),
        vec![args.seed],
        &[],
        args.out.as_deref().map(|p| (p, false)),
    )?;
    let checks = grid_check(args.priors, args.samples, args.seed)?;
    let mut s = format!(
        "{:>5} {:>5} {:>5} {:>5} {:>14} {:>10} {:>14} {:>10} {:>5}\n",
        "mu0", "sig0", "mu1", "sig1", "closed_form", "quad_rel", "monte_carlo", "mc_se", "pass"
    );
    for c in &checks {
        let g = &c.gaussians;
        let _ = writeln!(
            s,
            "{:>5} {:>5} {:>5} {:>5} {:>14.8e} {:>10.2e} {:>14.8e} {:>10.2e} {:>5}",
            g.mu0,
            g.sigma0,
            g.mu1,
            g.sigma1,
            c.closed_form,
            c.quadrature_rel_diff,
            c.monte_carlo.unwrap_or(f64::NAN),
            c.monte_carlo_se.unwrap_or(f64::NAN),
            if c.pass() { "pass" } else { "FAIL" }
        );
    }
    let failed = checks.iter().filter(|c| !c.pass()).count();
    let _ = writeln!(s, "summary points={} failed={failed}", checks.len());
    let outputs = emit(args.out.as_deref(), &s)?;
    rec.finish(&outputs)?;
    if failed > 0 {
        return Err(Error::Risk(crate::risk::RiskError::Quadrature(format!(
            "{failed} grid points failed the oracle cross-check"
        ))));
    }
    Ok(())
}

fn cmd_rerun(args: &RerunArgs) -> Result<()> {
    let old = RunManifest::load(&args.manifest)?;
    let mut full = vec!["rmtune".to_string()];
    full.extend(old.argv.iter().cloned());
    let cli = Cli::try_parse_from(&full).map_err(|e| Error::Cli(e.to_string()))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::Cli("a manifest cannot replay rerun".into()));
    }
    execute(&cli, &old.argv)?;
    if args.verify {
        let paths: Vec<PathBuf> = old.outputs.keys().map(PathBuf::from).collect();
        let now = checksums(&paths)?;
        if now != old.outputs {
            let differing: Vec<&String> = old.outputs.keys().filter(|k| now.get(*k) != old.outputs.get(*k)).collect();
            return Err(Error::Cli(format!("outputs differ from the manifest: {differing:?}")));
        }
    }
    Ok(())
}

/// Runs a parsed command; `argv` (without the program name) goes into the manifest.
pub fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, argv),
        Command::Train(a) => cmd_train(a, argv),
        Command::ExportHidden(a) => cmd_export_hidden(a, argv),
        Command::Tune(a) => cmd_tune(a, argv),
        Command::Diagnose(a) => cmd_diagnose(a, argv),
        Command::Eval(a) => cmd_eval(a, argv),
        Command::Benchmark(a) => cmd_benchmark(a, argv),
        Command::RiskCheck(a) => cmd_risk_check(a, argv),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

/// Single-line JSON error record.
pub fn error_json(module: &str, message: &str) -> String {
    json!({ "error": { "module": module, "message": message } }).to_string()
}

/// Entry point: parses `args` (including the program name), runs the
/// command and returns the process exit code. Errors go to stderr as one
/// JSON line.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.render().to_string();
            let message = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("invalid arguments");
            eprintln!("{}", error_json("cli", message.trim_start_matches("error: ")));
            return 2;
        }
    };
    match execute(&cli, &args[1.min(args.len())..]) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_json(e.module(), &e.to_string()));
            1
        }
    }
}
