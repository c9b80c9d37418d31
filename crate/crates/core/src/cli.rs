//! Command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::HashMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::codec::{Mode, Vocabulary};
use crate::corpus::{generate_synthetic, load_corpus, save_corpus, split_corpus, GeneratorSpec};
use crate::fsutil::write_atomic;
use crate::metrics::score;
use crate::model::{grad_check, GradCheckExample, GradCheckOptions, ModelConfig, Pooling};
use crate::pipeline::{save_predictions, PredictOptions, PredictionRecord, Predictor};
use crate::training::{
    history_to_jsonl, load_checkpoint, load_vocab, save_checkpoint, train, Checkpoint,
    ProgressPrinter, TaskOrder, TrainConfig, TrainError,
};

const FORMATS: &str = "\
FILE FORMATS
  corpus       JSON lines. Line 1: {\"ontology\":{\"frames\":[..],\"roles\":[..]}}.
               Then one record per (sentence, trigger):
               {\"tokens\":[..],\"trigger\":[s,e],\"frame\":F,\"roles\":[{\"label\":R,\"span\":[s,e]},..]}
               Spans are 0-based and inclusive.
  predictions  JSON lines, one per input record, no header: the corpus record
               fields plus \"confidence\" (number or null) and \"diagnostics\".
  checkpoint   Binary container (magic FKCKPT01, JSON header, f64 tensors,
               SHA-256 trailer) with the vocabulary beside it in
               <checkpoint>.vocab.json.
  history      JSON lines, one record per epoch.
  config file  key = value lines using long flag names (without --); '#'
               starts a comment. Flags given on the command line win.

EXIT CODES
  0 success, 1 usage error, 2 data error, 3 numerical failure";

#[derive(Debug, Parser)]
#[command(name = "framekit", version, about = "Frame-semantic parsing toolkit", after_long_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Generate a synthetic annotated corpus.
    GenCorpus(GenCorpusArgs),
    /// Train a model in Full-Gen or multi-task mode.
    Train(TrainArgs),
    /// Predict frame interpretations for every record of a corpus.
    Predict(PredictArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
#[command(after_long_help = FORMATS)]
pub struct GenCorpusArgs {
    /// Generator spec (JSON); the built-in spec when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the spec's example count.
    #[arg(long)]
    pub num_examples: Option<usize>,
    /// Corpus output path; the spec is echoed to <out>.spec.json.
    #[arg(long)]
    pub out: PathBuf,
    /// key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_long_help = FORMATS)]
pub struct TrainArgs {
    /// Corpus to split into train/dev/test.
    #[arg(long, required_unless_present = "train")]
    pub corpus: Option<PathBuf>,
    /// Pre-split training corpus (use with --dev instead of --corpus).
    #[arg(long, requires = "dev", conflicts_with = "corpus")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub dev: Option<PathBuf>,
    /// fullgen or multitask.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Epoch history output; defaults to <out>.history.jsonl.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Directory to write train.jsonl, dev.jsonl and test.jsonl to.
    #[arg(long)]
    pub write_splits: Option<PathBuf>,
    /// Train/dev/test ratios, comma separated.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub balancer_decay: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    /// random or strict.
    #[arg(long)]
    pub task_order: Option<String>,
    /// Disable EMA loss balancing (all weights 1).
    #[arg(long)]
    pub no_balance: bool,
    /// Skip dev frame accuracy after each epoch.
    #[arg(long)]
    pub no_dev_eval: bool,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long)]
    pub max_input_len: Option<usize>,
    #[arg(long)]
    pub max_output_len: Option<usize>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    /// trigger or sequence.
    #[arg(long)]
    pub pooling: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_long_help = FORMATS)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Corpus whose records are predicted.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Predictions output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Expected mode; refuses checkpoints trained in the other one.
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Condition role prediction on the gold frame.
    #[arg(long)]
    pub gold_frames: bool,
    /// Drop roles the ontology does not allow for the predicted frame.
    #[arg(long)]
    pub restrict_roles: bool,
}

#[derive(Debug, Args)]
#[command(after_long_help = FORMATS)]
pub struct EvaluateArgs {
    /// Prediction file.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold corpus file.
    #[arg(long)]
    pub gold: PathBuf,
    /// JSON report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Score roles even when the predicted frame is wrong.
    #[arg(long)]
    pub no_frame_gating: bool,
}

#[derive(Debug, Args)]
#[command(after_long_help = FORMATS)]
pub struct GradcheckArgs {
    /// Pass threshold on the max relative error.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Coordinates sampled per tensor.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub num_layers: Option<usize>,
    #[arg(long)]
    pub num_heads: Option<usize>,
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// JSON report output.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// Values from an optional key = value file.
struct Settings {
    values: HashMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self, CliError> {
        let mut values = HashMap::new();
        let Some(path) = path else {
            return Ok(Self { values });
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "{} line {}: expected key = value",
                    path.display(),
                    i + 1
                )));
            };
            let key = k.trim().replace('_', "-");
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Usage(format!(
                    "{} line {}: unknown key `{}`",
                    path.display(),
                    i + 1,
                    k.trim()
                )));
            }
            values.insert(key, v.trim().to_owned());
        }
        Ok(Self { values })
    }

    /// The flag value if given, else the config value, else `None`.
    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}"))),
        }
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool, CliError> {
        Ok(flag || self.get::<bool>(None, key)?.unwrap_or(false))
    }
}

fn parse_ratios(s: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--split: {e}")))?;
    parts
        .try_into()
        .map_err(|_| CliError::Usage("--split needs three comma-separated ratios".into()))
}

fn parse_task_order(s: &str) -> Result<TaskOrder, CliError> {
    match s {
        "random" => Ok(TaskOrder::RandomRoundRobin),
        "strict" => Ok(TaskOrder::StrictAlternation),
        other => Err(CliError::Usage(format!(
            "unknown task order `{other}` (random or strict)"
        ))),
    }
}

fn parse_pooling(s: &str) -> Result<Pooling, CliError> {
    match s {
        "trigger" => Ok(Pooling::TriggerMean),
        "sequence" => Ok(Pooling::SequenceMean),
        other => Err(CliError::Usage(format!(
            "unknown pooling `{other}` (trigger or sequence)"
        ))),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), &["spec", "seed", "num-examples"])?;
    let spec_path: Option<PathBuf> = s.get(a.spec, "spec")?;
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(&p)
                .map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            GeneratorSpec::from_json(&text).map_err(data)?
        }
        None => GeneratorSpec::default(),
    };
    if let Some(n) = s.get(a.num_examples, "num-examples")? {
        spec.num_examples = n;
    }
    let seed = s.get(a.seed, "seed")?.unwrap_or(0);
    let corpus = generate_synthetic(&spec, seed).map_err(data)?;
    save_corpus(&corpus, &a.out).map_err(data)?;
    write_file(
        &sibling(&a.out, ".spec.json"),
        spec.to_json_pretty().as_bytes(),
    )?;
    eprintln!("wrote {} examples to {}", corpus.len(), a.out.display());
    Ok(())
}

const TRAIN_KEYS: &[&str] = &[
    "corpus",
    "train",
    "dev",
    "mode",
    "history",
    "write-splits",
    "split",
    "split-seed",
    "seed",
    "epochs",
    "learning-rate",
    "batch-size",
    "balancer-decay",
    "warmup-steps",
    "task-order",
    "no-balance",
    "no-dev-eval",
    "embed-dim",
    "num-layers",
    "num-heads",
    "ffn-dim",
    "max-input-len",
    "max-output-len",
    "dropout-rate",
    "pooling",
];

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), TRAIN_KEYS)?;
    let mode = s
        .get(a.mode, "mode")?
        .ok_or_else(|| CliError::Usage("--mode is required (fullgen or multitask)".into()))?;
    let seed = s.get(a.seed, "seed")?.unwrap_or(0);

    let corpus_path: Option<PathBuf> = s.get(a.corpus.clone(), "corpus")?;
    let train_path: Option<PathBuf> = s.get(a.train.clone(), "train")?;
    let dev_path: Option<PathBuf> = s.get(a.dev.clone(), "dev")?;
    let (train_c, dev_c) = match (corpus_path, train_path, dev_path) {
        (Some(c), None, None) => {
            let corpus = load_corpus(&c).map_err(data)?;
            let ratios = match s.get::<String>(a.split.clone(), "split")? {
                Some(r) => parse_ratios(&r)?,
                None => [0.8, 0.1, 0.1],
            };
            let split_seed = s.get(a.split_seed, "split-seed")?.unwrap_or(seed);
            let (tr, dev, test) = split_corpus(&corpus, ratios, split_seed).map_err(data)?;
            if let Some(dir) = s.get::<PathBuf>(a.write_splits.clone(), "write-splits")? {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
                for (name, part) in [("train", &tr), ("dev", &dev), ("test", &test)] {
                    save_corpus(part, dir.join(format!("{name}.jsonl"))).map_err(data)?;
                }
            }
            (tr, dev)
        }
        (None, Some(t), Some(d)) => (
            load_corpus(&t).map_err(data)?,
            load_corpus(&d).map_err(data)?,
        ),
        _ => {
            return Err(CliError::Usage(
                "give either --corpus or both --train and --dev".into(),
            ))
        }
    };
    if train_c.ontology != dev_c.ontology {
        return Err(CliError::Data("train and dev ontologies differ".into()));
    }
    let ontology = train_c.ontology.clone();
    let vocab = Vocabulary::build(&train_c);

    let mut mc = ModelConfig {
        seed,
        ..ModelConfig::toy(vocab.len(), ontology.frames.len())
    };
    macro_rules! over {
        ($target:expr, $flag:expr, $key:literal) => {
            if let Some(v) = s.get($flag, $key)? {
                $target = v;
            }
        };
    }
    over!(mc.embed_dim, a.embed_dim, "embed-dim");
    over!(mc.num_layers, a.num_layers, "num-layers");
    over!(mc.num_heads, a.num_heads, "num-heads");
    over!(mc.ffn_dim, a.ffn_dim, "ffn-dim");
    over!(mc.max_input_len, a.max_input_len, "max-input-len");
    over!(mc.max_output_len, a.max_output_len, "max-output-len");
    over!(mc.dropout_rate, a.dropout_rate, "dropout-rate");
    if let Some(p) = s.get::<String>(a.pooling.clone(), "pooling")? {
        mc.pooling = parse_pooling(&p)?;
    }

    let mut tc = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    over!(tc.epochs, a.epochs, "epochs");
    over!(tc.learning_rate, a.learning_rate, "learning-rate");
    over!(tc.batch_size, a.batch_size, "batch-size");
    over!(tc.balancer_decay, a.balancer_decay, "balancer-decay");
    over!(tc.warmup_steps, a.warmup_steps, "warmup-steps");
    if let Some(o) = s.get::<String>(a.task_order.clone(), "task-order")? {
        tc.task_order = parse_task_order(&o)?;
    }
    tc.balance = !s.flag(a.no_balance, "no-balance")?;
    tc.dev_eval = !s.flag(a.no_dev_eval, "no-dev-eval")?;

    let history_path = s
        .get::<PathBuf>(a.history.clone(), "history")?
        .unwrap_or_else(|| sibling(&a.out, ".history.jsonl"));
    let checkpoint = |params| Checkpoint {
        params,
        mode,
        vocab_hash: vocab.hash(),
        frame_labels: ontology.frames.clone(),
    };
    eprintln!(
        "training {mode} on {} examples ({} dev), vocabulary {}",
        train_c.len(),
        dev_c.len(),
        vocab.len()
    );
    let outcome = match train(
        &train_c.examples,
        &dev_c.examples,
        &ontology,
        &vocab,
        mode,
        &mc,
        &tc,
        &mut ProgressPrinter,
    ) {
        Ok(o) => o,
        Err(TrainError::Diverged {
            epoch,
            step,
            reason,
            last_good,
        }) => {
            let keep = sibling(&a.out, ".last-good");
            save_checkpoint(&checkpoint(*last_good), &vocab, &keep).map_err(data)?;
            return Err(CliError::Numerical(format!(
                "training diverged at epoch {epoch}, step {step}: {reason}; last good parameters written to {}",
                keep.display()
            )));
        }
        Err(TrainError::Config(m)) => return Err(CliError::Usage(m)),
        Err(TrainError::Model(e)) => return Err(CliError::Usage(format!("model config: {e}"))),
        Err(e) => return Err(data(e)),
    };
    save_checkpoint(&checkpoint(outcome.params), &vocab, &a.out).map_err(data)?;
    write_file(&history_path, history_to_jsonl(&outcome.history).as_bytes())?;
    eprintln!(
        "wrote checkpoint {} and history {}",
        a.out.display(),
        history_path.display()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<(), CliError> {
    let vocab = load_vocab(&a.checkpoint).map_err(data)?;
    let ckpt = load_checkpoint(&a.checkpoint, &vocab, a.mode).map_err(data)?;
    let corpus = load_corpus(&a.corpus).map_err(data)?;
    let predictor = Predictor::new(&ckpt.params, &vocab, &ckpt.frame_labels).map_err(data)?;
    let opts = PredictOptions {
        gold_frames: a.gold_frames,
        restrict_roles: a.restrict_roles.then_some(&corpus.ontology),
    };
    let interps = predictor
        .batch_predict(ckpt.mode, &corpus.examples, &opts)
        .map_err(data)?;
    let diagnostics: usize = interps.iter().map(|i| i.diagnostics.len()).sum();
    let records: Vec<PredictionRecord> = corpus
        .examples
        .iter()
        .zip(interps)
        .map(|(ex, i)| PredictionRecord::new(ex, i))
        .collect();
    save_predictions(&records, &a.out).map_err(data)?;
    eprintln!(
        "wrote {} predictions to {} ({} parse diagnostics)",
        records.len(),
        a.out.display(),
        diagnostics
    );
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let report = score(&a.pred, &a.gold, !a.no_frame_gating).map_err(data)?;
    print!("{}", report.table());
    if let Some(path) = &a.report {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

const GRADCHECK_KEYS: &[&str] = &[
    "tol",
    "epsilon",
    "samples",
    "seed",
    "vocab-size",
    "num-classes",
    "embed-dim",
    "num-layers",
    "num-heads",
    "ffn-dim",
    "report",
];

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let s = Settings::load(a.config.as_deref(), GRADCHECK_KEYS)?;
    let tol = s.get(a.tol, "tol")?.unwrap_or(1e-4);
    let vocab_size = s.get(a.vocab_size, "vocab-size")?.unwrap_or(24);
    let classes = s.get(a.num_classes, "num-classes")?.unwrap_or(4);
    let mut cfg = ModelConfig {
        max_input_len: 12,
        max_output_len: 8,
        ..ModelConfig::tiny(vocab_size, classes)
    };
    if let Some(v) = s.get(a.embed_dim, "embed-dim")? {
        cfg.embed_dim = v;
    }
    if let Some(v) = s.get(a.num_layers, "num-layers")? {
        cfg.num_layers = v;
    }
    if let Some(v) = s.get(a.num_heads, "num-heads")? {
        cfg.num_heads = v;
    }
    if let Some(v) = s.get(a.ffn_dim, "ffn-dim")? {
        cfg.ffn_dim = v;
    }
    let seed = s.get(a.seed, "seed")?.unwrap_or(0);
    cfg.seed = seed;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let defaults = GradCheckOptions::default();
    let opts = GradCheckOptions {
        epsilon: s.get(a.epsilon, "epsilon")?.unwrap_or(defaults.epsilon),
        samples_per_tensor: s
            .get(a.samples, "samples")?
            .unwrap_or(defaults.samples_per_tensor),
        seed,
        ..defaults
    };
    let example = GradCheckExample::random(&cfg, 7, 5, seed);
    let report = grad_check(&cfg, &example, &opts).map_err(data)?;
    for path in [&report.seq, &report.class] {
        println!(
            "{:<12} loss {:>10.6}  checked {:>5}  max rel error {:.3e}  ({})",
            path.path, path.loss, path.checked, path.max_rel_error, path.worst_tensor
        );
    }
    let worst = report.max_rel_error();
    println!("max relative error {worst:.3e} (tolerance {tol:.1e})");
    if let Some(path) = s.get::<PathBuf>(a.report, "report")? {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_file(&path, json.as_bytes())?;
    }
    if worst < tol {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "gradient check failed: {worst:.3e} >= {tol:.1e}"
        )))
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
