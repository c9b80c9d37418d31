//! Training loop over single-task batches with EMA loss balancing.
//!
//! Full-Gen mode trains one generative task. Multi-task mode trains the
//! FRAME classification task and the ARGS generation task through the
//! shared encoder, one task per batch.

mod balancer;
mod batching;
mod checkpoint;
mod optimizer;

pub use balancer::{LossBalancer, MAX_WEIGHT, MIN_WEIGHT};
pub use batching::{make_batches, TaskBatch, TaskOrder};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, load_vocab, save_checkpoint,
    vocab_path, Checkpoint, CheckpointError,
};
pub use optimizer::{Adam, AdamConfig};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    args_input_words, args_target, frame_input_words, fullgen_input_words, fullgen_target, Mode,
    TaskKind, Vocabulary,
};
use crate::corpus::{AnnotatedExample, Ontology};
use crate::model::{
    class_loss_batch, seq_loss_batch, ClassItem, ModelConfig, ModelError, ModelParams, SeqItem,
};
use crate::pipeline::{PipelineError, Predictor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("training diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        /// Parameters before the failing step.
        last_good: Box<ModelParams>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub balancer_decay: f64,
    pub warmup_steps: usize,
    pub task_order: TaskOrder,
    /// When false every task weight is 1.
    pub balance: bool,
    /// Measure dev frame accuracy after each epoch.
    pub dev_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            adam: AdamConfig::default(),
            balancer_decay: 0.9,
            warmup_steps: 50,
            task_order: TaskOrder::RandomRoundRobin,
            balance: true,
            dev_eval: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.balancer_decay > 0.0 && self.balancer_decay < 1.0) {
            return bad("balancer_decay must lie in (0, 1)");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodedItem {
    Seq {
        input: Vec<u32>,
        target: Vec<u32>,
    },
    Class {
        input: Vec<u32>,
        trigger_positions: Vec<usize>,
        gold: usize,
    },
}

impl EncodedItem {
    pub fn input(&self) -> &[u32] {
        match self {
            EncodedItem::Seq { input, .. } | EncodedItem::Class { input, .. } => input,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTask {
    pub kind: TaskKind,
    pub items: Vec<EncodedItem>,
    /// Index of the source example of each item.
    pub sources: Vec<usize>,
}

/// Encodes every example into the records of each task of `mode`, checking
/// lengths against `config`.
pub fn encode_tasks(
    examples: &[AnnotatedExample],
    vocab: &Vocabulary,
    ontology: &Ontology,
    mode: Mode,
    config: &ModelConfig,
) -> Result<Vec<EncodedTask>, TrainError> {
    let mut tasks = Vec::new();
    for &kind in mode.tasks() {
        let mut items = Vec::with_capacity(examples.len());
        for (i, ex) in examples.iter().enumerate() {
            let item = match kind {
                TaskKind::FullGen => EncodedItem::Seq {
                    input: vocab
                        .encode_words(&fullgen_input_words(&ex.tokens, ex.trigger))
                        .ids,
                    target: vocab.encode(&fullgen_target(ex)),
                },
                TaskKind::Args => EncodedItem::Seq {
                    input: vocab
                        .encode_words(&args_input_words(&ex.frame, &ex.tokens, ex.trigger))
                        .ids,
                    target: vocab.encode(&args_target(&ex.roles)),
                },
                TaskKind::Frame => {
                    let enc = vocab.encode_words(&frame_input_words(&ex.tokens, ex.trigger));
                    let gold = ontology.frame_index(&ex.frame).ok_or_else(|| {
                        TrainError::Data(format!("example {i}: unknown frame {}", ex.frame))
                    })?;
                    EncodedItem::Class {
                        input: enc.ids,
                        trigger_positions: enc.trigger_positions,
                        gold,
                    }
                }
            };
            let in_len = item.input().len();
            if in_len > config.max_input_len {
                return Err(TrainError::Data(format!(
                    "example {i}: {kind} input has {in_len} pieces, max_input_len is {}",
                    config.max_input_len
                )));
            }
            if let EncodedItem::Seq { target, .. } = &item {
                if target.len() > config.max_output_len {
                    return Err(TrainError::Data(format!(
                        "example {i}: {kind} target has {} pieces, max_output_len is {}",
                        target.len(),
                        config.max_output_len
                    )));
                }
            }
            items.push(item);
        }
        tasks.push(EncodedTask {
            kind,
            items,
            sources: (0..examples.len()).collect(),
        });
    }
    Ok(tasks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEpochStats {
    pub kind: TaskKind,
    pub batches: usize,
    pub examples: usize,
    /// Mean raw (unweighted) batch loss.
    pub mean_loss: f64,
    pub mean_weight: f64,
    pub last_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub tasks: Vec<TaskEpochStats>,
    pub dev_frame_accuracy: Option<f64>,
    pub seconds: f64,
}

pub fn history_to_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("history serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub step: usize,
    pub kind: TaskKind,
    /// Source example indices in this batch.
    pub examples: &'a [usize],
    pub raw_loss: f64,
    pub weight: f64,
}

pub trait TrainObserver {
    fn on_batch(&mut self, _event: &BatchEvent<'_>) {}
    fn on_epoch(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

/// Prints one line per epoch to stderr.
pub struct ProgressPrinter;

impl TrainObserver for ProgressPrinter {
    fn on_epoch(&mut self, r: &EpochRecord) {
        let tasks: Vec<String> = r
            .tasks
            .iter()
            .map(|t| {
                format!(
                    "{} loss {:.4} weight {:.3}",
                    t.kind, t.mean_loss, t.last_weight
                )
            })
            .collect();
        let dev = r
            .dev_frame_accuracy
            .map_or_else(String::new, |a| format!(" | dev frame acc {a:.4}"));
        eprintln!(
            "epoch {} ({} steps, {:.1}s): {}{}",
            r.epoch,
            r.steps,
            r.seconds,
            tasks.join(", "),
            dev
        );
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
}

fn batch_loss(
    params: &ModelParams,
    task: &EncodedTask,
    indices: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(f64, ModelParams), ModelError> {
    let dropout = (params.config.dropout_rate > 0.0).then_some(rng);
    if task.kind.is_generative() {
        let items: Vec<SeqItem<'_>> = indices
            .iter()
            .map(|&i| match &task.items[i] {
                EncodedItem::Seq { input, target } => SeqItem { input, target },
                EncodedItem::Class { .. } => unreachable!("generative task holds seq items"),
            })
            .collect();
        seq_loss_batch(params, &items, dropout)
    } else {
        let items: Vec<ClassItem<'_>> = indices
            .iter()
            .map(|&i| match &task.items[i] {
                EncodedItem::Class {
                    input,
                    trigger_positions,
                    gold,
                } => ClassItem {
                    input,
                    trigger_positions,
                    gold: *gold,
                },
                EncodedItem::Seq { .. } => unreachable!("classification task holds class items"),
            })
            .collect();
        class_loss_batch(params, &items, dropout)
    }
}

/// Fraction of examples whose predicted frame equals the gold frame.
pub fn frame_accuracy_of(
    predictor: &Predictor<'_>,
    mode: Mode,
    examples: &[AnnotatedExample],
) -> Result<f64, PipelineError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for ex in examples {
        let frame = match mode {
            Mode::MultiTask => {
                let (class, _) = predictor.classify(&ex.tokens, ex.trigger)?;
                predictor.frame_labels[class].clone()
            }
            Mode::FullGen => {
                predictor
                    .predict_fullgen(&ex.tokens, ex.trigger, None)?
                    .frame
            }
        };
        correct += usize::from(frame == ex.frame);
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Trains a fresh model. With `epochs = 0` the initial parameters are
/// returned with an empty history.
#[allow(clippy::too_many_arguments)]
pub fn train(
    train_examples: &[AnnotatedExample],
    dev_examples: &[AnnotatedExample],
    ontology: &Ontology,
    vocab: &Vocabulary,
    mode: Mode,
    model_config: &ModelConfig,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model_config.validate()?;
    if train_examples.is_empty() {
        return Err(TrainError::Data("training split is empty".into()));
    }
    if model_config.vocab_size != vocab.len() {
        return Err(TrainError::Config(format!(
            "vocab_size {} does not match vocabulary of {} pieces",
            model_config.vocab_size,
            vocab.len()
        )));
    }
    if model_config.num_frame_classes != ontology.frames.len() {
        return Err(TrainError::Config(format!(
            "num_frame_classes {} does not match {} ontology frames",
            model_config.num_frame_classes,
            ontology.frames.len()
        )));
    }
    let tasks = encode_tasks(train_examples, vocab, ontology, mode, model_config)?;
    let mut params = ModelParams::init(model_config)?;
    let mut history = Vec::new();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut adam = Adam::new(&params, config.adam);
    let mut balancer = LossBalancer::new(tasks.len(), config.balancer_decay, config.warmup_steps);
    let sizes: Vec<(TaskKind, usize)> = tasks.iter().map(|t| (t.kind, t.items.len())).collect();
    let mut step = 0usize;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let batches = make_batches(&sizes, config.batch_size, config.task_order, &mut batch_rng);
        let mut stats: Vec<TaskEpochStats> = tasks
            .iter()
            .map(|t| TaskEpochStats {
                kind: t.kind,
                batches: 0,
                examples: 0,
                mean_loss: 0.0,
                mean_weight: 0.0,
                last_weight: 1.0,
            })
            .collect();
        let mut sources = Vec::with_capacity(config.batch_size);
        for batch in &batches {
            step += 1;
            let task = &tasks[batch.task];
            let (loss, grads) = batch_loss(&params, task, &batch.indices, &mut dropout_rng)?;
            let diverged = |reason: String, params: &ModelParams| TrainError::Diverged {
                epoch,
                step,
                reason,
                last_good: Box::new(params.clone()),
            };
            if !loss.is_finite() {
                return Err(diverged(format!("{} loss is {loss}", task.kind), &params));
            }
            if !grads.all_finite() {
                return Err(diverged(
                    format!("{} gradient is not finite", task.kind),
                    &params,
                ));
            }
            let weight = if config.balance {
                balancer
                    .update(batch.task, loss)
                    .map_err(|l| diverged(format!("{} loss is {l}", task.kind), &params))?
            } else {
                1.0
            };
            adam.step(&mut params, &grads, weight, config.learning_rate);

            let s = &mut stats[batch.task];
            s.batches += 1;
            s.examples += batch.indices.len();
            s.mean_loss += loss;
            s.mean_weight += weight;
            s.last_weight = weight;
            sources.clear();
            sources.extend(batch.indices.iter().map(|&i| task.sources[i]));
            observer.on_batch(&BatchEvent {
                epoch,
                step,
                kind: task.kind,
                examples: &sources,
                raw_loss: loss,
                weight,
            });
        }
        for s in &mut stats {
            if s.batches > 0 {
                s.mean_loss /= s.batches as f64;
                s.mean_weight /= s.batches as f64;
            }
        }
        let dev_frame_accuracy = if config.dev_eval && !dev_examples.is_empty() {
            let predictor = Predictor::new(&params, vocab, &ontology.frames)?;
            Some(frame_accuracy_of(&predictor, mode, dev_examples)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            steps: batches.len(),
            tasks: stats,
            dev_frame_accuracy,
            seconds: started.elapsed().as_secs_f64(),
        };
        observer.on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, GeneratorSpec};

    fn small() -> (crate::corpus::Corpus, Vocabulary) {
        let spec = GeneratorSpec {
            num_examples: 40,
            ..GeneratorSpec::default()
        };
        let c = generate_synthetic(&spec, 5).unwrap();
        let v = Vocabulary::build(&c);
        (c, v)
    }

    fn tiny(c: &crate::corpus::Corpus, v: &Vocabulary) -> ModelConfig {
        ModelConfig {
            max_input_len: 64,
            max_output_len: 40,
            ..ModelConfig::tiny(v.len(), c.ontology.frames.len())
        }
    }

    #[derive(Default)]
    struct Recorder {
        losses: Vec<f64>,
        kinds: Vec<TaskKind>,
    }

    impl TrainObserver for Recorder {
        fn on_batch(&mut self, e: &BatchEvent<'_>) {
            self.losses.push(e.raw_loss);
            self.kinds.push(e.kind);
        }
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (c, v) = small();
        let mc = tiny(&c, &v);
        let tc = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(
            &c.examples,
            &[],
            &c.ontology,
            &v,
            Mode::MultiTask,
            &mc,
            &tc,
            &mut (),
        )
        .unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.params, ModelParams::init(&mc).unwrap());
    }

    #[test]
    fn deterministic_and_single_task_weights_are_one() {
        let (c, v) = small();
        let mc = tiny(&c, &v);
        let tc = TrainConfig {
            epochs: 2,
            batch_size: 8,
            warmup_steps: 0,
            dev_eval: false,
            ..TrainConfig::default()
        };
        let mut a = Recorder::default();
        let out_a = train(
            &c.examples,
            &[],
            &c.ontology,
            &v,
            Mode::FullGen,
            &mc,
            &tc,
            &mut a,
        )
        .unwrap();
        let mut b = Recorder::default();
        let unbalanced = TrainConfig {
            balance: false,
            ..tc.clone()
        };
        let out_b = train(
            &c.examples,
            &[],
            &c.ontology,
            &v,
            Mode::FullGen,
            &mc,
            &unbalanced,
            &mut b,
        )
        .unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(out_a.params, out_b.params);
        assert!(out_a.history.iter().all(|r| r.tasks[0].last_weight == 1.0));
        assert_eq!(a.kinds.len(), 10);
    }

    #[test]
    fn multitask_batches_are_single_task() {
        let (c, v) = small();
        let mc = tiny(&c, &v);
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let mut r = Recorder::default();
        let out = train(
            &c.examples,
            &c.examples[..5],
            &c.ontology,
            &v,
            Mode::MultiTask,
            &mc,
            &tc,
            &mut r,
        )
        .unwrap();
        assert_eq!(r.kinds.len(), 6);
        let h = &out.history[0];
        assert_eq!(h.tasks.len(), 2);
        assert!(h.tasks.iter().all(|t| t.examples == 40));
        assert!(h.dev_frame_accuracy.is_some());
        assert!(history_to_jsonl(&out.history).ends_with('\n'));
    }

    #[test]
    fn overlong_inputs_are_data_errors() {
        let (c, v) = small();
        let mc = ModelConfig {
            max_input_len: 4,
            ..tiny(&c, &v)
        };
        let err = train(
            &c.examples,
            &[],
            &c.ontology,
            &v,
            Mode::FullGen,
            &mc,
            &TrainConfig::default(),
            &mut (),
        );
        assert!(matches!(err, Err(TrainError::Data(_))));
    }

    #[test]
    fn divergence_keeps_last_good_params() {
        let (c, v) = small();
        let mc = tiny(&c, &v);
        let tc = TrainConfig {
            epochs: 1,
            learning_rate: 1e300,
            batch_size: 4,
            dev_eval: false,
            ..TrainConfig::default()
        };
        match train(
            &c.examples,
            &[],
            &c.ontology,
            &v,
            Mode::FullGen,
            &mc,
            &tc,
            &mut (),
        ) {
            Err(TrainError::Diverged {
                last_good, step, ..
            }) => {
                assert!(step >= 2);
                assert!(last_good.all_finite());
            }
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
        }
    }
}
