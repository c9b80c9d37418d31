//! Trains on the default synthetic corpus and prints held-out scores with
//! predicted and with gold frames.
//!
//! cargo run --release --example desk_run -- [multitask|fullgen] [seed] [epochs]

use framekit::codec::{Mode, Vocabulary};
use framekit::corpus::{generate_synthetic, split_corpus, GeneratorSpec};
use framekit::metrics::{evaluate, ScoredRecord};
use framekit::model::ModelConfig;
use framekit::pipeline::{PredictOptions, PredictionRecord, Predictor};
use framekit::training::{train, ProgressPrinter, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let mode: Mode = args.get(1).map_or("multitask", String::as_str).parse()?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;
    let epochs: usize = args.get(3).map_or(Ok(5), |s| s.parse())?;

    let corpus = generate_synthetic(&GeneratorSpec::default(), seed)?;
    let (train_set, dev, test) = split_corpus(&corpus, [0.8, 0.1, 0.1], seed)?;
    let vocab = Vocabulary::build(&train_set);
    let model_config = ModelConfig {
        seed,
        ..ModelConfig::toy(vocab.len(), corpus.ontology.frames.len())
    };
    let train_config = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let out = train(
        &train_set.examples,
        &dev.examples,
        &corpus.ontology,
        &vocab,
        mode,
        &model_config,
        &train_config,
        &mut ProgressPrinter,
    )?;

    let predictor = Predictor::new(&out.params, &vocab, &corpus.ontology.frames)?;
    let golds: Vec<ScoredRecord> = test.examples.iter().map(ScoredRecord::from).collect();
    for gold_frames in [false, true] {
        let opts = PredictOptions {
            gold_frames,
            ..PredictOptions::default()
        };
        let preds: Vec<ScoredRecord> = predictor
            .batch_predict(mode, &test.examples, &opts)?
            .into_iter()
            .zip(&test.examples)
            .map(|(interp, ex)| PredictionRecord::new(ex, interp).into())
            .collect();
        println!("{} frames", if gold_frames { "gold" } else { "predicted" });
        print!("{}", evaluate(&preds, &golds, true)?.table());
    }
    Ok(())
}
