//! A small encoder-decoder transformer with a shared encoder, a generative
//! decoder, and a frame-classification head over pooled encoder states.
//!
//! Everything is f64 with hand-written backward passes, so the finite
//! difference check in [`gradcheck`] can hold analytic gradients to tight
//! tolerances.

pub mod gradcheck;
pub mod layers;
mod network;
mod params;

pub use gradcheck::{grad_check, GradCheckExample, GradCheckOptions, GradCheckReport, PathReport};
pub use network::{
    class_loss_batch, classify_frame, decode_greedy, decode_greedy_with_prefix, decoder_logits,
    decoder_probabilities, encode, seq_loss_batch, ClassItem, EncoderOutput, SeqItem,
};
pub use params::{DecoderLayer, EncoderLayer, ModelConfig, ModelParams, Pooling};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input of length {len} exceeds max_input_len {max}")]
    InputTooLong { len: usize, max: usize },
    #[error("target of length {len} exceeds max_output_len {max}")]
    TargetTooLong { len: usize, max: usize },
    #[error("empty input sequence")]
    EmptyInput,
    #[error("empty target sequence")]
    EmptyTarget,
    #[error("empty batch")]
    EmptyBatch,
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("no trigger positions to pool over")]
    EmptyTrigger,
    #[error("trigger position {position} outside input of length {len}")]
    TriggerOutOfRange { position: usize, len: usize },
    #[error("gold class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
}

/// Teacher-forced loss of one example in evaluation mode: mean negative
/// log-likelihood per target token, with gradients.
pub fn seq_loss(
    p: &ModelParams,
    input: &[u32],
    target: &[u32],
) -> Result<(f64, ModelParams), ModelError> {
    seq_loss_batch(p, &[SeqItem { input, target }], None)
}

/// `-ln p(gold)` of one example in evaluation mode, with gradients.
pub fn class_loss(
    p: &ModelParams,
    input: &[u32],
    trigger_positions: &[usize],
    gold: usize,
) -> Result<(f64, ModelParams), ModelError> {
    class_loss_batch(
        p,
        &[ClassItem {
            input,
            trigger_positions,
            gold,
        }],
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn config() -> ModelConfig {
        ModelConfig {
            max_input_len: 12,
            max_output_len: 6,
            ..ModelConfig::tiny(20, 5)
        }
    }

    fn params() -> ModelParams {
        ModelParams::init(&config()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_seeded() {
        let a = params();
        assert_eq!(a, params());
        let mut c = config();
        c.seed = 9;
        let b = ModelParams::init(&c).unwrap();
        assert_ne!(a, b);
        assert!(a.all_finite());
        assert!(a.encoder[0].attn_norm.gain.iter().all(|&g| g == 1.0));
        assert!(a.classifier.b.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn toy_shapes() {
        let cfg = ModelConfig::toy(300, 12);
        assert_eq!(cfg.head_dim(), 16);
        let p = ModelParams::init(&cfg).unwrap();
        assert_eq!(p.token_embedding.dim(), (300, 64));
        assert_eq!(p.encoder_positions.dim(), (96, 64));
        assert_eq!(p.decoder_positions.dim(), (49, 64));
        assert_eq!(p.encoder.len(), 2);
        assert_eq!(p.decoder.len(), 2);
        assert_eq!(p.encoder[0].self_attn.query.w.dim(), (64, 64));
        assert_eq!(p.encoder[0].ffn.up.w.dim(), (64, 256));
        assert_eq!(p.output.w.dim(), (64, 300));
        assert_eq!(p.classifier.w.dim(), (64, 12));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(names.len(), dedup.len());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config();
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = config();
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.ffn_dim = 0;
        assert!(ModelParams::init(&c).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_bounded() {
        let p = params();
        let ids = [4, 5, 6, 7];
        let a = encode(&p, &ids).unwrap();
        assert_eq!(a, encode(&p, &ids).unwrap());
        assert!(a.states.iter().all(|v| v.is_finite()));
        let too_long = vec![4u32; 13];
        assert_eq!(
            encode(&p, &too_long),
            Err(ModelError::InputTooLong { len: 13, max: 12 })
        );
        assert!(encode(&p, &[]).is_err());
        assert!(encode(&p, &[20]).is_err());
    }

    #[test]
    fn classifier_is_a_distribution() {
        let p = params();
        let enc = encode(&p, &[4, 5, 6, 7]).unwrap();
        let probs = classify_frame(&p, &enc, &[1, 2]).unwrap();
        assert_eq!(probs.len(), 5);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(probs.iter().all(|&x| x >= 0.0));
        assert_eq!(classify_frame(&p, &enc, &[]), Err(ModelError::EmptyTrigger));
        assert!(classify_frame(&p, &enc, &[4]).is_err());
    }

    #[test]
    fn zero_classifier_is_uniform_with_ln_c_loss() {
        let mut p = params();
        p.classifier.w.fill(0.0);
        p.classifier.b.fill(0.0);
        let enc = encode(&p, &[4, 5, 6]).unwrap();
        for prob in classify_frame(&p, &enc, &[1]).unwrap() {
            assert!((prob - 0.2).abs() < 1e-12);
        }
        let (loss, _) = class_loss(&p, &[4, 5, 6], &[1], 3).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-6);
        assert!(class_loss(&p, &[4, 5, 6], &[1], 5).is_err());
    }

    #[test]
    fn certain_classifier_has_zero_loss() {
        let mut p = params();
        p.classifier.w.fill(0.0);
        p.classifier.b.fill(0.0);
        p.classifier.b[2] = 1e4;
        let (loss, _) = class_loss(&p, &[4, 5, 6], &[1], 2).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn uniform_decoder_has_ln_v_loss() {
        let mut p = params();
        p.output.w.fill(0.0);
        p.output.b.fill(0.0);
        let (loss, _) = seq_loss(&p, &[4, 5], &[6, 7, 8]).unwrap();
        assert!((loss - 20f64.ln()).abs() < 1e-6);
        assert_eq!(
            seq_loss(&p, &[4, 5], &[]).unwrap_err(),
            ModelError::EmptyTarget
        );
        assert!(matches!(
            seq_loss(&p, &[4], &[5; 7]),
            Err(ModelError::TargetTooLong { .. })
        ));
    }

    #[test]
    fn decoder_rows_are_distributions() {
        let p = params();
        let enc = encode(&p, &[4, 5, 6]).unwrap();
        let probs: Array2<f64> =
            decoder_probabilities(&p, &enc, &[crate::codec::BOS, 7, 8]).unwrap();
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn decoder_is_causal() {
        let p = params();
        let enc = encode(&p, &[4, 5, 6]).unwrap();
        let base = [crate::codec::BOS, 7, 8, 9, 10];
        let a = decoder_logits(&p, &enc, &base).unwrap();
        for t in 1..base.len() {
            let mut changed = base;
            changed[t] = 11;
            let b = decoder_logits(&p, &enc, &changed).unwrap();
            for row in 0..t {
                assert_eq!(a.row(row), b.row(row), "position {row} saw token {t}");
            }
            assert_ne!(a.row(t), b.row(t));
        }
    }

    #[test]
    fn greedy_decoding_contracts() {
        let p = params();
        let enc = encode(&p, &[4, 5, 6]).unwrap();
        let a = decode_greedy(&p, &enc, 6).unwrap();
        assert_eq!(a, decode_greedy(&p, &enc, 6).unwrap());
        assert!(a.len() <= 6);
        assert!(!a.contains(&crate::codec::EOS));
        assert!(decode_greedy(&p, &enc, 0).unwrap().is_empty());
        assert!(decode_greedy(&p, &enc, 100).unwrap().len() <= 6);
        let prefixed = decode_greedy_with_prefix(&p, &enc, &[9, 9], 6).unwrap();
        assert_eq!(&prefixed[..2], &[9, 9]);
    }

    #[test]
    fn loss_decreases_on_one_example() {
        let mut p = params();
        let (input, target) = ([4u32, 5, 6, 7], [8u32, 9, 10]);
        let (first, _) = seq_loss(&p, &input, &target).unwrap();
        let mut last = first;
        for _ in 0..100 {
            let (loss, g) = seq_loss(&p, &input, &target).unwrap();
            p.add_scaled(&g, -0.1);
            last = loss;
        }
        assert!(last < first * 0.5, "{first} -> {last}");
    }

    #[test]
    fn sequence_pooling_option() {
        let mut c = config();
        c.pooling = Pooling::SequenceMean;
        let p = ModelParams::init(&c).unwrap();
        let enc = encode(&p, &[4, 5, 6]).unwrap();
        assert!(classify_frame(&p, &enc, &[]).is_ok());
        let c2 = ModelConfig {
            pooling: Pooling::TriggerMean,
            ..c
        };
        let p2 = ModelParams::init(&c2).unwrap();
        assert_ne!(
            classify_frame(&p, &enc, &[1]).unwrap(),
            classify_frame(&p2, &enc, &[1]).unwrap()
        );
    }
}
