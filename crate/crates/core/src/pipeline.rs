//! End-to-end inference from (sentence, trigger) to a frame interpretation.
//!
//! Multi-task mode classifies the frame first and then generates arguments
//! conditioned on the chosen label. Full-Gen mode reads everything from one
//! generation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{
    args_input_words, frame_input_words, fullgen_input_words, fullgen_parse, multitask_parse_args,
    Mode, Vocabulary,
};
use crate::corpus::{AnnotatedExample, Ontology, RoleAssignment, TokenSpan};
use crate::fsutil::write_atomic;
use crate::model::{
    classify_frame, decode_greedy, decode_greedy_with_prefix, encode, ModelError, ModelParams,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("trigger span {trigger:?} outside sentence of {len} tokens")]
    BadTrigger { trigger: TokenSpan, len: usize },
    #[error("model has {classes} frame classes but {labels} labels were supplied")]
    LabelCount { classes: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameInterpretation {
    pub frame: String,
    /// Classifier probability of `frame`; present only in multi-task mode.
    pub confidence: Option<f64>,
    pub roles: Vec<RoleAssignment>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions<'a> {
    /// Condition argument generation on the gold frame instead of a
    /// predicted one.
    pub gold_frames: bool,
    /// Drop roles the ontology does not permit for the output frame.
    pub restrict_roles: Option<&'a Ontology>,
}

/// Frozen parameters plus what is needed to read and write text.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    pub params: &'a ModelParams,
    pub vocab: &'a Vocabulary,
    /// Frame label of each classifier class.
    pub frame_labels: &'a [String],
}

fn dedupe(roles: Vec<RoleAssignment>) -> Vec<RoleAssignment> {
    let mut out: Vec<RoleAssignment> = Vec::with_capacity(roles.len());
    for r in roles {
        if !out.contains(&r) {
            out.push(r);
        }
    }
    out
}

fn check_trigger(tokens: &[String], trigger: TokenSpan) -> Result<(), PipelineError> {
    if trigger.fits(tokens.len()) {
        Ok(())
    } else {
        Err(PipelineError::BadTrigger {
            trigger,
            len: tokens.len(),
        })
    }
}

impl<'a> Predictor<'a> {
    pub fn new(
        params: &'a ModelParams,
        vocab: &'a Vocabulary,
        frame_labels: &'a [String],
    ) -> Result<Self, PipelineError> {
        let classes = params.config.num_frame_classes;
        if classes != frame_labels.len() {
            return Err(PipelineError::LabelCount {
                classes,
                labels: frame_labels.len(),
            });
        }
        Ok(Self {
            params,
            vocab,
            frame_labels,
        })
    }

    /// One generation; with `gold_frame` the output is forced to start with
    /// `trigger = gold_frame |`.
    pub fn predict_fullgen(
        &self,
        tokens: &[String],
        trigger: TokenSpan,
        gold_frame: Option<&str>,
    ) -> Result<FrameInterpretation, PipelineError> {
        check_trigger(tokens, trigger)?;
        let input = self
            .vocab
            .encode_words(&fullgen_input_words(tokens, trigger));
        let enc = encode(self.params, &input.ids)?;
        let max_len = self.params.config.max_output_len;
        let ids = match gold_frame {
            Some(frame) => {
                let trigger_text = tokens[trigger.indices()].join(" ");
                let prefix = self.vocab.encode(&format!("{trigger_text} = {frame} |"));
                decode_greedy_with_prefix(self.params, &enc, &prefix, max_len)?
            }
            None => decode_greedy(self.params, &enc, max_len)?,
        };
        let parsed = fullgen_parse(&self.vocab.decode(&ids), tokens, trigger);
        Ok(FrameInterpretation {
            frame: match gold_frame {
                Some(f) => f.to_owned(),
                None => parsed.annotation.frame,
            },
            confidence: None,
            roles: dedupe(parsed.annotation.roles),
            diagnostics: parsed.diagnostics.iter().map(ToString::to_string).collect(),
        })
    }

    /// Step one of multi-task inference: argmax frame and its probability.
    pub fn classify(
        &self,
        tokens: &[String],
        trigger: TokenSpan,
    ) -> Result<(usize, f64), PipelineError> {
        check_trigger(tokens, trigger)?;
        let input = self.vocab.encode_words(&frame_input_words(tokens, trigger));
        let enc = encode(self.params, &input.ids)?;
        let probs = classify_frame(self.params, &enc, &input.trigger_positions)?;
        let (best, p) = probs
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc },
            );
        Ok((best, p))
    }

    /// Step two: role generation conditioned on `frame`.
    pub fn generate_args(
        &self,
        frame: &str,
        tokens: &[String],
        trigger: TokenSpan,
    ) -> Result<(Vec<RoleAssignment>, Vec<String>), PipelineError> {
        check_trigger(tokens, trigger)?;
        let input = self
            .vocab
            .encode_words(&args_input_words(frame, tokens, trigger));
        let enc = encode(self.params, &input.ids)?;
        let ids = decode_greedy(self.params, &enc, self.params.config.max_output_len)?;
        let (roles, diags) = multitask_parse_args(&self.vocab.decode(&ids), tokens.len());
        Ok((
            dedupe(roles),
            diags.iter().map(ToString::to_string).collect(),
        ))
    }

    /// Classify, then generate arguments for the predicted frame. With
    /// `gold_frame` the classifier is skipped and the confidence is 1.
    pub fn predict_multitask(
        &self,
        tokens: &[String],
        trigger: TokenSpan,
        gold_frame: Option<&str>,
    ) -> Result<FrameInterpretation, PipelineError> {
        let (frame, confidence) = match gold_frame {
            Some(f) => (f.to_owned(), 1.0),
            None => {
                let (class, p) = self.classify(tokens, trigger)?;
                (self.frame_labels[class].clone(), p)
            }
        };
        let (roles, diagnostics) = self.generate_args(&frame, tokens, trigger)?;
        Ok(FrameInterpretation {
            frame,
            confidence: Some(confidence),
            roles,
            diagnostics,
        })
    }

    pub fn predict(
        &self,
        mode: Mode,
        ex: &AnnotatedExample,
        opts: &PredictOptions<'_>,
    ) -> Result<FrameInterpretation, PipelineError> {
        let gold = opts.gold_frames.then_some(ex.frame.as_str());
        let mut out = match mode {
            Mode::FullGen => self.predict_fullgen(&ex.tokens, ex.trigger, gold)?,
            Mode::MultiTask => self.predict_multitask(&ex.tokens, ex.trigger, gold)?,
        };
        if let Some(ontology) = opts.restrict_roles {
            restrict_to_frame(&mut out, ontology);
        }
        Ok(out)
    }

    /// Order-preserving prediction over many examples.
    pub fn batch_predict(
        &self,
        mode: Mode,
        examples: &[AnnotatedExample],
        opts: &PredictOptions<'_>,
    ) -> Result<Vec<FrameInterpretation>, PipelineError> {
        examples
            .iter()
            .map(|ex| self.predict(mode, ex, opts))
            .collect()
    }
}

/// Removes roles outside the frame's permitted set. Frames without a
/// declared role set are left alone.
pub fn restrict_to_frame(interp: &mut FrameInterpretation, ontology: &Ontology) {
    if let Some(allowed) = ontology.permitted_roles(&interp.frame) {
        let before = interp.roles.len();
        interp.roles.retain(|r| allowed.contains(&r.label));
        let dropped = before - interp.roles.len();
        if dropped > 0 {
            interp.diagnostics.push(format!(
                "dropped {dropped} role(s) not permitted for {}",
                interp.frame
            ));
        }
    }
}

/// One line of a prediction file: the corpus record fields plus
/// `confidence` and `diagnostics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub tokens: Vec<String>,
    pub trigger: TokenSpan,
    pub frame: String,
    pub roles: Vec<RoleAssignment>,
    pub confidence: Option<f64>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl PredictionRecord {
    pub fn new(ex: &AnnotatedExample, interp: FrameInterpretation) -> Self {
        Self {
            tokens: ex.tokens.clone(),
            trigger: ex.trigger,
            frame: interp.frame,
            roles: interp.roles,
            confidence: interp.confidence,
            diagnostics: interp.diagnostics,
        }
    }
}

pub fn predictions_to_jsonl(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("prediction records serialize"));
        out.push('\n');
    }
    out
}

pub fn predictions_from_jsonl(
    text: &str,
    path: &str,
) -> Result<Vec<PredictionRecord>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Malformed {
                path: path.to_owned(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn save_predictions(records: &[PredictionRecord], path: &Path) -> Result<(), PipelineError> {
    write_atomic(path, predictions_to_jsonl(records).as_bytes()).map_err(|source| {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    })
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, PipelineError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: name.clone(),
        source,
    })?;
    predictions_from_jsonl(&text, &name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, RoleAssignment};
    use crate::model::ModelConfig;

    fn corpus() -> Corpus {
        let ex = AnnotatedExample::from_text(
            "The rain dripped down his neck .",
            TokenSpan::single(2),
            "Fluidic_motion",
            vec![
                RoleAssignment::new("Fluid", TokenSpan::new(0, 1).unwrap()),
                RoleAssignment::new("Path", TokenSpan::new(3, 5).unwrap()),
            ],
        )
        .unwrap();
        Corpus::new(
            Ontology::new(
                vec!["Fluidic_motion".into(), "Self_motion".into()],
                vec!["Fluid".into(), "Path".into()],
            )
            .unwrap(),
            vec![ex],
        )
        .unwrap()
    }

    fn setup() -> (Corpus, Vocabulary, ModelParams) {
        let c = corpus();
        let v = Vocabulary::build(&c);
        let cfg = ModelConfig {
            max_input_len: 40,
            max_output_len: 12,
            ..ModelConfig::tiny(v.len(), 2)
        };
        let p = ModelParams::init(&cfg).unwrap();
        (c, v, p)
    }

    #[test]
    fn untrained_model_never_fails_on_garbage() {
        let (c, v, p) = setup();
        let pred = Predictor::new(&p, &v, &c.ontology.frames).unwrap();
        let ex = &c.examples[0];
        let fg = pred
            .predict(Mode::FullGen, ex, &PredictOptions::default())
            .unwrap();
        assert!(fg.confidence.is_none());
        for r in &fg.roles {
            assert!(r.span.fits(ex.tokens.len()));
        }
        let mt = pred
            .predict(Mode::MultiTask, ex, &PredictOptions::default())
            .unwrap();
        let conf = mt.confidence.unwrap();
        assert!((0.0..=1.0).contains(&conf));
        assert!(c.ontology.frames.contains(&mt.frame));
    }

    #[test]
    fn confidence_is_argmax_probability() {
        let (c, v, p) = setup();
        let pred = Predictor::new(&p, &v, &c.ontology.frames).unwrap();
        let ex = &c.examples[0];
        let input = v.encode_words(&frame_input_words(&ex.tokens, ex.trigger));
        let enc = encode(&p, &input.ids).unwrap();
        let probs = classify_frame(&p, &enc, &input.trigger_positions).unwrap();
        let max = probs.iter().cloned().fold(f64::MIN, f64::max);
        let mt = pred
            .predict_multitask(&ex.tokens, ex.trigger, None)
            .unwrap();
        assert_eq!(mt.confidence, Some(max));
    }

    #[test]
    fn gold_frames_are_used_verbatim() {
        let (c, v, p) = setup();
        let pred = Predictor::new(&p, &v, &c.ontology.frames).unwrap();
        let opts = PredictOptions {
            gold_frames: true,
            ..Default::default()
        };
        for mode in [Mode::FullGen, Mode::MultiTask] {
            let out = pred.batch_predict(mode, &c.examples, &opts).unwrap();
            assert_eq!(out[0].frame, "Fluidic_motion");
            assert_eq!(out, pred.batch_predict(mode, &c.examples, &opts).unwrap());
        }
        assert!(pred
            .batch_predict(Mode::FullGen, &[], &opts)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn label_count_must_match() {
        let (_, v, p) = setup();
        let labels = vec!["A".to_owned()];
        assert!(Predictor::new(&p, &v, &labels).is_err());
    }

    #[test]
    fn duplicates_removed_in_order() {
        let a = RoleAssignment::new("A", TokenSpan::single(1));
        let b = RoleAssignment::new("B", TokenSpan::single(0));
        assert_eq!(dedupe(vec![a.clone(), b.clone(), a.clone()]), vec![a, b]);
    }

    #[test]
    fn restrict_filter() {
        let mut ont = Ontology::new(vec!["F".into()], vec!["A".into(), "B".into()]).unwrap();
        ont.frame_roles = Some([("F".to_owned(), vec!["A".to_owned()])].into());
        let mut interp = FrameInterpretation {
            frame: "F".into(),
            confidence: None,
            roles: vec![
                RoleAssignment::new("A", TokenSpan::single(0)),
                RoleAssignment::new("B", TokenSpan::single(1)),
            ],
            diagnostics: vec![],
        };
        restrict_to_frame(&mut interp, &ont);
        assert_eq!(interp.roles.len(), 1);
        assert_eq!(interp.diagnostics.len(), 1);
    }

    #[test]
    fn prediction_file_round_trip() {
        let c = corpus();
        let ex = &c.examples[0];
        let rec = PredictionRecord::new(
            ex,
            FrameInterpretation {
                frame: ex.frame.clone(),
                confidence: Some(0.93),
                roles: ex.roles.clone(),
                diagnostics: vec!["x".into()],
            },
        );
        let text = predictions_to_jsonl(std::slice::from_ref(&rec));
        assert!(text.starts_with(r#"{"tokens":["The","rain","dripped""#));
        assert_eq!(predictions_from_jsonl(&text, "p").unwrap(), vec![rec]);
        assert!(predictions_from_jsonl("{bad", "p").is_err());
    }
}
