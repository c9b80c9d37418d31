//! Deterministic template-based corpus generator.
//!
//! Each frame owns a trigger lexicon and a set of templates. A template is a
//! space-separated token string in which `{T}` marks the trigger and
//! `{Role}` marks a filler slot. Fillers are multi-word phrases drawn from a
//! per-role lexicon (frame-level lexicons take precedence over global ones),
//! so gold role spans are exact by construction.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    validate_label, validate_token, AnnotatedExample, Corpus, CorpusError, Ontology,
    RoleAssignment, TokenSpan,
};

const DEFAULT_SPEC: &str = include_str!("default_spec.json");

/// Minimum share of distinct trigger words that must be evoked by two or
/// more frames.
pub const MIN_AMBIGUOUS_TRIGGER_SHARE: f64 = 0.25;

/// Resampling attempts per example before a template is rejected.
const MAX_FILLER_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTemplateSpec {
    pub name: String,
    pub triggers: Vec<String>,
    pub roles: Vec<String>,
    pub templates: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fillers: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub num_examples: usize,
    pub fillers: BTreeMap<String, Vec<String>>,
    pub frames: Vec<FrameTemplateSpec>,
}

impl Default for GeneratorSpec {
    /// 12 frames, 20 roles, 5000 examples.
    fn default() -> Self {
        serde_json::from_str(DEFAULT_SPEC).expect("bundled generator spec parses")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Piece {
    Word(String),
    Trigger,
    Slot(String),
}

#[derive(Debug)]
struct CompiledFrame<'a> {
    spec: &'a FrameTemplateSpec,
    templates: Vec<Vec<Piece>>,
    fillers: HashMap<&'a str, Vec<Vec<&'a str>>>,
}

impl GeneratorSpec {
    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        serde_json::from_str(text).map_err(|e| CorpusError::GeneratorSpec(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("generator spec serializes")
    }

    /// Ontology implied by the spec: frames in spec order, roles in order of
    /// first appearance.
    pub fn ontology(&self) -> Ontology {
        let mut roles: Vec<String> = Vec::new();
        for frame in &self.frames {
            for role in &frame.roles {
                if !roles.contains(role) {
                    roles.push(role.clone());
                }
            }
        }
        Ontology {
            frames: self.frames.iter().map(|f| f.name.clone()).collect(),
            roles,
            frame_roles: Some(
                self.frames
                    .iter()
                    .map(|f| (f.name.clone(), f.roles.clone()))
                    .collect(),
            ),
        }
    }

    /// Share of distinct trigger words shared by at least two frames.
    pub fn ambiguous_trigger_share(&self) -> f64 {
        let mut frames_per_trigger: BTreeMap<&str, usize> = BTreeMap::new();
        for frame in &self.frames {
            let mut seen: Vec<&str> = frame.triggers.iter().map(String::as_str).collect();
            seen.sort_unstable();
            seen.dedup();
            for t in seen {
                *frames_per_trigger.entry(t).or_default() += 1;
            }
        }
        if frames_per_trigger.is_empty() {
            return 0.0;
        }
        let shared = frames_per_trigger.values().filter(|&&n| n >= 2).count();
        shared as f64 / frames_per_trigger.len() as f64
    }

    fn compile(&self) -> Result<Vec<CompiledFrame<'_>>, CorpusError> {
        let fail = |m: String| Err(CorpusError::GeneratorSpec(m));
        if self.frames.len() < 2 {
            return fail(format!(
                "need at least 2 frames for trigger ambiguity, got {}",
                self.frames.len()
            ));
        }
        if self.num_examples == 0 {
            return fail("num_examples must be at least 1".into());
        }
        self.ontology()
            .validate()
            .map_err(CorpusError::GeneratorSpec)?;

        let mut compiled = Vec::with_capacity(self.frames.len());
        for frame in &self.frames {
            let name = &frame.name;
            if !(1..=4).contains(&frame.roles.len()) {
                return fail(format!("frame {name}: needs 1-4 roles"));
            }
            if frame.templates.is_empty() {
                return fail(format!("frame {name}: no templates"));
            }
            if frame.triggers.is_empty() {
                return fail(format!("frame {name}: no trigger words"));
            }
            for t in &frame.triggers {
                validate_token(t)
                    .map_err(|e| CorpusError::GeneratorSpec(format!("{name}: {e}")))?;
            }

            let mut fillers = HashMap::new();
            for role in &frame.roles {
                validate_label(role).map_err(CorpusError::GeneratorSpec)?;
                let phrases = frame
                    .fillers
                    .get(role)
                    .or_else(|| self.fillers.get(role))
                    .filter(|p| !p.is_empty());
                let Some(phrases) = phrases else {
                    return fail(format!("frame {name}: no fillers for role {role}"));
                };
                let mut split = Vec::with_capacity(phrases.len());
                for p in phrases {
                    let words: Vec<&str> = p.split_whitespace().collect();
                    if words.is_empty() {
                        return fail(format!("frame {name}: empty filler for role {role}"));
                    }
                    for w in &words {
                        validate_token(w)
                            .map_err(|e| CorpusError::GeneratorSpec(format!("{name}: {e}")))?;
                    }
                    split.push(words);
                }
                fillers.insert(role.as_str(), split);
            }

            let mut templates = Vec::with_capacity(frame.templates.len());
            for template in &frame.templates {
                let pieces: Vec<Piece> = template
                    .split_whitespace()
                    .map(
                        |w| match w.strip_prefix('{').and_then(|w| w.strip_suffix('}')) {
                            Some("T") => Piece::Trigger,
                            Some(role) => Piece::Slot(role.to_owned()),
                            None => Piece::Word(w.to_owned()),
                        },
                    )
                    .collect();
                if pieces.iter().filter(|p| **p == Piece::Trigger).count() != 1 {
                    return fail(format!(
                        "frame {name}: template `{template}` needs exactly one {{T}}"
                    ));
                }
                for piece in &pieces {
                    match piece {
                        Piece::Slot(role) if !frame.roles.contains(role) => {
                            return fail(format!(
                                "frame {name}: template `{template}` uses undeclared role {role}"
                            ))
                        }
                        Piece::Word(w) => validate_token(w)
                            .map_err(|e| CorpusError::GeneratorSpec(format!("{name}: {e}")))?,
                        _ => {}
                    }
                }
                templates.push(pieces);
            }
            compiled.push(CompiledFrame {
                spec: frame,
                templates,
                fillers,
            });
        }

        let share = self.ambiguous_trigger_share();
        if share < MIN_AMBIGUOUS_TRIGGER_SHARE {
            return fail(format!(
                "only {:.1}% of trigger words are shared by two or more frames (need {:.0}%)",
                share * 100.0,
                MIN_AMBIGUOUS_TRIGGER_SHARE * 100.0
            ));
        }
        Ok(compiled)
    }
}

/// True when every role's surface text first occurs at its own span, i.e.
/// leftmost-match grounding recovers the gold span.
fn roles_leftmost_unique(tokens: &[String], roles: &[RoleAssignment]) -> bool {
    roles.iter().all(|r| {
        let needle = &tokens[r.span.start()..=r.span.end()];
        tokens
            .windows(needle.len())
            .position(|w| w == needle)
            .is_some_and(|p| p == r.span.start())
    })
}

fn instantiate(
    frame: &CompiledFrame<'_>,
    template: &[Piece],
    rng: &mut ChaCha8Rng,
) -> Option<AnnotatedExample> {
    let trigger_word = frame.spec.triggers.choose(rng)?.clone();
    for _ in 0..MAX_FILLER_ATTEMPTS {
        let mut tokens: Vec<String> = Vec::new();
        let mut trigger = None;
        let mut roles = Vec::new();
        for piece in template {
            match piece {
                Piece::Word(w) => tokens.push(w.clone()),
                Piece::Trigger => {
                    trigger = Some(TokenSpan::single(tokens.len()));
                    tokens.push(trigger_word.clone());
                }
                Piece::Slot(role) => {
                    let phrase = frame.fillers[role.as_str()].choose(rng)?;
                    let start = tokens.len();
                    tokens.extend(phrase.iter().map(|w| (*w).to_owned()));
                    let span = TokenSpan::new(start, tokens.len() - 1).ok()?;
                    roles.push(RoleAssignment::new(role.clone(), span));
                }
            }
        }
        if roles_leftmost_unique(&tokens, &roles) {
            return Some(AnnotatedExample {
                tokens,
                trigger: trigger?,
                frame: frame.spec.name.clone(),
                roles,
            });
        }
    }
    None
}

/// Generates `spec.num_examples` examples. A pure function of
/// `(spec, seed)`.
pub fn generate_synthetic(spec: &GeneratorSpec, seed: u64) -> Result<Corpus, CorpusError> {
    let frames = spec.compile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(spec.num_examples);
    let mut failures = 0usize;
    while examples.len() < spec.num_examples {
        let frame = &frames[rng.random_range(0..frames.len())];
        let template = &frame.templates[rng.random_range(0..frame.templates.len())];
        match instantiate(frame, template, &mut rng) {
            Some(ex) => examples.push(ex),
            None => {
                failures += 1;
                if failures > 1000 + spec.num_examples {
                    return Err(CorpusError::GeneratorSpec(format!(
                        "frame {}: fillers cannot be placed without repeating surface text",
                        frame.spec.name
                    )));
                }
            }
        }
    }
    Corpus::new(spec.ontology(), examples)
}
