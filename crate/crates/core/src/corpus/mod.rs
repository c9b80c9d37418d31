//! Annotated sentences, the line-delimited annotation file format, and
//! corpus splitting.
//!
//! An annotation file is UTF-8 text. The first line is an ontology header
//! record, every following line is one example record:
//!
//! ```text
//! {"ontology":{"frames":["Fluidic_motion"],"roles":["Fluid","Path"],"frame_roles":null}}
//! {"tokens":["The","rain","dripped","down","his","neck","."],"trigger":[2,2],"frame":"Fluidic_motion","roles":[{"label":"Fluid","span":[0,1]},{"label":"Path","span":[3,5]}]}
//! ```
//!
//! Spans are 0-based and inclusive on both ends. One record is stored per
//! (sentence, trigger) pair.

mod synthetic;

pub use synthetic::{generate_synthetic, FrameTemplateSpec, GeneratorSpec};

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil;

/// Characters that are reserved by the two wire formats.
pub const RESERVED_CHARS: [char; 3] = ['*', '|', '='];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: {message}")]
    SpanOutOfRange { line: usize, message: String },
    #[error("line {line}: unknown {kind} label `{label}`")]
    UnknownLabel {
        line: usize,
        kind: &'static str,
        label: String,
    },
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("invalid ontology: {0}")]
    InvalidOntology(String),
    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    InvalidRatios([f64; 3]),
    #[error("invalid generator spec: {0}")]
    GeneratorSpec(String),
}

/// Inclusive token-index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct TokenSpan {
    start: usize,
    end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Result<Self, CorpusError> {
        if start > end {
            return Err(CorpusError::InvalidExample(format!(
                "span start {start} is after end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    /// Single-token span.
    pub fn single(index: usize) -> Self {
        Self {
            start: index,
            end: index,
        }
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn contains(&self, index: usize) -> bool {
        self.start <= index && index <= self.end
    }

    /// Number of token positions shared with `other`.
    pub fn overlap(&self, other: &TokenSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }

    pub fn fits(&self, token_count: usize) -> bool {
        self.end < token_count
    }
}

impl TryFrom<[usize; 2]> for TokenSpan {
    type Error = String;

    fn try_from([start, end]: [usize; 2]) -> Result<Self, Self::Error> {
        TokenSpan::new(start, end).map_err(|e| e.to_string())
    }
}

impl From<TokenSpan> for [usize; 2] {
    fn from(span: TokenSpan) -> Self {
        [span.start, span.end]
    }
}

impl fmt::Display for TokenSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub label: String,
    pub span: TokenSpan,
}

impl RoleAssignment {
    pub fn new(label: impl Into<String>, span: TokenSpan) -> Self {
        Self {
            label: label.into(),
            span,
        }
    }
}

/// Checks a frame or role label: non-empty, no reserved characters, no
/// leading/trailing or doubled whitespace.
pub fn validate_label(label: &str) -> Result<(), String> {
    if label.is_empty() {
        return Err("empty label".into());
    }
    if let Some(c) = label.chars().find(|c| RESERVED_CHARS.contains(c)) {
        return Err(format!("label `{label}` contains reserved character `{c}`"));
    }
    if label.split(' ').any(str::is_empty) || label.chars().any(|c| c.is_whitespace() && c != ' ') {
        return Err(format!("label `{label}` has irregular whitespace"));
    }
    Ok(())
}

pub fn validate_token(token: &str) -> Result<(), String> {
    if token.is_empty() {
        return Err("empty token".into());
    }
    if token
        .chars()
        .any(|c| c.is_whitespace() || RESERVED_CHARS.contains(&c))
    {
        return Err(format!(
            "token `{token}` contains whitespace or a reserved character"
        ));
    }
    Ok(())
}

/// A tokenized sentence with one trigger, its gold frame, and gold roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub tokens: Vec<String>,
    pub trigger: TokenSpan,
    pub frame: String,
    pub roles: Vec<RoleAssignment>,
}

impl AnnotatedExample {
    /// Builds and validates an example.
    pub fn new(
        tokens: Vec<String>,
        trigger: TokenSpan,
        frame: impl Into<String>,
        roles: Vec<RoleAssignment>,
    ) -> Result<Self, CorpusError> {
        let ex = Self {
            tokens,
            trigger,
            frame: frame.into(),
            roles,
        };
        ex.validate().map_err(CorpusError::InvalidExample)?;
        Ok(ex)
    }

    /// Convenience constructor from a whitespace-separated sentence.
    pub fn from_text(
        text: &str,
        trigger: TokenSpan,
        frame: impl Into<String>,
        roles: Vec<RoleAssignment>,
    ) -> Result<Self, CorpusError> {
        Self::new(
            text.split_whitespace().map(str::to_owned).collect(),
            trigger,
            frame,
            roles,
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() {
            return Err("sentence has no tokens".into());
        }
        for token in &self.tokens {
            validate_token(token)?;
        }
        let n = self.tokens.len();
        if !self.trigger.fits(n) {
            return Err(format!(
                "trigger span {} out of range for {n} tokens",
                self.trigger
            ));
        }
        validate_label(&self.frame)?;
        for role in &self.roles {
            validate_label(&role.label)?;
            if !role.span.fits(n) {
                return Err(format!(
                    "role {} span {} out of range for {n} tokens",
                    role.label, role.span
                ));
            }
        }
        Ok(())
    }

    pub fn span_text(&self, span: TokenSpan) -> String {
        self.tokens[span.start..=span.end].join(" ")
    }

    pub fn trigger_text(&self) -> String {
        self.span_text(self.trigger)
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ontology {
    pub frames: Vec<String>,
    pub roles: Vec<String>,
    pub frame_roles: Option<BTreeMap<String, Vec<String>>>,
}

impl Ontology {
    pub fn new(frames: Vec<String>, roles: Vec<String>) -> Result<Self, CorpusError> {
        let ont = Self {
            frames,
            roles,
            frame_roles: None,
        };
        ont.validate().map_err(CorpusError::InvalidOntology)?;
        Ok(ont)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (kind, labels) in [("frame", &self.frames), ("role", &self.roles)] {
            let mut seen = HashSet::new();
            for label in labels {
                validate_label(label)?;
                if !seen.insert(label) {
                    return Err(format!("duplicate {kind} label `{label}`"));
                }
            }
        }
        if let Some(map) = &self.frame_roles {
            for (frame, roles) in map {
                if !self.frames.contains(frame) {
                    return Err(format!("frame_roles names unknown frame `{frame}`"));
                }
                if let Some(r) = roles.iter().find(|r| !self.roles.contains(r)) {
                    return Err(format!("frame_roles names unknown role `{r}`"));
                }
            }
        }
        Ok(())
    }

    /// Classifier class index of a frame label.
    pub fn frame_index(&self, frame: &str) -> Option<usize> {
        self.frames.iter().position(|f| f == frame)
    }

    pub fn has_role(&self, role: &str) -> bool {
        self.roles.iter().any(|r| r == role)
    }

    /// Roles permitted for a frame, when the ontology restricts them.
    pub fn permitted_roles(&self, frame: &str) -> Option<&[String]> {
        self.frame_roles
            .as_ref()
            .and_then(|m| m.get(frame))
            .map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub ontology: Ontology,
    pub examples: Vec<AnnotatedExample>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    ontology: Ontology,
}

impl Corpus {
    pub fn new(ontology: Ontology, examples: Vec<AnnotatedExample>) -> Result<Self, CorpusError> {
        let corpus = Self { ontology, examples };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Validates every example and checks its labels against the ontology.
    /// Errors name the 1-based file line the example would occupy.
    pub fn validate(&self) -> Result<(), CorpusError> {
        self.ontology
            .validate()
            .map_err(CorpusError::InvalidOntology)?;
        for (i, ex) in self.examples.iter().enumerate() {
            check_example(&self.ontology, ex, i + 2)?;
        }
        Ok(())
    }

    /// Longest sentence in tokens.
    pub fn max_sentence_len(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.tokens.len())
            .max()
            .unwrap_or(0)
    }

    fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            ontology: self.ontology.clone(),
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }

    /// Serializes to the annotation file format.
    pub fn to_jsonl(&self) -> String {
        let header = HeaderRecord {
            ontology: self.ontology.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("ontology serializes");
        out.push('\n');
        for ex in &self.examples {
            out.push_str(&serde_json::to_string(ex).expect("example serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses the annotation file format.
    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut lines = text.lines().enumerate();
        let header: HeaderRecord = loop {
            match lines.next() {
                None => {
                    return Err(CorpusError::Malformed {
                        line: 1,
                        message: "missing ontology header".into(),
                    })
                }
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => {
                    break serde_json::from_str(l).map_err(|e| CorpusError::Malformed {
                        line: i + 1,
                        message: format!("bad ontology header: {e}"),
                    })?
                }
            }
        };
        let ontology = header.ontology;
        ontology.validate().map_err(CorpusError::InvalidOntology)?;

        let mut examples = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let line_no = i + 1;
            let ex: AnnotatedExample =
                serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            check_example(&ontology, &ex, line_no)?;
            examples.push(ex);
        }
        Ok(Corpus { ontology, examples })
    }
}

fn check_example(ont: &Ontology, ex: &AnnotatedExample, line: usize) -> Result<(), CorpusError> {
    let n = ex.tokens.len();
    if n == 0 {
        return Err(CorpusError::Malformed {
            line,
            message: "sentence has no tokens".into(),
        });
    }
    if let Some(t) = ex.tokens.iter().find(|t| validate_token(t).is_err()) {
        return Err(CorpusError::Malformed {
            line,
            message: format!("invalid token `{t}`"),
        });
    }
    if !ex.trigger.fits(n) {
        return Err(CorpusError::SpanOutOfRange {
            line,
            message: format!("trigger span {} out of range for {n} tokens", ex.trigger),
        });
    }
    if let Some(r) = ex.roles.iter().find(|r| !r.span.fits(n)) {
        return Err(CorpusError::SpanOutOfRange {
            line,
            message: format!(
                "role {} span {} out of range for {n} tokens",
                r.label, r.span
            ),
        });
    }
    if ont.frame_index(&ex.frame).is_none() {
        return Err(CorpusError::UnknownLabel {
            line,
            kind: "frame",
            label: ex.frame.clone(),
        });
    }
    if let Some(r) = ex.roles.iter().find(|r| !ont.has_role(&r.label)) {
        return Err(CorpusError::UnknownLabel {
            line,
            kind: "role",
            label: r.label.clone(),
        });
    }
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_jsonl(&text)
}

/// Writes the corpus atomically (temp file, then rename).
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    corpus.validate()?;
    fsutil::write_atomic(path, corpus.to_jsonl().as_bytes()).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Split sizes by largest remainder, so each size is within 1 of `ratio * n`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3], CorpusError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !r.is_finite() || *r <= 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidRatios(ratios));
    }
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[k] += 1;
        remaining -= 1;
    }
    Ok(sizes)
}

/// Seeded random partition into (train, dev, test). Each split keeps the
/// original corpus order.
pub fn split_corpus(
    corpus: &Corpus,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus), CorpusError> {
    let [n_train, n_dev, _] = split_sizes(corpus.len(), ratios)?;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut train = order[..n_train].to_vec();
    let mut dev = order[n_train..n_train + n_dev].to_vec();
    let mut test = order[n_train + n_dev..].to_vec();
    train.sort_unstable();
    dev.sort_unstable();
    test.sort_unstable();
    Ok((
        corpus.subset(&train),
        corpus.subset(&dev),
        corpus.subset(&test),
    ))
}
