//! Text encodings of frame parses.
//!
//! Full-Gen (one generative task):
//!
//! ```text
//! input:  The rain * dripped * down his neck .
//! target: dripped = Fluidic motion | The rain = Fluid | down his neck = Path |
//! ```
//!
//! Multi-task (a classification task and an argument task; real tokens are
//! prefixed with their index, trigger markers are not indexed):
//!
//! ```text
//! FRAME: 0 The 1 rain 2 * dripped * 3 down 4 his 5 neck 6 .          -> Fluidic motion
//! ARGS for Fluidic motion: 0 The 1 rain 2 * dripped * 3 down ...      -> Fluid = 0-1 | Path = 3-5 |
//! ```

mod vocab;

pub use vocab::{EncodedInput, Vocabulary, BOS, EOS, PAD, UNK};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{validate_label, AnnotatedExample, RoleAssignment, TokenSpan};

/// Frame label used when no frame could be read from a generation.
pub const UNK_FRAME: &str = "<unk>";
pub const TRIGGER_MARKER: &str = "*";
pub const FRAME_COMMAND: &str = "FRAME:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    FullGen,
    Frame,
    Args,
}

impl TaskKind {
    pub fn is_generative(self) -> bool {
        matches!(self, TaskKind::FullGen | TaskKind::Args)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::FullGen => "fullgen",
            TaskKind::Frame => "frame",
            TaskKind::Args => "args",
        })
    }
}

/// Which formulation a model is trained and run in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    FullGen,
    MultiTask,
}

impl Mode {
    pub fn tasks(self) -> &'static [TaskKind] {
        match self {
            Mode::FullGen => &[TaskKind::FullGen],
            Mode::MultiTask => &[TaskKind::Frame, TaskKind::Args],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::FullGen => "fullgen",
            Mode::MultiTask => "multitask",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fullgen" | "full-gen" => Ok(Mode::FullGen),
            "multitask" | "multi-task" => Ok(Mode::MultiTask),
            other => Err(format!(
                "unknown mode `{other}` (expected fullgen or multitask)"
            )),
        }
    }
}

/// What a word of a model input stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordRole {
    Command,
    Index,
    Marker,
    Token,
    TriggerToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputWord {
    pub text: String,
    pub role: WordRole,
}

impl InputWord {
    fn new(text: impl Into<String>, role: WordRole) -> Self {
        Self {
            text: text.into(),
            role,
        }
    }
}

pub fn join_words(words: &[InputWord]) -> String {
    words
        .iter()
        .map(|w| w.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One training record: task tag, input, target.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskExample<'a> {
    pub kind: TaskKind,
    pub input_text: String,
    pub target_text: String,
    pub input_words: Vec<InputWord>,
    pub source: &'a AnnotatedExample,
}

/// A frame label with its role assignments, as read back from a model
/// output or taken from gold data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub frame: String,
    pub roles: Vec<RoleAssignment>,
}

impl From<&AnnotatedExample> for FrameAnnotation {
    fn from(ex: &AnnotatedExample) -> Self {
        Self {
            frame: ex.frame.clone(),
            roles: ex.roles.clone(),
        }
    }
}

/// Non-fatal problems found while reading a model generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseDiagnostic {
    EmptyOutput,
    MissingSeparator {
        segment: String,
    },
    InvalidLabel {
        segment: String,
        reason: String,
    },
    SpanNotFound {
        text: String,
    },
    BadRange {
        segment: String,
    },
    RangeOutOfBounds {
        segment: String,
        sentence_len: usize,
    },
    TriggerMismatch {
        expected: String,
        found: String,
    },
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::EmptyOutput => write!(f, "empty output"),
            Self::MissingSeparator { segment } => {
                write!(f, "segment `{segment}` has no ` = ` separator")
            }
            Self::InvalidLabel { segment, reason } => {
                write!(f, "segment `{segment}`: {reason}")
            }
            Self::SpanNotFound { text } => write!(f, "span text `{text}` not found in sentence"),
            Self::BadRange { segment } => write!(f, "segment `{segment}` has no valid i-j range"),
            Self::RangeOutOfBounds {
                segment,
                sentence_len,
            } => write!(
                f,
                "segment `{segment}` is out of range for {sentence_len} tokens"
            ),
            Self::TriggerMismatch { expected, found } => {
                write!(f, "trigger text `{found}` differs from `{expected}`")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFrame {
    pub annotation: FrameAnnotation,
    pub diagnostics: Vec<ParseDiagnostic>,
}

/// Roles in target order: by span start, ties keep gold order.
fn ordered_roles(roles: &[RoleAssignment]) -> Vec<&RoleAssignment> {
    let mut ordered: Vec<&RoleAssignment> = roles.iter().collect();
    ordered.sort_by_key(|r| r.span.start());
    ordered
}

/// Sentence words with the trigger wrapped in `* ... *`.
pub fn fullgen_input_words(tokens: &[String], trigger: TokenSpan) -> Vec<InputWord> {
    let mut words = Vec::with_capacity(tokens.len() + 2);
    for (i, tok) in tokens.iter().enumerate() {
        if i == trigger.start() {
            words.push(InputWord::new(TRIGGER_MARKER, WordRole::Marker));
        }
        let role = if trigger.contains(i) {
            WordRole::TriggerToken
        } else {
            WordRole::Token
        };
        words.push(InputWord::new(tok.clone(), role));
        if i == trigger.end() {
            words.push(InputWord::new(TRIGGER_MARKER, WordRole::Marker));
        }
    }
    words
}

pub fn fullgen_target(ex: &AnnotatedExample) -> String {
    let mut target = format!("{} = {} |", ex.trigger_text(), ex.frame);
    for role in ordered_roles(&ex.roles) {
        target.push_str(&format!(" {} = {} |", ex.span_text(role.span), role.label));
    }
    target
}

pub fn fullgen_encode(ex: &AnnotatedExample) -> TaskExample<'_> {
    let input_words = fullgen_input_words(&ex.tokens, ex.trigger);
    TaskExample {
        kind: TaskKind::FullGen,
        input_text: join_words(&input_words),
        target_text: fullgen_target(ex),
        input_words,
        source: ex,
    }
}

/// Leftmost contiguous occurrence of `needle` in `tokens`.
pub fn find_leftmost(tokens: &[String], needle: &[&str]) -> Option<TokenSpan> {
    if needle.is_empty() || needle.len() > tokens.len() {
        return None;
    }
    tokens
        .windows(needle.len())
        .position(|w| w.iter().zip(needle).all(|(a, b)| a == b))
        .map(|start| TokenSpan::new(start, start + needle.len() - 1).expect("non-empty window"))
}

fn segments(output: &str) -> impl Iterator<Item = &str> {
    output.split('|').map(str::trim).filter(|s| !s.is_empty())
}

/// Reads a Full-Gen generation back into a frame annotation. Never fails:
/// unusable segments are dropped and reported.
pub fn fullgen_parse(output: &str, tokens: &[String], trigger: TokenSpan) -> ParsedFrame {
    let mut diagnostics = Vec::new();
    let mut frame = UNK_FRAME.to_owned();
    let mut roles = Vec::new();
    let mut segs = segments(output);

    match segs.next() {
        None => diagnostics.push(ParseDiagnostic::EmptyOutput),
        Some(first) => match first.split_once(" = ") {
            None => diagnostics.push(ParseDiagnostic::MissingSeparator {
                segment: first.to_owned(),
            }),
            Some((trig, label)) => {
                let label = label.trim();
                match validate_label(label) {
                    Ok(()) => frame = label.to_owned(),
                    Err(reason) => diagnostics.push(ParseDiagnostic::InvalidLabel {
                        segment: first.to_owned(),
                        reason,
                    }),
                }
                let expected = tokens
                    .get(trigger.start()..=trigger.end())
                    .map(|t| t.join(" "))
                    .unwrap_or_default();
                let found = trig.split_whitespace().collect::<Vec<_>>().join(" ");
                if found != expected {
                    diagnostics.push(ParseDiagnostic::TriggerMismatch { expected, found });
                }
            }
        },
    }

    for seg in segs {
        let Some((text, label)) = seg.split_once(" = ") else {
            diagnostics.push(ParseDiagnostic::MissingSeparator {
                segment: seg.to_owned(),
            });
            continue;
        };
        let label = label.trim();
        if let Err(reason) = validate_label(label) {
            diagnostics.push(ParseDiagnostic::InvalidLabel {
                segment: seg.to_owned(),
                reason,
            });
            continue;
        }
        let needle: Vec<&str> = text.split_whitespace().collect();
        match find_leftmost(tokens, &needle) {
            Some(span) => roles.push(RoleAssignment::new(label, span)),
            None => diagnostics.push(ParseDiagnostic::SpanNotFound {
                text: needle.join(" "),
            }),
        }
    }

    ParsedFrame {
        annotation: FrameAnnotation { frame, roles },
        diagnostics,
    }
}

/// Every token prefixed by its index, trigger tokens wrapped in markers.
pub fn indexed_words(tokens: &[String], trigger: TokenSpan) -> Vec<InputWord> {
    let mut words = Vec::with_capacity(2 * tokens.len() + 2);
    for (i, tok) in tokens.iter().enumerate() {
        words.push(InputWord::new(i.to_string(), WordRole::Index));
        if i == trigger.start() {
            words.push(InputWord::new(TRIGGER_MARKER, WordRole::Marker));
        }
        let role = if trigger.contains(i) {
            WordRole::TriggerToken
        } else {
            WordRole::Token
        };
        words.push(InputWord::new(tok.clone(), role));
        if i == trigger.end() {
            words.push(InputWord::new(TRIGGER_MARKER, WordRole::Marker));
        }
    }
    words
}

pub fn multitask_index_text(tokens: &[String], trigger: TokenSpan) -> String {
    join_words(&indexed_words(tokens, trigger))
}

/// Inverse of [`multitask_index_text`].
pub fn parse_index_text(text: &str) -> Result<(Vec<String>, TokenSpan), String> {
    let mut words = text.split(' ').peekable();
    let mut tokens = Vec::new();
    let (mut start, mut end) = (None, None);
    while let Some(idx) = words.next() {
        if idx.parse::<usize>().ok() != Some(tokens.len()) {
            return Err(format!("expected index {}, found `{idx}`", tokens.len()));
        }
        let mut tok = words.next().ok_or("index without token")?;
        if tok == TRIGGER_MARKER {
            if start.is_some() {
                return Err("second trigger region".into());
            }
            start = Some(tokens.len());
            tok = words.next().ok_or("marker without token")?;
        }
        tokens.push(tok.to_owned());
        if words.peek() == Some(&TRIGGER_MARKER) {
            words.next();
            end = Some(tokens.len() - 1);
        }
    }
    match (start, end) {
        (Some(s), Some(e)) => Ok((tokens, TokenSpan::new(s, e).map_err(|e| e.to_string())?)),
        _ => Err("missing trigger markers".into()),
    }
}

pub fn frame_input_words(tokens: &[String], trigger: TokenSpan) -> Vec<InputWord> {
    let mut words = vec![InputWord::new(FRAME_COMMAND, WordRole::Command)];
    words.extend(indexed_words(tokens, trigger));
    words
}

/// `ARGS for <frame>: ` followed by the indexed sentence.
pub fn args_input_words(frame: &str, tokens: &[String], trigger: TokenSpan) -> Vec<InputWord> {
    let mut words = vec![
        InputWord::new("ARGS", WordRole::Command),
        InputWord::new("for", WordRole::Command),
    ];
    let label_words: Vec<&str> = frame.split(' ').collect();
    let last = label_words.len() - 1;
    for (i, w) in label_words.iter().enumerate() {
        let text = if i == last {
            format!("{w}:")
        } else {
            (*w).to_owned()
        };
        words.push(InputWord::new(text, WordRole::Command));
    }
    words.extend(indexed_words(tokens, trigger));
    words
}

pub fn args_target(roles: &[RoleAssignment]) -> String {
    ordered_roles(roles)
        .iter()
        .map(|r| format!("{} = {}-{} |", r.label, r.span.start(), r.span.end()))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Splits one example into its FRAME and ARGS training records.
pub fn multitask_encode(ex: &AnnotatedExample) -> (TaskExample<'_>, TaskExample<'_>) {
    let frame_words = frame_input_words(&ex.tokens, ex.trigger);
    let args_words = args_input_words(&ex.frame, &ex.tokens, ex.trigger);
    (
        TaskExample {
            kind: TaskKind::Frame,
            input_text: join_words(&frame_words),
            target_text: ex.frame.clone(),
            input_words: frame_words,
            source: ex,
        },
        TaskExample {
            kind: TaskKind::Args,
            input_text: join_words(&args_words),
            target_text: args_target(&ex.roles),
            input_words: args_words,
            source: ex,
        },
    )
}

/// Reads `Label = i-j |` segments, keeping ranges with
/// `0 <= i <= j < sentence_len`.
pub fn multitask_parse_args(
    output: &str,
    sentence_len: usize,
) -> (Vec<RoleAssignment>, Vec<ParseDiagnostic>) {
    let mut roles = Vec::new();
    let mut diagnostics = Vec::new();
    for seg in segments(output) {
        let Some((label, range)) = seg.split_once(" = ") else {
            diagnostics.push(ParseDiagnostic::MissingSeparator {
                segment: seg.to_owned(),
            });
            continue;
        };
        let label = label.trim();
        if let Err(reason) = validate_label(label) {
            diagnostics.push(ParseDiagnostic::InvalidLabel {
                segment: seg.to_owned(),
                reason,
            });
            continue;
        }
        let bounds = range.trim().split_once('-').and_then(|(a, b)| {
            let digits = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
            if digits(a) && digits(b) {
                Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?))
            } else {
                None
            }
        });
        match bounds {
            Some((i, j)) if i <= j && j < sentence_len => {
                roles.push(RoleAssignment::new(
                    label,
                    TokenSpan::new(i, j).expect("checked order"),
                ));
            }
            Some((i, j)) if i <= j => diagnostics.push(ParseDiagnostic::RangeOutOfBounds {
                segment: seg.to_owned(),
                sentence_len,
            }),
            _ => diagnostics.push(ParseDiagnostic::BadRange {
                segment: seg.to_owned(),
            }),
        }
    }
    (roles, diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_owned).collect()
    }

    fn span(a: usize, b: usize) -> TokenSpan {
        TokenSpan::new(a, b).unwrap()
    }

    fn dripped() -> AnnotatedExample {
        AnnotatedExample::from_text(
            "The rain dripped down his neck .",
            TokenSpan::single(2),
            "Fluidic motion",
            vec![
                RoleAssignment::new("Fluid", span(0, 1)),
                RoleAssignment::new("Path", span(3, 5)),
            ],
        )
        .unwrap()
    }

    fn repaired() -> AnnotatedExample {
        AnnotatedExample::from_text(
            "Two of the cast fainted and most of the rest repaired to the nearest bar .",
            TokenSpan::single(10),
            "Self motion",
            vec![
                RoleAssignment::new("Goal", span(11, 14)),
                RoleAssignment::new("Self_mover", span(6, 9)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn fullgen_dripped_row() {
        let ex = dripped();
        let task = fullgen_encode(&ex);
        assert_eq!(task.kind, TaskKind::FullGen);
        assert_eq!(task.input_text, "The rain * dripped * down his neck .");
        assert_eq!(
            task.target_text,
            "dripped = Fluidic motion | The rain = Fluid | down his neck = Path |"
        );
    }

    #[test]
    fn fullgen_cleared_row() {
        let ex = AnnotatedExample::from_text(
            "He cleared his throat as the young man looked up .",
            TokenSpan::single(1),
            "Emptying",
            vec![
                RoleAssignment::new("Source", span(2, 3)),
                RoleAssignment::new("Agent", span(0, 0)),
            ],
        )
        .unwrap();
        assert_eq!(
            fullgen_encode(&ex).target_text,
            "cleared = Emptying | He = Agent | his throat = Source |"
        );
        assert_eq!(
            fullgen_encode(&ex).input_text,
            "He * cleared * his throat as the young man looked up ."
        );
    }

    #[test]
    fn fullgen_zero_roles() {
        let mut ex = dripped();
        ex.roles.clear();
        assert_eq!(
            fullgen_encode(&ex).target_text,
            "dripped = Fluidic motion |"
        );
        let parsed = fullgen_parse("dripped = Fluidic motion |", &ex.tokens, ex.trigger);
        assert_eq!(parsed.annotation.frame, "Fluidic motion");
        assert!(parsed.annotation.roles.is_empty());
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn fullgen_parse_partial_table_row() {
        let ex = dripped();
        let parsed = fullgen_parse(
            "dripped = Fluidic motion | The rain = Fluid |",
            &ex.tokens,
            ex.trigger,
        );
        assert_eq!(parsed.annotation.frame, "Fluidic motion");
        assert_eq!(
            parsed.annotation.roles,
            vec![RoleAssignment::new("Fluid", span(0, 1))]
        );
        assert!(parsed.diagnostics.is_empty());
    }

    #[test]
    fn fullgen_parse_round_trip() {
        for ex in [dripped(), repaired()] {
            let task = fullgen_encode(&ex);
            let parsed = fullgen_parse(&task.target_text, &ex.tokens, ex.trigger);
            assert_eq!(parsed.annotation.frame, ex.frame);
            let mut got = parsed.annotation.roles.clone();
            let mut want = ex.roles.clone();
            got.sort_by_key(|r| r.span);
            want.sort_by_key(|r| r.span);
            assert_eq!(got, want);
            assert!(parsed.diagnostics.is_empty());
        }
    }

    /// Every contiguous occurrence of `needle`, by brute force.
    fn all_matches(tokens: &[String], needle: &[&str]) -> Vec<TokenSpan> {
        let mut out = Vec::new();
        for s in 0..tokens.len() {
            for e in s..tokens.len() {
                let cand: Vec<&str> = tokens[s..=e].iter().map(String::as_str).collect();
                if cand == needle {
                    out.push(span(s, e));
                }
            }
        }
        out
    }

    #[test]
    fn fullgen_grounding_is_leftmost() {
        let tokens = toks("a b a b");
        let parsed = fullgen_parse("X | a b = R |", &tokens, TokenSpan::single(0));
        let matches = all_matches(&tokens, &["a", "b"]);
        assert_eq!(matches, vec![span(0, 1), span(2, 3)]);
        let leftmost = *matches.iter().min_by_key(|s| s.start()).unwrap();
        assert_eq!(
            parsed.annotation.roles,
            vec![RoleAssignment::new("R", leftmost)]
        );
        assert_eq!(parsed.annotation.frame, UNK_FRAME);
        assert!(matches!(
            parsed.diagnostics[0],
            ParseDiagnostic::MissingSeparator { .. }
        ));
    }

    #[test]
    fn fullgen_parse_drops_bad_segments() {
        let ex = dripped();
        let parsed = fullgen_parse(
            "dripped = Fluidic motion | his hat = Fluid | The rain Fluid | down = a = b |",
            &ex.tokens,
            ex.trigger,
        );
        assert_eq!(parsed.annotation.frame, "Fluidic motion");
        assert!(parsed.annotation.roles.is_empty());
        assert_eq!(parsed.diagnostics.len(), 3);

        let empty = fullgen_parse("   ", &ex.tokens, ex.trigger);
        assert_eq!(empty.annotation.frame, UNK_FRAME);
        assert_eq!(empty.diagnostics, vec![ParseDiagnostic::EmptyOutput]);

        let wrong_trigger = fullgen_parse("rain = Fluidic motion |", &ex.tokens, ex.trigger);
        assert_eq!(wrong_trigger.annotation.frame, "Fluidic motion");
        assert!(matches!(
            wrong_trigger.diagnostics[0],
            ParseDiagnostic::TriggerMismatch { .. }
        ));
    }

    #[test]
    fn index_text_repaired_row() {
        let ex = repaired();
        assert_eq!(
            multitask_index_text(&ex.tokens, ex.trigger),
            "0 Two 1 of 2 the 3 cast 4 fainted 5 and 6 most 7 of 8 the 9 rest 10 * repaired * 11 to 12 the 13 nearest 14 bar 15 ."
        );
    }

    #[test]
    fn index_text_single_token() {
        assert_eq!(
            multitask_index_text(&toks("w"), TokenSpan::single(0)),
            "0 * w *"
        );
    }

    #[test]
    fn index_text_multi_token_trigger_keeps_counting() {
        let tokens = toks("he picked it up");
        let text = multitask_index_text(&tokens, span(1, 3));
        assert_eq!(text, "0 he 1 * picked 2 it 3 up *");
        assert_eq!(parse_index_text(&text).unwrap(), (tokens, span(1, 3)));
    }

    #[test]
    fn index_text_inverse() {
        let ex = repaired();
        let text = multitask_index_text(&ex.tokens, ex.trigger);
        assert_eq!(
            parse_index_text(&text).unwrap(),
            (ex.tokens.clone(), ex.trigger)
        );
        assert!(parse_index_text("0 a 1 b").is_err());
        assert!(parse_index_text("0 a 2 * b *").is_err());
    }

    #[test]
    fn multitask_repaired_rows() {
        let ex = repaired();
        let (frame, args) = multitask_encode(&ex);
        assert_eq!(frame.kind, TaskKind::Frame);
        assert!(frame.input_text.starts_with("FRAME: 0 Two 1 of"));
        assert_eq!(frame.target_text, "Self motion");
        assert!(args
            .input_text
            .starts_with("ARGS for Self motion: 0 Two 1 of 2 the"));
        assert_eq!(args.target_text, "Self_mover = 6-9 | Goal = 11-14 |");
    }

    #[test]
    fn multitask_vigour_row() {
        let ex = AnnotatedExample::from_text(
            "He blinked , taken aback by the vigour of her outburst .",
            TokenSpan::single(7),
            "Dynamism",
            vec![RoleAssignment::new("Action", span(8, 10))],
        )
        .unwrap();
        let (frame, args) = multitask_encode(&ex);
        assert_eq!(
            frame.input_text,
            "FRAME: 0 He 1 blinked 2 , 3 taken 4 aback 5 by 6 the 7 * vigour * 8 of 9 her 10 outburst 11 ."
        );
        assert_eq!(args.target_text, "Action = 8-10 |");
    }

    #[test]
    fn zero_role_args_target_is_empty() {
        let mut ex = dripped();
        ex.roles.clear();
        let (_, args) = multitask_encode(&ex);
        assert_eq!(args.target_text, "");
        let (roles, diags) = multitask_parse_args("", 7);
        assert!(roles.is_empty() && diags.is_empty());
    }

    #[test]
    fn parse_args_table_row() {
        let (roles, diags) = multitask_parse_args("Fluid = 0-1 | Path = 2-4 |", 5);
        assert_eq!(
            roles,
            vec![
                RoleAssignment::new("Fluid", span(0, 1)),
                RoleAssignment::new("Path", span(2, 4)),
            ]
        );
        assert!(diags.is_empty());
    }

    #[test]
    fn parse_args_drops_bad_ranges() {
        let (roles, diags) = multitask_parse_args("R = 3-9 |", 5);
        assert!(roles.is_empty());
        assert_eq!(
            diags,
            vec![ParseDiagnostic::RangeOutOfBounds {
                segment: "R = 3-9".into(),
                sentence_len: 5
            }]
        );
        let (roles, diags) =
            multitask_parse_args("A = 3-1 | B = x-2 | C 1-2 | D = 1 | E = 0-0 |", 5);
        assert_eq!(roles, vec![RoleAssignment::new("E", span(0, 0))]);
        assert_eq!(diags.len(), 4);
    }

    #[test]
    fn parse_args_round_trip_with_overlaps() {
        let roles = vec![
            RoleAssignment::new("A", span(0, 3)),
            RoleAssignment::new("B", span(2, 2)),
            RoleAssignment::new("C", span(2, 5)),
        ];
        let (parsed, diags) = multitask_parse_args(&args_target(&roles), 6);
        assert_eq!(parsed, roles);
        assert!(diags.is_empty());
    }
}
