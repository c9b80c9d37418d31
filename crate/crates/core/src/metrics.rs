//! Frame accuracy and the three role-matching metrics.
//!
//! * Exact Match: micro P/R/F1 over `(label, span)` pairs.
//! * Soft Match: role instances are paired within an example (same label,
//!   greedily by token overlap); per-instance token precision and recall
//!   are averaged over all instances and F1 is taken from the averages.
//! * Global Match: micro P/R/F1 over `(label, token)` pairs, with set
//!   semantics inside an example.
//!
//! With frame gating on, an example whose predicted frame is wrong scores
//! every predicted role as a false positive and every gold role as a false
//! negative.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedExample, RoleAssignment, TokenSpan};
use crate::pipeline::PredictionRecord;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {golds} gold examples")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("record {index}: prediction and gold differ in {what}")]
    Misaligned { index: usize, what: &'static str },
    #[error("nothing to score")]
    Empty,
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

/// One scored record: either side of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredRecord {
    pub tokens: Vec<String>,
    pub trigger: TokenSpan,
    pub frame: String,
    pub roles: Vec<RoleAssignment>,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

impl From<&AnnotatedExample> for ScoredRecord {
    fn from(ex: &AnnotatedExample) -> Self {
        Self {
            tokens: ex.tokens.clone(),
            trigger: ex.trigger,
            frame: ex.frame.clone(),
            roles: ex.roles.clone(),
            diagnostics: Vec::new(),
        }
    }
}

impl From<PredictionRecord> for ScoredRecord {
    fn from(r: PredictionRecord) -> Self {
        Self {
            tokens: r.tokens,
            trigger: r.trigger,
            frame: r.frame,
            roles: r.roles,
            diagnostics: r.diagnostics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1_of(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// `num / den`; an empty denominator gives 1 when `both_empty` and 0
/// otherwise.
fn ratio(num: f64, den: f64, both_empty: bool) -> f64 {
    if den > 0.0 {
        num / den
    } else if both_empty {
        1.0
    } else {
        0.0
    }
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1_of(precision, recall),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn prf(&self) -> Prf {
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        let both_empty = self.tp + self.fp + self.fn_ == 0;
        Prf::new(
            ratio(tp, tp + fp, both_empty),
            ratio(tp, tp + fn_, both_empty),
        )
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScore {
    #[serde(flatten)]
    pub prf: Prf,
    #[serde(flatten)]
    pub counts: Counts,
}

impl From<Counts> for MicroScore {
    fn from(counts: Counts) -> Self {
        Self {
            prf: counts.prf(),
            counts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SoftSums {
    /// Predicted instances (each contributes one precision value).
    pub pred_instances: usize,
    /// Gold instances (each contributes one recall value).
    pub gold_instances: usize,
    pub precision_sum: f64,
    pub recall_sum: f64,
}

impl SoftSums {
    pub fn prf(&self) -> Prf {
        let both_empty = self.pred_instances + self.gold_instances == 0;
        Prf::new(
            ratio(self.precision_sum, self.pred_instances as f64, both_empty),
            ratio(self.recall_sum, self.gold_instances as f64, both_empty),
        )
    }

    fn add(&mut self, other: SoftSums) {
        self.pred_instances += other.pred_instances;
        self.gold_instances += other.gold_instances;
        self.precision_sum += other.precision_sum;
        self.recall_sum += other.recall_sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScore {
    #[serde(flatten)]
    pub prf: Prf,
    #[serde(flatten)]
    pub sums: SoftSums,
}

/// Predicted and gold side of one example.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub pred_frame: &'a str,
    pub pred: &'a [RoleAssignment],
    pub gold_frame: &'a str,
    pub gold: &'a [RoleAssignment],
}

impl Pair<'_> {
    fn frame_ok(&self, gating: bool) -> bool {
        !gating || self.pred_frame == self.gold_frame
    }
}

fn exact_counts(pair: &Pair<'_>, gating: bool) -> Counts {
    if !pair.frame_ok(gating) {
        return Counts {
            tp: 0,
            fp: pair.pred.len(),
            fn_: pair.gold.len(),
        };
    }
    let mut gold: HashMap<(&str, TokenSpan), usize> = HashMap::new();
    for r in pair.gold {
        *gold.entry((r.label.as_str(), r.span)).or_default() += 1;
    }
    let mut tp = 0;
    for r in pair.pred {
        if let Some(n) = gold.get_mut(&(r.label.as_str(), r.span)) {
            if *n > 0 {
                *n -= 1;
                tp += 1;
            }
        }
    }
    Counts {
        tp,
        fp: pair.pred.len() - tp,
        fn_: pair.gold.len() - tp,
    }
}

fn token_pairs(roles: &[RoleAssignment]) -> BTreeSet<(&str, usize)> {
    roles
        .iter()
        .flat_map(|r| r.span.indices().map(move |t| (r.label.as_str(), t)))
        .collect()
}

fn global_counts(pair: &Pair<'_>, gating: bool) -> Counts {
    let pred = token_pairs(pair.pred);
    let gold = token_pairs(pair.gold);
    if !pair.frame_ok(gating) {
        return Counts {
            tp: 0,
            fp: pred.len(),
            fn_: gold.len(),
        };
    }
    let tp = pred.intersection(&gold).count();
    Counts {
        tp,
        fp: pred.len() - tp,
        fn_: gold.len() - tp,
    }
}

/// Same-label pairing by descending overlap; ties by gold index, then
/// predicted index. Returns `(gold, pred, overlap)` triples.
pub fn soft_pairs(pred: &[RoleAssignment], gold: &[RoleAssignment]) -> Vec<(usize, usize, usize)> {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (g, gr) in gold.iter().enumerate() {
        for (p, pr) in pred.iter().enumerate() {
            if gr.label == pr.label {
                candidates.push((g, p, gr.span.overlap(&pr.span)));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut gold_used = vec![false; gold.len()];
    let mut pred_used = vec![false; pred.len()];
    let mut out = Vec::new();
    for (g, p, o) in candidates {
        if !gold_used[g] && !pred_used[p] {
            gold_used[g] = true;
            pred_used[p] = true;
            out.push((g, p, o));
        }
    }
    out
}

fn soft_sums(pair: &Pair<'_>, gating: bool) -> SoftSums {
    let mut sums = SoftSums {
        pred_instances: pair.pred.len(),
        gold_instances: pair.gold.len(),
        ..SoftSums::default()
    };
    if !pair.frame_ok(gating) {
        return sums;
    }
    for (g, p, overlap) in soft_pairs(pair.pred, pair.gold) {
        let o = overlap as f64;
        sums.precision_sum += o / pair.pred[p].span.len() as f64;
        sums.recall_sum += o / pair.gold[g].span.len() as f64;
    }
    sums
}

fn check_len(preds: usize, golds: usize) -> Result<(), MetricsError> {
    if preds != golds {
        return Err(MetricsError::LengthMismatch { preds, golds });
    }
    Ok(())
}

pub fn frame_accuracy(pred_frames: &[&str], gold_frames: &[&str]) -> Result<f64, MetricsError> {
    check_len(pred_frames.len(), gold_frames.len())?;
    if gold_frames.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = pred_frames
        .iter()
        .zip(gold_frames)
        .filter(|(p, g)| p == g)
        .count();
    Ok(hits as f64 / gold_frames.len() as f64)
}

pub fn exact_match(pairs: &[Pair<'_>], gating: bool) -> MicroScore {
    let mut c = Counts::default();
    for p in pairs {
        c.add(exact_counts(p, gating));
    }
    c.into()
}

pub fn global_match(pairs: &[Pair<'_>], gating: bool) -> MicroScore {
    let mut c = Counts::default();
    for p in pairs {
        c.add(global_counts(p, gating));
    }
    c.into()
}

pub fn soft_match(pairs: &[Pair<'_>], gating: bool) -> SoftScore {
    let mut s = SoftSums::default();
    for p in pairs {
        s.add(soft_sums(p, gating));
    }
    SoftScore {
        prf: s.prf(),
        sums: s,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub instances: usize,
    pub gold_roles: usize,
    pub predicted_roles: usize,
    pub diagnostics: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub frame_accuracy: f64,
    pub frame_gating: bool,
    pub exact: MicroScore,
    pub soft: SoftScore,
    pub global: MicroScore,
    pub counts: ReportCounts,
}

/// Scores aligned prediction and gold records. Records must agree on
/// tokens and trigger.
pub fn evaluate(
    preds: &[ScoredRecord],
    golds: &[ScoredRecord],
    gating: bool,
) -> Result<MatchReport, MetricsError> {
    check_len(preds.len(), golds.len())?;
    if golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    for (i, (p, g)) in preds.iter().zip(golds).enumerate() {
        if p.tokens != g.tokens {
            return Err(MetricsError::Misaligned {
                index: i,
                what: "tokens",
            });
        }
        if p.trigger != g.trigger {
            return Err(MetricsError::Misaligned {
                index: i,
                what: "trigger",
            });
        }
    }
    let pairs: Vec<Pair<'_>> = preds
        .iter()
        .zip(golds)
        .map(|(p, g)| Pair {
            pred_frame: &p.frame,
            pred: &p.roles,
            gold_frame: &g.frame,
            gold: &g.roles,
        })
        .collect();
    let pf: Vec<&str> = preds.iter().map(|r| r.frame.as_str()).collect();
    let gf: Vec<&str> = golds.iter().map(|r| r.frame.as_str()).collect();
    Ok(MatchReport {
        frame_accuracy: frame_accuracy(&pf, &gf)?,
        frame_gating: gating,
        exact: exact_match(&pairs, gating),
        soft: soft_match(&pairs, gating),
        global: global_match(&pairs, gating),
        counts: ReportCounts {
            instances: golds.len(),
            gold_roles: golds.iter().map(|r| r.roles.len()).sum(),
            predicted_roles: preds.iter().map(|r| r.roles.len()).sum(),
            diagnostics: preds.iter().map(|r| r.diagnostics.len()).sum(),
        },
    })
}

/// Reads corpus-shaped JSONL records. A header line carrying an
/// `ontology` key is skipped, so both corpus files and prediction files
/// load.
pub fn load_records(path: &Path) -> Result<Vec<ScoredRecord>, MetricsError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: name.clone(),
        source,
    })?;
    records_from_jsonl(&text, &name)
}

pub fn records_from_jsonl(text: &str, name: &str) -> Result<Vec<ScoredRecord>, MetricsError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| MetricsError::Malformed {
            path: name.to_owned(),
            line: i + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        if value.get("ontology").is_some() {
            continue;
        }
        let rec: ScoredRecord =
            serde_json::from_value(value).map_err(|e| malformed(e.to_string()))?;
        if let Some(r) = rec.roles.iter().find(|r| !r.span.fits(rec.tokens.len())) {
            return Err(malformed(format!("role {} span out of range", r.label)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn score(
    pred_path: &Path,
    gold_path: &Path,
    gating: bool,
) -> Result<MatchReport, MetricsError> {
    evaluate(&load_records(pred_path)?, &load_records(gold_path)?, gating)
}

impl MatchReport {
    /// Fixed-width plain-text table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<16}{:>10}{:>10}{:>10}", "metric", "P", "R", "F1");
        for (name, prf) in [
            ("exact match", self.exact.prf),
            ("soft match", self.soft.prf),
            ("global match", self.global.prf),
        ] {
            let _ = writeln!(
                s,
                "{:<16}{:>10.4}{:>10.4}{:>10.4}",
                name, prf.precision, prf.recall, prf.f1
            );
        }
        let _ = writeln!(s, "{:<16}{:>10.4}", "frame accuracy", self.frame_accuracy);
        let c = &self.counts;
        let _ = writeln!(
            s,
            "{} instances, {} gold roles, {} predicted roles, {} diagnostics",
            c.instances, c.gold_roles, c.predicted_roles, c.diagnostics
        );
        s
    }
}
