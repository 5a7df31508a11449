//! Scoring for fact-verification runs: label accuracy, the strict
//! evidence-aware score, claim-level evidence recall, the oracle variant
//! of the strict score, per-label and per-cardinality breakdowns, and
//! attention accuracy for the two aggregation paths.
//!
//! A claim counts under the strict score only when its label is right and
//! — for verdict-bearing claims — the trimmed predicted evidence covers at
//! least one full gold set. NEI claims carry no gold evidence and count on
//! the label alone. The oracle variant assumes every label is right,
//! isolating retrieval quality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Claim, Dataset, Label, SentenceRef};
use crate::tensorkit::write_atomic;

/// Most predicted sentences the strict score will look at.
pub const EVIDENCE_CAP: usize = 5;

// ── Errors ───────────────────────────────────────────────────────────────────

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("no prediction for claims {}", list_ids(.0))]
    MissingPredictions(Vec<u64>),
    #[error("multiple predictions for claims {}", list_ids(.0))]
    DuplicatePredictions(Vec<u64>),
    #[error("predictions for unknown claims {}", list_ids(.0))]
    UnknownClaims(Vec<u64>),
    #[error("invalid scoring input: {0}")]
    Invalid(String),
    #[error("could not {action} {path}: {detail}")]
    File {
        action: &'static str,
        path: String,
        detail: String,
    },
}

fn list_ids(ids: &[u64]) -> String {
    let mut out = String::new();
    for (i, id) in ids.iter().take(10).enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        let _ = write!(out, "{id}");
    }
    if ids.len() > 10 {
        let _ = write!(out, ", … ({} total)", ids.len());
    }
    out
}

// ── Records ──────────────────────────────────────────────────────────────────

/// One aggregation path's weight on one retrieved evidence set, flagged
/// with whether that set alone covers some gold set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetWeight {
    pub weight: f64,
    pub matches_gold: bool,
}

/// A verifier's output for one claim, as consumed by the scorer. The
/// evidence list is the flattened retrieval in set-score order, before
/// the five-sentence trim; the scorer trims internally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub claim_id: u64,
    pub predicted_label: Label,
    pub evidence: Vec<SentenceRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contextual_weights: Option<Vec<SetWeight>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noncontextual_weights: Option<Vec<SetWeight>>,
}

/// Write predictions as one JSON object per line.
pub fn save_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), ScoreError> {
    let mut body = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| ScoreError::File {
            action: "encode predictions for",
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        body.push_str(&line);
        body.push('\n');
    }
    write_atomic(path, body.as_bytes()).map_err(|e| ScoreError::File {
        action: "write",
        path: path.display().to_string(),
        detail: e.to_string(),
    })
}

/// Read predictions back; blank lines are skipped, anything else that
/// fails to parse names its line number.
pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, ScoreError> {
    let body = std::fs::read_to_string(path).map_err(|e| ScoreError::File {
        action: "read",
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| ScoreError::File {
            action: "parse",
            path: path.display().to_string(),
            detail: format!("line {}: {}", i + 1, e),
        })?;
        out.push(record);
    }
    Ok(out)
}

// ── Evidence matching ────────────────────────────────────────────────────────

/// Deduplicate (keeping first occurrences) and cap the flattened evidence
/// at the scoring limit.
pub fn trimmed_evidence(evidence: &[SentenceRef]) -> Vec<SentenceRef> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for r in evidence {
        if seen.insert(r.clone()) {
            out.push(r.clone());
            if out.len() == EVIDENCE_CAP {
                break;
            }
        }
    }
    out
}

/// True iff some gold set is entirely contained in the trimmed prediction
/// (exact sentence-reference equality).
pub fn evidence_hit(trimmed: &[SentenceRef], gold_sets: &[Vec<SentenceRef>]) -> bool {
    let have: BTreeSet<&SentenceRef> = trimmed.iter().collect();
    gold_sets
        .iter()
        .any(|set| !set.is_empty() && set.iter().all(|r| have.contains(r)))
}

/// The attention rule for one claim: every matching set must outweigh
/// every non-matching set, strictly. All sets matching counts as accurate;
/// no matching set cannot.
pub fn attention_accurate(weights: &[SetWeight]) -> bool {
    let matching_min = weights
        .iter()
        .filter(|w| w.matches_gold)
        .map(|w| w.weight)
        .fold(f64::INFINITY, f64::min);
    if matching_min == f64::INFINITY {
        return false;
    }
    let other_max = weights
        .iter()
        .filter(|w| !w.matches_gold)
        .map(|w| w.weight)
        .fold(f64::NEG_INFINITY, f64::max);
    other_max == f64::NEG_INFINITY || matching_min > other_max
}

// ── Metric report ────────────────────────────────────────────────────────────

/// Rates over one slice of the claims. Empty slices report no rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub claims: usize,
    pub label_accuracy: Option<f64>,
    pub fever: Option<f64>,
}

impl SliceMetrics {
    fn from_counts(claims: usize, correct: usize, strict: usize) -> SliceMetrics {
        let rate = |n: usize| (claims > 0).then(|| n as f64 / claims as f64);
        SliceMetrics {
            claims,
            label_accuracy: rate(correct),
            fever: rate(strict),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBreakdown {
    pub supported: SliceMetrics,
    pub refuted: SliceMetrics,
    pub nei: SliceMetrics,
}

/// Verdict-bearing claims split by gold evidence shape: all gold sets a
/// single sentence (Single), all multi-sentence (Multi), or both kinds
/// present (Any). Overall covers every claim including NEI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardinalityBreakdown {
    pub overall: SliceMetrics,
    pub single: SliceMetrics,
    pub any: SliceMetrics,
    pub multi: SliceMetrics,
}

/// Attention accuracy over one path: claims are eligible when gold
/// evidence exists and was retrieved; eligible claims without reported
/// weights are skipped and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionAccuracy {
    pub eligible: usize,
    pub skipped_missing_weights: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub claims: usize,
    pub label_accuracy: f64,
    pub fever: f64,
    /// Absent when the dataset has no verdict-bearing claims.
    pub recall: Option<f64>,
    pub ofever: f64,
    pub by_label: LabelBreakdown,
    pub by_cardinality: CardinalityBreakdown,
    pub contextual_attention: AttentionAccuracy,
    pub noncontextual_attention: AttentionAccuracy,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Flat `section,key,value` rows covering every report field; absent
    /// rates emit an empty value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,value\n");
        let mut row = |section: &str, key: &str, value: Option<f64>| {
            match value {
                Some(v) => {
                    let _ = writeln!(out, "{section},{key},{v:.6}");
                }
                None => {
                    let _ = writeln!(out, "{section},{key},");
                }
            }
        };
        row("overall", "claims", Some(self.claims as f64));
        row("overall", "label_accuracy", Some(self.label_accuracy));
        row("overall", "fever", Some(self.fever));
        row("retrieval", "recall", self.recall);
        row("retrieval", "ofever", Some(self.ofever));
        for (name, slice) in [
            ("label:supported", &self.by_label.supported),
            ("label:refuted", &self.by_label.refuted),
            ("label:nei", &self.by_label.nei),
            ("cardinality:overall", &self.by_cardinality.overall),
            ("cardinality:single", &self.by_cardinality.single),
            ("cardinality:any", &self.by_cardinality.any),
            ("cardinality:multi", &self.by_cardinality.multi),
        ] {
            row(name, "claims", Some(slice.claims as f64));
            row(name, "label_accuracy", slice.label_accuracy);
            row(name, "fever", slice.fever);
        }
        for (name, path) in [
            ("attention:contextual", &self.contextual_attention),
            ("attention:noncontextual", &self.noncontextual_attention),
        ] {
            row(name, "eligible", Some(path.eligible as f64));
            row(
                name,
                "skipped_missing_weights",
                Some(path.skipped_missing_weights as f64),
            );
            row(name, "accuracy", path.accuracy);
        }
        out
    }
}

// ── Scoring ──────────────────────────────────────────────────────────────────

/// Pair every gold claim with exactly one prediction, rejecting missing,
/// duplicated, and unknown claim ids.
fn aligned<'a>(
    predictions: &'a [PredictionRecord],
    golds: &'a Dataset,
) -> Result<Vec<(&'a Claim, &'a PredictionRecord)>, ScoreError> {
    if golds.claims.is_empty() {
        return Err(ScoreError::Invalid(
            "the gold dataset has no claims to score".into(),
        ));
    }
    let mut by_id: BTreeMap<u64, &PredictionRecord> = BTreeMap::new();
    let mut duplicates = Vec::new();
    for p in predictions {
        if by_id.insert(p.claim_id, p).is_some() {
            duplicates.push(p.claim_id);
        }
    }
    if !duplicates.is_empty() {
        duplicates.dedup();
        return Err(ScoreError::DuplicatePredictions(duplicates));
    }
    let known: BTreeSet<u64> = golds.claims.iter().map(|c| c.claim_id).collect();
    let unknown: Vec<u64> = by_id.keys().copied().filter(|id| !known.contains(id)).collect();
    if !unknown.is_empty() {
        return Err(ScoreError::UnknownClaims(unknown));
    }
    let missing: Vec<u64> = golds
        .claims
        .iter()
        .map(|c| c.claim_id)
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(ScoreError::MissingPredictions(missing));
    }
    Ok(golds
        .claims
        .iter()
        .map(|c| (c, by_id[&c.claim_id]))
        .collect())
}

/// Fraction of claims whose predicted label matches the gold label.
pub fn label_accuracy(
    predictions: &[PredictionRecord],
    golds: &Dataset,
) -> Result<f64, ScoreError> {
    let pairs = aligned(predictions, golds)?;
    let correct = pairs
        .iter()
        .filter(|(c, p)| c.label == p.predicted_label)
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Fraction of claims that are strictly correct: right label, and for
/// verdict-bearing claims the trimmed evidence covers some gold set.
pub fn strict_fever(
    predictions: &[PredictionRecord],
    golds: &Dataset,
) -> Result<f64, ScoreError> {
    let pairs = aligned(predictions, golds)?;
    let strict = pairs.iter().filter(|(c, p)| claim_strict(c, p)).count();
    Ok(strict as f64 / pairs.len() as f64)
}

fn claim_hit(claim: &Claim, pred: &PredictionRecord) -> bool {
    evidence_hit(&trimmed_evidence(&pred.evidence), &claim.gold_sets)
}

fn claim_strict(claim: &Claim, pred: &PredictionRecord) -> bool {
    claim.label == pred.predicted_label && (claim.label == Label::Nei || claim_hit(claim, pred))
}

/// Claim-level evidence recall over verdict-bearing claims (absent when
/// there are none), and the oracle strict score: the strict score with
/// every label assumed correct, so NEI claims always count and the rest
/// count on retrieval alone.
pub fn recall_and_ofever(
    predictions: &[PredictionRecord],
    golds: &Dataset,
) -> Result<(Option<f64>, f64), ScoreError> {
    let pairs = aligned(predictions, golds)?;
    let mut verdict_bearing = 0usize;
    let mut hits = 0usize;
    let mut oracle = 0usize;
    for (claim, pred) in &pairs {
        if claim.label == Label::Nei {
            oracle += 1;
        } else {
            verdict_bearing += 1;
            if claim_hit(claim, pred) {
                hits += 1;
                oracle += 1;
            }
        }
    }
    let recall = (verdict_bearing > 0).then(|| hits as f64 / verdict_bearing as f64);
    Ok((recall, oracle as f64 / pairs.len() as f64))
}

/// Which cardinality slice a verdict-bearing claim belongs to; NEI claims
/// belong to none.
fn cardinality_slice(claim: &Claim) -> Option<&'static str> {
    if claim.gold_sets.is_empty() {
        return None;
    }
    let any_single = claim.gold_sets.iter().any(|s| s.len() == 1);
    let any_multi = claim.gold_sets.iter().any(|s| s.len() > 1);
    Some(match (any_single, any_multi) {
        (true, false) => "single",
        (false, true) => "multi",
        _ => "any",
    })
}

/// The full report: overall rates, retrieval rates, per-label and
/// per-cardinality breakdowns, and attention accuracy for both paths.
pub fn score_predictions(
    predictions: &[PredictionRecord],
    golds: &Dataset,
) -> Result<MetricReport, ScoreError> {
    let pairs = aligned(predictions, golds)?;

    struct Tally {
        claims: usize,
        correct: usize,
        strict: usize,
    }
    impl Tally {
        fn new() -> Tally {
            Tally {
                claims: 0,
                correct: 0,
                strict: 0,
            }
        }
        fn add(&mut self, correct: bool, strict: bool) {
            self.claims += 1;
            self.correct += correct as usize;
            self.strict += strict as usize;
        }
        fn metrics(&self) -> SliceMetrics {
            SliceMetrics::from_counts(self.claims, self.correct, self.strict)
        }
    }

    struct PathTally {
        eligible: usize,
        skipped: usize,
        accurate: usize,
    }
    impl PathTally {
        fn new() -> PathTally {
            PathTally {
                eligible: 0,
                skipped: 0,
                accurate: 0,
            }
        }
        fn add(&mut self, weights: Option<&Vec<SetWeight>>) {
            self.eligible += 1;
            match weights {
                Some(w) => self.accurate += attention_accurate(w) as usize,
                None => self.skipped += 1,
            }
        }
        fn metrics(&self) -> AttentionAccuracy {
            let considered = self.eligible - self.skipped;
            AttentionAccuracy {
                eligible: self.eligible,
                skipped_missing_weights: self.skipped,
                accuracy: (considered > 0).then(|| self.accurate as f64 / considered as f64),
            }
        }
    }

    let mut overall = Tally::new();
    let mut by_label: BTreeMap<Label, Tally> = BTreeMap::new();
    let mut by_card: BTreeMap<&'static str, Tally> = BTreeMap::new();
    let mut verdict_bearing = 0usize;
    let mut hits = 0usize;
    let mut oracle = 0usize;
    let mut contextual = PathTally::new();
    let mut noncontextual = PathTally::new();

    for (claim, pred) in &pairs {
        let correct = claim.label == pred.predicted_label;
        let hit = claim_hit(claim, pred);
        let strict = correct && (claim.label == Label::Nei || hit);
        overall.add(correct, strict);
        by_label
            .entry(claim.label)
            .or_insert_with(Tally::new)
            .add(correct, strict);
        if let Some(slice) = cardinality_slice(claim) {
            by_card.entry(slice).or_insert_with(Tally::new).add(correct, strict);
        }
        if claim.label == Label::Nei {
            oracle += 1;
        } else {
            verdict_bearing += 1;
            if hit {
                hits += 1;
                oracle += 1;
            }
        }
        if !claim.gold_sets.is_empty() && hit {
            contextual.add(pred.contextual_weights.as_ref());
            noncontextual.add(pred.noncontextual_weights.as_ref());
        }
    }

    let slice = |label: Label| {
        by_label
            .get(&label)
            .map(|t| t.metrics())
            .unwrap_or_else(|| SliceMetrics::from_counts(0, 0, 0))
    };
    let card = |name: &str| {
        by_card
            .get(name)
            .map(|t| t.metrics())
            .unwrap_or_else(|| SliceMetrics::from_counts(0, 0, 0))
    };
    let overall_metrics = overall.metrics();
    Ok(MetricReport {
        claims: pairs.len(),
        label_accuracy: overall_metrics.label_accuracy.unwrap_or(0.0),
        fever: overall_metrics.fever.unwrap_or(0.0),
        recall: (verdict_bearing > 0).then(|| hits as f64 / verdict_bearing as f64),
        ofever: oracle as f64 / pairs.len() as f64,
        by_label: LabelBreakdown {
            supported: slice(Label::Supported),
            refuted: slice(Label::Refuted),
            nei: slice(Label::Nei),
        },
        by_cardinality: CardinalityBreakdown {
            overall: overall_metrics,
            single: card("single"),
            any: card("any"),
            multi: card("multi"),
        },
        contextual_attention: contextual.metrics(),
        noncontextual_attention: noncontextual.metrics(),
    })
}
