//! Document corpus and claim datasets.
//!
//! Documents are wiki-style pages: a normalized title, dense sentence lines,
//! and per-line hyperlink targets. Claims carry a three-way label and zero or
//! more gold evidence sets. Both serialize to canonical versioned JSON that
//! round-trips exactly and is byte-stable for a given input.

mod fever;
mod synth;

pub use fever::{ingest_claims, ingest_wiki, ClaimIngestStats, WikiIngestStats};
pub use synth::{synth_corpus, SynthStats};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

pub const CORPUS_FORMAT_VERSION: u32 = 1;
pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed {what} in {path}: {detail}")]
    Malformed {
        what: &'static str,
        path: String,
        detail: String,
    },
    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("claim {claim_id}: label {label:?} conflicts with {n_sets} gold sets")]
    LabelEvidenceMismatch {
        claim_id: u64,
        label: Label,
        n_sets: usize,
    },
    #[error("duplicate claim_id {0} in dataset")]
    DuplicateClaimId(u64),
    #[error("{0}")]
    Invalid(String),
}

/// Claim verdict classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUPPORTED")]
    Supported,
    #[serde(rename = "REFUTED")]
    Refuted,
    #[serde(rename = "NEI")]
    Nei,
}

impl Label {
    /// Accepts both the canonical spellings and the upstream dataset ones.
    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "SUPPORTED" | "SUPPORTS" => Some(Label::Supported),
            "REFUTED" | "REFUTES" => Some(Label::Refuted),
            "NEI" | "NOT ENOUGH INFO" => Some(Label::Nei),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Supported => "SUPPORTED",
            Label::Refuted => "REFUTED",
            Label::Nei => "NEI",
        }
    }

    /// Class index used for training targets: SUPPORTED 0, REFUTED 1, NEI 2.
    pub fn class_index(&self) -> usize {
        match self {
            Label::Supported => 0,
            Label::Refuted => 1,
            Label::Nei => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Supported),
            1 => Some(Label::Refuted),
            2 => Some(Label::Nei),
            _ => None,
        }
    }
}

/// A single sentence inside a document.
#[derive(
    Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct SentenceRef {
    pub page_id: String,
    pub line: usize,
}

impl SentenceRef {
    pub fn new(page_id: impl Into<String>, line: usize) -> Self {
        SentenceRef {
            page_id: page_id.into(),
            line,
        }
    }
}

/// One wiki-style page: normalized title, dense sentence list (empty lines
/// preserved), and hyperlink targets keyed by line index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub page_id: String,
    pub lines: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub links: BTreeMap<usize, Vec<String>>,
}

impl Document {
    pub fn line(&self, idx: usize) -> Option<&str> {
        self.lines.get(idx).map(|s| s.as_str())
    }

    pub fn links_from(&self, line: usize) -> &[String] {
        self.links.get(&line).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Replace underscores with spaces, collapse whitespace runs, and trim.
/// Capitalization is preserved.
pub fn normalize_page_id(raw: &str) -> String {
    raw.replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Document collection keyed by normalized page id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    documents: BTreeMap<String, Document>,
}

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    version: u32,
    documents: Vec<Document>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    /// Insert a document; returns false (leaving the original) when the page
    /// id is already present.
    pub fn insert(&mut self, doc: Document) -> bool {
        if self.documents.contains_key(&doc.page_id) {
            return false;
        }
        self.documents.insert(doc.page_id.clone(), doc);
        true
    }

    pub fn get(&self, page_id: &str) -> Option<&Document> {
        self.documents.get(page_id)
    }

    pub fn contains(&self, page_id: &str) -> bool {
        self.documents.contains_key(page_id)
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Document> {
        self.documents.values()
    }

    pub fn sentence(&self, r: &SentenceRef) -> Option<&str> {
        self.get(&r.page_id).and_then(|d| d.line(r.line))
    }

    pub fn to_json(&self) -> String {
        let file = CorpusFile {
            version: CORPUS_FORMAT_VERSION,
            documents: self.documents.values().cloned().collect(),
        };
        serde_json::to_string(&file).expect("corpus serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        crate::tensorkit::write_atomic(path, self.to_json().as_bytes()).map_err(|source| {
            CorpusError::Io {
                path: path.display().to_string(),
                source,
            }
        })
    }

    pub fn from_json(body: &str, origin: &str) -> Result<Self, CorpusError> {
        let file: CorpusFile =
            serde_json::from_str(body).map_err(|e| CorpusError::Malformed {
                what: "corpus",
                path: origin.to_string(),
                detail: e.to_string(),
            })?;
        if file.version != CORPUS_FORMAT_VERSION {
            return Err(CorpusError::Version {
                what: "corpus",
                found: file.version,
                expected: CORPUS_FORMAT_VERSION,
            });
        }
        let mut corpus = Corpus::new();
        for doc in file.documents {
            if !corpus.insert(doc) {
                return Err(CorpusError::Invalid(
                    "duplicate page_id in corpus file".into(),
                ));
            }
        }
        Ok(corpus)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Corpus::from_json(&body, &path.display().to_string())
    }
}

/// A labeled claim with its gold evidence sets (empty for NEI).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub claim_id: u64,
    pub text: String,
    pub label: Label,
    #[serde(default)]
    pub gold_sets: Vec<Vec<SentenceRef>>,
}

impl Claim {
    /// Construct with the label/evidence consistency rule enforced: NEI has
    /// no gold sets, SUPPORTED/REFUTED have at least one non-empty set.
    pub fn new(
        claim_id: u64,
        text: impl Into<String>,
        label: Label,
        gold_sets: Vec<Vec<SentenceRef>>,
    ) -> Result<Self, CorpusError> {
        let consistent = match label {
            Label::Nei => gold_sets.is_empty(),
            _ => !gold_sets.is_empty() && gold_sets.iter().all(|s| !s.is_empty()),
        };
        if !consistent {
            return Err(CorpusError::LabelEvidenceMismatch {
                claim_id,
                label,
                n_sets: gold_sets.len(),
            });
        }
        Ok(Claim {
            claim_id,
            text: text.into(),
            label,
            gold_sets,
        })
    }
}

/// An ordered collection of claims forming one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub split: String,
    pub claims: Vec<Claim>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    version: u32,
    split: String,
    claims: Vec<Claim>,
}

impl Dataset {
    pub fn new(split: impl Into<String>, claims: Vec<Claim>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for c in &claims {
            if !seen.insert(c.claim_id) {
                return Err(CorpusError::DuplicateClaimId(c.claim_id));
            }
        }
        Ok(Dataset {
            split: split.into(),
            claims,
        })
    }

    pub fn len(&self) -> usize {
        self.claims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.claims.is_empty()
    }

    pub fn label_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.claims {
            *counts.entry(c.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            version: DATASET_FORMAT_VERSION,
            split: self.split.clone(),
            claims: self.claims.clone(),
        };
        serde_json::to_string(&file).expect("dataset serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        crate::tensorkit::write_atomic(path, self.to_json().as_bytes()).map_err(|source| {
            CorpusError::Io {
                path: path.display().to_string(),
                source,
            }
        })
    }

    pub fn from_json(body: &str, origin: &str) -> Result<Self, CorpusError> {
        let file: DatasetFile =
            serde_json::from_str(body).map_err(|e| CorpusError::Malformed {
                what: "dataset",
                path: origin.to_string(),
                detail: e.to_string(),
            })?;
        if file.version != DATASET_FORMAT_VERSION {
            return Err(CorpusError::Version {
                what: "dataset",
                found: file.version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        for c in &file.claims {
            // Re-validate the label/evidence rule on load.
            Claim::new(c.claim_id, c.text.clone(), c.label, c.gold_sets.clone())?;
        }
        Dataset::new(file.split, file.claims)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Dataset::from_json(&body, &path.display().to_string())
    }
}
