//! Adapters for the upstream wiki dump and claim files.
//!
//! Wiki pages arrive as JSONL records whose `lines` field packs numbered
//! sentences with optional anchor/target hyperlink pairs, tab-separated.
//! Claim records carry a label and nested annotation groups of evidence.
//! Malformed records and line entries are skipped and counted, never fatal.

use super::{normalize_page_id, Claim, Corpus, CorpusError, Dataset, Document, Label, SentenceRef};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct WikiIngestStats {
    pub documents: usize,
    pub skipped_records: usize,
    pub malformed_lines: usize,
    pub duplicate_pages: usize,
}

#[derive(Deserialize)]
struct WikiRecord {
    id: String,
    #[serde(default)]
    #[allow(dead_code)]
    text: String,
    #[serde(default)]
    lines: String,
}

/// Parse one packed `lines` field into dense sentences plus hyperlinks.
fn parse_lines(
    packed: &str,
    stats: &mut WikiIngestStats,
) -> (Vec<String>, BTreeMap<usize, Vec<String>>) {
    let mut sentences: Vec<String> = Vec::new();
    let mut links: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    if packed.is_empty() {
        return (sentences, links);
    }
    for entry in packed.split('\n') {
        let mut fields = entry.split('\t');
        let idx = match fields.next().and_then(|f| f.parse::<usize>().ok()) {
            Some(i) => i,
            None => {
                stats.malformed_lines += 1;
                continue;
            }
        };
        let text = fields.next().unwrap_or("").to_string();
        if idx >= sentences.len() {
            sentences.resize(idx + 1, String::new());
        }
        sentences[idx] = text;
        // Remaining fields come as (anchor, target) pairs; keep the targets.
        let rest: Vec<&str> = fields.collect();
        let mut targets: Vec<String> = Vec::new();
        for pair in rest.chunks(2) {
            if pair.len() < 2 {
                // Dangling anchor without a target.
                if !pair[0].trim().is_empty() {
                    stats.malformed_lines += 1;
                }
                continue;
            }
            let target = normalize_page_id(pair[1]);
            if !target.is_empty() && !targets.contains(&target) {
                targets.push(target);
            }
        }
        if !targets.is_empty() {
            links.insert(idx, targets);
        }
    }
    (sentences, links)
}

fn wiki_files(path: &Path) -> Result<Vec<std::path::PathBuf>, CorpusError> {
    let meta = std::fs::metadata(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(path)
        .map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "jsonl").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

/// Ingest a wiki dump file, or a directory of `.jsonl` shards in sorted
/// filename order. Page ids are normalized; on a duplicate page the first
/// occurrence wins.
pub fn ingest_wiki(path: &Path) -> Result<(Corpus, WikiIngestStats), CorpusError> {
    let mut corpus = Corpus::new();
    let mut stats = WikiIngestStats::default();
    for file in wiki_files(path)? {
        let body = std::fs::read_to_string(&file).map_err(|source| CorpusError::Io {
            path: file.display().to_string(),
            source,
        })?;
        for line in body.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let record: WikiRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(_) => {
                    stats.skipped_records += 1;
                    continue;
                }
            };
            let page_id = normalize_page_id(&record.id);
            if page_id.is_empty() {
                stats.skipped_records += 1;
                continue;
            }
            let (lines, links) = parse_lines(&record.lines, &mut stats);
            let doc = Document {
                page_id,
                lines,
                links,
            };
            if corpus.insert(doc) {
                stats.documents += 1;
            } else {
                stats.duplicate_pages += 1;
            }
        }
    }
    Ok((corpus, stats))
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct ClaimIngestStats {
    pub claims: usize,
    pub skipped_records: usize,
}

#[derive(Deserialize)]
struct ClaimRecord {
    id: u64,
    label: Option<String>,
    claim: String,
    #[serde(default)]
    evidence: Vec<Vec<EvidenceEntry>>,
}

/// [annotation_id, evidence_id, page, line] with page/line null for NEI.
#[derive(Deserialize)]
struct EvidenceEntry(
    #[allow(dead_code)] Option<i64>,
    #[allow(dead_code)] Option<i64>,
    Option<String>,
    Option<usize>,
);

/// Ingest a claims JSONL file into a dataset split. Each annotation group
/// becomes one gold set; exact duplicate sets are collapsed. Records with
/// unknown labels are skipped and counted.
pub fn ingest_claims(path: &Path, split: &str) -> Result<(Dataset, ClaimIngestStats), CorpusError> {
    let body = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut claims = Vec::new();
    let mut stats = ClaimIngestStats::default();
    for line in body.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ClaimRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) => {
                stats.skipped_records += 1;
                continue;
            }
        };
        let label = match record.label.as_deref().and_then(Label::parse) {
            Some(l) => l,
            None => {
                stats.skipped_records += 1;
                continue;
            }
        };
        let mut gold_sets: Vec<Vec<SentenceRef>> = Vec::new();
        if label != Label::Nei {
            for group in &record.evidence {
                let mut set: Vec<SentenceRef> = Vec::new();
                for entry in group {
                    if let (Some(page), Some(line)) = (&entry.2, entry.3) {
                        let r = SentenceRef::new(normalize_page_id(page), line);
                        if !set.contains(&r) {
                            set.push(r);
                        }
                    }
                }
                if !set.is_empty() && !gold_sets.contains(&set) {
                    gold_sets.push(set);
                }
            }
        }
        match Claim::new(record.id, record.claim, label, gold_sets) {
            Ok(c) => {
                claims.push(c);
                stats.claims += 1;
            }
            Err(_) => stats.skipped_records += 1,
        }
    }
    let dataset = Dataset::new(split, claims)?;
    Ok((dataset, stats))
}
