//! On-disk model and stage artifacts: checkpoints with vocabulary sidecars,
//! candidate-document maps, and title-index dumps.

use crate::manifest::write_atomic;
use anyhow::{bail, Context, Result};
use hesm_core::docselect::TitleIndex;
use hesm_core::encoder::{EncoderConfig, Vocab};
use hesm_core::hesmverify::{Aggregator, VerifierConfig, VerifierModel, VerifierTrainOutcome};
use hesm_core::hopretrieve::{RetrieverModel, TrainOutcome};
use hesm_core::tensorkit::{load_checkpoint, save_checkpoint};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// The vocabulary travels beside the weights as `<checkpoint>.vocab`.
pub fn vocab_sidecar(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_os_string();
    name.push(".vocab");
    PathBuf::from(name)
}

// ── Retriever checkpoints ────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct RetrieverExtra {
    model: String,
    pass: u8,
    encoder: EncoderConfig,
    history: TrainOutcome,
}

pub fn save_retriever(
    path: &Path,
    model: &RetrieverModel,
    pass: u8,
    history: &TrainOutcome,
) -> Result<()> {
    let extra = serde_json::to_value(RetrieverExtra {
        model: "retriever".to_string(),
        pass,
        encoder: model.encoder.config,
        history: history.clone(),
    })
    .context("encoding retriever checkpoint metadata")?;
    save_checkpoint(path, &model.params, None, extra)
        .with_context(|| format!("writing checkpoint {}", path.display()))?;
    model
        .vocab
        .save(&vocab_sidecar(path))
        .with_context(|| format!("writing vocabulary beside {}", path.display()))?;
    Ok(())
}

pub fn load_retriever(path: &Path) -> Result<(RetrieverModel, TrainOutcome)> {
    let ckpt = load_checkpoint(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let extra: RetrieverExtra = serde_json::from_value(ckpt.extra).with_context(|| {
        format!("{} does not carry retriever metadata", path.display())
    })?;
    if extra.model != "retriever" {
        bail!(
            "{} holds a {} model, expected a retriever",
            path.display(),
            extra.model
        );
    }
    let vocab = Vocab::load(&vocab_sidecar(path))
        .with_context(|| format!("reading vocabulary beside {}", path.display()))?;
    let model = RetrieverModel::from_parts(extra.encoder, vocab, ckpt.params)
        .with_context(|| format!("rebuilding the model from {}", path.display()))?;
    Ok((model, extra.history))
}

// ── Verifier checkpoints ─────────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct VerifierExtra {
    model: String,
    config: VerifierConfig,
    aggregator: Aggregator,
    history: VerifierTrainOutcome,
}

pub fn save_verifier(
    path: &Path,
    model: &VerifierModel,
    aggregator: Aggregator,
    history: &VerifierTrainOutcome,
) -> Result<()> {
    let extra = serde_json::to_value(VerifierExtra {
        model: "verifier".to_string(),
        config: model.config,
        aggregator,
        history: history.clone(),
    })
    .context("encoding verifier checkpoint metadata")?;
    save_checkpoint(path, &model.params, None, extra)
        .with_context(|| format!("writing checkpoint {}", path.display()))?;
    model
        .vocab
        .save(&vocab_sidecar(path))
        .with_context(|| format!("writing vocabulary beside {}", path.display()))?;
    Ok(())
}

pub fn load_verifier(path: &Path) -> Result<(VerifierModel, Aggregator, VerifierTrainOutcome)> {
    let ckpt = load_checkpoint(path)
        .with_context(|| format!("reading checkpoint {}", path.display()))?;
    let extra: VerifierExtra = serde_json::from_value(ckpt.extra).with_context(|| {
        format!("{} does not carry verifier metadata", path.display())
    })?;
    if extra.model != "verifier" {
        bail!(
            "{} holds a {} model, expected a verifier",
            path.display(),
            extra.model
        );
    }
    let vocab = Vocab::load(&vocab_sidecar(path))
        .with_context(|| format!("reading vocabulary beside {}", path.display()))?;
    let model = VerifierModel::from_parts(extra.config, vocab, ckpt.params)
        .with_context(|| format!("rebuilding the model from {}", path.display()))?;
    Ok((model, extra.aggregator, extra.history))
}

// ── Candidate-document maps ──────────────────────────────────────────────────

pub const DOCS_VERSION: u32 = 1;

/// Ranked candidate pages per claim, as written by `retrieve-docs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocsFile {
    pub version: u32,
    pub k1: usize,
    pub docs: BTreeMap<u64, Vec<String>>,
}

pub fn save_docs(path: &Path, k1: usize, docs: &BTreeMap<u64, Vec<String>>) -> Result<()> {
    let file = DocsFile {
        version: DOCS_VERSION,
        k1,
        docs: docs.clone(),
    };
    let mut body = serde_json::to_string_pretty(&file).context("encoding document map")?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
        .with_context(|| format!("writing document map {}", path.display()))
}

pub fn load_docs(path: &Path) -> Result<DocsFile> {
    let body = std::fs::read_to_string(path)
        .with_context(|| format!("reading document map {}", path.display()))?;
    let file: DocsFile = serde_json::from_str(&body)
        .with_context(|| format!("parsing document map {}", path.display()))?;
    if file.version != DOCS_VERSION {
        bail!(
            "document map {} has version {}, this build reads {}",
            path.display(),
            file.version,
            DOCS_VERSION
        );
    }
    Ok(file)
}

// ── Title-index dumps ────────────────────────────────────────────────────────

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousTitle {
    pub title: String,
    pub pages: Vec<String>,
}

/// Inspectable dump of the title index: page count plus every bare title
/// that fans out to qualified pages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexFile {
    pub version: u32,
    pub pages: usize,
    pub ambiguous: Vec<AmbiguousTitle>,
}

pub fn save_index(path: &Path, index: &TitleIndex) -> Result<()> {
    let file = IndexFile {
        version: INDEX_VERSION,
        pages: index.len(),
        ambiguous: index
            .ambiguous_titles()
            .map(|(title, pages)| AmbiguousTitle {
                title: title.to_string(),
                pages: pages.to_vec(),
            })
            .collect(),
    };
    let mut body = serde_json::to_string_pretty(&file).context("encoding title index")?;
    body.push('\n');
    write_atomic(path, body.as_bytes())
        .with_context(|| format!("writing title index {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hesm_core::corpus::{Corpus, Document};

    #[test]
    fn docs_files_round_trip_and_check_their_version() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("docs.json");
        let mut docs = BTreeMap::new();
        docs.insert(3u64, vec!["Colombo".to_string()]);
        docs.insert(1u64, vec!["Kandy".to_string(), "Galle".to_string()]);
        save_docs(&path, 10, &docs).expect("save");
        let loaded = load_docs(&path).expect("load");
        assert_eq!(loaded.docs, docs, "document map round-trips");
        assert_eq!(loaded.k1, 10, "cutoff recorded");

        let body = std::fs::read_to_string(&path).expect("read back");
        let mangled = body.replace("\"version\": 1", "\"version\": 99");
        std::fs::write(&path, mangled).expect("mangle");
        assert!(load_docs(&path).is_err(), "future version refused");
    }

    #[test]
    fn index_dumps_list_ambiguous_titles() {
        let mut corpus = Corpus::new();
        for page in ["Savages (2012 film)", "Savages (band)", "Colombo"] {
            corpus.insert(Document {
                page_id: page.to_string(),
                lines: vec!["A page.".to_string()],
                links: Default::default(),
            });
        }
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("index.json");
        save_index(&path, &TitleIndex::build(&corpus)).expect("save");
        let file: IndexFile =
            serde_json::from_str(&std::fs::read_to_string(&path).expect("read"))
                .expect("parse");
        assert_eq!(file.pages, 3, "page count recorded");
        assert_eq!(file.ambiguous.len(), 1, "one bare title");
        assert_eq!(file.ambiguous[0].title, "Savages");
        assert_eq!(
            file.ambiguous[0].pages,
            vec!["Savages (2012 film)", "Savages (band)"],
            "qualified pages listed sorted"
        );
    }
}
