//! The pipeline stages, one function per command. Each stage reads its
//! inputs fresh from disk, never mutates them, and writes its outputs as
//! new files, so any stage can be rerun or fed hand-built fixtures.

mod composite;
mod data;
mod retrieval;
mod verification;

pub use composite::{end_to_end, sweep, EndToEndArgs, SweepArgs, SweepCombo, SweepSummary};
pub use data::{index, ingest, synth, IngestArgs, SynthArgs};
pub use retrieval::{retrieve, retrieve_docs, train_retriever, RetrieveArgs, TrainRetrieverArgs};
pub use verification::{
    score, set_texts_by_claim, train_verifier, verify, ScoreArgs, TrainVerifierArgs, VerifyArgs,
};

use anyhow::{Context, Result};
use hesm_core::corpus::{Corpus, Dataset};
use std::path::Path;

pub(crate) fn load_corpus(path: &Path) -> Result<Corpus> {
    Corpus::load(path).with_context(|| format!("loading corpus {}", path.display()))
}

pub(crate) fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("loading dataset {}", path.display()))
}
