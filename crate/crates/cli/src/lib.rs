//! Command implementations behind the `hesm` binary: configuration, run
//! manifests, artifact persistence, and the pipeline stages from corpus
//! ingestion through scored verdicts.

pub mod artifacts;
pub mod config;
pub mod manifest;
pub mod stages;
