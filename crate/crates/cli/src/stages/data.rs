//! Data-preparation stages: ingest upstream dumps, generate the synthetic
//! world, and dump the title index.

use super::load_corpus;
use crate::artifacts::save_index;
use crate::config::{PipelineConfig, SeedStage};
use crate::manifest::{manifest_path_for, RunManifest};
use anyhow::{bail, Context, Result};
use hesm_core::corpus::{ingest_claims, ingest_wiki, synth_corpus};
use hesm_core::docselect::TitleIndex;
use std::path::{Path, PathBuf};

/// Inputs for `ingest`: a wiki dump and/or a claims file, each with its
/// output path.
#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub wiki: Option<PathBuf>,
    pub out_corpus: Option<PathBuf>,
    pub claims: Option<PathBuf>,
    pub split: String,
    pub out_dataset: Option<PathBuf>,
}

pub fn ingest(config: &PipelineConfig, args: &IngestArgs) -> Result<()> {
    if args.wiki.is_none() && args.claims.is_none() {
        bail!("nothing to ingest: pass --wiki and/or --claims");
    }
    let mut manifest = RunManifest::new("ingest", config);
    let mut primary_out: Option<PathBuf> = None;

    if let Some(wiki) = &args.wiki {
        let out = args
            .out_corpus
            .as_ref()
            .context("--wiki needs --out-corpus")?;
        add_input_files(&mut manifest, wiki)?;
        let (corpus, stats) = manifest.stage("ingest-wiki", || {
            ingest_wiki(wiki).with_context(|| format!("ingesting wiki dump {}", wiki.display()))
        })?;
        corpus
            .save(out)
            .with_context(|| format!("writing corpus {}", out.display()))?;
        manifest.add_output(out);
        primary_out = Some(out.clone());
        println!(
            "wiki: {} documents ({} skipped records, {} malformed lines, {} duplicate pages)",
            stats.documents, stats.skipped_records, stats.malformed_lines, stats.duplicate_pages
        );
    }

    if let Some(claims) = &args.claims {
        let out = args
            .out_dataset
            .as_ref()
            .context("--claims needs --out-dataset")?;
        manifest.add_input(claims)?;
        let split = args.split.clone();
        let (dataset, stats) = manifest.stage("ingest-claims", || {
            ingest_claims(claims, &split)
                .with_context(|| format!("ingesting claims {}", claims.display()))
        })?;
        dataset
            .save(out)
            .with_context(|| format!("writing dataset {}", out.display()))?;
        manifest.add_output(out);
        primary_out = Some(out.clone());
        println!(
            "claims: {} into split {:?} ({} skipped records)",
            stats.claims, args.split, stats.skipped_records
        );
    }

    let primary = primary_out.expect("at least one side ingested");
    manifest.save(&manifest_path_for(&primary))?;
    Ok(())
}

/// Add one file, or every `.jsonl` file of a directory, to the manifest.
fn add_input_files(manifest: &mut RunManifest, path: &Path) -> Result<()> {
    let meta = std::fs::metadata(path)
        .with_context(|| format!("reading input {}", path.display()))?;
    if meta.is_file() {
        return manifest.add_input(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading input directory {}", path.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|e| e == "jsonl").unwrap_or(false))
        .collect();
    files.sort();
    for file in files {
        manifest.add_input(&file)?;
    }
    Ok(())
}

/// Inputs for `synth`: world size and the three output paths.
#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub entities: usize,
    pub claims: usize,
    pub multihop: f64,
    pub out_corpus: PathBuf,
    pub out_train: PathBuf,
    pub out_dev: PathBuf,
}

pub fn synth(config: &PipelineConfig, args: &SynthArgs) -> Result<()> {
    let mut manifest = RunManifest::new("synth", config);
    let seed = config.seed_for(SeedStage::Synth);
    let (corpus, train, dev, stats) = manifest.stage("synth", || {
        synth_corpus(args.entities, args.claims, args.multihop, seed)
            .context("generating the synthetic world")
    })?;
    corpus
        .save(&args.out_corpus)
        .with_context(|| format!("writing corpus {}", args.out_corpus.display()))?;
    train
        .save(&args.out_train)
        .with_context(|| format!("writing dataset {}", args.out_train.display()))?;
    dev.save(&args.out_dev)
        .with_context(|| format!("writing dataset {}", args.out_dev.display()))?;
    for out in [&args.out_corpus, &args.out_train, &args.out_dev] {
        manifest.add_output(out);
    }
    manifest.save(&manifest_path_for(&args.out_corpus))?;
    println!(
        "world: {} pages, {} train / {} dev claims, {} multihop (seed {seed})",
        stats.pages, stats.train_claims, stats.dev_claims, stats.multihop_claims
    );
    Ok(())
}

/// Build the title index from a corpus and dump it for inspection.
pub fn index(config: &PipelineConfig, corpus_path: &Path, out: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("index", config);
    manifest.add_input(corpus_path)?;
    let corpus = load_corpus(corpus_path)?;
    let index = manifest.stage("index", || Ok(TitleIndex::build(&corpus)))?;
    save_index(out, &index)?;
    manifest.add_output(out);
    manifest.save(&manifest_path_for(out))?;
    println!(
        "index: {} pages, {} ambiguous bare titles",
        index.len(),
        index.ambiguous_titles().count()
    );
    Ok(())
}
