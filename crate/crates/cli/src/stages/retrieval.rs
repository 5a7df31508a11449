//! Retrieval stages: candidate documents, retriever training for both
//! passes, and two-iteration evidence-set retrieval over a claims file.

use super::{load_corpus, load_dataset};
use crate::artifacts::{load_retriever, save_docs, save_retriever};
use crate::config::{PipelineConfig, SeedStage};
use crate::manifest::{manifest_path_for, RunManifest};
use anyhow::{bail, Context, Result};
use hesm_core::corpus::{Claim, Corpus};
use hesm_core::docselect::{self, TitleIndex};
use hesm_core::hopretrieve::{
    self, candidate_docs, cap_flattened, retrieve_for_claim, select_pass1, EvidenceSet,
    RetrievalRecord, RetrieverModel, RetrieverPass, RetrieverTrainConfig, TrainOutcome,
    MAX_FLAT_SENTENCES,
};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

pub fn retrieve_docs(
    config: &PipelineConfig,
    claims: &Path,
    corpus_path: &Path,
    out: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::new("retrieve-docs", config);
    manifest.add_input(claims)?;
    manifest.add_input(corpus_path)?;
    let summary =
        manifest.stage("retrieve-docs", || run_retrieve_docs(config, claims, corpus_path, out))?;
    manifest.add_output(out);
    manifest.save(&manifest_path_for(out))?;
    println!("{summary}");
    Ok(())
}

pub(crate) fn run_retrieve_docs(
    config: &PipelineConfig,
    claims: &Path,
    corpus_path: &Path,
    out: &Path,
) -> Result<String> {
    let dataset = load_dataset(claims)?;
    let corpus = load_corpus(corpus_path)?;
    let index = TitleIndex::build(&corpus);
    let docs = candidate_docs(&dataset, &corpus, &index, config.k1)
        .context("selecting documents")?;
    save_docs(out, config.k1, &docs)?;
    let total: usize = docs.values().map(|d| d.len()).sum();
    Ok(format!(
        "documents: {} claims, {:.2} candidates per claim (k1 = {})",
        docs.len(),
        total as f64 / docs.len().max(1) as f64,
        config.k1
    ))
}

#[derive(Debug, Clone)]
pub struct TrainRetrieverArgs {
    pub pass: u8,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub corpus: PathBuf,
    pub out: PathBuf,
    /// Finished first-pass checkpoint; required when training pass 2.
    pub pass1: Option<PathBuf>,
}

pub fn train_retriever(config: &PipelineConfig, args: &TrainRetrieverArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train-retriever", config);
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.dev)?;
    manifest.add_input(&args.corpus)?;
    if let Some(p) = &args.pass1 {
        manifest.add_input(p)?;
    }
    let stage_name = format!("train-retriever-pass{}", args.pass);
    let outcome = manifest.stage(&stage_name, || run_train_retriever(config, args))?;
    manifest.add_output(&args.out);
    manifest.save(&manifest_path_for(&args.out))?;
    print_retriever_history(&outcome);
    Ok(())
}

/// The work of `train-retriever`, reusable by the composite runs.
pub(crate) fn run_train_retriever(
    config: &PipelineConfig,
    args: &TrainRetrieverArgs,
) -> Result<TrainOutcome> {
    let pass = match args.pass {
        1 => RetrieverPass::One,
        2 => RetrieverPass::Two,
        other => bail!("pass must be 1 or 2, got {other}"),
    };
    let corpus = load_corpus(&args.corpus)?;
    let train = load_dataset(&args.train)?;
    let dev = load_dataset(&args.dev)?;
    let pass1 = match (pass, &args.pass1) {
        (RetrieverPass::Two, Some(path)) => Some(load_retriever(path)?.0),
        (RetrieverPass::Two, None) => {
            bail!("training pass 2 needs --pass1 with the finished first-pass checkpoint")
        }
        (RetrieverPass::One, _) => None,
    };

    let vocab = hopretrieve::build_vocab(&corpus, &[&train, &dev]);
    let seed = config.seed_for(match pass {
        RetrieverPass::One => SeedStage::RetrieverPass1,
        RetrieverPass::Two => SeedStage::RetrieverPass2,
    });
    let mut model = RetrieverModel::init(config.encoder_config(vocab.len()), vocab, seed)
        .context("initializing the retriever")?;
    let train_config = RetrieverTrainConfig {
        seed,
        ..config.retriever_train()
    };
    let outcome = hopretrieve::train_retriever(
        pass,
        &mut model,
        pass1.as_ref(),
        &train,
        &dev,
        &corpus,
        config.k1,
        &config.retrieve_params(),
        &train_config,
    )
    .context("training the retriever")?;
    save_retriever(&args.out, &model, args.pass, &outcome)?;
    Ok(outcome)
}

pub(crate) fn print_retriever_history(outcome: &TrainOutcome) {
    println!("epoch  examples  mean-loss  dev-recall");
    for row in &outcome.history {
        let loss = row
            .mean_loss
            .map(|l| format!("{l:9.4}"))
            .unwrap_or_else(|| format!("{:>9}", "-"));
        println!(
            "{:5}  {:8}  {loss}  {:10.4}",
            row.epoch, row.examples, row.dev_recall
        );
    }
    println!(
        "best epoch {}: dev recall {:.4}",
        outcome.best_epoch, outcome.best_recall
    );
}

#[derive(Debug, Clone)]
pub struct RetrieveArgs {
    pub claims: PathBuf,
    pub corpus: PathBuf,
    pub pass1: PathBuf,
    /// Second-pass checkpoint; required unless `hops = 1`.
    pub pass2: Option<PathBuf>,
    pub out: PathBuf,
}

pub fn retrieve(config: &PipelineConfig, args: &RetrieveArgs) -> Result<()> {
    let mut manifest = RunManifest::new("retrieve", config);
    manifest.add_input(&args.claims)?;
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.pass1)?;
    if let Some(p) = &args.pass2 {
        manifest.add_input(p)?;
    }
    let summary = manifest.stage("retrieve", || run_retrieve(config, args))?;
    manifest.add_output(&args.out);
    manifest.save(&manifest_path_for(&args.out))?;
    println!("{summary}");
    Ok(())
}

pub(crate) fn run_retrieve(config: &PipelineConfig, args: &RetrieveArgs) -> Result<String> {
    let corpus = load_corpus(&args.corpus)?;
    let dataset = load_dataset(&args.claims)?;
    let (pass1, _) = load_retriever(&args.pass1)?;
    let pass2 = match (&args.pass2, config.hops) {
        (Some(path), 2) => Some(load_retriever(path)?.0),
        (None, 2) => bail!("two-iteration retrieval needs --pass2; set hops = 1 to go without"),
        (_, _) => None,
    };
    let index = TitleIndex::build(&corpus);
    let params = config.retrieve_params();

    let per_claim: Vec<(RetrievalRecord, usize, usize, usize)> = dataset
        .claims
        .par_iter()
        .map(|claim| -> Result<_> {
            let (sets, dropped, missing) = match &pass2 {
                Some(pass2) => {
                    let r = retrieve_for_claim(
                        &pass1,
                        pass2,
                        &claim.text,
                        &corpus,
                        &index,
                        config.k1,
                        &params,
                    )
                    .with_context(|| format!("claim {}", claim.claim_id))?;
                    (r.sets, r.dropped_missing_docs, r.missing_link_pages)
                }
                None => {
                    let (sets, dropped) = roots_only(&pass1, claim, &corpus, &index, config)?;
                    (sets, dropped, 0)
                }
            };
            let record = RetrievalRecord::from_sets(claim.claim_id, &sets);
            let count = sets.len();
            Ok((record, count, dropped, missing))
        })
        .collect::<Result<_>>()?;

    let mut records: Vec<RetrievalRecord> = Vec::with_capacity(per_claim.len());
    let (mut sets_total, mut empty, mut dropped_docs, mut missing_links) = (0usize, 0, 0, 0);
    for (record, count, dropped, missing) in per_claim {
        sets_total += count;
        empty += usize::from(count == 0);
        dropped_docs += dropped;
        missing_links += missing;
        records.push(record);
    }
    records.sort_by_key(|r| r.claim_id);
    hopretrieve::save_retrievals(&args.out, &records)
        .with_context(|| format!("writing retrievals {}", args.out.display()))?;
    Ok(format!(
        "retrieved: {} claims, {:.2} sets per claim, {} without evidence, \
         {} missing candidate pages, {} dead links",
        records.len(),
        sets_total as f64 / records.len().max(1) as f64,
        empty,
        dropped_docs,
        missing_links
    ))
}

/// Single-iteration retrieval: first-pass roots become one-sentence sets.
fn roots_only(
    pass1: &RetrieverModel,
    claim: &Claim,
    corpus: &Corpus,
    index: &TitleIndex,
    config: &PipelineConfig,
) -> Result<(Vec<EvidenceSet>, usize)> {
    let ranked = docselect::select_documents(&claim.text, index, corpus, pass1, config.k1)
        .with_context(|| format!("selecting documents for claim {}", claim.claim_id))?;
    let doc_ids: Vec<String> = ranked.docs.iter().map(|d| d.page_id.clone()).collect();
    let scored = hopretrieve::score_documents(pass1, &claim.text, corpus, &doc_ids)
        .with_context(|| format!("scoring documents for claim {}", claim.claim_id))?;
    let roots = select_pass1(&scored, config.k2, config.th_evi1);
    let sets = roots
        .into_iter()
        .map(|root| EvidenceSet {
            root,
            expansions: Vec::new(),
        })
        .collect();
    Ok((cap_flattened(sets, MAX_FLAT_SENTENCES), ranked.dropped_missing))
}
