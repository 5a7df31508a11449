//! Verification stages: verifier training, claim verification over a
//! retrieval file, and strict scoring of the resulting predictions.

use super::{load_corpus, load_dataset};
use crate::artifacts::{load_retriever, load_verifier, save_verifier};
use crate::config::{PipelineConfig, SeedStage};
use crate::manifest::{manifest_path_for, write_atomic, RunManifest};
use anyhow::{Context, Result};
use hesm_core::corpus::{Corpus, Label, SentenceRef};
use hesm_core::feverscore::{
    load_predictions, save_predictions, score_predictions, MetricReport, PredictionRecord,
    SetWeight,
};
use hesm_core::hesmverify::{
    self, record_set_texts, Aggregator, VerifierModel, VerifierTrainConfig, VerifierTrainOutcome,
};
use hesm_core::hopretrieve::{self, load_retrievals, RetrievalRecord};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

/// Resolve every retrieval record to sentence texts, keyed by claim.
pub fn set_texts_by_claim(
    corpus: &Corpus,
    records: &[RetrievalRecord],
) -> BTreeMap<u64, Vec<Vec<String>>> {
    records
        .iter()
        .map(|r| (r.claim_id, record_set_texts(corpus, r)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainVerifierArgs {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub corpus: PathBuf,
    pub retrievals_train: PathBuf,
    pub retrievals_dev: PathBuf,
    pub out: PathBuf,
    pub aggregator: Aggregator,
    /// Retriever checkpoint whose trained word encoder seeds this model.
    pub encoder_init: Option<PathBuf>,
}

pub fn train_verifier(config: &PipelineConfig, args: &TrainVerifierArgs) -> Result<()> {
    let mut manifest = RunManifest::new("train-verifier", config);
    for input in [
        &args.train,
        &args.dev,
        &args.corpus,
        &args.retrievals_train,
        &args.retrievals_dev,
    ] {
        manifest.add_input(input)?;
    }
    if let Some(donor) = &args.encoder_init {
        manifest.add_input(donor)?;
    }
    let outcome = manifest.stage("train-verifier", || run_train_verifier(config, args))?;
    manifest.add_output(&args.out);
    manifest.save(&manifest_path_for(&args.out))?;
    print_verifier_history(&outcome);
    Ok(())
}

pub(crate) fn run_train_verifier(
    config: &PipelineConfig,
    args: &TrainVerifierArgs,
) -> Result<VerifierTrainOutcome> {
    let corpus = load_corpus(&args.corpus)?;
    let train = load_dataset(&args.train)?;
    let dev = load_dataset(&args.dev)?;
    let train_sets = set_texts_by_claim(
        &corpus,
        &load_retrievals(&args.retrievals_train)
            .with_context(|| format!("loading retrievals {}", args.retrievals_train.display()))?,
    );
    let dev_sets = set_texts_by_claim(
        &corpus,
        &load_retrievals(&args.retrievals_dev)
            .with_context(|| format!("loading retrievals {}", args.retrievals_dev.display()))?,
    );

    let vocab = hopretrieve::build_vocab(&corpus, &[&train, &dev]);
    let seed = config.seed_for(SeedStage::Verifier);
    let mut model = VerifierModel::init(config.verifier_config(vocab.len()), vocab, seed)
        .context("initializing the verifier")?;
    if let Some(donor_path) = &args.encoder_init {
        let (donor, _) = load_retriever(donor_path)?;
        let copied = model
            .adopt_encoder(&donor.vocab, &donor.params)
            .with_context(|| {
                format!("adopting the encoder from {}", donor_path.display())
            })?;
        println!(
            "warm-started the word encoder from {} ({copied} tensors)",
            donor_path.display()
        );
    }
    let train_config = VerifierTrainConfig {
        seed,
        ..config.verifier_train()
    };
    let outcome = hesmverify::train_verifier(
        &mut model,
        args.aggregator,
        &train,
        &dev,
        &train_sets,
        &dev_sets,
        &train_config,
    )
    .context("training the verifier")?;
    save_verifier(&args.out, &model, args.aggregator, &outcome)?;
    Ok(outcome)
}

pub(crate) fn print_verifier_history(outcome: &VerifierTrainOutcome) {
    println!("epoch  examples  mean-loss  dev-accuracy");
    for row in &outcome.history {
        let loss = row
            .mean_loss
            .map(|l| format!("{l:9.4}"))
            .unwrap_or_else(|| format!("{:>9}", "-"));
        println!(
            "{:5}  {:8}  {loss}  {:12.4}",
            row.epoch, row.examples, row.dev_accuracy
        );
    }
    println!(
        "best epoch {}: dev accuracy {:.4} ({} claims without evidence skipped in training)",
        outcome.best_epoch, outcome.best_accuracy, outcome.skipped_claims
    );
}

#[derive(Debug, Clone)]
pub struct VerifyArgs {
    pub claims: PathBuf,
    pub corpus: PathBuf,
    pub retrievals: PathBuf,
    pub model: PathBuf,
    /// Overrides the aggregator the checkpoint was trained with.
    pub aggregator: Option<Aggregator>,
    pub out: PathBuf,
}

pub fn verify(config: &PipelineConfig, args: &VerifyArgs) -> Result<()> {
    let mut manifest = RunManifest::new("verify", config);
    for input in [&args.claims, &args.corpus, &args.retrievals, &args.model] {
        manifest.add_input(input)?;
    }
    let summary = manifest.stage("verify", || run_verify(config, args))?;
    manifest.add_output(&args.out);
    manifest.save(&manifest_path_for(&args.out))?;
    println!("{summary}");
    Ok(())
}

pub(crate) fn run_verify(_config: &PipelineConfig, args: &VerifyArgs) -> Result<String> {
    let corpus = load_corpus(&args.corpus)?;
    let dataset = load_dataset(&args.claims)?;
    let records = load_retrievals(&args.retrievals)
        .with_context(|| format!("loading retrievals {}", args.retrievals.display()))?;
    let (model, trained_with, _) = load_verifier(&args.model)?;
    let aggregator = args.aggregator.unwrap_or(trained_with);

    let by_claim: BTreeMap<u64, &RetrievalRecord> =
        records.iter().map(|r| (r.claim_id, r)).collect();
    let empty_sets: Vec<Vec<String>> = Vec::new();

    let mut predictions: Vec<PredictionRecord> = dataset
        .claims
        .par_iter()
        .map(|claim| -> Result<PredictionRecord> {
            let record = by_claim.get(&claim.claim_id).copied();
            let sets = record
                .map(|r| record_set_texts(&corpus, r))
                .unwrap_or_else(|| empty_sets.clone());
            let bundle = model
                .predict_with(aggregator, &claim.text, &sets)
                .with_context(|| format!("claim {}", claim.claim_id))?;
            let evidence = record.map(flat_evidence).unwrap_or_default();
            let set_refs: Vec<BTreeSet<SentenceRef>> = record
                .map(|r| {
                    r.sets
                        .iter()
                        .map(|set| {
                            set.iter()
                                .map(|s| SentenceRef::new(s.page_id.clone(), s.line))
                                .collect()
                        })
                        .collect()
                })
                .unwrap_or_default();
            let tag = |weights: Option<Vec<f64>>| {
                weights.map(|ws| {
                    ws.iter()
                        .zip(&set_refs)
                        .map(|(&weight, refs)| SetWeight {
                            weight,
                            matches_gold: covers_some_gold(refs, &claim.gold_sets),
                        })
                        .collect::<Vec<_>>()
                })
            };
            Ok(PredictionRecord {
                claim_id: claim.claim_id,
                predicted_label: bundle.label,
                evidence,
                contextual_weights: tag(bundle.contextual_weights),
                noncontextual_weights: tag(bundle.noncontextual_weights),
            })
        })
        .collect::<Result<_>>()?;

    predictions.sort_by_key(|p| p.claim_id);
    save_predictions(&args.out, &predictions)
        .with_context(|| format!("writing predictions {}", args.out.display()))?;

    let mut counts: BTreeMap<Label, usize> = BTreeMap::new();
    for p in &predictions {
        *counts.entry(p.predicted_label).or_default() += 1;
    }
    let histogram = counts
        .iter()
        .map(|(label, n)| format!("{n} {label:?}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!(
        "verified: {} claims with {} aggregation ({histogram})",
        predictions.len(),
        aggregator.as_str()
    ))
}

/// Retrieved sentences flattened in rank order; the scorer trims to its cap.
fn flat_evidence(record: &RetrievalRecord) -> Vec<SentenceRef> {
    record
        .sets
        .iter()
        .flatten()
        .map(|s| SentenceRef::new(s.page_id.clone(), s.line))
        .collect()
}

/// Whether this one set alone fully covers some gold evidence set.
fn covers_some_gold(set_refs: &BTreeSet<SentenceRef>, gold_sets: &[Vec<SentenceRef>]) -> bool {
    gold_sets
        .iter()
        .any(|gold| !gold.is_empty() && gold.iter().all(|r| set_refs.contains(r)))
}

#[derive(Debug, Clone)]
pub struct ScoreArgs {
    pub predictions: PathBuf,
    pub claims: PathBuf,
    pub out: PathBuf,
    pub csv: Option<PathBuf>,
}

pub fn score(config: &PipelineConfig, args: &ScoreArgs) -> Result<()> {
    let mut manifest = RunManifest::new("score", config);
    manifest.add_input(&args.predictions)?;
    manifest.add_input(&args.claims)?;
    let report = manifest.stage("score", || run_score(args))?;
    manifest.add_output(&args.out);
    if let Some(csv) = &args.csv {
        manifest.add_output(csv);
    }
    manifest.save(&manifest_path_for(&args.out))?;
    print_headline(&report);
    Ok(())
}

pub(crate) fn run_score(args: &ScoreArgs) -> Result<MetricReport> {
    let predictions = load_predictions(&args.predictions)
        .with_context(|| format!("loading predictions {}", args.predictions.display()))?;
    let golds = load_dataset(&args.claims)?;
    let report = score_predictions(&predictions, &golds).context("scoring predictions")?;
    write_atomic(&args.out, report.to_json().as_bytes())
        .with_context(|| format!("writing report {}", args.out.display()))?;
    if let Some(csv) = &args.csv {
        write_atomic(csv, report.to_csv().as_bytes())
            .with_context(|| format!("writing report {}", csv.display()))?;
    }
    Ok(report)
}

pub(crate) fn print_headline(report: &MetricReport) {
    let pct = |v: Option<f64>| {
        v.map(|v| format!("{:.2}%", 100.0 * v))
            .unwrap_or_else(|| "-".to_string())
    };
    println!(
        "scored: {} claims | LA {} | FEVER {} | evidence recall {} | oracle FEVER {:.2}%",
        report.claims,
        pct(Some(report.label_accuracy)),
        pct(Some(report.fever)),
        pct(report.recall),
        100.0 * report.ofever
    );
    println!(
        "multi-sentence slice: {} claims, LA {}, FEVER {}",
        report.by_cardinality.multi.claims,
        pct(report.by_cardinality.multi.label_accuracy),
        pct(report.by_cardinality.multi.fever)
    );
}
