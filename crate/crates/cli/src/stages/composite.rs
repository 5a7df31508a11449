//! Composite runs: the full train-and-evaluate pipeline in one command, and
//! the verifier hyperparameter sweep.

use super::retrieval::{
    print_retriever_history, run_retrieve, run_retrieve_docs, run_train_retriever, RetrieveArgs,
    TrainRetrieverArgs,
};
use super::verification::{
    print_headline, print_verifier_history, run_score, run_train_verifier, run_verify, ScoreArgs,
    TrainVerifierArgs, VerifyArgs,
};
use crate::artifacts::vocab_sidecar;
use crate::config::PipelineConfig;
use crate::manifest::{write_atomic, RunManifest};
use anyhow::{Context, Result};
use hesm_core::feverscore::MetricReport;
use hesm_core::hesmverify::Aggregator;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct EndToEndArgs {
    pub corpus: PathBuf,
    pub train: PathBuf,
    pub dev: PathBuf,
    pub out_dir: PathBuf,
    pub aggregator: Aggregator,
    /// Reuse finished outputs in `out_dir` after checking input digests.
    pub resume: bool,
}

/// Run retrieval training, evidence retrieval, verifier training,
/// verification, and scoring in order, leaving every intermediate artifact
/// in `out_dir`.
pub fn end_to_end(config: &PipelineConfig, args: &EndToEndArgs) -> Result<MetricReport> {
    let dir = &args.out_dir;
    let docs_train = dir.join("docs-train.json");
    let docs_dev = dir.join("docs-dev.json");
    let pass1 = dir.join("retriever-pass1.ckpt");
    let pass2 = dir.join("retriever-pass2.ckpt");
    let retrievals_train = dir.join("retrievals-train.jsonl");
    let retrievals_dev = dir.join("retrievals-dev.jsonl");
    let verifier = dir.join("verifier.ckpt");
    let predictions = dir.join("predictions.jsonl");
    let report_json = dir.join("report.json");
    let report_csv = dir.join("report.csv");
    let manifest_path = dir.join("manifest.json");

    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    if args.resume && manifest_path.exists() {
        RunManifest::load(&manifest_path)?
            .verify_inputs()
            .context("resume refused")?;
    }
    let done = |outputs: &[&Path]| args.resume && outputs.iter().all(|p| p.exists());

    let mut manifest = RunManifest::new("end-to-end", config);
    manifest.add_input(&args.corpus)?;
    manifest.add_input(&args.train)?;
    manifest.add_input(&args.dev)?;
    // Persist after every stage so an interrupted run still leaves a manifest
    // for `--resume` to check against.

    banner("retrieve-docs");
    if done(&[&docs_train, &docs_dev]) {
        println!("reusing {} and {}", docs_train.display(), docs_dev.display());
    } else {
        let summary = manifest.stage("retrieve-docs", || {
            let s1 = run_retrieve_docs(config, &args.train, &args.corpus, &docs_train)?;
            let s2 = run_retrieve_docs(config, &args.dev, &args.corpus, &docs_dev)?;
            Ok(format!("train {s1}\ndev   {s2}"))
        })?;
        println!("{summary}");
        manifest.save(&manifest_path)?;
    }

    banner("train-retriever-pass1");
    if done(&[&pass1, &vocab_sidecar(&pass1)]) {
        println!("reusing {}", pass1.display());
    } else {
        let outcome = manifest.stage("train-retriever-pass1", || {
            run_train_retriever(
                config,
                &TrainRetrieverArgs {
                    pass: 1,
                    train: args.train.clone(),
                    dev: args.dev.clone(),
                    corpus: args.corpus.clone(),
                    out: pass1.clone(),
                    pass1: None,
                },
            )
        })?;
        print_retriever_history(&outcome);
        manifest.save(&manifest_path)?;
    }

    let pass2_path = if config.hops == 2 {
        banner("train-retriever-pass2");
        if done(&[&pass2, &vocab_sidecar(&pass2)]) {
            println!("reusing {}", pass2.display());
        } else {
            let outcome = manifest.stage("train-retriever-pass2", || {
                run_train_retriever(
                    config,
                    &TrainRetrieverArgs {
                        pass: 2,
                        train: args.train.clone(),
                        dev: args.dev.clone(),
                        corpus: args.corpus.clone(),
                        out: pass2.clone(),
                        pass1: Some(pass1.clone()),
                    },
                )
            })?;
            print_retriever_history(&outcome);
            manifest.save(&manifest_path)?;
        }
        Some(pass2.clone())
    } else {
        None
    };

    for (stage, claims, out) in [
        ("retrieve-train", &args.train, &retrievals_train),
        ("retrieve-dev", &args.dev, &retrievals_dev),
    ] {
        banner(stage);
        if done(&[out]) {
            println!("reusing {}", out.display());
            continue;
        }
        let summary = manifest.stage(stage, || {
            run_retrieve(
                config,
                &RetrieveArgs {
                    claims: claims.clone(),
                    corpus: args.corpus.clone(),
                    pass1: pass1.clone(),
                    pass2: pass2_path.clone(),
                    out: out.clone(),
                },
            )
        })?;
        println!("{summary}");
        manifest.save(&manifest_path)?;
    }

    banner("train-verifier");
    if done(&[&verifier, &vocab_sidecar(&verifier)]) {
        println!("reusing {}", verifier.display());
    } else {
        let outcome = manifest.stage("train-verifier", || {
            run_train_verifier(
                config,
                &TrainVerifierArgs {
                    train: args.train.clone(),
                    dev: args.dev.clone(),
                    corpus: args.corpus.clone(),
                    retrievals_train: retrievals_train.clone(),
                    retrievals_dev: retrievals_dev.clone(),
                    out: verifier.clone(),
                    aggregator: args.aggregator,
                    encoder_init: Some(pass1.clone()),
                },
            )
        })?;
        print_verifier_history(&outcome);
        manifest.save(&manifest_path)?;
    }

    banner("verify");
    if done(&[&predictions]) {
        println!("reusing {}", predictions.display());
    } else {
        let summary = manifest.stage("verify", || {
            run_verify(
                config,
                &VerifyArgs {
                    claims: args.dev.clone(),
                    corpus: args.corpus.clone(),
                    retrievals: retrievals_dev.clone(),
                    model: verifier.clone(),
                    aggregator: Some(args.aggregator),
                    out: predictions.clone(),
                },
            )
        })?;
        println!("{summary}");
        manifest.save(&manifest_path)?;
    }

    banner("score");
    let report = manifest.stage("score", || {
        run_score(&ScoreArgs {
            predictions: predictions.clone(),
            claims: args.dev.clone(),
            out: report_json.clone(),
            csv: Some(report_csv.clone()),
        })
    })?;
    print_headline(&report);

    for out in [
        &docs_train,
        &docs_dev,
        &pass1,
        &retrievals_train,
        &retrievals_dev,
        &verifier,
        &predictions,
        &report_json,
        &report_csv,
    ] {
        manifest.add_output(out);
    }
    if let Some(p) = &pass2_path {
        manifest.add_output(p);
    }
    manifest.save(&manifest_path)?;

    let total: f64 = manifest.stages.iter().map(|s| s.seconds).sum();
    println!("\nstages run: {} ({total:.1}s total)", manifest.stages.len());
    for stage in &manifest.stages {
        println!("  {:24} {:8.1}s", stage.stage, stage.seconds);
    }
    Ok(report)
}

fn banner(stage: &str) {
    println!("\n[{stage}]");
}

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub corpus: PathBuf,
    pub retrievals_train: PathBuf,
    pub retrievals_dev: PathBuf,
    pub out_dir: PathBuf,
    pub aggregator: Aggregator,
    /// Retriever checkpoint whose trained word encoder seeds each combo.
    pub encoder_init: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCombo {
    pub lr: f64,
    pub batch_size: usize,
    pub dir: String,
    pub best_dev_accuracy: f64,
    pub label_accuracy: f64,
    pub fever: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub combos: Vec<SweepCombo>,
}

/// Train, verify, and score one verifier per (learning rate, batch size)
/// combination, each in its own subdirectory with its own manifest.
pub fn sweep(config: &PipelineConfig, args: &SweepArgs) -> Result<SweepSummary> {
    let mut combos = Vec::new();
    for lr in [2e-5, 5e-5] {
        for batch_size in [32usize, 64] {
            let combo_config = PipelineConfig {
                verifier_lr: lr,
                verifier_batch_size: batch_size,
                ..*config
            };
            let dir = args.out_dir.join(format!("lr{lr:e}-bs{batch_size}"));
            std::fs::create_dir_all(&dir)
                .with_context(|| format!("creating sweep directory {}", dir.display()))?;
            println!("\n=== sweep: lr {lr:e}, batch size {batch_size} ===");

            let mut manifest = RunManifest::new("sweep", &combo_config);
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
            let verifier = dir.join("verifier.ckpt");
            let predictions = dir.join("predictions.jsonl");
            let report_path = dir.join("report.json");

            let outcome = manifest.stage("train-verifier", || {
                run_train_verifier(
                    &combo_config,
                    &TrainVerifierArgs {
                        train: args.train.clone(),
                        dev: args.dev.clone(),
                        corpus: args.corpus.clone(),
                        retrievals_train: args.retrievals_train.clone(),
                        retrievals_dev: args.retrievals_dev.clone(),
                        out: verifier.clone(),
                        aggregator: args.aggregator,
                        encoder_init: args.encoder_init.clone(),
                    },
                )
            })?;
            print_verifier_history(&outcome);
            manifest.stage("verify", || {
                run_verify(
                    &combo_config,
                    &VerifyArgs {
                        claims: args.dev.clone(),
                        corpus: args.corpus.clone(),
                        retrievals: args.retrievals_dev.clone(),
                        model: verifier.clone(),
                        aggregator: Some(args.aggregator),
                        out: predictions.clone(),
                    },
                )
            })?;
            let report = manifest.stage("score", || {
                run_score(&ScoreArgs {
                    predictions: predictions.clone(),
                    claims: args.dev.clone(),
                    out: report_path.clone(),
                    csv: None,
                })
            })?;
            print_headline(&report);

            for out in [&verifier, &predictions, &report_path] {
                manifest.add_output(out);
            }
            manifest.save(&dir.join("manifest.json"))?;
            combos.push(SweepCombo {
                lr,
                batch_size,
                dir: dir.display().to_string(),
                best_dev_accuracy: outcome.best_accuracy,
                label_accuracy: report.label_accuracy,
                fever: report.fever,
            });
        }
    }

    let summary = SweepSummary { combos };
    let mut body =
        serde_json::to_string_pretty(&summary).context("encoding sweep summary")?;
    body.push('\n');
    write_atomic(&args.out_dir.join("summary.json"), body.as_bytes())?;

    println!("\nlr      batch  best-dev-LA  final-LA  FEVER");
    for c in &summary.combos {
        println!(
            "{:7}  {:5}  {:11.4}  {:8.4}  {:.4}",
            format!("{:e}", c.lr),
            c.batch_size,
            c.best_dev_accuracy,
            c.label_accuracy,
            c.fever
        );
    }
    if let Some(best) = summary
        .combos
        .iter()
        .max_by(|a, b| a.label_accuracy.total_cmp(&b.label_accuracy))
    {
        println!(
            "best on dev: lr {:e}, batch size {} (LA {:.4})",
            best.lr, best.batch_size, best.label_accuracy
        );
    }
    Ok(summary)
}
