//! `hesm` — fact-verification pipeline over a linked sentence corpus:
//! document selection, two-iteration evidence retrieval, hierarchical
//! claim verification, and strict evidence-aware scoring.

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hesm_cli::config::PipelineConfig;
use hesm_cli::stages;
use hesm_core::hesmverify::Aggregator;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "hesm",
    about = "Retrieve evidence sets for claims and verify them with a hierarchical verifier",
    version
)]
struct Cli {
    /// Flat TOML configuration file; omitted keys fall back to defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set verifier_lr=1e-3.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Master seed; wins over the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for claim-parallel stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest an upstream wiki dump and/or claims file into pipeline form.
    Ingest(IngestCmd),
    /// Generate a deterministic synthetic corpus with labeled claims.
    Synth(SynthCmd),
    /// Dump the title index built from a corpus.
    Index {
        #[arg(long, value_name = "CORPUS")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Select candidate documents per claim by title matching.
    RetrieveDocs {
        /// Claims dataset to select documents for.
        #[arg(long = "in", value_name = "DATASET")]
        input: PathBuf,
        #[arg(long, value_name = "CORPUS")]
        corpus: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Documents kept per claim; overrides the configured k1.
        #[arg(long)]
        k1: Option<usize>,
    },
    /// Train the first- or second-iteration sentence retriever.
    TrainRetriever(TrainRetrieverCmd),
    /// Retrieve evidence sets for every claim of a dataset.
    Retrieve(RetrieveCmd),
    /// Train the hierarchical claim verifier on retrieved evidence.
    TrainVerifier(TrainVerifierCmd),
    /// Predict verdicts for a dataset from retrieved evidence.
    Verify(VerifyCmd),
    /// Score predictions against gold labels and evidence.
    Score(ScoreCmd),
    /// Train one verifier per learning-rate × batch-size combination.
    Sweep(SweepCmd),
    /// Run retrieval training, retrieval, verification, and scoring in order.
    EndToEnd(EndToEndCmd),
}

#[derive(Args)]
struct IngestCmd {
    /// Wiki dump: one JSONL file or a directory of .jsonl shards.
    #[arg(long, value_name = "PATH")]
    wiki: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out_corpus: Option<PathBuf>,
    /// Claims JSONL file.
    #[arg(long, value_name = "FILE")]
    claims: Option<PathBuf>,
    /// Split name recorded in the dataset.
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, value_name = "FILE")]
    out_dataset: Option<PathBuf>,
}

#[derive(Args)]
struct SynthCmd {
    /// Entity pages to generate.
    #[arg(long, default_value_t = 200)]
    entities: usize,
    /// Labeled claims to generate.
    #[arg(long, default_value_t = 600)]
    claims: usize,
    /// Fraction of supported/refuted claims needing a two-sentence set.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    multihop: f64,
    #[arg(long, value_name = "FILE")]
    out_corpus: PathBuf,
    #[arg(long, value_name = "FILE")]
    out_train: PathBuf,
    #[arg(long, value_name = "FILE")]
    out_dev: PathBuf,
}

#[derive(Args)]
struct TrainRetrieverCmd {
    /// Retrieval iteration to train: 1 (roots) or 2 (expansions).
    #[arg(long)]
    pass: u8,
    #[arg(long, value_name = "DATASET")]
    train: PathBuf,
    #[arg(long, value_name = "DATASET")]
    dev: PathBuf,
    #[arg(long, value_name = "CORPUS")]
    corpus: PathBuf,
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Finished pass-1 checkpoint (required when --pass 2).
    #[arg(long, value_name = "CKPT")]
    pass1: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveCmd {
    /// Claims dataset to retrieve evidence for.
    #[arg(long = "in", value_name = "DATASET")]
    input: PathBuf,
    #[arg(long, value_name = "CORPUS")]
    corpus: PathBuf,
    #[arg(long, value_name = "CKPT")]
    pass1: PathBuf,
    /// Second-iteration checkpoint (required unless hops = 1).
    #[arg(long, value_name = "CKPT")]
    pass2: Option<PathBuf>,
    #[arg(long, value_name = "JSONL")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainVerifierCmd {
    #[arg(long, value_name = "DATASET")]
    train: PathBuf,
    #[arg(long, value_name = "DATASET")]
    dev: PathBuf,
    #[arg(long, value_name = "CORPUS")]
    corpus: PathBuf,
    #[arg(long, value_name = "JSONL")]
    retrievals_train: PathBuf,
    #[arg(long, value_name = "JSONL")]
    retrievals_dev: PathBuf,
    #[arg(long, value_name = "CKPT")]
    out: PathBuf,
    /// Aggregation strategy: hesm, top1, logical, mlp, concat, or attn.
    #[arg(long, default_value = "hesm", value_parser = parse_aggregator)]
    aggregator: Aggregator,
    /// Retriever checkpoint whose trained word encoder seeds this model.
    #[arg(long, value_name = "CKPT")]
    encoder_init: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyCmd {
    /// Claims dataset to verify.
    #[arg(long = "in", value_name = "DATASET")]
    input: PathBuf,
    #[arg(long, value_name = "CORPUS")]
    corpus: PathBuf,
    #[arg(long, value_name = "JSONL")]
    retrievals: PathBuf,
    #[arg(long, value_name = "CKPT")]
    model: PathBuf,
    /// Aggregation strategy; defaults to the one the model trained with.
    #[arg(long, value_parser = parse_aggregator)]
    aggregator: Option<Aggregator>,
    #[arg(long, value_name = "JSONL")]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreCmd {
    /// Predictions JSONL file.
    #[arg(long = "in", value_name = "JSONL")]
    input: PathBuf,
    /// Gold claims dataset.
    #[arg(long, value_name = "DATASET")]
    claims: PathBuf,
    /// Metric report (JSON).
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write the report as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[arg(long, value_name = "DATASET")]
    train: PathBuf,
    #[arg(long, value_name = "DATASET")]
    dev: PathBuf,
    #[arg(long, value_name = "CORPUS")]
    corpus: PathBuf,
    #[arg(long, value_name = "JSONL")]
    retrievals_train: PathBuf,
    #[arg(long, value_name = "JSONL")]
    retrievals_dev: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value = "hesm", value_parser = parse_aggregator)]
    aggregator: Aggregator,
    /// Retriever checkpoint whose trained word encoder seeds each model.
    #[arg(long, value_name = "CKPT")]
    encoder_init: Option<PathBuf>,
}

#[derive(Args)]
struct EndToEndCmd {
    #[arg(long, value_name = "CORPUS")]
    corpus: PathBuf,
    #[arg(long, value_name = "DATASET")]
    train: PathBuf,
    #[arg(long, value_name = "DATASET")]
    dev: PathBuf,
    #[arg(long, value_name = "DIR")]
    out_dir: PathBuf,
    #[arg(long, default_value = "hesm", value_parser = parse_aggregator)]
    aggregator: Aggregator,
    /// Reuse finished outputs in the directory after checking input digests.
    #[arg(long)]
    resume: bool,
}

fn parse_aggregator(s: &str) -> Result<Aggregator, String> {
    Aggregator::parse(s).ok_or_else(|| {
        format!("unknown aggregator {s:?}; expected hesm, top1, logical, mlp, concat, or attn")
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            for cause in err.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut config = PipelineConfig::load(cli.config.as_deref(), &cli.sets, cli.seed)?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .expect("the global thread pool is built once, before any parallel work");
    }
    match cli.command {
        Command::Ingest(cmd) => stages::ingest(
            &config,
            &stages::IngestArgs {
                wiki: cmd.wiki,
                out_corpus: cmd.out_corpus,
                claims: cmd.claims,
                split: cmd.split,
                out_dataset: cmd.out_dataset,
            },
        ),
        Command::Synth(cmd) => stages::synth(
            &config,
            &stages::SynthArgs {
                entities: cmd.entities,
                claims: cmd.claims,
                multihop: cmd.multihop,
                out_corpus: cmd.out_corpus,
                out_train: cmd.out_train,
                out_dev: cmd.out_dev,
            },
        ),
        Command::Index { corpus, out } => stages::index(&config, &corpus, &out),
        Command::RetrieveDocs {
            input,
            corpus,
            out,
            k1,
        } => {
            if let Some(k1) = k1 {
                config.k1 = k1;
                config.validate()?;
            }
            stages::retrieve_docs(&config, &input, &corpus, &out)
        }
        Command::TrainRetriever(cmd) => stages::train_retriever(
            &config,
            &stages::TrainRetrieverArgs {
                pass: cmd.pass,
                train: cmd.train,
                dev: cmd.dev,
                corpus: cmd.corpus,
                out: cmd.out,
                pass1: cmd.pass1,
            },
        ),
        Command::Retrieve(cmd) => stages::retrieve(
            &config,
            &stages::RetrieveArgs {
                claims: cmd.input,
                corpus: cmd.corpus,
                pass1: cmd.pass1,
                pass2: cmd.pass2,
                out: cmd.out,
            },
        ),
        Command::TrainVerifier(cmd) => stages::train_verifier(
            &config,
            &stages::TrainVerifierArgs {
                train: cmd.train,
                dev: cmd.dev,
                corpus: cmd.corpus,
                retrievals_train: cmd.retrievals_train,
                retrievals_dev: cmd.retrievals_dev,
                out: cmd.out,
                aggregator: cmd.aggregator,
                encoder_init: cmd.encoder_init,
            },
        ),
        Command::Verify(cmd) => stages::verify(
            &config,
            &stages::VerifyArgs {
                claims: cmd.input,
                corpus: cmd.corpus,
                retrievals: cmd.retrievals,
                model: cmd.model,
                aggregator: cmd.aggregator,
                out: cmd.out,
            },
        ),
        Command::Score(cmd) => stages::score(
            &config,
            &stages::ScoreArgs {
                predictions: cmd.input,
                claims: cmd.claims,
                out: cmd.out,
                csv: cmd.csv,
            },
        ),
        Command::Sweep(cmd) => stages::sweep(
            &config,
            &stages::SweepArgs {
                train: cmd.train,
                dev: cmd.dev,
                corpus: cmd.corpus,
                retrievals_train: cmd.retrievals_train,
                retrievals_dev: cmd.retrievals_dev,
                out_dir: cmd.out_dir,
                aggregator: cmd.aggregator,
                encoder_init: cmd.encoder_init,
            },
        )
        .map(|_| ()),
        Command::EndToEnd(cmd) => stages::end_to_end(
            &config,
            &stages::EndToEndArgs {
                corpus: cmd.corpus,
                train: cmd.train,
                dev: cmd.dev,
                out_dir: cmd.out_dir,
                aggregator: cmd.aggregator,
                resume: cmd.resume,
            },
        )
        .map(|_| ()),
    }
}
