//! Command-line surface for the question-answering pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data validation error,
//! 3 numerical failure.

use clap::{Args, Parser, Subcommand};
use heteroqa::config::RunConfig;
use heteroqa::pipeline::{self, IndexKind, PipelineError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "heteroqa",
    about = "Community question answering over multiple information sources",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file with key=value lines (see README for the key list).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set model.qgt_layers=3 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Resolve and print the configuration, then exit.
    #[arg(long, global = true)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a deterministic synthetic corpus (samples, articles, QA pairs).
    Fixture {
        #[command(flatten)]
        common: Common,
        /// Output directory for samples.jsonl, articles.jsonl, qa.jsonl.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 32)]
        n_samples: usize,
        /// Number of distinct filler words in the synthetic vocabulary.
        #[arg(long, default_value_t = 24)]
        vocab_words: usize,
    },
    /// Build and serialize a BM25 index over a corpus file.
    BuildIndex {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        /// Corpus kind: articles | qa.
        #[arg(long)]
        kind: IndexKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach MIS bundles to samples via BM25 retrieval.
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: PathBuf,
        /// Article corpus; omit together with --qa for MSM-plus self-retrieval.
        #[arg(long)]
        articles: Option<PathBuf>,
        /// Related-QA corpus.
        #[arg(long)]
        qa: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print dataset statistics.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a model; writes checkpoint, vocabulary, and metrics CSV.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vocabulary output path (default: <checkpoint>.vocab.txt).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Metrics CSV output path (default: <checkpoint>.metrics.csv).
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Generate answers for a dataset with a trained checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions (or the Retrieved1 baseline) against gold answers.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Predictions JSONL ({"id", "answer"} per line).
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Gold dataset JSONL.
        #[arg(long)]
        refs: PathBuf,
        /// Use the top-1 retrieved MIS document as the answer instead of --pred.
        #[arg(long)]
        retrieved1: bool,
        /// Also write the report as JSON.
        #[arg(long)]
        json_out: Option<PathBuf>,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Fixture { common, .. }
            | Command::BuildIndex { common, .. }
            | Command::BuildDataset { common, .. }
            | Command::Stats { common, .. }
            | Command::Train { common, .. }
            | Command::Generate { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }
}

/// defaults -> config file -> HETEROQA_SEED -> --set overrides
fn resolve_config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env()?;
    for kv in &common.set {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            PipelineError::Usage(format!("--set expects KEY=VALUE, got {kv:?}"))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let common = cli.command.common();
    let cfg = resolve_config(common)?;
    print!("# resolved configuration\n{}", cfg.render());
    if common.dry_run {
        return Ok(());
    }
    match &cli.command {
        Command::Fixture {
            out_dir,
            n_samples,
            vocab_words,
            ..
        } => {
            pipeline::cmd_fixture(&cfg, *n_samples, *vocab_words, out_dir)?;
            println!("wrote fixture ({n_samples} samples) -> {}", out_dir.display());
        }
        Command::BuildIndex {
            input, kind, out, ..
        } => {
            println!("{}", pipeline::cmd_build_index(&cfg, input, *kind, out)?);
        }
        Command::BuildDataset {
            samples,
            articles,
            qa,
            out,
            ..
        } => {
            println!(
                "{}",
                pipeline::cmd_build_dataset(&cfg, samples, articles.as_deref(), qa.as_deref(), out)?
            );
        }
        Command::Stats { data, .. } => {
            print!("{}", pipeline::cmd_stats(&cfg, data)?);
        }
        Command::Train {
            data,
            checkpoint,
            vocab,
            metrics,
            ..
        } => {
            let vocab_out = vocab
                .clone()
                .unwrap_or_else(|| append_ext(checkpoint, "vocab.txt"));
            let metrics_out = metrics
                .clone()
                .unwrap_or_else(|| append_ext(checkpoint, "metrics.csv"));
            let outcome = pipeline::cmd_train(&cfg, data, checkpoint, &vocab_out, &metrics_out)?;
            println!("{}", outcome.summary);
        }
        Command::Generate {
            data,
            checkpoint,
            vocab,
            out,
            ..
        } => {
            println!("{}", pipeline::cmd_generate(&cfg, data, checkpoint, vocab, out)?);
        }
        Command::Evaluate {
            pred,
            refs,
            retrieved1,
            json_out,
            ..
        } => {
            let report = pipeline::cmd_evaluate(
                &cfg,
                pred.as_deref(),
                refs,
                *retrieved1,
                json_out.as_deref(),
            )?;
            print!("{}", report.render());
        }
        Command::Gradcheck { eps, tol, .. } => {
            let report = pipeline::cmd_gradcheck(&cfg, *eps, *tol)?;
            print!("{}", report.render());
        }
    }
    Ok(())
}

fn append_ext(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are successful exits; anything else is usage
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
