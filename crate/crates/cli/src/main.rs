//! `genqa`: ingest, rank, build examples, train, generate, evaluate and
//! annotate from one entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal failure.

mod commands;
mod config;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Config, Overrides, UsageError};
use run::Run;

#[derive(Parser)]
#[command(name = "genqa", version, about = "Generative answer pipeline over answer-selection corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load and validate datasets; writes validation.json.
    Ingest,
    /// Rank dataset_a's candidates; writes ranked.jsonl.
    Rank,
    /// Build training examples from dataset_a (and dataset_b).
    BuildExamples,
    /// Train a model on examples (and examples_b); writes vocab, checkpoint, loss curve.
    Train,
    /// Answer eval_dataset with the selector and the trained generator.
    Generate,
    /// Score system outputs against eval_dataset; writes report.txt and report.json.
    Evaluate,
    /// Serve a blinded annotation campaign over HTTP.
    AnnotateServe,
    /// Per-system accuracy of an annotation campaign.
    AnnotateReport,
    /// ingest, rank, build-examples, train, generate and evaluate in one run.
    Pipeline,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Rank => "rank",
            Command::BuildExamples => "build-examples",
            Command::Train => "train",
            Command::Generate => "generate",
            Command::Evaluate => "evaluate",
            Command::AnnotateServe => "annotate-serve",
            Command::AnnotateReport => "annotate-report",
            Command::Pipeline => "pipeline",
        }
    }
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const INTERNAL: u8 = 3;

fn classify(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if let Some(e) = cause.downcast_ref::<genqa_core::error::Error>() {
            return match e {
                genqa_core::error::Error::InvalidArgument(_) | genqa_core::error::Error::Config(_) => USAGE,
                genqa_core::error::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => DATA,
                e if e.is_data_error() => DATA,
                _ => INTERNAL,
            };
        }
        if let Some(e) = cause.downcast_ref::<genqa_annosvc::Error>() {
            return match e {
                genqa_annosvc::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => DATA,
                genqa_annosvc::Error::Io(_) => INTERNAL,
                _ => DATA,
            };
        }
        if let Some(io) = cause.downcast_ref::<std::io::Error>() {
            return if io.kind() == std::io::ErrorKind::NotFound { DATA } else { INTERNAL };
        }
    }
    INTERNAL
}

fn execute(command: Command, cfg: &Config) -> anyhow::Result<()> {
    cfg.check()?;
    let mut run = Run::create(command.name(), cfg)?;
    let result = match command {
        Command::Ingest => commands::ingest(&mut run, cfg),
        Command::Rank => commands::rank(&mut run, cfg),
        Command::BuildExamples => commands::build_examples(&mut run, cfg).map(drop),
        Command::Train => commands::train(&mut run, cfg).map(drop),
        Command::Generate => commands::generate_cmd(&mut run, cfg),
        Command::Evaluate => commands::evaluate(&mut run, cfg),
        Command::AnnotateServe => commands::annotate_serve(&mut run, cfg),
        Command::AnnotateReport => commands::annotate_report(&mut run, cfg),
        Command::Pipeline => commands::pipeline(&mut run, cfg),
    };
    if let Err(e) = &result {
        run.log(&format!("error: {e:#}"));
    }
    let dir = run.finish()?;
    result?;
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    let result = Config::resolve(&cli.overrides).and_then(|cfg| execute(cli.command, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(classify(&e))
        }
    }
}
