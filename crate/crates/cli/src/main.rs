use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;

use config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "factline",
    version,
    about = "Factuality resource generation, retrieval, verification and evaluation"
)]
struct Cli {
    /// TOML file with backend profiles and run defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (sampling, splits, evaluation order).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the resolved plan and exit without touching any file.
    #[arg(long, global = true)]
    dry_run: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split pages into sentence-window passages.
    Ingest(IngestArgs),
    /// Generate claims, a falsified claim and factual/unfactual texts per passage.
    Generate(GenerateArgs),
    /// Derive training pairs, NLI triplets or benchmark instances from records.
    Derive(DeriveArgs),
    /// Embed passages into a searchable index file.
    Index(IndexArgs),
    /// Verify one text against an index.
    Verify(VerifyArgs),
    /// Score a system on Task 1 or Task 2 instances.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Page records (line-delimited) or a directory of page files.
    #[arg(long)]
    pub pages: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Sentences per passage.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Keep one randomly drawn passage per page.
    #[arg(long)]
    pub sample: bool,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub passages: PathBuf,
    /// Chat profile name.
    #[arg(long)]
    pub backend: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Where to write passages that never produced a usable record.
    #[arg(long)]
    pub failures: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DeriveWhat {
    Retriever,
    Nli,
    Task1,
    Task2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitSide {
    Train,
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct DeriveArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, value_enum)]
    pub what: DeriveWhat,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    pub split: SplitSide,
    /// Train fraction of the record-level split.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// All passages of the source pages, for neutral mining (with --nli).
    #[arg(long, requires = "nli")]
    pub passages: Option<PathBuf>,
    /// NLI profile used to mine neutral premises.
    #[arg(long, requires = "passages")]
    pub nli: Option<String>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub passages: PathBuf,
    /// Embedding profile name.
    #[arg(long)]
    pub backend: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// File holding the text, or `-` for stdin.
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub index: PathBuf,
    /// Comma-separated profiles: an embedding and an NLI backend, plus an
    /// optional chat backend for claim extraction.
    #[arg(long, value_delimiter = ',', required = true)]
    pub backends: Vec<String>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Per-claim decision records.
    #[arg(long)]
    pub trace: PathBuf,
    /// Fixed text-to-claims table used instead of a chat extractor.
    #[arg(long)]
    pub claims: Option<PathBuf>,
    /// Also write the overall verdict as JSON.
    #[arg(long)]
    pub verdict: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemKind {
    Llm,
    Pipeline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Zs,
    Fs,
    #[value(name = "zs_ex")]
    ZsEx,
    #[value(name = "fs_ex")]
    FsEx,
    Rag,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub task: u8,
    #[arg(long, value_enum, default_value = "zs")]
    pub mode: ModeArg,
    #[arg(long)]
    pub instances: PathBuf,
    /// Comma-separated profiles. The LLM system needs a chat backend; the
    /// pipeline needs NLI (and an embedder for Task 1).
    #[arg(long, alias = "backend", value_delimiter = ',', required = true)]
    pub backends: Vec<String>,
    /// Number of runs; run i uses seed + i.
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value = "llm")]
    pub system: SystemKind,
    /// Few-shot examples (line-delimited).
    #[arg(long)]
    pub examples: Option<PathBuf>,
    /// Passage index for RAG evidence and the pipeline system.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub claims: Option<PathBuf>,
    /// Approximate prompt token limit; lowest-ranked evidence is dropped first.
    #[arg(long)]
    pub token_budget: Option<usize>,
    /// Text placed between the input and its evidence.
    #[arg(long)]
    pub separator: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Record wall-clock runtime in the report (makes it non-reproducible).
    #[arg(long)]
    pub with_runtime: bool,
}

pub struct Globals {
    pub config: Config,
    pub seed: u64,
    pub dry_run: bool,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let globals = Globals {
        seed: cli.seed.or(config.seed).unwrap_or(0),
        dry_run: cli.dry_run,
        config,
    };
    match cli.command {
        Command::Ingest(a) => commands::ingest(&globals, a),
        Command::Generate(a) => commands::generate(&globals, a),
        Command::Derive(a) => commands::derive(&globals, a),
        Command::Index(a) => commands::index(&globals, a),
        Command::Verify(a) => commands::verify(&globals, a),
        Command::Eval(a) => commands::eval(&globals, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(2),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
