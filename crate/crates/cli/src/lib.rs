//! `primes` command-line front end and the local `/v1` annotation API.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
pub mod server;

pub use commands::{read_ratings, Context};

/// Exit code for domain errors (bad data, failed checks, provider failures).
pub const EXIT_DOMAIN: i32 = 1;
/// Exit code for malformed invocations.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "primes", version, about = "Pilot, benchmark and validate LLM labelling of repository data")]
pub struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every artifact the command writes.
    #[arg(long, global = true, value_name = "DIR", default_value = "primes-out")]
    pub out_dir: PathBuf,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a dataset from a repository, its history or a CSV file.
    Ingest(IngestArgs),
    /// Lint and version prompt templates.
    #[command(subcommand)]
    Prompt(PromptCmd),
    /// Pilot a prompt against human labels and gate it on agreement.
    #[command(subcommand)]
    Pilot(PilotCmd),
    /// Size the oracle, benchmark models and rank them.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Check model outputs: format, duplicates, grounding, expectations.
    #[command(subcommand)]
    Validate(ValidateCmd),
    /// Write project CSVs and replay manifests.
    #[command(subcommand)]
    Export(ExportCmd),
    /// Serve the current pilot round over HTTP for the annotation UI.
    Serve(ServeArgs),
    /// Pilot, benchmark, apply and validate in one go.
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Files,
    Commits,
    Tabular,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Repository root, or the CSV file in tabular mode.
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long = "include", value_name = "GLOB")]
    pub include: Vec<String>,
    #[arg(long = "exclude", value_name = "GLOB")]
    pub exclude: Vec<String>,
    /// Commit range for commits mode, e.g. `v1.0..HEAD`.
    #[arg(long)]
    pub range: Option<String>,
    /// `field=column` pairs for tabular mode.
    #[arg(long = "map", value_name = "FIELD=COLUMN", value_parser = parse_pair)]
    pub map: Vec<(String, String)>,
    #[arg(long)]
    pub repo_label: Option<String>,
    /// Keep full patch text in commits mode.
    #[arg(long)]
    pub include_patch: bool,
}

#[derive(Debug, Subcommand)]
pub enum PromptCmd {
    /// Check a template for missing parts and inconsistent strategy.
    Lint { template: PathBuf },
    /// Add a template to the prompt ledger and print its version id.
    Register {
        template: PathBuf,
        /// Parent version; defaults to the latest registered version.
        #[arg(long)]
        parent: Option<String>,
        #[arg(long, default_value = "")]
        changelog: String,
    },
}

/// Two annotation CSVs, or the current round when both are omitted.
#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long, requires = "b")]
    pub a: Option<PathBuf>,
    #[arg(long, requires = "a")]
    pub b: Option<PathBuf>,
    /// Label schema TOML; inferred from the CSV headers when omitted.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum PilotCmd {
    /// Draw the pilot sample for the next round.
    Sample {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        stratify_by: Option<String>,
    },
    /// Label the sample with the pilot model and open the round.
    AnnotateLlm {
        #[arg(long)]
        items: PathBuf,
        /// Prompt version; defaults to the one chosen when the last round closed, else the latest.
        #[arg(long)]
        prompt: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long, default_value = "human")]
        human_id: String,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Submit human labels from a CSV into the open round.
    ImportHuman {
        #[arg(long)]
        labels: PathBuf,
    },
    /// Per-task Cohen's kappa.
    Kappa(PairArgs),
    /// Agreement gate decision.
    Gate {
        #[command(flatten)]
        pair: PairArgs,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        min_n: Option<u64>,
    },
    /// Items where the two annotators differ, written as CSV.
    Disagreements(PairArgs),
    /// Close the open round and record it in the round ledger.
    Close {
        #[arg(long)]
        notes: Option<String>,
        #[arg(long)]
        reuse_sample: bool,
        /// Prompt version for the next round.
        #[arg(long)]
        next_prompt: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Oracle size needed for a confidence level and margin of error.
    Size {
        #[arg(long)]
        population: Option<u64>,
        #[arg(long)]
        confidence: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
        #[arg(long)]
        proportion: Option<f64>,
    },
    /// Score every configured model against the oracle.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        oracle: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
        /// Restrict to these models; all configured models by default.
        #[arg(long = "model")]
        models: Vec<String>,
        /// Distractor items (JSONL) added to the suite.
        #[arg(long)]
        negatives: Option<PathBuf>,
        /// CSV with columns model_id,item_id,rating.
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long)]
        run_id: Option<String>,
        /// Skip the check that the prompt passed the pilot gate.
        #[arg(long)]
        allow_ungated: bool,
    },
    /// Rank previously written metrics files.
    Compare {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// accuracy,cost,interpretability
        #[arg(long, value_parser = parse_weights)]
        weights: Option<primes_core::bench::Weights>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ValidateCmd {
    /// Parse responses (JSONL of item_id, text) against the label schema.
    Format {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        bare_label: bool,
        #[arg(long)]
        strict: bool,
    },
    /// Exact and near-duplicate outputs.
    Dups {
        #[arg(long)]
        outputs: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        shingle_w: Option<usize>,
        #[arg(long)]
        strict: bool,
    },
    /// Rationale terms that do not occur in the source item.
    Hallucinations {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long = "vocab", value_name = "WORD")]
        vocabulary: Vec<String>,
        #[arg(long)]
        strict: bool,
    },
    /// Run expectation rules over an enhanced dataset.
    Expect {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExportCmd {
    /// Per-project CSVs of the labels produced by one run.
    Csv {
        #[arg(long)]
        run: String,
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Replay manifest for a run, built from the artifacts in the output directory.
    Manifest {
        #[arg(long)]
        run: String,
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub bind: std::net::SocketAddr,
    /// Round file to serve; defaults to the newest round in the output directory.
    #[arg(long)]
    pub round: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub template: PathBuf,
    /// Human pilot labels (CSV).
    #[arg(long)]
    pub human: PathBuf,
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long)]
    pub negatives: Option<PathBuf>,
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long)]
    pub ratings: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub run_id: String,
    #[arg(long, default_value = "human")]
    pub human_id: String,
    #[arg(long, default_value = "")]
    pub changelog: String,
    /// Recorded when the gate asks for refinement.
    #[arg(long)]
    pub notes: Option<String>,
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k.to_string(), v.to_string())),
        _ => Err(format!("expected FIELD=COLUMN, got `{s}`")),
    }
}

fn parse_weights(s: &str) -> Result<primes_core::bench::Weights, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [accuracy, cost] => Ok(primes_core::bench::Weights { accuracy, cost, interpretability: 0.0 }),
        [accuracy, cost, interpretability] => Ok(primes_core::bench::Weights { accuracy, cost, interpretability }),
        _ => Err("expected accuracy,cost[,interpretability]".into()),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let _ = std::io::stdout().flush();
            eprintln!("error: {e:#}");
            EXIT_DOMAIN
        }
    }
}
