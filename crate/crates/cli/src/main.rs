//! `convrag` command-line tool.
//!
//! Every config field can be overridden with a flag of the same dotted name,
//! e.g. `--rerank.pool_size=100` or `--rewrite.temperatures.fiqa 0.0`; such
//! flags are rewritten to `--set key=value` before argument parsing.

use std::error::Error as StdError;
use std::fmt;
use std::io::{self, IsTerminal, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

use convrag_core::config::{ConfigError, PipelineConfig};
use convrag_core::eval::{evaluate_run, load_run, MetricReport, Qrels};
use convrag_core::pipeline::{
    exit_code, load_configured_conversations, query_domains, run_pipeline, Backends, Engine, PipelineError, Stage,
};
use convrag_core::rewrite::{load_gold_rewrites, rewrite_query, token_f1};
use convrag_core::sweep::{run_sweep, SweepError, SweepKind, SweepSpec};

#[derive(Debug, Parser)]
#[command(
    name = "convrag",
    version,
    about = "Conversational hybrid retrieval with query rewriting and reranking"
)]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Override a config field, `key.path=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Abort on the first per-query error instead of logging it.
    #[arg(long, global = true)]
    strict: bool,

    /// More logging (-v info is the default, -vv debug, -vvv trace).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Lexical,
    Dense,
    Fused,
    Reranked,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Lexical => Stage::Lexical,
            StageArg::Dense => Stage::Dense,
            StageArg::Fused => Stage::Fused,
            StageArg::Reranked => Stage::Reranked,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build per-domain index snapshots.
    Index {
        /// Snapshot directory (default: paths.snapshot_dir, else <output_dir>/index).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search one domain with a raw query (no rewriting).
    Search {
        #[arg(long, short)]
        domain: String,
        #[arg(long, value_enum, default_value = "reranked")]
        stage: StageArg,
        /// Print at most this many results.
        #[arg(long)]
        top: Option<usize>,
        #[arg(required = true, num_args = 1..)]
        query: Vec<String>,
    },
    /// Rewrite every configured conversation and print the queries as JSON lines.
    Rewrite,
    /// Run the full pipeline; writes run.trec, errors.log and reports.
    Run,
    /// Rerun the pipeline once per value of one parameter.
    Sweep {
        /// temperature, pool_size or strategy.
        kind: String,
        /// Comma-separated values (default: the standard grid for the kind).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated scorer backends for pool_size sweeps.
        #[arg(long, value_delimiter = ',')]
        scorers: Vec<String>,
    },
    /// Score a TREC run file against qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Qrels file (default: paths.qrels).
        #[arg(long)]
        qrels: Option<PathBuf>,
        /// Print CSV instead of an aligned table.
        #[arg(long)]
        csv: bool,
    },
}

/// A failure with its process exit code.
struct Failure {
    code: i32,
    error: Box<dyn StdError>,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: exit_code::USAGE,
            error: message.into().into(),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self {
            code: e.exit_code(),
            error: Box::new(e),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        PipelineError::from(e).into()
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Pipeline(p) => p.into(),
            other => Self {
                code: exit_code::USAGE,
                error: Box::new(other),
            },
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: exit_code::DATA,
            error: Box::new(e),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut shown = self.error.to_string();
        write!(f, "error: {shown}")?;
        let mut source = self.error.source();
        while let Some(s) = source {
            // Most errors already embed their cause in their own message.
            let text = s.to_string();
            if !shown.contains(&text) {
                write!(f, "\n  caused by: {text}")?;
                shown = text;
            }
            source = s.source();
        }
        Ok(())
    }
}

/// Turns `--a.b=v` and `--a.b v` into `--set a.b=v`.
fn expand_dotted_flags(args: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut iter = args.into_iter();
    if let Some(program) = iter.next() {
        out.push(program);
    }
    while let Some(arg) = iter.next() {
        if arg == "--" {
            out.push(arg);
            out.extend(iter);
            break;
        }
        let dotted = arg
            .strip_prefix("--")
            .filter(|rest| rest.split('=').next().is_some_and(|name| name.contains('.')));
        match dotted {
            Some(rest) if rest.contains('=') => {
                out.push("--set".into());
                out.push(rest.to_string());
            }
            Some(rest) => {
                out.push("--set".into());
                match iter.next() {
                    Some(value) => out.push(format!("{rest}={value}")),
                    None => out.push(rest.to_string()),
                }
            }
            None => out.push(arg),
        }
    }
    out
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0 | 1) => "info",
        (false, 2) => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(io::stderr)
        .with_ansi(io::stderr().is_terminal())
        .with_target(false)
        .init();
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    for item in &cli.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("override {item:?} must be KEY=VALUE")))?;
        config.apply_override(key, value)?;
    }
    if cli.strict {
        config.strict = true;
    }
    config.validate()?;
    Ok(config)
}

fn print_report(report: &MetricReport, csv: bool) -> Result<(), Failure> {
    let text = if csv { report.to_csv() } else { report.to_table() };
    io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn cmd_index(mut config: PipelineConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let dir = out
        .or_else(|| config.paths.snapshot_dir.clone())
        .unwrap_or_else(|| config.paths.output_dir.join("index"));
    // Always rebuild from the corpora rather than reloading old snapshots.
    config.paths.snapshot_dir = None;
    let engine = Engine::from_config(config)?;
    for path in engine.write_snapshots(&dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_search(
    config: PipelineConfig,
    domain: &str,
    stage: StageArg,
    top: Option<usize>,
    query: &[String],
) -> Result<(), Failure> {
    let engine = Engine::from_config(config)?;
    let query = query.join(" ");
    let list = engine.search(domain, &query, stage.into())?;
    let mut stdout = io::stdout().lock();
    for (rank, entry) in list.entries().iter().take(top.unwrap_or(usize::MAX)).enumerate() {
        writeln!(stdout, "{}\t{}\t{}", rank + 1, entry.id, entry.score)?;
    }
    Ok(())
}

fn cmd_rewrite(config: PipelineConfig) -> Result<(), Failure> {
    let conversations = load_configured_conversations(&config)?;
    let tokenizer = convrag_core::pipeline::load_tokenizer(&config)?;
    let backends = Backends::from_config(&config, &tokenizer)?;
    let gold = match &config.paths.gold_rewrites {
        Some(p) => Some(load_gold_rewrites(p).map_err(PipelineError::from)?),
        None => None,
    };
    let mut ordered: Vec<_> = conversations.iter().collect();
    ordered.sort_by(|a, b| a.query_id.cmp(&b.query_id));

    let mut f1_scores = Vec::new();
    let mut stdout = io::stdout().lock();
    for conv in ordered {
        let queries = match rewrite_query(conv, &config.rewrite, backends.generator.as_ref()) {
            Ok(q) => q,
            Err(e) if !config.strict => {
                warn!(query_id = %conv.query_id, error = %e, "rewrite failed");
                continue;
            }
            Err(e) => return Err(PipelineError::from(e).into()),
        };
        if let Some(g) = gold.as_ref().and_then(|g| g.get(&conv.query_id)) {
            f1_scores.push(token_f1(&queries[0], g));
        }
        let record = serde_json::json!({ "query_id": conv.query_id, "queries": queries });
        writeln!(stdout, "{record}")?;
    }
    if !f1_scores.is_empty() {
        let mean = f1_scores.iter().sum::<f64>() / f1_scores.len() as f64;
        info!(
            queries = f1_scores.len(),
            token_f1 = format!("{mean:.4}"),
            "rewrite quality against gold"
        );
    }
    Ok(())
}

fn cmd_run(config: PipelineConfig) -> Result<(), Failure> {
    let result = run_pipeline(config)?;
    if !result.output.failures.is_empty() {
        warn!(
            failures = result.output.failures.len(),
            "some queries failed; see errors.log"
        );
    }
    match &result.report {
        Some(report) => print_report(report, false),
        None => {
            println!("{}", result.run_path.display());
            Ok(())
        }
    }
}

fn cmd_sweep(config: PipelineConfig, kind: &str, values: &[String], scorers: &[String]) -> Result<(), Failure> {
    let spec = SweepSpec::parse(kind.parse::<SweepKind>()?, values, scorers)?;
    let qrels = convrag_core::pipeline::load_qrels(&config)?.ok_or(PipelineError::MissingPath("paths.qrels"))?;
    let conversations = load_configured_conversations(&config)?;
    let out_dir = config.paths.output_dir.clone();
    let engine = Engine::from_config(config)?;
    let table = run_sweep(&engine, &conversations, &qrels, &spec)?;
    for path in table.write(&out_dir)? {
        info!(path = %path.display(), "wrote");
    }
    io::stdout().write_all(table.to_text().as_bytes())?;
    Ok(())
}

fn cmd_eval(config: PipelineConfig, run: PathBuf, qrels: Option<PathBuf>, csv: bool) -> Result<(), Failure> {
    let qrels_path = qrels
        .or_else(|| config.paths.qrels.clone())
        .ok_or(PipelineError::MissingPath("paths.qrels"))?;
    let qrels = Qrels::load(&qrels_path).map_err(PipelineError::from)?;
    let entries = load_run(&run).map_err(PipelineError::from)?;
    // Per-domain rows need the conversations; without them only the overall
    // row is reported.
    let domains = match config.paths.conversations {
        Some(_) => query_domains(&load_configured_conversations(&config)?),
        None => Default::default(),
    };
    let report = evaluate_run(&entries, &qrels, &domains).map_err(PipelineError::from)?;
    print_report(&report, csv)
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::Index { out } => cmd_index(config, out),
        Command::Search {
            domain,
            stage,
            top,
            query,
        } => cmd_search(config, &domain, stage, top, &query),
        Command::Rewrite => cmd_rewrite(config),
        Command::Run => cmd_run(config),
        Command::Sweep { kind, values, scorers } => cmd_sweep(config, &kind, &values, &scorers),
        Command::Eval { run, qrels, csv } => cmd_eval(config, run, qrels, csv),
    }
}

fn main() -> ExitCode {
    let args = expand_dotted_flags(std::env::args());
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit_code::USAGE
            } else {
                exit_code::SUCCESS
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    init_logging(cli.verbose, cli.quiet);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("{failure}");
            ExitCode::from(failure.code as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn dotted_flags_become_overrides() {
        let out = expand_dotted_flags(args(&[
            "convrag",
            "--rerank.pool_size=100",
            "--rewrite.temperatures.fiqa",
            "0.0",
            "--strict",
            "search",
            "a.b",
            "--",
            "--x.y=1",
        ]));
        assert_eq!(
            out,
            args(&[
                "convrag",
                "--set",
                "rerank.pool_size=100",
                "--set",
                "rewrite.temperatures.fiqa=0.0",
                "--strict",
                "search",
                "a.b",
                "--",
                "--x.y=1",
            ])
        );
    }

    #[test]
    fn parses_subcommands() {
        let cli = Cli::try_parse_from(expand_dotted_flags(args(&[
            "convrag",
            "sweep",
            "pool_size",
            "--values",
            "30,50",
            "--lexical.top_k=20",
        ])))
        .unwrap();
        assert_eq!(cli.overrides, ["lexical.top_k=20"]);
        match cli.command {
            Command::Sweep { kind, values, .. } => {
                assert_eq!(kind, "pool_size");
                assert_eq!(values, ["30", "50"]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let cli = Cli::try_parse_from(args(&["convrag", "search", "-d", "cloud", "how", "much"])).unwrap();
        assert!(matches!(cli.command, Command::Search { ref query, .. } if query.len() == 2));
    }
}
