//! Command-line front end: matching, evaluation, benchmarking and the
//! embedded oracle self-test.

pub mod bench;
pub mod config;
pub mod eval;
pub mod generate;
pub mod matching;
pub mod report;
pub mod selftest;

use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

/// Exit status for success.
pub const EXIT_OK: i32 = 0;
/// Exit status when a test or metric check fails.
pub const EXIT_FAILURE: i32 = 1;
/// Exit status for usage and input errors.
pub const EXIT_USAGE: i32 = 2;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "STEREO_COSTVOL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "stereo-costvol", version, about = "ACV / Fast-ACV cost-volume stereo matcher")]
pub struct Cli {
    /// Cap on worker threads (falls back to STEREO_COSTVOL_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate a disparity map from a rectified grayscale pair.
    Match(matching::MatchArgs),
    /// Compare a predicted disparity map against ground truth.
    Eval(eval::EvalArgs),
    /// Time both pipelines and check volume sizes against closed forms.
    Bench(bench::BenchArgs),
    /// Run the embedded oracle suite.
    Selftest(selftest::SelftestArgs),
    /// Write a random-dot stereogram with its ground truth.
    GenStereogram(generate::GenArgs),
}

/// Resolves the thread cap: flag, then config file value, then environment.
pub fn resolve_threads(flag: Option<usize>, from_config: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag.or(from_config) {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n = v.trim().parse().with_context(|| format!("{THREADS_ENV}='{v}' is not a thread count"))?;
            Ok(Some(n))
        }
        _ => Ok(None),
    }
}

/// Runs a parsed command, writing its report to `out`. Returns the exit
/// status for completed runs; errors are usage or input errors.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::Match(a) => matching::cmd_match(&a, cli.threads, out),
        Command::Eval(a) => eval::cmd_eval(&a, out),
        Command::Bench(a) => bench::cmd_bench(&a, cli.threads, out),
        Command::Selftest(a) => selftest::cmd_selftest(&a, cli.threads, out),
        Command::GenStereogram(a) => generate::cmd_generate(&a, out),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors are reported on `err` with exit status 2.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    match run(cli, out) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_USAGE
        }
    }
}

/// A closed stdout (e.g. piped into `head`) is not an error.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

pub(crate) fn path_ext(p: &std::path::Path) -> String {
    p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub(crate) fn display(p: &PathBuf) -> String {
    p.display().to_string()
}
