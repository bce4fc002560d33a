//! Command-line front end for `mate-core`.
//!
//! Every table is CSV and every check report is JSON lines; both start with
//! a `# mate <command> v<N>` line naming the schema version. All randomness
//! derives from `--seed`, so identical arguments give byte-identical files.

pub mod checks;
pub mod config;
pub mod cost;
pub mod error;
pub mod files;
pub mod output;
pub mod scan;
pub mod train;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mate_core::scan::ScanFamily;

use crate::config::ShapeSpec;
pub use crate::error::CliError;

/// Version of every CSV / JSON-lines schema emitted by this binary.
pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides `--threads`.
pub const THREADS_ENV: &str = "MATE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mate", version, about = "MATE block toolkit", arg_required_else_help = true)]
pub struct Cli {
    /// Worker threads for independent checks and table rows
    /// (overridden by MATE_THREADS).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adjacency audit (d_k) of a scan family on a grid.
    ScanAudit(ScanAuditArgs),
    /// Scan-vs-dense-oracle and gradient checks of the SSD kernel.
    SsdCheck(SsdCheckArgs),
    /// Dense-oracle, coverage and shift-adjacency checks of windowed attention.
    TesaCheck(TesaCheckArgs),
    /// FLOPs table of one MATE block against global attention.
    Cost(CostArgs),
    /// Flow-matching training of a small denoiser on moving squares.
    TrainToy(TrainArgs),
    /// Euler sampling from a trained checkpoint.
    Sample(SampleArgs),
}

fn parse_family(s: &str) -> Result<ScanFamily, String> {
    s.parse::<ScanFamily>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ScanAuditArgs {
    #[arg(long)]
    pub shape: ShapeSpec,
    /// rms, rowmajor or zigzag
    #[arg(long, default_value = "rms", value_parser = parse_family)]
    pub family: ScanFamily,
    /// Number of consecutive layers whose scans are combined.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SsdCheckArgs {
    #[arg(long, default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub dstate: usize,
    #[arg(long, default_value_t = 4)]
    pub dhead: usize,
    /// Number of random cases; case i uses seed + i.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference probes per gradient block.
    #[arg(long, default_value_t = 32)]
    pub grad_samples: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TesaCheckArgs {
    #[arg(long)]
    pub shape: ShapeSpec,
    #[arg(long, default_value_t = 8)]
    pub tw: usize,
    #[arg(long, default_value_t = 4)]
    pub sw: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    /// Token dimension of the random inputs.
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    /// Model, review and window settings; without it the d = 2560 block is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ascending token counts; defaults to the 17s/34s/68s presets.
    #[arg(long, value_delimiter = ',')]
    pub n_list: Option<Vec<u64>>,
    /// Count the Mamba2 term for one scan direction only.
    #[arg(long)]
    pub single_direction: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides run.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss CSV; overrides run.log, stdout when neither is set.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Where to save the trained weights; overrides run.checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Euler steps; defaults to sample.steps of the checkpoint's config.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Noise seed; defaults to run.seed of the checkpoint's config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output grid; defaults to the training shape.
    #[arg(long)]
    pub shape: Option<ShapeSpec>,
    #[arg(long)]
    pub out: PathBuf,
}

/// `MATE_THREADS` if set, else `--threads`, else 1.
pub fn resolve_threads(flag: Option<usize>, env: Option<OsString>) -> Result<usize, CliError> {
    let n = match env {
        Some(v) => {
            let s = v.to_string_lossy();
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{THREADS_ENV}=`{s}` is not a thread count")))?
        }
        None => flag.unwrap_or(1),
    };
    if n == 0 {
        return Err(CliError::Usage("thread count must be >= 1".into()));
    }
    Ok(n)
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let threads = resolve_threads(cli.threads, std::env::var_os(THREADS_ENV))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::ScanAudit(a) => scan::run(&a),
        Command::SsdCheck(a) => checks::ssd_check(&a),
        Command::TesaCheck(a) => checks::tesa_check(&a),
        Command::Cost(a) => cost::run(&a),
        Command::TrainToy(a) => train::train_toy(&a),
        Command::Sample(a) => train::sample(&a),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mate: {e}");
            e.exit_code()
        }
    }
}
