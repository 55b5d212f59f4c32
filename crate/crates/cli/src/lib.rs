//! `flowkern` command line: verification suites, host micro-benchmarks,
//! cost-model rankings, pipeline simulations and Q4NX file tooling.
//!
//! Every command produces a [`RunReport`]. Exit codes are a stable contract:
//! 0 when every case passed, 1 when any case failed or errored, 2 for usage,
//! config and input errors.

mod bench;
mod cases;
pub mod config;
mod cost;
mod q4nx_tool;
pub mod report;
mod simulate;
mod verify;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Dims, Params};
pub use crate::report::{validate_report, CaseResult, RunReport, Status};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Kernel(#[from] flowkern::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

macro_rules! value_enum_str {
    ($t:ty) => {
        impl std::str::FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                <$t as ValueEnum>::from_str(s, true)
            }
        }
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.to_possible_value().unwrap().get_name())
            }
        }
    };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}
value_enum_str!(Format);

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Q4nx,
    Attn,
    Fused,
    Mm,
    Sim,
    Layer,
    All,
}
value_enum_str!(Suite);

/// `small` finishes in seconds; `full` runs the acceptance-sized grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sizes {
    Small,
    Full,
}
value_enum_str!(Sizes);

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Kernel {
    Prefill,
    Decode,
    Mm,
    FusedDqp,
}
value_enum_str!(Kernel);

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Candidates {
    /// The three measured megatile shapes.
    Measured,
    /// Measured shapes plus a sweep over tiles, column counts and expansions.
    Default,
}
value_enum_str!(Candidates);

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Flowkv,
    FusedDqp,
    Mm,
}
value_enum_str!(Scenario);

#[derive(Debug, Parser)]
#[command(
    name = "flowkern",
    version,
    about = "Chunked attention, Q4NX and tiled GEMM kernels with oracle checks"
)]
pub struct Cli {
    /// Seed for every random input (default 0).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run oracle-equivalence and invariant checks.
    Verify(VerifyArgs),
    /// Time a kernel on the host.
    Bench(BenchArgs),
    /// Rank megatile configurations by modelled data movement.
    Cost(CostArgs),
    /// Simulate a double-buffered pipeline on the tile array.
    Simulate(SimulateArgs),
    /// Pack, unpack and inspect Q4NX containers.
    #[command(subcommand)]
    Q4nx(Q4nxCommand),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long, value_enum)]
    pub sizes: Option<Sizes>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(value_enum)]
    pub kernel: Kernel,
    /// Sequence or context length for prefill and decode.
    #[arg(long)]
    pub len: Option<usize>,
    /// Chunk length L_c for prefill and decode.
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// `M,K,N` for mm, `M,K` for fused_dqp.
    #[arg(long)]
    pub shape: Option<Dims>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Compute tiles assumed by the bandwidth estimate.
    #[arg(long)]
    pub ct_count: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    #[arg(long, value_enum)]
    pub candidates: Option<Candidates>,
    #[arg(long)]
    pub l1_bytes: Option<usize>,
    #[arg(long)]
    pub l2_bytes: Option<usize>,
    /// Ranked rows to keep in the report.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(value_enum)]
    pub scenario: Scenario,
    #[arg(long)]
    pub chunks: Option<usize>,
    /// Chunk length for flowkv.
    #[arg(long)]
    pub lc: Option<usize>,
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// `M,K` for fused_dqp, `M,K,N` for mm.
    #[arg(long)]
    pub shape: Option<Dims>,
    /// bf16 multiply-accumulates per cycle per compute tile.
    #[arg(long)]
    pub lanes: Option<usize>,
    /// Allocated DRAM read bandwidth, bytes/s.
    #[arg(long)]
    pub bw: Option<f64>,
    /// Bandwidth the kernel needs, bytes/s; derived from the stages when omitted.
    #[arg(long)]
    pub required_bw: Option<f64>,
    #[arg(long)]
    pub clock_hz: Option<f64>,
    /// Also write the event timeline as CSV.
    #[arg(long)]
    pub timeline: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Q4nxCommand {
    /// Quantize a raw little-endian f32 row-major matrix.
    Pack {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
    },
    /// Dequantize a container back to raw little-endian f32.
    Unpack { input: PathBuf, output: PathBuf },
    /// Print the header and per-block statistics.
    Inspect { input: PathBuf },
}

impl Command {
    fn label(&self) -> String {
        match self {
            Command::Verify(a) => format!("verify {}", a.suite),
            Command::Bench(a) => format!("bench {}", a.kernel),
            Command::Cost(_) => "cost".into(),
            Command::Simulate(a) => format!("simulate {}", a.scenario),
            Command::Q4nx(Q4nxCommand::Pack { .. }) => "q4nx pack".into(),
            Command::Q4nx(Q4nxCommand::Unpack { .. }) => "q4nx unpack".into(),
            Command::Q4nx(Q4nxCommand::Inspect { .. }) => "q4nx inspect".into(),
        }
    }
}

/// A finished run: the report, how to render it and where.
pub struct Run {
    pub report: RunReport,
    pub format: Format,
    pub out: Option<String>,
    pub exit_code: i32,
}

pub fn run(cli: Cli) -> Run {
    let start = Instant::now();
    let mut report = RunReport::new(cli.command.label(), cli.seed.unwrap_or(0));
    let mut format = cli.format.unwrap_or(Format::Json);
    let mut out = cli.out.clone();
    let result = (|| {
        let mut params = Params::load(cli.config.as_deref())?;
        report.seed = params.get("seed", cli.seed, 0u64)?;
        format = params.get("format", cli.format, Format::Json)?;
        out = params.get_opt("out", cli.out.clone())?;
        let r = dispatch(&cli.command, &mut params, &mut report);
        report.config = params.into_echo();
        r
    })();
    report.elapsed_s = start.elapsed().as_secs_f64();
    let exit_code = match result {
        Err(e) => {
            report.error = Some(e.to_string());
            EXIT_USAGE
        }
        Ok(()) if report.all_passed() => EXIT_PASS,
        Ok(()) => EXIT_FAIL,
    };
    Run {
        report,
        format,
        out,
        exit_code,
    }
}

fn dispatch(cmd: &Command, params: &mut Params, report: &mut RunReport) -> Result<(), CliError> {
    let seed = report.seed;
    match cmd {
        Command::Verify(a) => verify::run(a, params, seed, report),
        Command::Bench(a) => bench::run(a, params, seed, report),
        Command::Cost(a) => cost::run(a, params, report),
        Command::Simulate(a) => simulate::run(a, params, report),
        Command::Q4nx(c) => q4nx_tool::run(c, params, report),
    }
}
