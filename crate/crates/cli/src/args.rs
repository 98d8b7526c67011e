//! Command-line grammar.

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use secrisk_core::report::{RenderTarget, RoundingMode};
use secrisk_core::treatment::OptimizeMode;
use secrisk_service::TokenGrant;

pub const STORE_ENV: &str = "SECRISK_STORE";

const EXIT_HELP: &str = "\
Exit status:
  0  success
  2  bad command-line usage
  3  input failed validation
  4  Delphi session deadlocked at its round cap
  5  treatment plan leaves a risk at or above tolerance
  6  Delphi rounds ran out before consensus, below the round cap
  7  file or store could not be read or written
  8  service failed to start (port busy, store locked or unwritable) or stopped with an error";

#[derive(Debug, Parser)]
#[command(name = "secrisk", version, about = "Quantitative security risk assessment workflow", after_help = EXIT_HELP)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Registry store root. Snapshots are recorded here and can be named by id.
    #[arg(long, global = true, env = STORE_ENV, value_name = "DIR")]
    pub store: Option<PathBuf>,
    /// How numbers are displayed in reports.
    #[arg(long, global = true, value_enum, default_value_t = Mode::Full)]
    pub mode: Mode,
    /// Report layout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Write the report here instead of standard output.
    #[arg(long, global = true, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Six significant digits, totals at full precision.
    Full,
    /// Two decimals rounded half-up, totals summed from the rounded values.
    PaperCompat,
}

impl From<Mode> for RoundingMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Full => RoundingMode::Full,
            Mode::PaperCompat => RoundingMode::PaperCompat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Aligned plain-text tables.
    Text,
    /// Comma-separated tables with `#` comment lines.
    Csv,
}

impl From<Format> for RenderTarget {
    fn from(f: Format) -> Self {
        match f {
            Format::Text => RenderTarget::Text,
            Format::Csv => RenderTarget::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Branch and bound; the cheapest feasible plan.
    Exact,
    /// Best reduction per unit cost first.
    Greedy,
}

impl From<Method> for OptimizeMode {
    fn from(m: Method) -> Self {
        match m {
            Method::Exact => OptimizeMode::Exact,
            Method::Greedy => OptimizeMode::Greedy,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a profile, register and optional catalog without evaluating anything.
    Check(CheckArgs),
    /// List catalog countermeasures whose tags match.
    Lookup(LookupArgs),
    /// Replay Delphi rounds from tabular files and finalize the estimates.
    Delphi(DelphiArgs),
    /// Evaluate risk levels and record an assessment snapshot.
    Assess(AssessArgs),
    /// Evaluate or optimize a treatment plan against a snapshot.
    Treat(TreatArgs),
    /// Compare two snapshots.
    Monitor(MonitorArgs),
    /// Run the HTTP service until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_name = "FILE")]
    pub profile: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub risks: PathBuf,
    /// Impact matrix CSV; optional when the register embeds one.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LookupArgs {
    #[arg(long, value_name = "FILE")]
    pub catalog: PathBuf,
    /// Threat tag to match, case-insensitively. Repeatable.
    #[arg(long = "tag", value_name = "TAG", required = true)]
    pub tags: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DelphiArgs {
    /// Session definition document.
    #[arg(long, value_name = "FILE")]
    pub session: PathBuf,
    /// Round files in order, one row per participant and one column per quantity.
    #[arg(value_name = "ROUND_CSV", required = true)]
    pub rounds: Vec<PathBuf>,
    /// Finalize a deadlocked session anyway, recording this reason.
    #[arg(long, value_name = "REASON")]
    pub force: Option<String>,
    /// Write estimates.json here, plus updated inputs when --profile and --risks are given.
    #[arg(long, value_name = "DIR")]
    pub emit: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "emit")]
    pub profile: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires_all = ["emit", "profile"])]
    pub risks: Option<PathBuf>,
    /// Impact matrix supplying cells the session did not estimate.
    #[arg(long, value_name = "FILE", requires = "risks")]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssessArgs {
    #[arg(long, value_name = "FILE")]
    pub profile: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub risks: PathBuf,
    /// Impact matrix CSV; optional when the register embeds one.
    #[arg(long, value_name = "FILE")]
    pub matrix: Option<PathBuf>,
    /// Tolerance to use instead of the profile's.
    #[arg(long, value_name = "ALPHA")]
    pub alpha_override: Option<f64>,
    #[command(flatten)]
    pub snapshot: SnapshotOut,
}

#[derive(Debug, Args)]
pub struct SnapshotOut {
    /// Also write the snapshot document to this file.
    #[arg(long, value_name = "FILE")]
    pub snapshot_out: Option<PathBuf>,
    /// Snapshot timestamp; defaults to the current UTC time.
    #[arg(long, value_name = "RFC3339")]
    pub timestamp: Option<String>,
}

#[derive(Debug, Args)]
pub struct TreatArgs {
    /// Snapshot file, or a snapshot id in the store.
    #[arg(long, value_name = "FILE|ID")]
    pub snapshot: String,
    /// Catalog supplying countermeasure ids and costs.
    #[arg(long, value_name = "FILE")]
    pub catalog: Option<PathBuf>,
    /// Reduction matrix CSV.
    #[arg(long, value_name = "FILE")]
    pub reductions: PathBuf,
    /// Comma-separated countermeasure ids.
    #[arg(
        long,
        value_name = "IDS",
        value_delimiter = ',',
        conflicts_with = "optimize",
        required_unless_present = "optimize"
    )]
    pub plan: Option<Vec<String>>,
    /// Search for a plan instead of evaluating one.
    #[arg(long, value_enum, value_name = "METHOD")]
    pub optimize: Option<Method>,
    /// Tolerance to use instead of the snapshot's.
    #[arg(long, value_name = "ALPHA")]
    pub alpha_override: Option<f64>,
    #[command(flatten)]
    pub snapshot_out: SnapshotOut,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    /// Earlier snapshot, as a file or store id.
    #[arg(value_name = "FROM")]
    pub from: String,
    /// Later snapshot, as a file or store id.
    #[arg(value_name = "TO")]
    pub to: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service configuration document. Flags below override its fields.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, value_name = "ADDR")]
    pub bind: Option<SocketAddr>,
    /// Access token as `token:role:handle`; role is moderator, participant or viewer. Repeatable.
    #[arg(long = "token", value_name = "GRANT")]
    pub tokens: Vec<TokenGrant>,
    /// Longest wait for a status long-poll, in milliseconds.
    #[arg(long, value_name = "MS")]
    pub long_poll_ms: Option<u64>,
}
