mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

/// Coincidence analysis and simulation for four-channel photon time tags.
#[derive(Debug, Parser)]
#[command(name = "quadcorr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a tag file from a source configuration.
    Simulate(SimulateArgs),
    /// Pair delay histogram, normalized to accidentals.
    G2(HistArgs),
    /// Triplet delay histogram over two delay axes.
    G3(HistArgs),
    /// Quadruplet delay histogram over (t1-t2, t3-t1, t4-t1).
    G4(HistArgs),
    /// Window counts and accidental-corrected rates.
    Correct(CorrectArgs),
    /// Generation rates from a correction report.
    Infer(InferArgs),
    /// Grid dumps of the analytic correlation functions.
    Oracle(OracleArgs),
    /// Pump power sweep: simulate each level and tabulate corrected rates.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Source configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Acquisition time in seconds.
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    /// Tag file to analyze.
    pub input: PathBuf,
    /// Comma-separated channel groups; the first group anchors and may hold
    /// several channels, e.g. `12,3,4`. Defaults: g2 `1,3`, g3 `12,3,4`,
    /// g4 `1,2,3,4`.
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    pub bin_ns: f64,
    /// Half-width of every delay axis.
    #[arg(long, default_value_t = 60.0)]
    pub range_ns: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 20.0)]
    pub tc_ns: f64,
    /// Anti-Stokes window offset; half the window when omitted.
    #[arg(long)]
    pub as_offset_ns: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Report written by `correct`.
    pub report: PathBuf,
    /// Total efficiencies of channels 1-4.
    #[arg(long, conflicts_with = "eta_prime")]
    pub eta: Option<String>,
    /// Efficiencies without arm losses; arm losses are then fitted.
    #[arg(long)]
    pub eta_prime: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleKind {
    G2,
    G3,
    G4,
    Pn,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum)]
    pub kind: OracleKind,
    /// Peak cross-correlation of the model.
    #[arg(long, default_value_t = 5.0)]
    pub g2_peak: f64,
    #[arg(long, default_value_t = 16.0)]
    pub tau_c_ns: f64,
    #[arg(long, default_value_t = 8.0)]
    pub tau_0_ns: f64,
    /// Cross-correlation vanishes before the offset.
    #[arg(long)]
    pub one_sided: bool,
    #[arg(long, default_value_t = 2.0)]
    pub bin_ns: f64,
    #[arg(long, default_value_t = 60.0)]
    pub range_ns: f64,
    /// Squeezing parameter for `pn`.
    #[arg(long, default_value_t = 0.1)]
    pub zeta: f64,
    /// Mean pair number of the Poisson comparison for `pn`.
    #[arg(long, default_value_t = 0.01)]
    pub mu: f64,
    #[arg(long, default_value_t = 6)]
    pub n_max: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated pump scale factors.
    #[arg(long, default_value = "0.25,0.35,0.5,0.7,1")]
    pub levels: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub duration_s: Option<f64>,
    #[arg(long, default_value_t = 20.0)]
    pub tc_ns: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = commands::configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(e.code());
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::G2(a) => commands::g2(&a),
        Command::G3(a) => commands::g3(&a),
        Command::G4(a) => commands::g4(&a),
        Command::Correct(a) => commands::correct(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Oracle(a) => commands::oracle(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
