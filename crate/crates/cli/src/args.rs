//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hybridsens_core::rng::DEFAULT_SEED;
use hybridsens_core::simulate::DEFAULT_MAX_EVENTS;

#[derive(Parser)]
#[command(
    name = "hybridsens",
    version,
    about = "Simulate multiscale reaction networks, derive hybrid (PDMP) reductions, and estimate parameter sensitivities"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Check a model file (and optionally a scaling file) against the schema
    /// and semantic rules.
    Validate(ValidateArgs),
    /// Derive the reduced hybrid model from a CTMC model plus scaling
    /// exponents.
    Reduce(ReduceArgs),
    /// Simulate paths and write per-grid-point summary statistics.
    Simulate(SimulateArgs),
    /// Estimate parameter sensitivities.
    Sens(SensArgs),
    /// Compare two sensitivity CSVs row by row (z-scores on combined
    /// standard errors).
    Compare(CompareArgs),
    /// Integrate the truncated chemical master equation as a brute-force
    /// reference.
    OracleCme(OracleArgs),
}

#[derive(Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scaling: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scaling: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum RawFormat {
    /// One row per (path, grid time) with a leading path_id column.
    #[default]
    Long,
    /// One block of `t,<species...>` rows per path, blank-line separated.
    Blocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulateMethod {
    Ssa,
    Nrm,
    Pdmp,
    Scaled,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scaling: Option<PathBuf>,
    /// Simulation engine; defaults to pdmp for reduced models, ssa otherwise.
    #[arg(long, value_enum)]
    pub method: Option<SimulateMethod>,
    /// Time horizon.
    #[arg(long = "T")]
    pub horizon: f64,
    /// Euler step for hybrid simulation (default: T/50000).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Number of recording intervals on [0, T].
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-path trajectories.
    #[arg(long)]
    pub raw: Option<PathBuf>,
    /// Layout of the raw trajectory file.
    #[arg(long = "raw-format", value_enum, default_value_t = RawFormat::Long)]
    pub raw_format: RawFormat,
    /// Write an integer histogram of this species at the final time.
    #[arg(long)]
    pub histogram: Option<String>,
    /// Override the scale N for method=scaled (default: the scaling file's N0).
    #[arg(long = "scale-n")]
    pub scale_n: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_EVENTS)]
    pub max_events: u64,
    /// Expected-event-count threshold that triggers a warning for
    /// method=scaled.
    #[arg(long, default_value_t = 5e7)]
    pub event_warn_budget: f64,
}

#[derive(Args)]
pub struct SensArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub scaling: Option<PathBuf>,
    /// pdmp-decomposition | cfd-pdmp | cfd-ctmc | ipa-ctmc
    #[arg(long)]
    pub method: String,
    #[arg(long)]
    pub observable: String,
    /// Parameter name; repeat for several parameters.
    #[arg(long = "theta", required = true)]
    pub theta: Vec<String>,
    #[arg(long = "T")]
    pub horizon: f64,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub paths: usize,
    /// Perturbation size for finite-difference methods.
    #[arg(long, default_value_t = 1e-2)]
    pub h: f64,
    /// Use central instead of forward differences.
    #[arg(long, default_value_t = false)]
    pub central: bool,
    /// Evaluation times per (path, discrete reaction) for the
    /// decomposition estimator.
    #[arg(long = "aux-times", default_value_t = 10)]
    pub aux_times: usize,
    /// Coupled auxiliary pairs per evaluation time.
    #[arg(long = "aux-pairs", default_value_t = 1)]
    pub aux_pairs: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_EVENTS)]
    pub max_events: u64,
    #[arg(long = "aux-budget", default_value_t = 20_000_000)]
    pub aux_budget: u64,
}

#[derive(Args)]
pub struct CompareArgs {
    pub file_a: PathBuf,
    pub file_b: PathBuf,
    /// Largest acceptable |difference| / combined stderr.
    #[arg(long = "z-max", default_value_t = 3.0)]
    pub z_max: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Per-species truncation bound, e.g. --bound s=200; repeat per species.
    #[arg(long = "bound", required = true)]
    pub bound: Vec<String>,
    #[arg(long = "T")]
    pub horizon: f64,
    /// RK4 step (default: T/10000).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Observable whose mean to report.
    #[arg(long)]
    pub observable: Option<String>,
    /// Also report the central-difference sensitivity of the mean w.r.t.
    /// this parameter.
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long, default_value_t = 1e-4)]
    pub h: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long = "state-cap", default_value_t = hybridsens_core::oracle::DEFAULT_STATE_CAP)]
    pub state_cap: usize,
}
