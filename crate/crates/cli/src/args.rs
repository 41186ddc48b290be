use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tnc_core::tensor::Precision;

#[derive(Parser, Debug)]
#[command(
    name = "tnc",
    version,
    about = "Quantum circuit amplitudes by tensor network contraction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest, plan, slice, reuse, execute, reduce and verify one amplitude.
    Run(Job),
    /// Contraction tree and its cost metrics.
    Plan(Job),
    /// Slice selection under `--max-rank` with per-index overheads.
    Slice(Job),
    /// Reuse subset, memory tuning and the spindle action list.
    ReusePlan(Job),
    /// Fused-section traffic in solo and cooperative mode.
    Cost(Job),
    /// Permutation bucket histogram over the schedule.
    PermStats(Job),
    /// Execute, then replay a sample of subtasks against the recorded partials.
    Verify(Job),
}

impl Command {
    pub fn job(&self) -> &Job {
        match self {
            Command::Run(j)
            | Command::Plan(j)
            | Command::Slice(j)
            | Command::ReusePlan(j)
            | Command::Cost(j)
            | Command::PermStats(j)
            | Command::Verify(j) => j,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrecisionArg {
    Single,
    Double,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Job {
    /// Circuit text file.
    #[arg(long, conflicts_with = "network")]
    pub circuit: Option<PathBuf>,
    /// JSON array of tensors, as an alternative to `--circuit`.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Output bitstring, qubit 0 first. Defaults to all zeros.
    #[arg(long)]
    pub bitstring: Option<String>,
    /// Contraction tree as `{"ssa_path": [[i, j], ...]}`; greedy when absent.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Slice records, as written by `tnc slice`.
    #[arg(long, conflicts_with = "max_rank")]
    pub slices: Option<PathBuf>,
    /// Rank cap for slicing.
    #[arg(long)]
    pub max_rank: Option<usize>,
    /// Slicing candidates sampled per round; 0 tries all.
    #[arg(long, default_value_t = 0)]
    pub slice_budget: usize,
    /// Memory budget for reuse buffers and intermediates.
    #[arg(long)]
    pub mem_budget_bytes: Option<u64>,
    #[arg(long, default_value_t = 12)]
    pub reuse_max_k: usize,
    /// Run every slice as an independent subtask.
    #[arg(long)]
    pub no_reuse: bool,
    #[arg(long, env = "TNC_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value_t = PrecisionArg::Double)]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Partials per first-level reduction group.
    #[arg(long, default_value_t = 256)]
    pub group_size: usize,
    /// Batch swaps of legs summed within this many stem steps.
    #[arg(long)]
    pub lookahead: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub cells: usize,
    #[arg(long, default_value_t = 13)]
    pub intra_rank_cap: usize,
    /// Subtasks recomputed by replay verification.
    #[arg(long, default_value_t = 16)]
    pub verify_samples: usize,
    /// Relative tolerance for replay; the precision default when absent.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Flips a bit in this recorded partial before verification.
    #[arg(long)]
    pub inject_fault: Option<u64>,
    /// Write partials to this file and reduce from it.
    #[arg(long)]
    pub spill: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}
