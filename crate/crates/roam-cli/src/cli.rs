//! Argument definitions for the four subcommands.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Continuous-space multi-robot exploration: seeded training and
/// evaluation, geometry self-checks, and plot-data export.
#[derive(Parser, Debug)]
#[command(name = "roam", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a policy; writes a manifest, a metrics log, and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint; writes summary tables and attention data.
    Eval(EvalArgs),
    /// Run the geometry self-check suite and print one line per check.
    Geomcheck(GeomcheckArgs),
    /// Convert a metrics log or evaluation output into plot-ready tables.
    #[command(name = "export-plots")]
    ExportPlots(ExportArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Configuration file (flat TOML keys); defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set lr=3e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Master seed (overrides the config's `seed`).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// Episode count (overrides the config's `episodes`).
    #[arg(long, value_name = "N")]
    pub episodes: Option<u32>,
    /// Rollout workers (overrides the config's `workers`); 1 is serial.
    #[arg(long, value_name = "N")]
    pub workers: Option<usize>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Continue from a checkpoint written under the identical config.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
    /// Print the resolved configuration as documented TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(value_name = "CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Evaluation episodes.
    #[arg(long, value_name = "N", default_value_t = 1000)]
    pub episodes: u32,
    /// Seed for the evaluation episode stream.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Also evaluate the uniform-random and nearest-unknown heuristic
    /// policies and emit their summary rows.
    #[arg(long)]
    pub baselines: bool,
    /// Episodes whose per-step attention weights are recorded.
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub attn_episodes: u32,
    /// Curriculum difficulty in [0, 1]; defaults to where training left off.
    #[arg(long, value_name = "P")]
    pub difficulty: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GeomcheckArgs {
    /// Certification tolerance for the closed-form comparisons.
    #[arg(long, value_name = "TOL", default_value_t = 1e-3)]
    pub tolerance: f64,
    /// Quadrature tolerance handed to the area integrator.
    #[arg(long, value_name = "TOL", default_value_t = 1e-6)]
    pub quad_tol: f64,
    /// Monte Carlo samples for the quadrature cross-check.
    #[arg(long, value_name = "N", default_value_t = 2_000_000)]
    pub mc_samples: u64,
    /// Seed for the randomized cross-check arrangement.
    #[arg(long, value_name = "N", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    /// (episode, exploration_rate) with optional smoothing.
    Curves,
    /// (episode, agent, head, entropy) attention-entropy traces.
    Entropy,
    /// (step, i, j, weight) attention heatmap for one episode.
    Heatmap,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    /// What to emit.
    #[arg(long, value_enum)]
    pub kind: ExportKind,
    /// Input table: a metrics log (curves, entropy) or an evaluation
    /// attention file (entropy, heatmap).
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Trailing moving-average window for curves; 1 leaves the series as is.
    #[arg(long, value_name = "W", default_value_t = 1)]
    pub smooth: usize,
    /// Episode to extract for the heatmap; defaults to the first present.
    #[arg(long, value_name = "N")]
    pub episode: Option<u32>,
}
