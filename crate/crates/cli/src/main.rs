//! `hirul`: run the battery-ageing and RUL-constrained OPF pipeline.
//!
//! Every run writes `manifest.json` to `--out` first; CSV outputs then carry
//! a `# manifest-sha256: ...` line above their header.

mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use failure::{config_error, Classify, Outcome};

#[derive(Debug, Parser)]
#[command(
    name = "hirul",
    version,
    about = "Health-informed, RUL-constrained OPF pipeline"
)]
struct Cli {
    /// JSON config: cycle settings for cycle-sim, a sampling spec for mc,
    /// box and hi-sweep, a battery placement for opf.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the preset or config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Cell parameter JSON; the built-in LFP cell when absent.
    #[arg(long, global = true)]
    cell: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Cycle one cell to end of life.
    CycleSim,
    /// Run a Monte Carlo campaign.
    Mc(McArgs),
    /// Correlations and response surfaces from a campaign CSV.
    Analyze(AnalyzeArgs),
    /// Operating box for a RUL target.
    Box(BoxArgs),
    /// Boxes across sampled ageing states.
    HiSweep(SweepArgs),
    /// Conventional and RUL-constrained optimal power flow.
    Opf(OpfArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct McArgs {
    /// fig2, fig3 or fig5; ignored when --config is given.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalyzeArgs {
    /// Campaign CSV written by `mc`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = hirul_core::region::DEFAULT_LEVELS)]
    pub levels: usize,
    #[arg(long, default_value_t = hirul_core::region::DEFAULT_DEGREE)]
    pub degree: usize,
    /// Target marked in the contour output, hours.
    #[arg(long, default_value_t = 120.0)]
    pub target: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct BoxArgs {
    /// Surface JSON written by `analyze`.
    #[arg(long, conflicts_with = "efc", required_unless_present = "efc")]
    pub surface: Option<PathBuf>,
    /// Fit surfaces for a cell aged to this many equivalent full cycles.
    #[arg(long)]
    pub efc: Option<f64>,
    /// Required RUL, hours.
    #[arg(long)]
    pub target: f64,
    /// Health indicator recorded with a surface-file box.
    #[arg(long, conflicts_with = "efc")]
    pub hi: Option<f64>,
    /// Sampling preset used with --efc.
    #[arg(long, default_value = "fig5")]
    pub preset: String,
    #[arg(long, default_value_t = 400)]
    pub inner_samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct SweepArgs {
    #[arg(long, default_value = "fig5")]
    pub preset: String,
    #[arg(long, default_value_t = 120.0)]
    pub target: f64,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 400)]
    pub inner_samples: usize,
    /// Equal-width HI bins for the median table.
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Case1,
    Case2,
    Both,
}

#[derive(Debug, Args, Serialize)]
pub struct OpfArgs {
    /// MATPOWER case file.
    #[arg(long)]
    pub case: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeArg,
    /// JSON array of boxes, one per battery in config order.
    #[arg(long, conflicts_with = "fit_boxes")]
    pub boxes: Option<PathBuf>,
    /// Build each battery's box from its ageing state (fig5 sampling).
    #[arg(long)]
    pub fit_boxes: bool,
    #[arg(long, default_value_t = 400)]
    pub inner_samples: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 150)]
    pub max_iter: usize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::CycleSim => "cycle-sim",
            Command::Mc(_) => "mc",
            Command::Analyze(_) => "analyze",
            Command::Box(_) => "box",
            Command::HiSweep(_) => "hi-sweep",
            Command::Opf(_) => "opf",
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .runtime()?;
    }
    let mut ctx = commands::Context::new(&cli)?;
    match &cli.command {
        Command::CycleSim => commands::cycle_sim(&mut ctx),
        Command::Mc(a) => commands::mc(&mut ctx, a),
        Command::Analyze(a) => commands::analyze(&mut ctx, a),
        Command::Box(a) => commands::boxes(&mut ctx, a),
        Command::HiSweep(a) => commands::hi_sweep(&mut ctx, a),
        Command::Opf(a) => commands::opf(&mut ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hirul: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
