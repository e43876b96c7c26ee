//! `boxflow`: approximate max flow and transshipment from the command line.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "boxflow", version, about = "Approximate max flow and transshipment via box-simplex games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Approximate min-congestion routing of a demand.
    Maxflow(SolveArgs),
    /// Approximate uncapacitated min-cost routing of a demand.
    Transshipment(SolveArgs),
    /// Exact optimum from the reference solvers.
    Oracle(OracleArgs),
    /// Measure the cost approximators against the exact oracle.
    ApproxQuality(QualityArgs),
    /// Distributed column computation and products on the simulator.
    DistDemo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Edge list, one `u v w` per line.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scale growth parameter of the distance structures.
    #[arg(long)]
    pub tau: Option<u32>,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub calibrate: Switch,
    /// Where to write the report; standard output if absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: Common,
    /// Demand file, one `node value` per line.
    #[arg(long)]
    pub demand: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, value_enum, default_value_t = Mode::Centralized)]
    pub mode: Mode,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long)]
    pub demand: PathBuf,
    #[arg(long, value_enum)]
    pub problem: OracleProblem,
    /// Rational arithmetic; `auto` uses it when all inputs are integers.
    #[arg(long, value_enum, default_value_t = Exact::Auto)]
    pub exact: Exact,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct QualityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random demands to test each approximator on.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Only test the approximator for this problem.
    #[arg(long, value_enum)]
    pub problem: Option<OracleProblem>,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[command(flatten)]
    pub common: Common,
    /// Also solve this transshipment instance in both modes and compare.
    #[arg(long)]
    pub demand: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Include the per-round trace in the report.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Centralized,
    MinorAgg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleProblem {
    Transshipment,
    Congestion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Exact {
    Auto,
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Maxflow(a) => commands::solve(a, boxflow::flow::Problem::MaxFlow),
        Command::Transshipment(a) => commands::solve(a, boxflow::flow::Problem::Transshipment),
        Command::Oracle(a) => commands::oracle(a),
        Command::ApproxQuality(a) => commands::approx_quality(a),
        Command::DistDemo(a) => commands::dist_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("boxflow: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
