mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use metastable::capacity::SolverKind;
use metastable::potential::DriftConvention;
use metastable::{Error, ErrorKind};

use config::{Experiment, RunConfig};

#[derive(Parser)]
#[command(name = "metastable", version, about = "Metastability analysis of nearest-neighbour walks in a potential")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Potential file.
    #[arg(long, global = true, conflicts_with = "builtin")]
    potential: Option<PathBuf>,
    /// Shipped potential by name.
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Lattice sizes, comma separated.
    #[arg(short, long, global = true, value_delimiter = ',')]
    n: Vec<u32>,
    /// Output directory (default: $METASTABLE_OUT or ./metastable-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Continue when the potential violates a standing hypothesis.
    #[arg(long, global = true)]
    force: bool,
    /// Sign convention for the boundary drift check.
    #[arg(long, global = true, value_enum)]
    drift_convention: Option<Drift>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Drift {
    Inward,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Cg,
    Dense,
    Elimination,
}

#[derive(Subcommand)]
enum Command {
    /// Critical points, hypotheses, saddle hierarchy and wells.
    Analyze,
    /// Reduced conductance graph, collapsed conductances, limit rates and exit distributions.
    Reduce,
    /// Exact capacity with variational bounds and the Eyring-Kramers prediction.
    Capacity(CapacityArgs),
    /// Monte Carlo experiments.
    Simulate(SimulateArgs),
    /// Acceptance suite.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CapacityArgs {
    /// Wells in A, comma separated.
    #[arg(long, value_delimiter = ',')]
    a: Vec<usize>,
    /// Wells in B (default: the complement of A).
    #[arg(long, value_delimiter = ',')]
    b: Vec<usize>,
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Metastable-set margin ε_N.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    upper_epsilon: Option<f64>,
    #[arg(long)]
    flow_epsilon: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment to run (default: exit).
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    /// Number of independent replicas (the exit experiment needs at least 100).
    #[arg(long)]
    replicas: Option<u64>,
    /// Master seed; replica k uses its own derived stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Jump budget per replica; exhausted replicas count as timeouts.
    #[arg(long)]
    max_jumps: Option<u64>,
    /// Write per-replica CSV files.
    #[arg(long)]
    records: bool,
    /// Exit: well to leave. Trace: starting well.
    #[arg(long)]
    well: Option<usize>,
    /// Exit: window height above the saddle. Crossing: start-set height.
    #[arg(long)]
    delta: Option<f64>,
    /// Exit: cap on the window radius around each saddle.
    #[arg(long)]
    radius: Option<f64>,
    /// Crossing: box size. Low-boundary: boundary margin.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Crossing: saddle index in the component.
    #[arg(long)]
    saddle: Option<usize>,
    /// Crossing: start every replica at the saddle site.
    #[arg(long)]
    start_at_saddle: bool,
    /// Trace: scale index, 0-based.
    #[arg(long)]
    scale: Option<usize>,
    /// Trace: horizon in units of the scale's time constant.
    #[arg(long)]
    horizon: Option<f64>,
    /// Trace: fewest observed transitions for a rate estimate.
    #[arg(long)]
    min_transitions: Option<u64>,
    /// Start point for the low-boundary experiment, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    start: Vec<f64>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Criterion ids, comma separated (default: all, or those exercising --builtin).
    #[arg(long, value_delimiter = ',')]
    criteria: Vec<usize>,
}

fn merge(cli: &Cli) -> metastable::Result<RunConfig> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => config::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &c.potential {
        cfg.potential = Some(p.clone());
        cfg.builtin = None;
    }
    if let Some(b) = &c.builtin {
        cfg.builtin = Some(b.clone());
        cfg.potential = None;
    }
    if !c.n.is_empty() {
        cfg.n = c.n.clone();
    }
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    cfg.force |= c.force;
    if let Some(d) = c.drift_convention {
        cfg.drift_convention = Some(match d {
            Drift::Inward => DriftConvention::Inward,
            Drift::Literal => DriftConvention::Literal,
        });
    }
    match &cli.command {
        Command::Analyze | Command::Reduce => {}
        Command::Capacity(a) => {
            let k = &mut cfg.capacity;
            if !a.a.is_empty() {
                k.a = a.a.clone();
            }
            if !a.b.is_empty() {
                k.b = Some(a.b.clone());
            }
            if let Some(s) = a.solver {
                k.solver = match s {
                    Solver::Cg => SolverKind::Cg,
                    Solver::Dense => SolverKind::Dense,
                    Solver::Elimination => SolverKind::Elimination,
                };
            }
            k.tol = a.tol.unwrap_or(k.tol);
            k.max_iter = a.max_iter.or(k.max_iter);
            k.upper_epsilon = a.upper_epsilon.or(k.upper_epsilon);
            k.flow_epsilon = a.flow_epsilon.or(k.flow_epsilon);
            cfg.setup.epsilon = a.epsilon.or(cfg.setup.epsilon);
        }
        Command::Simulate(a) => {
            let s = &mut cfg.simulate;
            s.experiment = a.experiment.unwrap_or(s.experiment);
            s.replicas = a.replicas.unwrap_or(s.replicas);
            s.seed = a.seed.unwrap_or(s.seed);
            s.max_jumps = a.max_jumps.unwrap_or(s.max_jumps);
            s.records |= a.records;
            s.well = a.well.unwrap_or(s.well);
            s.delta = a.delta.or(s.delta);
            s.radius = a.radius.or(s.radius);
            s.epsilon = a.epsilon.or(s.epsilon);
            s.saddle = a.saddle.unwrap_or(s.saddle);
            s.start_at_saddle |= a.start_at_saddle;
            s.scale = a.scale.unwrap_or(s.scale);
            s.horizon = a.horizon.unwrap_or(s.horizon);
            s.min_transitions = a.min_transitions.unwrap_or(s.min_transitions);
            if !a.start.is_empty() {
                s.start = Some(a.start.clone());
            }
        }
        Command::Verify(a) => {
            if !a.criteria.is_empty() {
                cfg.verify.criteria = a.criteria.clone();
            }
        }
    }
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Hypothesis => 3,
        ErrorKind::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = merge(&cli).and_then(|cfg| match &cli.command {
        Command::Analyze => commands::analyze(&cfg),
        Command::Reduce => commands::reduce(&cfg),
        Command::Capacity(_) => commands::capacity(&cfg),
        Command::Simulate(_) => commands::simulate(&cfg),
        Command::Verify(_) => commands::verify(&cfg),
    });
    match result {
        Ok(done) => {
            for f in &done.files {
                println!("wrote {}", f.display());
            }
            if done.acceptance_failed {
                ExitCode::from(5)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
