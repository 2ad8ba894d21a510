//! `hypwalk`: command-line front end.
//!
//! Exit codes: 0 success, 1 validation error, 2 certification failure,
//! 3 self-check failure.

mod commands;
mod error;
mod output;
mod suite;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;
use crate::output::Format;

#[derive(Parser, Debug)]
#[command(name = "hypwalk", version, about = "Projections, random walks and coning on hyperbolic group models")]
struct Cli {
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write `<subcommand>.<ext>` into this directory instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus overrides, shared by the experiment subcommands.
#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Plain `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SpaceKind {
    Tree,
    BassSerre,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Elements of `ball(e, radius)` in length-lex order.
    Ball {
        #[arg(long)]
        model: String,
        #[arg(long)]
        radius: usize,
    },
    /// Nearest points of the axis `h<g>` to `x`.
    Project {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SpaceKind::Tree)]
        space: SpaceKind,
        #[arg(long)]
        g: String,
        #[arg(long, default_value = "e")]
        h: String,
        #[arg(long)]
        x: String,
    },
    /// `H_T(o, p)` and `Σ_{H_T(o,p)} [o, p]`.
    Htsum {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SpaceKind::Tree)]
        space: SpaceKind,
        #[arg(long)]
        g: String,
        #[arg(long, default_value = "e")]
        o: String,
        #[arg(long)]
        p: String,
        #[arg(long = "T")]
        t: usize,
        /// Search radius around `o`; defaults to `d(o, p)`.
        #[arg(long)]
        window: Option<usize>,
    },
    /// Consistency of the four order conditions on `H_T(o, p)`.
    Order {
        #[arg(long)]
        model: String,
        #[arg(long)]
        g: String,
        #[arg(long, default_value = "e")]
        o: String,
        #[arg(long)]
        p: String,
        #[arg(long = "T")]
        t: usize,
    },
    /// Pivot search near the end of a geodesic `alpha` from `e`.
    Pivot {
        #[arg(long)]
        model: String,
        #[arg(long)]
        alpha: String,
        #[arg(long)]
        q: String,
        #[arg(long)]
        g: String,
        #[arg(long, default_value = "e")]
        h: String,
        #[arg(long)]
        s: usize,
        #[arg(long)]
        e: usize,
    },
    /// Seeded trajectories as JSON lines.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value = "srw")]
        kernel: String,
        #[arg(long)]
        hold: Option<f64>,
        #[arg(long, default_value = "e")]
        start: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Linear-progress table and drift.
    Progress(ExperimentArgs),
    /// Bounded-projection probabilities over sampled cells.
    BoundedProj(ExperimentArgs),
    /// Tail curve and, when `eps` is set, the recursion inequality.
    Tail(ExperimentArgs),
    /// Morse certificate of a geodesic segment from `e`.
    Morse {
        #[arg(long)]
        model: String,
        #[arg(long)]
        segment: String,
        #[arg(long, default_value_t = 2)]
        window: usize,
        /// Grid `λ <= k`.
        #[arg(long, default_value_t = 2)]
        k: u32,
        /// Grid `ε <= c`.
        #[arg(long, default_value_t = 2)]
        c: u32,
        /// Also report detectability in this space.
        #[arg(long, value_enum)]
        space: Option<SpaceKind>,
    },
    /// Incompatibility witness against an affine gauge `aλ + bε + c`.
    Incompat {
        #[arg(long)]
        model: String,
        #[arg(long)]
        beta: String,
        #[arg(long, default_value = "1,1,0")]
        gauge: String,
        #[arg(long, default_value_t = 1.0)]
        kappa: f64,
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
    },
    /// Coned-off ball, or the coning schedule of a skeleton.
    Cone {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        radius: Option<usize>,
        /// Cone every coset of `factor:I`, `cyclic:WORD`, `central` or `factor-central:I`.
        #[arg(long = "sub")]
        subs: Vec<String>,
        /// Cone one coset, `REP=SPEC`.
        #[arg(long = "coset")]
        cosets: Vec<String>,
        /// Shipped skeleton name or skeleton file.
        #[arg(long)]
        skeleton: Option<String>,
    },
    /// Fiber parallelism in a factored ball.
    Fibers {
        #[arg(long)]
        model: String,
        #[arg(long)]
        skeleton: String,
        #[arg(long)]
        radius: usize,
        /// Schedule round; defaults to the last.
        #[arg(long)]
        round: Option<usize>,
        #[arg(long)]
        fiber: Option<String>,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        c: usize,
        #[arg(long, default_value = "4,6,8")]
        sweep: String,
    },
    /// Fibre separation profile over truncation radii.
    Separation {
        #[arg(long)]
        model: String,
        #[arg(long, value_enum, default_value_t = SpaceKind::Tree)]
        space: SpaceKind,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        r: usize,
        #[arg(long)]
        s: usize,
        #[arg(long, default_value = "4,6,8")]
        truncations: String,
    },
    /// Cross-ratio of four boundary points, or a QI fit over random quadruples.
    Crossratio {
        #[arg(long)]
        model: String,
        /// `prefix.(period)` descriptor; give exactly four.
        #[arg(long = "point")]
        points: Vec<String>,
        #[arg(long, default_value_t = 0)]
        k: usize,
        /// `identity`, `parity-swap`, `branch-swap` or `translate:WORD`.
        #[arg(long)]
        qi: Option<String>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Built-in property checks.
    Check,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    }
    let run = commands::dispatch(&cli.command)?;
    for o in &run.outputs {
        output::emit(o, cli.format, cli.out.as_deref())?;
    }
    run.failure.map_or(Ok(()), Err)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Validation(e.render().to_string());
            err.report();
            return err.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            e.exit_code()
        }
    }
}
