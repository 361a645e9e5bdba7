use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gadd_cli::commands::{cmd_contraction, cmd_run, cmd_sweep_nfe, cmd_target_dump};
use gadd_cli::validate::{run_suite, Context, Fault};
use gadd_cli::GlobalOpts;

#[derive(Parser)]
#[command(name = "gadd", version, about = "Gibbs-corrected discrete diffusion experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the run seed; recorded in every output row.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `section.key=value` config override, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Also write an SVG chart, optionally at PATH.
    #[arg(long, global = true, num_args = 0..=1, value_name = "PATH")]
    chart: Option<Option<PathBuf>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured methods at the configured budgets.
    Run,
    /// Run the configured methods over a list of NFE budgets.
    SweepNfe {
        /// Comma-separated budgets; defaults to `sampler.nfe`.
        #[arg(long, value_delimiter = ',')]
        nfe: Vec<usize>,
    },
    /// Run the invariant suite.
    Validate {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// Spectral gap of the Gibbs corrector at one time or along the grid.
    Contraction {
        #[arg(long)]
        time: Option<f64>,
    },
    /// Write the configured target distribution as a Pmf file.
    TargetDump,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let g = cli.global;
    let opts = GlobalOpts { config: g.config, seed: g.seed, out: g.out, sets: g.sets, chart: g.chart };
    let result = match cli.command {
        Command::Run => cmd_run(&opts),
        Command::SweepNfe { nfe } => cmd_sweep_nfe(&opts, &nfe),
        Command::Contraction { time } => cmd_contraction(&opts, time),
        Command::TargetDump => cmd_target_dump(&opts),
        Command::Validate { inject_fault } => {
            let outcomes = run_suite(&Context { fault: inject_fault });
            for o in &outcomes {
                println!("{o}");
            }
            let failed: Vec<_> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            println!("{} checks, {} passed, {} failed", outcomes.len(), outcomes.len() - failed.len(), failed.len());
            if failed.is_empty() {
                return ExitCode::SUCCESS;
            }
            eprintln!("failed checks: {}", failed.join(", "));
            return ExitCode::from(1);
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
