use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aggdiff::app;
use aggdiff::config::{Mode, RunConfig};

#[derive(Parser)]
#[command(
    name = "aggdiff",
    version,
    about = "Follow-the-Leader particle simulator for aggregation-diffusion equations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the configuration in the mode it declares.
    Run(RunArgs),
    /// Self-convergence study over `[study] particles`.
    Converge(RunArgs),
    /// Print the admissibility report of the model and datum.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute diagnostics from a finished run directory.
    Metrics {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override `run.particles`.
    #[arg(long)]
    n: Option<usize>,
    /// Override `run.t_final`.
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Run twice with different worker counts and compare outputs bytewise.
    #[arg(long = "seed-check")]
    seed_check: bool,
}

fn load(args: &RunArgs) -> aggdiff::Result<RunConfig> {
    let mut cfg = app::load_config(&args.config)?;
    if let Some(n) = args.n {
        cfg.particles = n;
    }
    if let Some(t) = args.t_final {
        cfg.t_final = t;
        if cfg.integrator.max_step.is_some_and(|h| h > t) {
            cfg.integrator.max_step = None;
        }
    }
    // overrides go through the same checks as the file
    aggdiff::config::parse_config(&cfg.to_toml())
}

fn finish(outcome: aggdiff::Result<app::Outcome>) -> ExitCode {
    match outcome {
        Ok(o) => {
            print!("{}", o.summary);
            if o.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => finish(load(&args).and_then(|cfg| {
            if args.seed_check {
                app::seed_check(&cfg, &args.out)
            } else {
                app::execute(&cfg, &args.out)
            }
        })),
        Command::Converge(args) => finish(load(&args).and_then(|mut cfg| {
            cfg.mode = Mode::Converge;
            app::run_converge(&cfg, &args.out)
        })),
        Command::Validate { config } => {
            match app::load_config(&config).and_then(|c| app::validate_config(&c)) {
                Ok(report) => {
                    print!("{report}");
                    if report.is_admissible() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Metrics { out } => finish(app::recompute_metrics(&out)),
    }
}
