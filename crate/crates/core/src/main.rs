use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use refract::cli::{
    cmd_contour, cmd_oracle, cmd_solve, cmd_sweep, load_config, out_dir, CliError, OracleArgs,
    SweepAxis,
};

#[derive(Parser)]
#[command(
    name = "refract",
    about = "Exercise boundaries and values for repeated irreversible investments",
    version
)]
struct Cli {
    /// Scenario file; built-in reference parameters when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for CSV artifacts
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the configured convergence tolerance
    #[arg(long, global = true)]
    eps: Option<f64>,

    /// Override the configured iteration cap
    #[arg(long, global = true)]
    k_max: Option<usize>,

    /// Worker threads for sweeps and contours (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full iteration and write boundaries.csv and value.csv
    Solve,
    /// Re-solve across one parameter axis and write sweep.csv
    Sweep {
        /// One of: alpha, sigma, T, nu, I, c
        #[arg(long)]
        axis: String,
        /// Axis values, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Critical-cost surface against the configured benchmark project
    Contour {
        /// Small-project lifetimes, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        lifetimes: Vec<f64>,
        /// Small-project lead times, comma separated
        #[arg(long, value_delimiter = ',', required = true)]
        lead_times: Vec<f64>,
        /// Bisection bracket width on the critical cost
        #[arg(long, default_value_t = 0.01)]
        tol: f64,
    },
    /// Replay solved thresholds through the path simulator
    Oracle {
        /// How many of the solved exercise rights to simulate
        #[arg(long, default_value_t = 1)]
        rights: usize,
        /// Starting price
        #[arg(long, default_value_t = 0.5)]
        start: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Simulation step (default: lifetime / 100)
        #[arg(long)]
        time_step: Option<f64>,
        /// Horizon after the last right becomes available (default: 40 lifetimes)
        #[arg(long)]
        horizon: Option<f64>,
        /// Average each path with its mirrored twin
        #[arg(long, default_value_t = false)]
        antithetic: bool,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(eps) = cli.eps {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(CliError::Config(format!(
                "--eps must be positive, got {eps}"
            )));
        }
        cfg.solver.eps_target = eps;
    }
    if let Some(k_max) = cli.k_max {
        if k_max < 1 {
            return Err(CliError::Config("--k-max must be at least 1".into()));
        }
        cfg.solver.k_max = k_max;
    }
    let out = out_dir(cli.out);

    match cli.command {
        Command::Solve => cmd_solve(&cfg, &out),
        Command::Sweep { axis, values } => {
            let axis = SweepAxis::parse(&axis).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown axis `{axis}`; expected alpha, sigma, T, nu, I, or c"
                ))
            })?;
            cmd_sweep(&cfg, axis, &values, &out)
        }
        Command::Contour {
            lifetimes,
            lead_times,
            tol,
        } => cmd_contour(&cfg, &lifetimes, &lead_times, tol, &out),
        Command::Oracle {
            rights,
            start,
            paths,
            seed,
            time_step,
            horizon,
            antithetic,
        } => cmd_oracle(
            &cfg,
            &OracleArgs {
                rights,
                start,
                paths,
                seed,
                time_step,
                horizon,
                antithetic,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version are successful exits; usage mistakes are
            // configuration errors like any other
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
