use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use admitlab::cli::{self, exit};
use admitlab::config::ExperimentConfig;
use admitlab::{Error, Result};

#[derive(Parser)]
#[command(version, about = "dq admittance measurement, fitting and weak-grid stability")]
struct Args {
    /// Experiment configuration (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory shared by all stages.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for sweeps and time-domain probes.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the injection sweep and store raw traces.
    Sweep,
    /// Build the admittance table from stored runs and fit it.
    ExtractFit,
    /// Compare the measured table with the linearized model.
    Validate,
    /// Closed-loop eigenvalues over the SCR grid.
    Stability {
        /// Confirm with time-domain simulation near the boundary.
        #[arg(long)]
        timedomain: bool,
        /// Simulate every SCR point instead of only those near the boundary.
        #[arg(long, requires = "timedomain")]
        all_points: bool,
    },
    /// Plain time-domain run of the configured plant.
    Simulate,
}

fn run(args: &Args) -> Result<i32> {
    let cfg = match &args.config {
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                match e {
                    Error::Io(_) => eprintln!("error: {}: {e}", p.display()),
                    _ => eprintln!("error: {e}"),
                }
                return Ok(exit::CONFIG);
            }
        },
        None => ExperimentConfig::default(),
    };
    std::fs::create_dir_all(&args.out)?;
    let jobs = if args.jobs == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        args.jobs
    };
    match args.command {
        Command::Sweep => {
            let o = cli::cmd_sweep(&cfg, &args.out, jobs)?;
            if !o.failures.is_empty() {
                eprintln!("{} of {} runs failed; partial results kept", o.failures.len(), o.failures.len() + o.results.len());
                return Ok(exit::RUNTIME);
            }
        }
        Command::ExtractFit => {
            let s = cli::cmd_extract_fit(&cfg, &args.out)?;
            println!("{} frequencies, order {}, rms {:.3e}", s.table.len(), s.model.order(), s.model.fit_rms);
        }
        Command::Validate => {
            let v = cli::cmd_validate(&cfg, &args.out)?;
            let c = &v.comparison;
            println!("max main-diagonal/dq error {:.3}%, max qd error {:.3}%", 100.0 * c.max_main(), 100.0 * c.max_element(2));
            if !v.passed {
                eprintln!("outside tolerance ({}% main, {}% qd)", 100.0 * cli::TOL_MAIN, 100.0 * cli::TOL_QD);
                return Ok(exit::VALIDATION);
            }
        }
        Command::Stability { timedomain, all_points } => {
            let s = cli::cmd_stability(&cfg, &args.out, timedomain, all_points, jobs)?;
            let show = |b: Option<f64>| b.map_or("none in range".to_string(), |b| format!("{b}"));
            println!("stability boundary: fitted {}, analytic {}", show(s.fitted_boundary()), show(s.analytic_boundary()));
            for (scr, diverged, g) in &s.timedomain {
                println!("  scr {scr}: {} (growth {g:.3e} 1/s)", if *diverged { "diverged" } else { "bounded" });
            }
        }
        Command::Simulate => {
            let p = cli::cmd_simulate(&cfg, &args.out)?;
            println!("{}", p.display());
        }
    }
    Ok(exit::OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
