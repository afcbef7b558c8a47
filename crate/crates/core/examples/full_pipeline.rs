//! Measure, fit, validate and assess stability from one configuration,
//! writing every artifact the command-line tool would.
//!
//! ```text
//! cargo run --release --example full_pipeline -- [config] [out-dir]
//! ```

use std::path::PathBuf;

use admitlab::cli;
use admitlab::config::ExperimentConfig;

fn main() -> admitlab::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::parse("grid.scr = 4\nsweep.n_points = 30\n", "built-in")?,
    };
    let out = PathBuf::from(args.next().unwrap_or_else(|| "pipeline_out".into()));
    std::fs::create_dir_all(&out)?;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());

    let sweep = cli::cmd_sweep(&cfg, &out, jobs)?;
    println!("sweep: {} runs, {} failed", sweep.results.len(), sweep.failures.len());

    let fit = cli::cmd_extract_fit(&cfg, &out)?;
    println!("fit: order {} at rms {:.2e}", fit.model.order(), fit.model.fit_rms);

    let v = cli::cmd_validate(&cfg, &out)?;
    println!(
        "validation: joint error {:.3}%, qd error {:.3}%, {}",
        100.0 * v.comparison.max_main(),
        100.0 * v.comparison.max_element(2),
        if v.passed { "within tolerance" } else { "OUT OF TOLERANCE" }
    );

    let st = cli::cmd_stability(&cfg, &out, true, false, jobs)?;
    println!("boundary: fitted {:?}, analytic {:?}", st.fitted_boundary(), st.analytic_boundary());
    for (scr, diverged, g) in st.timedomain {
        println!("  time domain at SCR {scr}: {} (growth {g:.3e} 1/s)", if diverged { "diverged" } else { "bounded" });
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
