//! The pipeline stages behind the `admitlab` binary. Each stage reads its
//! inputs from and writes its artifacts into one output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analytic::{freq_response, oracle_admittance};
use crate::bench::{Device, GridSwitch, Kick, Testbench};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::extract::{add_measurement_noise, build_table, compare, AdmittanceTable, Comparison};
use crate::network::GridParams;
use crate::simcore::{self, SimConfig, Snapshot};
use crate::stability::{self, ProbeSettings, StabilityVerdict};
use crate::statespace::StateSpaceModel;
use crate::sweep::{execute_sweep, read_run_store, write_run_store, SweepOutcome};
use crate::vfit::{auto_order_fit, fit_error, realize_state_space, FitReport, RationalModel};

/// Relative error limits checked by `validate`.
pub const TOL_MAIN: f64 = 0.02;
pub const TOL_QD: f64 = 0.10;

pub const TABLE_FILE: &str = "admittance.csv";
pub const MODEL_FILE: &str = "model.txt";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Parse { .. } | Error::Infeasible(_) => exit::CONFIG,
        _ => exit::RUNTIME,
    }
}

fn sim_config(cfg: &ExperimentConfig, decimation: usize) -> SimConfig {
    SimConfig {
        record_decimation: decimation,
        ..cfg.sim
    }
}

/// The grid of the configuration with its source re-solved for the
/// configured operating point.
pub fn dispatched_grid(cfg: &ExperimentConfig) -> Result<GridParams> {
    cfg.grid.params()?.dispatched(&cfg.operating)
}

/// Steady snapshot of the measurement bench described by `cfg`.
pub fn measurement_snapshot(cfg: &ExperimentConfig) -> Result<Snapshot<Testbench>> {
    let bench = Testbench::new(Device::inverter(cfg.inverter, &cfg.operating), dispatched_grid(cfg)?)
        .with_probe(cfg.probe_config());
    bench.settle(&cfg.operating, sim_config(cfg, cfg.sweep.run.decimation), cfg.settle)
}

/// Snapshot, plan and run every injection; noise (if configured) is added
/// to each recorded window with a per-run seed.
pub fn run_sweep(cfg: &ExperimentConfig, jobs: usize) -> Result<SweepOutcome> {
    let plan = cfg.plan()?;
    if plan.entries.is_empty() {
        return Ok(SweepOutcome::default());
    }
    let snap = measurement_snapshot(cfg)?;
    let mut out = execute_sweep(&snap, &plan, &cfg.sweep.run, jobs)?;
    if cfg.sweep.noise_sigma > 0.0 {
        for (k, r) in out.results.iter_mut().enumerate() {
            add_measurement_noise(&mut r.trace, cfg.sweep.noise_sigma, cfg.sweep.seed.wrapping_add(k as u64));
        }
    }
    Ok(out)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<SweepOutcome> {
    let outcome = run_sweep(cfg, jobs)?;
    write_run_store(out, &cfg.plan()?, &outcome, &cfg.sweep.run)?;
    log::info!(
        "{} runs written to {}, {} failed",
        outcome.results.len(),
        out.display(),
        outcome.failures.len()
    );
    Ok(outcome)
}

pub struct FitSummary {
    pub table: AdmittanceTable,
    pub model: RationalModel,
    pub report: FitReport,
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![a];
    }
    (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
}

/// Table from the run store, order-selected fit, and their artifacts.
pub fn cmd_extract_fit(cfg: &ExperimentConfig, out: &Path) -> Result<FitSummary> {
    let runs = read_run_store(out)?;
    let mut table = build_table(&runs, cfg.extract)?;
    table.meta.set("probe_variant", cfg.probe.variant.as_str());
    table.save(&out.join(TABLE_FILE))?;
    let (model, report) = auto_order_fit(&table, cfg.fit.rms_target, cfg.fit.max_poles, &cfg.fit.options)?;
    model.save(&out.join(MODEL_FILE))?;
    std::fs::write(out.join("fit_report.txt"), report.to_text())?;
    std::fs::write(out.join("poles.csv"), stability::eigenvalues_csv(&model.poles))?;
    let (lo, hi) = (table.freqs[0], *table.freqs.last().unwrap());
    let dense = crate::vfit::sample_model(&model, &logspace(lo, hi, 400))?;
    dense.write_csv(std::fs::File::create(out.join("fit_response.csv"))?)?;
    if report.underfit {
        log::warn!(
            "fit did not reach rms {:e}; best order {} at {:e}",
            cfg.fit.rms_target,
            report.selected,
            model.fit_rms
        );
    }
    debug_assert!((fit_error(&model, &table) - model.fit_rms).abs() <= 1e-12 + 1e-9 * model.fit_rms);
    Ok(FitSummary { table, model, report })
}

pub struct ValidateSummary {
    pub comparison: Comparison,
    pub passed: bool,
}

/// Measured table against the linearized model at the same frequencies.
pub fn cmd_validate(cfg: &ExperimentConfig, out: &Path) -> Result<ValidateSummary> {
    let table = AdmittanceTable::load(&out.join(TABLE_FILE))?;
    let y = oracle_admittance(&cfg.inverter, &cfg.operating)?;
    let oracle = freq_response(&y, &table.freqs)?;
    oracle.write_csv(std::fs::File::create(out.join("oracle.csv"))?)?;
    std::fs::write(out.join("oracle_poles.csv"), stability::eigenvalues_csv(&y.eigenvalues()))?;
    let comparison = compare(&table, &oracle)?;
    let mut csv = comparison.to_csv_string();
    writeln!(
        csv,
        "# max_main {:e} max_qd {:e} mean_fro {:e}",
        comparison.max_main(),
        comparison.max_element(2),
        comparison.mean_frobenius()
    )
    .unwrap();
    std::fs::write(out.join("comparison.csv"), csv)?;
    let passed = comparison.within(TOL_MAIN, TOL_QD);
    Ok(ValidateSummary { comparison, passed })
}

pub struct StabilitySummary {
    pub fitted: Vec<StabilityVerdict>,
    pub analytic: Vec<StabilityVerdict>,
    /// `(scr, diverged, growth_rate)` of each time-domain probe.
    pub timedomain: Vec<(f64, bool, f64)>,
}

impl StabilitySummary {
    pub fn fitted_boundary(&self) -> Option<f64> {
        stability::boundary(&self.fitted)
    }

    pub fn analytic_boundary(&self) -> Option<f64> {
        stability::boundary(&self.analytic)
    }
}

fn scr_tag(scr: f64) -> String {
    format!("{scr:.3}").replace('.', "p")
}

fn write_verdicts(dir: &Path, name: &str, v: &[StabilityVerdict]) -> Result<()> {
    std::fs::write(dir.join(format!("stability_{name}.csv")), stability::verdicts_csv(v))?;
    let eig = dir.join("eigenvalues");
    std::fs::create_dir_all(&eig)?;
    for x in v {
        std::fs::write(
            eig.join(format!("{name}_scr_{}.csv", scr_tag(x.scr))),
            stability::eigenvalues_csv(&x.eigenvalues),
        )?;
    }
    Ok(())
}

/// Settled bench on the grid the time-domain probes start from.
pub fn stability_snapshot(cfg: &ExperimentConfig) -> Result<Snapshot<Testbench>> {
    let grid = GridParams::from_scr(cfg.stability.scr_initial, cfg.stability.x_over_r)?.dispatched(&cfg.operating)?;
    let bench = Testbench::new(Device::inverter(cfg.inverter, &cfg.operating), grid);
    bench.settle(&cfg.operating, sim_config(cfg, 1), cfg.settle)
}

/// SCR sweep of the fitted model and the linearized model; with
/// `timedomain`, simulate the grid points next to the fitted boundary (or
/// every point when `all_points`).
pub fn cmd_stability(cfg: &ExperimentConfig, out: &Path, timedomain: bool, all_points: bool, jobs: usize) -> Result<StabilitySummary> {
    let model = RationalModel::load(&out.join(MODEL_FILE))?;
    let fitted_ss = realize_state_space(&model)?;
    let analytic_ss = oracle_admittance(&cfg.inverter, &cfg.operating)?;
    let st = &cfg.stability;
    let scrs = stability::scr_grid(st.scr_min, st.scr_max, st.scr_step)?;
    let fitted = stability::scr_sweep(&fitted_ss, &scrs, st.x_over_r)?;
    let analytic = stability::scr_sweep(&analytic_ss, &scrs, st.x_over_r)?;
    write_verdicts(out, "fitted", &fitted)?;
    write_verdicts(out, "analytic", &analytic)?;

    let mut summary = StabilitySummary {
        fitted,
        analytic,
        timedomain: Vec::new(),
    };
    if timedomain {
        let targets: Vec<f64> = if all_points {
            scrs.clone()
        } else {
            match summary.fitted_boundary() {
                Some(b) => scrs.iter().copied().filter(|s| (s - b).abs() <= 1.5 * st.scr_step).collect(),
                None => Vec::new(),
            }
        };
        summary.timedomain = timedomain_points(cfg, &targets, Some(out), jobs)?;
        let mut csv = String::from("scr,diverged,growth_rate\n");
        for (s, d, g) in &summary.timedomain {
            writeln!(csv, "{s},{d},{g:e}").unwrap();
        }
        std::fs::write(out.join("timedomain.csv"), csv)?;
    }
    Ok(summary)
}

/// Time-domain probes at each SCR (x/r from the config), optionally saving
/// each trace under `dir/timedomain/`.
pub fn timedomain_points(cfg: &ExperimentConfig, scrs: &[f64], dir: Option<&Path>, jobs: usize) -> Result<Vec<(f64, bool, f64)>> {
    use rayon::prelude::*;
    let snap = stability_snapshot(cfg)?;
    let settings = ProbeSettings {
        duration: cfg.stability.duration,
        ..ProbeSettings::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<(f64, stability::TimeDomainVerdict)>> = pool.install(|| {
        scrs.par_iter()
            .map(|&s| {
                let g = GridParams::from_scr(s, cfg.stability.x_over_r)?;
                Ok((s, stability::timedomain_stability_probe(&snap, &g, &cfg.operating, &settings)?))
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in results {
        let (s, v) = r?;
        if let Some(d) = dir {
            let td = d.join("timedomain");
            std::fs::create_dir_all(&td)?;
            v.trace
                .write_csv(std::io::BufWriter::new(std::fs::File::create(td.join(format!("scr_{}.csv", scr_tag(s))))?))?;
        }
        out.push((s, v.diverged, v.growth_rate));
    }
    Ok(out)
}

/// Plain time-domain run of the configured plant, with an optional grid
/// switch (re-dispatched source plus a small kick).
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let mut bench = Testbench::new(Device::inverter(cfg.inverter, &cfg.operating), dispatched_grid(cfg)?);
    let sm = &cfg.simulate;
    if let (Some(t), Some(scr)) = (sm.switch_time, sm.switch_scr) {
        let x_over_r = match cfg.grid {
            crate::config::GridSpec::Scr { x_over_r, .. } => x_over_r,
            _ => cfg.stability.x_over_r,
        };
        let grid = GridParams::from_scr(scr, x_over_r)?.dispatched(&cfg.operating)?;
        let p = ProbeSettings::default();
        bench.switch = Some(GridSwitch { t, grid });
        bench.kick = Some(Kick {
            t_start: t,
            duration: p.kick_duration,
            magnitude: p.kick_magnitude,
        });
    }
    let mut state = bench.initial_state(&cfg.operating)?;
    let trace = simcore::simulate(&bench, &mut state, cfg.sim.dt, sm.t_end, sm.decimation, true)?.expect("recording requested");
    std::fs::create_dir_all(out)?;
    let path = out.join("simulation.csv");
    trace.write_csv(std::io::BufWriter::new(std::fs::File::create(&path)?))?;
    Ok(path)
}

/// Fitted model realized as a state-space system.
pub fn load_fitted(out: &Path) -> Result<StateSpaceModel> {
    realize_state_space(&RationalModel::load(&out.join(MODEL_FILE))?)
}
