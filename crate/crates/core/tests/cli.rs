use std::path::Path;
use std::process::{Command, Output};

use admitlab::analytic::{freq_response, oracle_admittance};
use admitlab::config::ExperimentConfig;
use admitlab::network::Axis;
use admitlab::sweep::{synthetic_run, write_run_store, RunSettings, SweepOutcome};
use admitlab::pu::CMat2;
use admitlab::vfit::{auto_order_fit, RationalModel};
use nalgebra::Matrix2;
use num_complex::Complex64;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("test.cfg");
    std::fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_admitlab"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir)
        .arg("--jobs")
        .arg("1")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Run store a device with admittance `y` would produce under `cfg`.
fn synthetic_store(dir: &Path, cfg: &ExperimentConfig, y: &dyn Fn(f64) -> CMat2) {
    let plan = cfg.plan().unwrap();
    let mut outcome = SweepOutcome::default();
    for e in &plan.entries {
        for axis in [Axis::D, Axis::Q] {
            outcome
                .results
                .push(synthetic_run(y, e, axis, plan.magnitude, plan.fs, &cfg.operating));
        }
    }
    write_run_store(dir, &plan, &outcome, &RunSettings::default()).unwrap();
}

#[test]
fn zero_frequencies_gives_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "sweep.n_points = 0\n", &["sweep"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
    assert_eq!(m.lines().count(), 1);
}

#[test]
fn configuration_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "sweep.f_mni = 1\n", &["sweep"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("f_mni"));
    let o = run(dir.path(), "grid.scr = 4\ngrid.r_g = 0.1\n", &["sweep"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unstable_operating_point_fails_to_settle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "grid.scr = 1.3\nsweep.n_points = 2\nsim.settle_max = 3\n", &["sweep"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("steady"), "{}", stderr(&o));
}

#[test]
fn sweep_is_reproducible() {
    let cfg = "grid.scr = 4\nsweep.n_points = 4\nsweep.f_min = 5\nsweep.f_max = 50\nsweep.noise_sigma = 1e-5\nsweep.seed = 7\n";
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run(d.path(), cfg, &["sweep"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let files = ["manifest.csv", "traces/run_0000.csv", "traces/run_0007.csv"];
    for f in files {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    for d in [&a, &b] {
        let o = run(d.path(), cfg, &["extract-fit"]);
        assert!(code(&o) == 0, "{}", stderr(&o));
    }
    for f in ["admittance.csv", "model.txt", "fit_report.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

fn generator() -> RationalModel {
    let w = 2.0 * std::f64::consts::PI;
    let (p1, p2) = (Complex64::new(-3.0 * w, 8.0 * w), Complex64::new(-20.0 * w, 90.0 * w));
    let r1 = CMat2::new(c(2.0, 1.0), c(-0.5, 0.3), c(0.1, -0.2), c(1.5, 0.4)) * c(p1.norm(), 0.0);
    let r2 = CMat2::new(c(0.7, -0.2), c(0.4, 0.1), c(-0.3, 0.6), c(0.9, 0.0)) * c(p2.norm(), 0.0);
    RationalModel {
        poles: vec![p1, p1.conj(), p2, p2.conj()],
        residues: vec![r1, r1.map(|z| z.conj()), r2, r2.map(|z| z.conj())],
        d: Matrix2::zeros(),
        e: Matrix2::zeros(),
        fit_rms: 0.0,
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[test]
fn extract_fit_recovers_a_known_model() {
    let dir = tempfile::tempdir().unwrap();
    let text = "sweep.n_points = 30\nfit.rms_target = 1e-9\nfit.max_poles = 8\n";
    let cfg = ExperimentConfig::parse(text, "t").unwrap();
    let truth = generator();
    let y = |f: f64| truth.eval_hz(f);
    synthetic_store(dir.path(), &cfg, &y);

    let o = run(dir.path(), text, &["extract-fit"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = RationalModel::load(&dir.path().join("model.txt")).unwrap();
    assert_eq!(m.order(), 4);
    for p in &truth.poles {
        let best = m.poles.iter().map(|q| (q - p).norm() / p.norm()).fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "pole {p} recovered only to {best:e}");
    }
    let report = std::fs::read_to_string(dir.path().join("fit_report.txt")).unwrap();
    assert!(report.contains("selected_order = 4"), "{report}");
}

#[test]
fn missing_q_runs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let text = "sweep.n_points = 4\n";
    let cfg = ExperimentConfig::parse(text, "t").unwrap();
    let truth = oracle_admittance(&cfg.inverter, &cfg.operating).unwrap();
    synthetic_store(dir.path(), &cfg, &|f| truth.response2(f).unwrap());
    let manifest = dir.path().join("manifest.csv");
    let kept: Vec<String> = std::fs::read_to_string(&manifest)
        .unwrap()
        .lines()
        .enumerate()
        .map(|(k, l)| if k == 4 { l.replace(",ok", ",diverged") } else { l.to_string() })
        .collect();
    std::fs::write(&manifest, kept.join("\n")).unwrap();
    let o = run(dir.path(), text, &["extract-fit"]);
    assert_ne!(code(&o), 0);
    let f = cfg.plan().unwrap().entries[1].freq;
    assert!(stderr(&o).contains(&format!("{f}")), "{}", stderr(&o));
}

#[test]
fn validate_passes_on_oracle_table_and_flags_bad_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let y = oracle_admittance(&cfg.inverter, &cfg.operating).unwrap();
    let freqs = [1.0, 10.0, 100.0];
    let mut t = freq_response(&y, &freqs).unwrap();
    t.save(&dir.path().join("admittance.csv")).unwrap();
    let o = run(dir.path(), "", &["validate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cmp = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(cmp.contains("max_main 0e0"), "{cmp}");

    t.y[1][(0, 0)] *= 1.2;
    t.save(&dir.path().join("admittance.csv")).unwrap();
    assert_eq!(code(&run(dir.path(), "", &["validate"])), 1);
}

#[test]
fn stability_on_a_strong_grid_and_a_boundary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::default();
    let y = oracle_admittance(&cfg.inverter, &cfg.operating).unwrap();
    let freqs: Vec<f64> = (0..40).map(|k| 10f64.powf(2.3 * k as f64 / 39.0)).collect();
    let (m, _) = auto_order_fit(&freq_response(&y, &freqs).unwrap(), 1e-3, 10, &cfg.fit.options).unwrap();
    m.save(&dir.path().join("model.txt")).unwrap();

    let o = run(dir.path(), "stability.scr_min = 4\nstability.scr_max = 4\n", &["stability"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v = std::fs::read_to_string(dir.path().join("stability_fitted.csv")).unwrap();
    let rows: Vec<&str> = v.lines().skip(1).collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("4,6,true,"), "{}", rows[0]);

    let o = run(dir.path(), "", &["stability", "--timedomain"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("fitted 1.5, analytic 1.5"), "{out}");
    let td = std::fs::read_to_string(dir.path().join("timedomain.csv")).unwrap();
    assert!(td.contains("\n1.4,true,"), "{td}");
    assert!(td.contains("\n1.5,false,"), "{td}");
    assert!(dir.path().join("eigenvalues/analytic_scr_1p300.csv").exists());
}

#[test]
fn malformed_model_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("model.txt"), "order 2\npole -1 0\n").unwrap();
    let o = run(dir.path(), "", &["stability"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn simulate_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "grid.scr = 4\nsimulate.t_end = 0.2\nsimulate.switch_time = 0.1\nsimulate.switch_scr = 2\n", &["simulate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = std::fs::read_to_string(dir.path().join("simulation.csv")).unwrap();
    assert!(t.starts_with("t,v_d,v_q,"));
    // header plus one row every 10 steps of 50 us
    assert_eq!(t.lines().count(), 1 + 400);
}

#[test]
fn recipes_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("recipes");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "cfg") {
            ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 10);
}
