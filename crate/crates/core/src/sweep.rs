//! Frequency planning with exact bin alignment, and paired d/q injection
//! runs restored from a common steady-state snapshot.

use std::fmt::Write as _;

use rayon::prelude::*;

use std::path::Path;

use num_complex::Complex64;

use crate::bench::{Testbench, CHANNELS};
use crate::error::{Error, Result};
use crate::extract::{bin_index, dft_bin, BinMode};
use crate::network::{Axis, InjectionKind, InjectionSpec};
use crate::plant::OperatingPoint;
use crate::pu::CMat2;
use crate::simcore::{self, Snapshot, Trace};

/// One planned tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    /// Bin-aligned frequency (Hz).
    pub freq: f64,
    /// Requested frequency before alignment (Hz).
    pub target: f64,
    /// Whole cycles in the analysis window.
    pub cycles: usize,
    /// Samples in the analysis window.
    pub n_samples: usize,
    /// Within 1 Hz of a multiple of the grid frequency, where the abc-side
    /// tone lands on or next to a grid harmonic.
    pub near_grid_harmonic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub entries: Vec<PlanEntry>,
    pub min_cycles: usize,
    pub magnitude: f64,
    pub kind: InjectionKind,
    /// Sampling rate of the recorded window (Hz).
    pub fs: f64,
}

impl SweepPlan {
    pub fn frequencies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.freq).collect()
    }
}

/// Log-spaced tones between `f_min` and `f_max`, each moved to the nearest
/// `k·fs/N` with `k = min_cycles` whole cycles in an `N`-sample window.
pub fn plan_frequencies(f_min: f64, f_max: f64, n_points: usize, fs: f64, min_cycles: usize) -> Result<SweepPlan> {
    if min_cycles < 10 {
        return Err(Error::invalid(format!("at least 10 cycles per window are needed, got {min_cycles}")));
    }
    if !(f_min >= 1.0 && f_max <= 200.0 && f_min <= f_max) {
        return Err(Error::invalid(format!(
            "frequency range must lie within 1..200 Hz, got {f_min}..{f_max}"
        )));
    }
    if !(fs > 2.0 * f_max) {
        return Err(Error::invalid(format!(
            "sampling rate {fs} Hz cannot represent {f_max} Hz (needs > {})",
            2.0 * f_max
        )));
    }
    let targets: Vec<f64> = match n_points {
        0 => Vec::new(),
        1 => vec![f_min],
        n => (0..n)
            .map(|k| f_min * (f_max / f_min).powf(k as f64 / (n - 1) as f64))
            .collect(),
    };
    let mut entries: Vec<PlanEntry> = Vec::with_capacity(targets.len());
    for target in targets {
        let mut cycles = min_cycles;
        let entry = loop {
            let n = (cycles as f64 * fs / target).round().max(1.0) as usize;
            let freq = cycles as f64 * fs / n as f64;
            let clash = entries.last().is_some_and(|p| freq <= p.freq);
            if !clash {
                break PlanEntry {
                    freq,
                    target,
                    cycles,
                    n_samples: n,
                    near_grid_harmonic: near_grid_harmonic(freq),
                };
            }
            cycles += 1;
            if cycles > 100 * min_cycles {
                return Err(Error::invalid(format!("cannot place {target} Hz on a distinct bin")));
            }
        };
        entries.push(entry);
    }
    Ok(SweepPlan {
        entries,
        min_cycles,
        magnitude: 0.0,
        kind: InjectionKind::SeriesVoltage,
        fs,
    })
}

/// Same log-spaced tones left where they fall: the window holds
/// `min_cycles` nominal cycles but the tone is generally off-bin.
pub fn plan_off_bin(f_min: f64, f_max: f64, n_points: usize, fs: f64, min_cycles: usize) -> Result<SweepPlan> {
    let mut plan = plan_frequencies(f_min, f_max, n_points, fs, min_cycles)?;
    for e in &mut plan.entries {
        e.freq = e.target;
        e.n_samples = (min_cycles as f64 * fs / e.target).round() as usize;
        e.cycles = min_cycles;
        e.near_grid_harmonic = near_grid_harmonic(e.freq);
    }
    Ok(plan)
}

fn near_grid_harmonic(f: f64) -> bool {
    let m = (f / crate::pu::F_NOMINAL).round();
    m >= 1.0 && (f - m * crate::pu::F_NOMINAL).abs() < 1.0
}

/// Run-time settings shared by every injection of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub kind: InjectionKind,
    pub magnitude: f64,
    /// Minimum time between injection start and the analysis window (s).
    pub settle: f64,
    /// Integration steps per recorded sample.
    pub decimation: usize,
    /// Ratio of the 2f line to the f line above which a run is flagged.
    pub harmonic_threshold: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            kind: InjectionKind::SeriesVoltage,
            magnitude: 0.01,
            settle: 2.0,
            decimation: 10,
            harmonic_threshold: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub spec: InjectionSpec,
    /// The analysis window only.
    pub trace: Trace,
    /// Largest 2f/f amplitude ratio over the measured channels.
    pub harmonic_ratio: f64,
}

impl RunResult {
    pub fn nonlinear(&self, threshold: f64) -> bool {
        self.harmonic_ratio > threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub freq: f64,
    pub axis: Axis,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutcome {
    /// Ordered by frequency, then d before q.
    pub results: Vec<RunResult>,
    pub failures: Vec<RunFailure>,
}

impl SweepOutcome {
    /// Results whose frequency has both axes, failures excluded.
    pub fn complete(&self) -> Vec<RunResult> {
        let bad: Vec<u64> = self.failures.iter().map(|f| f.freq.to_bits()).collect();
        self.results
            .iter()
            .filter(|r| !bad.contains(&r.spec.freq.to_bits()))
            .cloned()
            .collect()
    }
}

/// Time from injection start to the analysis window.
pub fn settle_time(freq: f64, settings: &RunSettings) -> f64 {
    settings.settle.max(2.0 / freq)
}

/// One injection restored from `snap`, returning the analysis window.
pub fn execute_run(snap: &Snapshot<Testbench>, entry: &PlanEntry, axis: Axis, settings: &RunSettings) -> Result<RunResult> {
    let dt = snap.config.dt;
    let dec = settings.decimation.max(1);
    let settle = settle_time(entry.freq, settings);
    let settle_steps = (settle / dt).ceil() as usize;
    let window = entry.n_samples as f64 * dt * dec as f64;
    let mut state = snap.restore();
    let spec = InjectionSpec::new(settings.kind, axis, entry.freq, settings.magnitude, state.t, settle + window + dt * dec as f64);
    spec.validate()?;
    let bench = Testbench {
        injection: Some(spec),
        ..snap.system.clone()
    };
    simcore::simulate_steps(&bench, &mut state, dt, settle_steps, dec, false)?;
    let trace = simcore::record_samples(&bench, &mut state, dt, entry.n_samples, dec)?;
    let harmonic_ratio = harmonic_ratio(&trace, entry.freq);
    Ok(RunResult {
        spec,
        trace,
        harmonic_ratio,
    })
}

/// `max |X(2f)| / max |X(f)|` over voltage and current channels.
pub fn harmonic_ratio(trace: &Trace, freq: f64) -> f64 {
    let n = trace.len();
    let Ok(k) = bin_index(freq, n, trace.sample_rate(), BinMode::Nearest) else {
        return 0.0;
    };
    if 2 * k >= n / 2 {
        return 0.0;
    }
    let mut fund: f64 = 0.0;
    let mut harm: f64 = 0.0;
    for name in ["v_d", "v_q", "i_d", "i_q"] {
        if let Some(x) = trace.channel(name) {
            fund = fund.max(dft_bin(x, k).norm());
            harm = harm.max(dft_bin(x, 2 * k).norm());
        }
    }
    if fund == 0.0 {
        0.0
    } else {
        harm / fund
    }
}

/// d and q runs for one planned tone.
pub fn execute_pair(snap: &Snapshot<Testbench>, entry: &PlanEntry, settings: &RunSettings) -> Result<(RunResult, RunResult)> {
    Ok((
        execute_run(snap, entry, Axis::D, settings)?,
        execute_run(snap, entry, Axis::Q, settings)?,
    ))
}

/// Every (tone, axis) job on a pool of `jobs` workers (0 = all cores).
pub fn execute_sweep(snap: &Snapshot<Testbench>, plan: &SweepPlan, settings: &RunSettings, jobs: usize) -> Result<SweepOutcome> {
    let work: Vec<(PlanEntry, Axis)> = plan
        .entries
        .iter()
        .flat_map(|e| [(*e, Axis::D), (*e, Axis::Q)])
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<Result<RunResult>> = pool.install(|| {
        work.par_iter()
            .map(|(e, axis)| execute_run(snap, e, *axis, settings))
            .collect()
    });
    let mut out = SweepOutcome::default();
    for ((e, axis), r) in work.iter().zip(runs) {
        match r {
            Ok(r) => {
                if r.nonlinear(settings.harmonic_threshold) {
                    log::warn!(
                        "{} Hz {}-axis: 2f line at {:.2}% of the fundamental; response may be nonlinear",
                        e.freq,
                        axis.as_str(),
                        100.0 * r.harmonic_ratio
                    );
                }
                out.results.push(r)
            }
            Err(err) => {
                log::warn!("{} Hz {}-axis run failed: {err}", e.freq, axis.as_str());
                out.failures.push(RunFailure {
                    freq: e.freq,
                    axis: *axis,
                    message: err.to_string(),
                });
            }
        }
    }
    Ok(out)
}

pub const MANIFEST_HEADER: &str = "freq_hz,axis,kind,magnitude_pu,n_samples,status";

/// Manifest rows for a finished sweep; failed runs keep their row.
pub fn manifest_csv(plan: &SweepPlan, outcome: &SweepOutcome, settings: &RunSettings) -> String {
    let mut s = String::from(MANIFEST_HEADER);
    s.push('\n');
    for e in &plan.entries {
        for axis in [Axis::D, Axis::Q] {
            let failed = outcome
                .failures
                .iter()
                .any(|f| f.freq.to_bits() == e.freq.to_bits() && f.axis == axis);
            let status = if failed {
                "diverged".to_string()
            } else {
                let nl = outcome
                    .results
                    .iter()
                    .find(|r| r.spec.freq.to_bits() == e.freq.to_bits() && r.spec.axis == axis)
                    .is_some_and(|r| r.nonlinear(settings.harmonic_threshold));
                if nl { "ok-nonlinear" } else { "ok" }.to_string()
            };
            writeln!(
                s,
                "{:e},{},{},{:e},{},{}",
                e.freq,
                axis.as_str(),
                settings.kind.as_str(),
                settings.magnitude,
                e.n_samples,
                status
            )
            .unwrap();
        }
    }
    s
}

/// Write `manifest.csv` and `traces/run_NNNN.csv` (one per manifest row,
/// numbered from 0) under `dir`.
pub fn write_run_store(dir: &Path, plan: &SweepPlan, outcome: &SweepOutcome, settings: &RunSettings) -> Result<()> {
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces)?;
    std::fs::write(dir.join("manifest.csv"), manifest_csv(plan, outcome, settings))?;
    let mut row = 0;
    for e in &plan.entries {
        for axis in [Axis::D, Axis::Q] {
            if let Some(r) = outcome
                .results
                .iter()
                .find(|r| r.spec.freq.to_bits() == e.freq.to_bits() && r.spec.axis == axis)
            {
                let f = std::fs::File::create(traces.join(format!("run_{row:04}.csv")))?;
                r.trace.write_csv(std::io::BufWriter::new(f))?;
            }
            row += 1;
        }
    }
    Ok(())
}

/// Successful runs of a run store, in manifest order.
pub fn read_run_store(dir: &Path) -> Result<Vec<RunResult>> {
    let path = dir.join("manifest.csv");
    let origin = path.display().to_string();
    let text = std::fs::read_to_string(&path)?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.clone(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
        _ => return Err(perr(1, format!("expected header `{MANIFEST_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (row, (k, line)) in lines.filter(|(_, l)| !l.trim().is_empty()).enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 6 {
            return Err(perr(k + 1, format!("expected 6 fields, got {}", f.len())));
        }
        if f[5] == "diverged" {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(k + 1, format!("`{s}`: {e}")));
        let freq = num(f[0])?;
        let axis = Axis::parse(f[1]).ok_or_else(|| perr(k + 1, format!("unknown axis `{}`", f[1])))?;
        let kind = InjectionKind::parse(f[2]).ok_or_else(|| perr(k + 1, format!("unknown kind `{}`", f[2])))?;
        let magnitude = num(f[3])?;
        let tpath = dir.join("traces").join(format!("run_{row:04}.csv"));
        let file = std::fs::File::open(&tpath)?;
        let trace = Trace::read_csv(std::io::BufReader::new(file), &tpath.display().to_string())?;
        let duration = trace.len() as f64 / trace.sample_rate();
        let spec = InjectionSpec::new(kind, axis, freq, magnitude, trace.t0, duration);
        let harmonic_ratio = harmonic_ratio(&trace, freq);
        out.push(RunResult {
            spec,
            trace,
            harmonic_ratio,
        });
    }
    Ok(out)
}

/// Analysis window that a device with admittance `y(f)` would produce at
/// the operating point `op` when the terminal voltage carries a tone of
/// `magnitude` on `axis`. The measurement frame stays on the grid.
pub fn synthetic_run(y: &dyn Fn(f64) -> CMat2, entry: &PlanEntry, axis: Axis, magnitude: f64, fs: f64, op: &OperatingPoint) -> RunResult {
    let w = 2.0 * std::f64::consts::PI * entry.freq;
    let mut dv = [Complex64::new(0.0, 0.0); 2];
    dv[axis.index()] = Complex64::new(magnitude, 0.0);
    let yv = y(entry.freq);
    let di = [yv[(0, 0)] * dv[0] + yv[(0, 1)] * dv[1], yv[(1, 0)] * dv[0] + yv[(1, 1)] * dv[1]];
    let names: Vec<String> = CHANNELS.iter().map(|s| s.to_string()).collect();
    let mut trace = Trace::with_capacity(0.0, 1.0 / fs, names, entry.n_samples);
    let i0 = [-op.p / op.v_t, op.q / op.v_t];
    for n in 0..entry.n_samples {
        let e = Complex64::from_polar(1.0, w * n as f64 / fs);
        let v = [op.v_t + (dv[0] * e).re, (dv[1] * e).re];
        let i = [i0[0] + (di[0] * e).re, i0[1] + (di[1] * e).re];
        let (p, q) = crate::plant::power(v, [-i[0], -i[1]]);
        trace.push_row(&[v[0], v[1], i[0], i[1], 0.0, crate::pu::F_NOMINAL, p, q, v[0], v[1]]);
    }
    let spec = InjectionSpec::new(InjectionKind::SeriesVoltage, axis, entry.freq, magnitude, 0.0, entry.n_samples as f64 / fs);
    RunResult {
        harmonic_ratio: harmonic_ratio(&trace, entry.freq),
        spec,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ten_hz_on_bin() {
        let p = plan_frequencies(10.0, 10.0, 1, 20_000.0, 10).unwrap();
        assert_eq!(p.entries[0].n_samples, 20_000);
        assert_eq!(p.entries[0].freq, 10.0);
    }

    #[test]
    fn awkward_frequency_adjusted() {
        let p = plan_frequencies(7.3, 7.3, 1, 20_000.0, 10).unwrap();
        let e = p.entries[0];
        assert!((e.freq - 7.3).abs() < 0.05);
        let k = e.freq * e.n_samples as f64 / 20_000.0;
        assert_relative_eq!(k, k.round(), epsilon = 1e-9);
    }

    #[test]
    fn nyquist_and_range_errors() {
        assert!(plan_frequencies(1.0, 200.0, 40, 300.0, 10).is_err());
        assert!(plan_frequencies(0.5, 200.0, 40, 2000.0, 10).is_err());
        assert!(plan_frequencies(1.0, 250.0, 40, 2000.0, 10).is_err());
        assert!(plan_frequencies(1.0, 200.0, 40, 2000.0, 5).is_err());
        assert!(plan_frequencies(1.0, 200.0, 0, 2000.0, 10).unwrap().entries.is_empty());
    }

    #[test]
    fn default_grid_is_strictly_increasing_and_coherent() {
        let fs = 2000.0;
        let p = plan_frequencies(1.0, 200.0, 40, fs, 10).unwrap();
        assert_eq!(p.entries.len(), 40);
        for w in p.entries.windows(2) {
            assert!(w[1].freq > w[0].freq);
        }
        for e in &p.entries {
            assert!(e.cycles >= 10);
            assert!(bin_index(e.freq, e.n_samples, fs, BinMode::Exact).is_ok());
        }
    }

    #[test]
    fn harmonic_neighbourhood_flagged() {
        assert!(near_grid_harmonic(60.4));
        assert!(near_grid_harmonic(119.5));
        assert!(!near_grid_harmonic(90.0));
        assert!(!near_grid_harmonic(10.0));
    }

    #[test]
    fn dense_low_band_bumps_cycles() {
        let p = plan_frequencies(1.0, 1.01, 5, 50.0 * 2.1, 10).unwrap();
        for w in p.entries.windows(2) {
            assert!(w[1].freq > w[0].freq);
        }
    }
}
