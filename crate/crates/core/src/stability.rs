//! Weak-grid stability: the inverter admittance closed through the grid
//! impedance, eigenvalue verdicts over SCR, and a time-domain check.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::bench::{GridSwitch, Kick, Testbench};
use crate::error::{Error, Result};
use crate::network::GridParams;
use crate::plant::OperatingPoint;
use crate::pu::{CMat2, OMEGA0};
use crate::simcore::{self, Observe, Snapshot};
use crate::statespace::StateSpaceModel;

/// Eigenvalues with real part above `-STABILITY_EPS` count as unstable.
pub const STABILITY_EPS: f64 = 1e-6;

/// `Z_g(s) = (R_g + s·L_g/ω0)·I + L_g·J` in the grid dq frame.
pub fn grid_impedance(grid: &GridParams, s: Complex64) -> CMat2 {
    let zr = Complex64::new(grid.r_g, 0.0) + s * (grid.l_g / OMEGA0);
    let x = Complex64::new(grid.l_g, 0.0);
    CMat2::new(zr, -x, x, zr)
}

/// The grid branch as an admittance: input terminal-minus-source voltage,
/// output branch current. Two states, eigenvalues `−(R_g/L_g)·ω0 ± jω0`.
pub fn grid_admittance_model(grid: &GridParams) -> Result<StateSpaceModel> {
    if !(grid.l_g > 0.0) {
        return Err(Error::invalid("grid branch needs L_g > 0 to carry states"));
    }
    let k = OMEGA0 / grid.l_g;
    let a = DMatrix::from_row_slice(2, 2, &[-k * grid.r_g, k * grid.l_g, -k * grid.l_g, -k * grid.r_g]);
    StateSpaceModel::new(a, DMatrix::identity(2, 2) * k, DMatrix::identity(2, 2), DMatrix::zeros(2, 2))
}

fn j2() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])
}

/// Close `y` (admittance, load convention) through the grid impedance:
/// `v_t = v_inj − Z_g·Y·v_t`. Input `v_inj`, output `v_t`; the response is
/// `(I + Z_g·Y)⁻¹`.
///
/// The grid inductor differentiates the admittance output, so with
/// `L_g > 0` the admittance must be strictly proper.
pub fn close_loop(y: &StateSpaceModel, grid: &GridParams) -> Result<StateSpaceModel> {
    if y.n_inputs() != 2 || y.n_outputs() != 2 {
        return Err(Error::invalid("admittance must be 2×2"));
    }
    let rl = DMatrix::identity(2, 2) * grid.r_g + j2() * grid.l_g;
    let tau = grid.l_g / OMEGA0;
    let eye = DMatrix::<f64>::identity(2, 2);
    let (cg, dg) = if tau > 0.0 {
        if y.d.iter().any(|v| *v != 0.0) {
            return Err(Error::Improper);
        }
        (&rl * &y.c + (&y.c * &y.a) * tau, (&y.c * &y.b) * tau)
    } else {
        (&rl * &y.c, &rl * &y.d)
    };
    let m = (&eye + &dg)
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("algebraic loop I + Z_g·D_Y is singular".into()))?;
    let a = &y.a - &y.b * &m * &cg;
    let b = &y.b * &m;
    let c = -(&m * &cg);
    StateSpaceModel::new(a, b, c, m)
}

/// `(I + Z_g(s)·Y(s))⁻¹` from frequency responses directly.
pub fn closed_loop_direct(y: &StateSpaceModel, grid: &GridParams, f: f64) -> Result<CMat2> {
    let s = Complex64::new(0.0, 2.0 * PI * f);
    let yv = y.response2(f)?;
    (CMat2::identity() + grid_impedance(grid, s) * yv)
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("I + Z_g·Y singular at {f} Hz")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub scr: f64,
    pub x_over_r: f64,
    pub stable: bool,
    pub max_re_eig: f64,
    /// |Im| of the rightmost eigenvalue, in Hz.
    pub dominant_freq_hz: f64,
    pub eigenvalues: Vec<Complex64>,
}

/// Verdict from an eigenvalue set.
pub fn verdict_from(scr: f64, x_over_r: f64, eigenvalues: Vec<Complex64>) -> StabilityVerdict {
    let dom = eigenvalues.iter().copied().max_by(|a, b| a.re.total_cmp(&b.re));
    let max_re = dom.map_or(f64::NEG_INFINITY, |e| e.re);
    StabilityVerdict {
        scr,
        x_over_r,
        stable: max_re < -STABILITY_EPS,
        max_re_eig: max_re,
        dominant_freq_hz: dom.map_or(0.0, |e| e.im.abs() / (2.0 * PI)),
        eigenvalues,
    }
}

pub fn assess(y: &StateSpaceModel, scr: f64, x_over_r: f64) -> Result<StabilityVerdict> {
    let grid = GridParams::from_scr(scr, x_over_r)?;
    let cl = close_loop(y, &grid)?;
    Ok(verdict_from(scr, x_over_r, cl.eigenvalues()))
}

/// One verdict per SCR, in the order given.
pub fn scr_sweep(y: &StateSpaceModel, scrs: &[f64], x_over_r: f64) -> Result<Vec<StabilityVerdict>> {
    scrs.iter().map(|&s| assess(y, s, x_over_r)).collect()
}

/// `start, start + step, …` up to `stop`, rounded to remove drift.
pub fn scr_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && start > 0.0 && stop >= start) {
        return Err(Error::invalid(format!("bad SCR grid {start}..{stop} step {step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Lowest SCR of the stable region that extends to the top of the sweep,
/// when the sweep also contains an unstable point below it.
pub fn boundary(verdicts: &[StabilityVerdict]) -> Option<f64> {
    let mut v: Vec<&StabilityVerdict> = verdicts.iter().collect();
    v.sort_by(|a, b| a.scr.total_cmp(&b.scr));
    let k = v.iter().rposition(|x| !x.stable)?;
    v.get(k + 1).map(|x| x.scr)
}

pub const VERDICT_HEADER: &str = "scr,x_over_r,stable,max_re_eig,dominant_freq_hz";

pub fn verdicts_csv(verdicts: &[StabilityVerdict]) -> String {
    let mut s = String::from(VERDICT_HEADER);
    s.push('\n');
    for v in verdicts {
        writeln!(
            s,
            "{},{},{},{:e},{:e}",
            v.scr, v.x_over_r, v.stable, v.max_re_eig, v.dominant_freq_hz
        )
        .unwrap();
    }
    s
}

pub fn eigenvalues_csv(ev: &[Complex64]) -> String {
    let mut s = String::from("re,im,freq_hz,damping_ratio\n");
    for e in ev {
        let zeta = if e.norm() > 0.0 { -e.re / e.norm() } else { 1.0 };
        writeln!(s, "{:e},{:e},{:e},{:e}", e.re, e.im, e.im / (2.0 * PI), zeta).unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    /// Time after the snapshot at which the grid switches (s).
    pub switch_delay: f64,
    /// Simulated time after the switch (s); at least 5.
    pub duration: f64,
    /// Trailing window for the growth estimate (s).
    pub window: f64,
    pub kick_magnitude: f64,
    pub kick_duration: f64,
    /// Deviation (p.u.) beyond which the response is no longer small-signal.
    pub blowup: f64,
    /// Integration steps per snapshot step. Weak grids push one real
    /// eigenvalue far into the left half plane near the boundary, which the
    /// sweep step cannot integrate stably.
    pub substeps: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            switch_delay: 0.1,
            duration: 6.0,
            window: 2.0,
            kick_magnitude: 2e-3,
            kick_duration: 2e-4,
            blowup: 0.1,
            substeps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeDomainVerdict {
    pub diverged: bool,
    /// Envelope growth rate (1/s) over the analysis window.
    pub growth_rate: f64,
    pub trace: simcore::Trace,
}

/// Switch the grid of a settled bench to `new_grid` (re-dispatched so the
/// terminal operating point is unchanged), kick it if the grid actually
/// changed, and watch the terminal response.
pub fn timedomain_stability_probe(
    snap: &Snapshot<Testbench>,
    new_grid: &GridParams,
    op: &OperatingPoint,
    settings: &ProbeSettings,
) -> Result<TimeDomainVerdict> {
    if settings.duration < 5.0 || !(settings.window > 0.0 && settings.window < settings.duration) {
        return Err(Error::invalid("probe needs at least 5 s and a window shorter than the run"));
    }
    let grid = new_grid.dispatched(op)?;
    let mut state = snap.restore();
    let t_sw = state.t + settings.switch_delay;
    let changed = grid.r_g != snap.system.grid.r_g || grid.l_g != snap.system.grid.l_g;
    let bench = Testbench {
        switch: Some(GridSwitch { t: t_sw, grid }),
        kick: changed.then_some(Kick {
            t_start: t_sw,
            duration: settings.kick_duration,
            magnitude: settings.kick_magnitude,
        }),
        injection: None,
        ..snap.system.clone()
    };
    let sub = settings.substeps.max(1);
    let dt = snap.config.dt / sub as f64;
    let dec = 20 * sub;
    let steps = ((settings.switch_delay + settings.duration) / dt).ceil() as usize;
    let names = bench.channel_names();
    let mut trace = simcore::Trace::with_capacity(state.t, dt * dec as f64, names.clone(), steps / dec + 1);
    let mut rk = simcore::Rk4::new(state.x.len());
    let mut row = vec![0.0; names.len()];
    // deviation at every step from the switch on
    let settle_steps = (settings.switch_delay / dt).floor() as usize;
    let mut dev = Vec::with_capacity(steps);
    let mut blew = false;
    for k in 0..steps {
        if k % dec == 0 {
            bench.observe(state.t, &state.x, &mut row);
            trace.push_row(&row);
        }
        if k >= settle_steps {
            let term = bench.terminal(state.t, &state.x);
            let d = deviation(term.v, term.i, op);
            dev.push(d);
            if d > settings.blowup {
                blew = true;
                break;
            }
        }
        if rk.step(&bench, &mut state, dt).is_err() {
            blew = true;
            break;
        }
    }

    let growth_rate = if blew {
        // exponential run-up before leaving the small-signal range
        let lo = settings.blowup * 1e-3;
        let start = dev.iter().rposition(|d| *d < lo).map_or(0, |k| k + 1);
        let seg = &dev[start.saturating_sub(1)..];
        if seg.len() >= 4 {
            envelope_growth(seg, dt)
        } else {
            // faster than one step can resolve
            f64::INFINITY
        }
    } else {
        let peak = dev.iter().copied().fold(0.0, f64::max);
        let floor = 1e-5 * peak.max(1e-300);
        let w = (settings.window / dt).round() as usize;
        let tail = &dev[dev.len().saturating_sub(w)..];
        if tail.iter().all(|d| *d <= floor) {
            // decayed to rounding level: measure over the part still above it
            let end = dev.iter().rposition(|d| *d > floor).map_or(0, |k| k + 1);
            let from = end.saturating_sub(w);
            envelope_growth(&dev[from..end], dt)
        } else {
            envelope_growth(tail, dt)
        }
    };
    Ok(TimeDomainVerdict {
        diverged: blew || growth_rate > GROWTH_TOL,
        growth_rate,
        trace,
    })
}

/// Envelope growth (1/s) above which a bounded run still counts as diverging.
pub const GROWTH_TOL: f64 = 0.01;

/// Norm of the terminal voltage and current deviation from the operating
/// point (`v = V∠0`, `i = (P − jQ)/V` out of the inverter).
fn deviation(v: [f64; 2], i: [f64; 2], op: &OperatingPoint) -> f64 {
    let d = [v[0] - op.v_t, v[1], i[0] - op.p / op.v_t, i[1] + op.q / op.v_t];
    let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n.is_finite() {
        n
    } else {
        f64::INFINITY
    }
}

/// Slope of `ln(peak)` against time over the local maxima of `x`; falls back
/// to the two window halves when fewer than three peaks are present.
/// Returns 0 for a signal at rounding level.
pub fn envelope_growth(x: &[f64], dt: f64) -> f64 {
    const FLOOR: f64 = 1e-300;
    if x.len() < 4 || x.iter().all(|v| *v <= FLOOR) {
        return 0.0;
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for k in 1..x.len() - 1 {
        if x[k] > x[k - 1] && x[k] >= x[k + 1] && x[k] > FLOOR {
            pts.push((k as f64 * dt, x[k].ln()));
        }
    }
    if pts.len() < 3 {
        let h = x.len() / 2;
        let a = x[..h].iter().copied().fold(0.0, f64::max).max(FLOOR);
        let b = x[h..].iter().copied().fold(0.0, f64::max).max(FLOOR);
        return (b.ln() - a.ln()) / (h as f64 * dt);
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}
