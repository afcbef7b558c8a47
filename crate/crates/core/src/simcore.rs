//! Fixed-step time-domain kernel: classical RK4 over a flat state vector,
//! steady-state detection with restartable snapshots, uniformly sampled
//! traces, and the Park transform.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

const TWO_PI_3: f64 = 2.0 * PI / 3.0;

/// Amplitude-invariant Park transform with the d axis on `cos θ` of phase a
/// and the q axis leading it by 90°.
///
/// A balanced cosine set at angle `θ` maps to `(1, 0)`; the corresponding
/// sine set maps to `(0, -1)`.
pub fn park(abc: [f64; 3], theta: f64) -> [f64; 2] {
    let angles = [theta, theta - TWO_PI_3, theta + TWO_PI_3];
    let mut d = 0.0;
    let mut q = 0.0;
    for (x, a) in abc.iter().zip(angles) {
        let (s, c) = a.sin_cos();
        d += x * c;
        q -= x * s;
    }
    [2.0 / 3.0 * d, 2.0 / 3.0 * q]
}

pub fn inverse_park(dq: [f64; 2], theta: f64) -> [f64; 3] {
    let angles = [theta, theta - TWO_PI_3, theta + TWO_PI_3];
    angles.map(|a| {
        let (s, c) = a.sin_cos();
        dq[0] * c - dq[1] * s
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Integration step (s).
    pub dt: f64,
    /// Default run length (s).
    pub t_end: f64,
    /// Keep every k-th step in recorded traces.
    pub record_decimation: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 50e-6,
            t_end: 1.0,
            record_decimation: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= self.dt) {
            return Err(Error::invalid(format!(
                "t_end ({}) must be at least dt ({})",
                self.t_end, self.dt
            )));
        }
        if self.record_decimation == 0 {
            return Err(Error::invalid("record_decimation must be >= 1"));
        }
        Ok(())
    }

    /// Sampling rate seen by anything consuming a recorded trace.
    pub fn sample_rate(&self) -> f64 {
        1.0 / (self.dt * self.record_decimation as f64)
    }
}

/// Named, non-overlapping partition of the flat state vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StateLayout {
    slices: Vec<(String, Range<usize>)>,
    len: usize,
}

impl StateLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a slice of `n` states and return its index range.
    pub fn push(&mut self, name: impl Into<String>, n: usize) -> Range<usize> {
        let r = self.len..self.len + n;
        self.slices.push((name.into(), r.clone()));
        self.len += n;
        r
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn range(&self, name: &str) -> Option<Range<usize>> {
        self.slices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, r)| r.clone())
    }

    /// Name of the slice containing `index`.
    pub fn slice_of(&self, index: usize) -> &str {
        self.slices
            .iter()
            .find(|(_, r)| r.contains(&index))
            .map(|(n, _)| n.as_str())
            .unwrap_or("<unmapped>")
    }

    pub fn slices(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.slices.iter().map(|(n, r)| (n.as_str(), r.clone()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<f64>,
    pub layout: Arc<StateLayout>,
}

impl SimState {
    pub fn new(t: f64, x: Vec<f64>, layout: StateLayout) -> Result<Self> {
        if x.len() != layout.len() {
            return Err(Error::invalid(format!(
                "state has {} entries but the layout covers {}",
                x.len(),
                layout.len()
            )));
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                slice: layout.slice_of(i).to_string(),
                index: i,
                t,
            });
        }
        Ok(SimState {
            t,
            x,
            layout: Arc::new(layout),
        })
    }

    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.range(name).map(|r| &self.x[r])
    }
}

/// A continuous-time system `dx/dt = f(t, x)`.
pub trait Dynamics {
    fn layout(&self) -> StateLayout;
    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]);
}

/// Signals recorded from a system at sample instants.
pub trait Observe {
    fn channel_names(&self) -> Vec<String>;
    fn observe(&self, t: f64, x: &[f64], out: &mut [f64]);
}

/// Classical fourth-order Runge-Kutta with reusable stage buffers.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(n: usize) -> Self {
        Rk4 {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    pub fn step<D: Dynamics + ?Sized>(&mut self, sys: &D, state: &mut SimState, dt: f64) -> Result<()> {
        let n = state.x.len();
        if self.k1.len() != n {
            *self = Rk4::new(n);
        }
        let t = state.t;
        let x = &mut state.x;
        let check = |k: &[f64], tt: f64| -> Result<()> {
            match k.iter().position(|v| !v.is_finite()) {
                None => Ok(()),
                Some(i) => Err(Error::NonFinite {
                    slice: state.layout.slice_of(i).to_string(),
                    index: i,
                    t: tt,
                }),
            }
        };

        sys.rhs(t, x, &mut self.k1);
        check(&self.k1, t)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k1[i];
        }
        sys.rhs(t + 0.5 * dt, &self.tmp, &mut self.k2);
        check(&self.k2, t + 0.5 * dt)?;
        for i in 0..n {
            self.tmp[i] = x[i] + 0.5 * dt * self.k2[i];
        }
        sys.rhs(t + 0.5 * dt, &self.tmp, &mut self.k3);
        check(&self.k3, t + 0.5 * dt)?;
        for i in 0..n {
            self.tmp[i] = x[i] + dt * self.k3[i];
        }
        sys.rhs(t + dt, &self.tmp, &mut self.k4);
        check(&self.k4, t + dt)?;
        for i in 0..n {
            x[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
        state.t = t + dt;
        Ok(())
    }
}

/// One RK4 step returning the advanced state.
pub fn step<D: Dynamics + ?Sized>(state: &SimState, sys: &D, dt: f64) -> Result<SimState> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    let mut next = state.clone();
    Rk4::new(state.x.len()).step(sys, &mut next, dt)?;
    Ok(next)
}

/// Uniformly sampled multi-channel record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t0: f64,
    pub dt: f64,
    names: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(t0: f64, dt: f64, names: Vec<String>) -> Self {
        let data = names.iter().map(|_| Vec::new()).collect();
        Trace { t0, dt, names, data }
    }

    pub fn with_capacity(t0: f64, dt: f64, names: Vec<String>, cap: usize) -> Self {
        let data = names.iter().map(|_| Vec::with_capacity(cap)).collect();
        Trace { t0, dt, names, data }
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.data[i].as_slice())
    }

    pub fn channel_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&mut self.data[i])
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.data.len());
        for (ch, v) in self.data.iter_mut().zip(row) {
            ch.push(*v);
        }
    }

    /// Keep only the named channels, in the given order.
    pub fn select(&self, names: &[&str]) -> Option<Trace> {
        let mut out = Trace::new(self.t0, self.dt, names.iter().map(|s| s.to_string()).collect());
        for (i, n) in names.iter().enumerate() {
            out.data[i] = self.channel(n)?.to_vec();
        }
        Some(out)
    }

    /// Samples `[start, start + n)` as a new trace.
    pub fn window(&self, start: usize, n: usize) -> Trace {
        Trace {
            t0: self.time(start),
            dt: self.dt,
            names: self.names.clone(),
            data: self.data.iter().map(|c| c[start..start + n].to_vec()).collect(),
        }
    }

    /// CSV with a `t` column followed by every channel, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for n in &self.names {
            write!(w, ",{n}")?;
        }
        writeln!(w)?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.time(i))?;
            for c in &self.data {
                write!(w, ",{:.16e}", c[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, origin: &str) -> Result<Trace> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| perr(1, "empty trace file".into()))??;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("t") {
            return Err(perr(1, "first column must be `t`".into()));
        }
        let names: Vec<String> = cols.map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut data: Vec<Vec<f64>> = names.iter().map(|_| Vec::new()).collect();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut vals = line.split(',').map(|s| s.trim().parse::<f64>());
            let t = vals
                .next()
                .ok_or_else(|| perr(k + 2, "missing time".into()))?
                .map_err(|e| perr(k + 2, e.to_string()))?;
            times.push(t);
            for ch in data.iter_mut() {
                let v = vals
                    .next()
                    .ok_or_else(|| perr(k + 2, "short row".into()))?
                    .map_err(|e| perr(k + 2, e.to_string()))?;
                ch.push(v);
            }
        }
        let (t0, dt) = match times.len() {
            0 => (0.0, 1.0),
            1 => (times[0], 1.0),
            n => (times[0], (times[n - 1] - times[0]) / (n - 1) as f64),
        };
        Ok(Trace { t0, dt, names, data })
    }
}

/// Integrate `duration` seconds, returning the samples taken every
/// `decimation` steps (starting with the initial state) when `record` is set.
pub fn simulate<S: Dynamics + Observe + ?Sized>(
    sys: &S,
    state: &mut SimState,
    dt: f64,
    duration: f64,
    decimation: usize,
    record: bool,
) -> Result<Option<Trace>> {
    let steps = (duration / dt).round() as usize;
    simulate_steps(sys, state, dt, steps, decimation, record)
}

pub fn simulate_steps<S: Dynamics + Observe + ?Sized>(
    sys: &S,
    state: &mut SimState,
    dt: f64,
    steps: usize,
    decimation: usize,
    record: bool,
) -> Result<Option<Trace>> {
    let decimation = decimation.max(1);
    let mut rk = Rk4::new(state.x.len());
    let mut trace = record.then(|| {
        Trace::with_capacity(
            state.t,
            dt * decimation as f64,
            sys.channel_names(),
            steps / decimation + 1,
        )
    });
    let mut row = vec![0.0; sys.channel_names().len()];
    for k in 0..steps {
        if let Some(tr) = trace.as_mut() {
            if k % decimation == 0 {
                sys.observe(state.t, &state.x, &mut row);
                tr.push_row(&row);
            }
        }
        rk.step(sys, state, dt)?;
    }
    Ok(trace)
}

/// Record exactly `n_samples` samples spaced `decimation` steps apart.
pub fn record_samples<S: Dynamics + Observe + ?Sized>(
    sys: &S,
    state: &mut SimState,
    dt: f64,
    n_samples: usize,
    decimation: usize,
) -> Result<Trace> {
    let decimation = decimation.max(1);
    let names = sys.channel_names();
    let mut trace = Trace::with_capacity(state.t, dt * decimation as f64, names.clone(), n_samples);
    let mut rk = Rk4::new(state.x.len());
    let mut row = vec![0.0; names.len()];
    for k in 0..n_samples {
        sys.observe(state.t, &state.x, &mut row);
        trace.push_row(&row);
        if k + 1 < n_samples {
            for _ in 0..decimation {
                rk.step(sys, state, dt)?;
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyCriteria {
    /// Trailing window over which peak-to-peak variation is measured (s).
    pub window: f64,
    /// Peak-to-peak tolerance on every state (p.u. or rad).
    pub tol: f64,
    /// Do not declare steady state before this time has elapsed (s).
    pub min_duration: f64,
    /// Give up after this long (s).
    pub max_duration: f64,
}

impl Default for SteadyCriteria {
    fn default() -> Self {
        SteadyCriteria {
            window: 0.5,
            tol: 1e-5,
            min_duration: 0.0,
            max_duration: 30.0,
        }
    }
}

/// A frozen steady state together with the system and step settings that
/// produced it.
#[derive(Debug, Clone)]
pub struct Snapshot<S> {
    pub state: SimState,
    pub config: SimConfig,
    pub system: S,
}

impl<S> Snapshot<S> {
    pub fn restore(&self) -> SimState {
        self.state.clone()
    }
}

/// Step until every state varies less than `criteria.tol` peak-to-peak over
/// a full window.
pub fn run_until_steady<S: Dynamics + Clone>(
    mut state: SimState,
    sys: &S,
    config: SimConfig,
    criteria: SteadyCriteria,
) -> Result<Snapshot<S>> {
    config.validate()?;
    if !(criteria.window >= config.dt && criteria.tol > 0.0) {
        return Err(Error::invalid("steady window must cover a step and tol must be positive"));
    }
    let n = state.x.len();
    let window_steps = (criteria.window / config.dt).round().max(1.0) as usize;
    let start = state.t;
    let mut rk = Rk4::new(n);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let worst = loop {
        lo.copy_from_slice(&state.x);
        hi.copy_from_slice(&state.x);
        for _ in 0..window_steps {
            rk.step(sys, &mut state, config.dt)?;
            for i in 0..n {
                lo[i] = lo[i].min(state.x[i]);
                hi[i] = hi[i].max(state.x[i]);
            }
        }
        let (idx, ptp) = (0..n)
            .map(|i| (i, hi[i] - lo[i]))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        let elapsed = state.t - start;
        if ptp < criteria.tol && elapsed >= criteria.min_duration {
            return Ok(Snapshot {
                state,
                config,
                system: sys.clone(),
            });
        }
        if elapsed >= criteria.max_duration {
            break (idx, ptp);
        }
    };
    Err(Error::SteadyStateTimeout {
        max_duration: criteria.max_duration,
        channel: state.layout.slice_of(worst.0).to_string(),
        last_ptp: worst.1,
        tol: criteria.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[derive(Clone)]
    struct Linear {
        a: f64,
        b: f64,
    }
    impl Dynamics for Linear {
        fn layout(&self) -> StateLayout {
            let mut l = StateLayout::new();
            l.push("x", 1);
            l
        }
        fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
            dx[0] = self.a * x[0] + self.b;
        }
    }

    #[derive(Clone)]
    struct Oscillator {
        w: f64,
        damping: f64,
    }
    impl Dynamics for Oscillator {
        fn layout(&self) -> StateLayout {
            let mut l = StateLayout::new();
            l.push("osc", 2);
            l
        }
        fn rhs(&self, _t: f64, x: &[f64], dx: &mut [f64]) {
            dx[0] = -self.damping * x[0] - self.w * x[1];
            dx[1] = self.w * x[0] - self.damping * x[1];
        }
    }

    struct Broken;
    impl Dynamics for Broken {
        fn layout(&self) -> StateLayout {
            let mut l = StateLayout::new();
            l.push("good", 1);
            l.push("bad", 1);
            l
        }
        fn rhs(&self, _t: f64, _x: &[f64], dx: &mut [f64]) {
            dx[0] = 1.0;
            dx[1] = f64::NAN;
        }
    }

    fn state_for<D: Dynamics>(d: &D, x: Vec<f64>) -> SimState {
        SimState::new(0.0, x, d.layout()).unwrap()
    }

    #[test]
    fn park_aligns_cosine_set_with_d_axis() {
        for &th in &[0.0, 0.3, PI / 4.0, PI / 2.0, 2.5, -1.1] {
            let abc = [th.cos(), (th - TWO_PI_3).cos(), (th + TWO_PI_3).cos()];
            let dq = park(abc, th);
            assert_relative_eq!(dq[0], 1.0, epsilon = 1e-14);
            assert_relative_eq!(dq[1], 0.0, epsilon = 1e-14);
        }
        assert_eq!(park([0.0; 3], 1.0), [0.0, 0.0]);
    }

    #[test]
    fn park_maps_sine_set_to_negative_q() {
        for &th in &[0.0, PI / 4.0, PI / 2.0] {
            let abc = [th.sin(), (th - TWO_PI_3).sin(), (th + TWO_PI_3).sin()];
            let dq = park(abc, th);
            assert_relative_eq!(dq[0], 0.0, epsilon = 1e-14);
            assert_relative_eq!(dq[1], -1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_derivative_keeps_state() {
        let sys = Linear { a: 0.0, b: 0.0 };
        let s = step(&state_for(&sys, vec![3.0]), &sys, 0.01).unwrap();
        assert_eq!(s.x[0], 3.0);
        assert_relative_eq!(s.t, 0.01);
    }

    #[test]
    fn exponential_decay_single_step() {
        let sys = Linear { a: -1.0, b: 0.0 };
        let s = step(&state_for(&sys, vec![1.0]), &sys, 0.01).unwrap();
        assert!((s.x[0] - (-0.01f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn halving_step_shows_fourth_order_convergence() {
        let sys = Linear { a: -1.0, b: 0.0 };
        let err = |dt: f64| {
            let mut s = state_for(&sys, vec![1.0]);
            let mut rk = Rk4::new(1);
            let n = (1.0 / dt).round() as usize;
            for _ in 0..n {
                rk.step(&sys, &mut s, dt).unwrap();
            }
            (s.x[0] - (-1.0f64).exp()).abs()
        };
        let e1 = err(0.1);
        let e2 = err(0.05);
        assert!(e1 / e2 >= 16.0 * 0.95, "ratio {}", e1 / e2);
    }

    #[test]
    fn rotation_energy_drift_is_tiny() {
        let sys = Oscillator { w: 1.0, damping: 0.0 };
        let mut s = state_for(&sys, vec![1.0, 0.0]);
        let mut rk = Rk4::new(2);
        for _ in 0..100_000 {
            rk.step(&sys, &mut s, 1e-3).unwrap();
        }
        let e = s.x[0] * s.x[0] + s.x[1] * s.x[1];
        assert!((e - 1.0).abs() < 1e-6, "drift {}", e - 1.0);
    }

    #[test]
    fn non_finite_derivative_names_the_slice() {
        let s = state_for(&Broken, vec![0.0, 0.0]);
        match step(&s, &Broken, 1e-3) {
            Err(Error::NonFinite { slice, index, .. }) => {
                assert_eq!(slice, "bad");
                assert_eq!(index, 1);
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn first_order_system_settles() {
        let sys = Linear { a: -10.0, b: 10.0 };
        let crit = SteadyCriteria {
            window: 0.5,
            tol: 1e-6,
            min_duration: 0.0,
            max_duration: 10.0,
        };
        let cfg = SimConfig {
            dt: 1e-3,
            ..SimConfig::default()
        };
        let snap = run_until_steady(state_for(&sys, vec![0.0]), &sys, cfg, crit).unwrap();
        assert!((snap.state.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unreachable_tolerance_times_out() {
        let sys = Oscillator { w: 10.0, damping: 1e-4 };
        let crit = SteadyCriteria {
            window: 0.5,
            tol: 1e-6,
            min_duration: 0.0,
            max_duration: 3.0,
        };
        let cfg = SimConfig {
            dt: 1e-3,
            ..SimConfig::default()
        };
        let r = run_until_steady(state_for(&sys, vec![1.0, 0.0]), &sys, cfg, crit);
        assert!(matches!(r, Err(Error::SteadyStateTimeout { .. })));
    }

    #[test]
    fn layout_maps_every_index_once() {
        let mut l = StateLayout::new();
        let a = l.push("a", 3);
        let b = l.push("b", 2);
        assert_eq!(a, 0..3);
        assert_eq!(b, 3..5);
        assert_eq!(l.len(), 5);
        assert_eq!(l.slice_of(4), "b");
        assert_eq!(l.slice_of(0), "a");
    }

    #[test]
    fn trace_csv_round_trip() {
        let mut tr = Trace::new(1.25, 5e-5, vec!["v_d".into(), "v_q".into()]);
        for k in 0..50 {
            let x = k as f64 * 0.1;
            tr.push_row(&[x.sin() / 3.0, -x.exp()]);
        }
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,v_d,v_q\n"));
        let back = Trace::read_csv(std::io::Cursor::new(buf), "mem").unwrap();
        assert_eq!(back.channel("v_d"), tr.channel("v_d"));
        assert_eq!(back.channel("v_q"), tr.channel("v_q"));
        assert_relative_eq!(back.dt, tr.dt, max_relative = 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn park_round_trip(d in -5.0..5.0f64, q in -5.0..5.0f64, th in -10.0..10.0f64) {
                let abc = inverse_park([d, q], th);
                prop_assert!((abc.iter().sum::<f64>()).abs() < 1e-12);
                let back = park(abc, th);
                prop_assert!((back[0] - d).abs() < 1e-12);
                prop_assert!((back[1] - q).abs() < 1e-12);
            }
        }
    }
}
