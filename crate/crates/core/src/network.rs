//! Thevenin grid, perturbation sources and two-bus operating points.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::plant::OperatingPoint;
use crate::pu::{from_complex, jrot, Dq, OMEGA0};

/// Source impedance used for an "infinite" bus.
pub const INFINITE_BUS_Z: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridParams {
    pub r_g: f64,
    /// Reactance at nominal frequency (p.u.).
    pub l_g: f64,
    pub v_g_mag: f64,
    pub v_g_angle: f64,
}

impl GridParams {
    pub fn new(r_g: f64, l_g: f64) -> Self {
        GridParams {
            r_g,
            l_g,
            v_g_mag: 1.0,
            v_g_angle: 0.0,
        }
    }

    pub fn infinite_bus() -> Self {
        Self::new(INFINITE_BUS_Z, INFINITE_BUS_Z)
    }

    pub fn from_scr(scr: f64, x_over_r: f64) -> Result<Self> {
        let (r, l) = scr_to_impedance(scr, x_over_r)?;
        Ok(Self::new(r, l))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_g >= 0.0 && self.l_g >= 0.0 && self.r_g.is_finite() && self.l_g.is_finite()) {
            return Err(Error::invalid(format!(
                "grid impedance must be finite and non-negative, got R={} L={}",
                self.r_g, self.l_g
            )));
        }
        if !(self.v_g_mag.is_finite() && self.v_g_angle.is_finite()) {
            return Err(Error::invalid("grid source must be finite"));
        }
        Ok(())
    }

    pub fn z(&self) -> Complex64 {
        Complex64::new(self.r_g, self.l_g)
    }

    pub fn v_g(&self) -> Dq {
        from_complex(Complex64::from_polar(self.v_g_mag, self.v_g_angle))
    }

    /// Same impedance with the source re-solved so the terminal sits at
    /// `op.v_t∠0` delivering `op.p`, `op.q`.
    pub fn dispatched(&self, op: &OperatingPoint) -> Result<Self> {
        let (mag, ang) = solve_operating_point(self.r_g, self.l_g, op)?;
        Ok(GridParams {
            v_g_mag: mag,
            v_g_angle: ang,
            ..*self
        })
    }
}

/// Grid impedance of a given short-circuit ratio on the inverter base.
pub fn scr_to_impedance(scr: f64, x_over_r: f64) -> Result<(f64, f64)> {
    if !(scr > 0.0) || !(x_over_r > 0.0) || x_over_r.is_nan() {
        return Err(Error::invalid(format!("scr and x/r must be positive, got {scr}, {x_over_r}")));
    }
    if scr.is_infinite() {
        return Ok((0.0, 0.0));
    }
    let z = 1.0 / scr;
    let r = z / (1.0 + x_over_r * x_over_r).sqrt();
    Ok((r, r * x_over_r))
}

/// Inverse of [`scr_to_impedance`]. Zero impedance gives `scr = ∞`.
pub fn impedance_to_scr(r_g: f64, l_g: f64) -> (f64, f64) {
    let z = r_g.hypot(l_g);
    let xr = if r_g > 0.0 { l_g / r_g } else { f64::INFINITY };
    (1.0 / z, xr)
}

/// Grid source that puts the terminal at `V_t∠0` injecting `P + jQ` toward
/// the grid through `R_g + jL_g`. Returns `(|v_g|, ∠v_g)`.
///
/// Points on the lower branch of the fixed-source PV curve are rejected as
/// infeasible: they cannot be reached by a source held at this magnitude.
pub fn solve_operating_point(r_g: f64, l_g: f64, op: &OperatingPoint) -> Result<(f64, f64)> {
    op.validate()?;
    if !(r_g >= 0.0 && l_g >= 0.0) {
        return Err(Error::invalid("grid impedance must be non-negative"));
    }
    let vt = Complex64::new(op.v_t, 0.0);
    let i = Complex64::new(op.p, -op.q) / vt;
    let z = Complex64::new(r_g, l_g);
    let vg = vt - z * i;
    if vg.norm() < 1e-9 {
        return Err(Error::Infeasible("grid source voltage collapses to zero".into()));
    }
    // V⁴ − (2a + E²)V² + a² + b² = 0, high root is the operable one
    let a = r_g * op.p + l_g * op.q;
    let b = l_g * op.p - r_g * op.q;
    let e2 = vg.norm_sqr();
    let mid = (2.0 * a + e2) / 2.0;
    let disc = mid * mid - (a * a + b * b);
    if disc < 0.0 || op.v_t * op.v_t < mid - 1e-12 * mid.abs().max(1.0) {
        return Err(Error::Infeasible(format!(
            "V_t = {} lies on the low-voltage branch for P = {}, Q = {} over Z = {}+j{}",
            op.v_t, op.p, op.q, r_g, l_g
        )));
    }
    Ok((vg.norm(), vg.arg()))
}

/// Newton solve of the two-bus flow with the source fixed: finds the
/// terminal phasor at which `P + jQ` leaves toward `v_g` through `z`.
pub fn two_bus_terminal(v_g: Complex64, z: Complex64, p: f64, q: f64) -> Result<Complex64> {
    let s = Complex64::new(p, q);
    let f = |v: [f64; 2]| -> [f64; 2] {
        let vt = Complex64::new(v[0], v[1]);
        let r = vt - z * (s / vt).conj() - v_g;
        [r.re, r.im]
    };
    let mut v = [v_g.norm().max(0.5), 0.0];
    let ang = v_g.arg();
    v = [v[0] * ang.cos(), v[0] * ang.sin()];
    for _ in 0..100 {
        let r = f(v);
        let n = r[0].hypot(r[1]);
        if n < 1e-13 {
            let vt = Complex64::new(v[0], v[1]);
            return Ok(vt);
        }
        let h = 1e-7;
        let fx = f([v[0] + h, v[1]]);
        let fy = f([v[0], v[1] + h]);
        let j = [
            [(fx[0] - r[0]) / h, (fy[0] - r[0]) / h],
            [(fx[1] - r[1]) / h, (fy[1] - r[1]) / h],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-14 {
            break;
        }
        let dx = [
            (j[1][1] * r[0] - j[0][1] * r[1]) / det,
            (-j[1][0] * r[0] + j[0][0] * r[1]) / det,
        ];
        // damp big steps so we stay on the high-voltage branch
        let step = dx[0].hypot(dx[1]);
        let lim = 0.2 * v[0].hypot(v[1]);
        let scale = if step > lim { lim / step } else { 1.0 };
        v = [v[0] - scale * dx[0], v[1] - scale * dx[1]];
        if !(v[0].is_finite() && v[1].is_finite()) || v[0].hypot(v[1]) < 1e-3 {
            break;
        }
    }
    Err(Error::Infeasible(format!(
        "no terminal voltage transfers P = {p}, Q = {q} into |v_g| = {} over |Z| = {}",
        v_g.norm(),
        z.norm()
    )))
}

/// Largest active power the fixed source can absorb through `z` at a given
/// Q, found by bisection on [`two_bus_terminal`].
pub fn max_transfer(v_g: f64, z: Complex64, q: f64) -> f64 {
    let vg = Complex64::new(v_g, 0.0);
    let (mut lo, mut hi) = (0.0, 10.0 * v_g * v_g / z.norm().max(1e-9));
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if two_bus_terminal(vg, z, mid, q).is_ok() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Isolated grid branch with its own current state: `(L_g/ω0) di/dt =
/// v_t − v_inj − v_g − R_g i − L_g J i`, current flowing toward the source.
pub fn line_rhs(i: Dq, v_t: Dq, v_inj: Dq, grid: &GridParams) -> Result<Dq> {
    if !(grid.l_g > 0.0) {
        return Err(Error::invalid("line_rhs needs L_g > 0; use the algebraic terminal path"));
    }
    let vg = grid.v_g();
    let k = OMEGA0 / grid.l_g;
    let ji = jrot(i);
    Ok([
        k * (v_t[0] - v_inj[0] - vg[0] - grid.r_g * i[0] - grid.l_g * ji[0]),
        k * (v_t[1] - v_inj[1] - vg[1] - grid.r_g * i[1] - grid.l_g * ji[1]),
    ])
}

/// Source-side voltage seen from the terminal: grid source, series source and
/// the drops of the line current's known parts (device current `i`, shunt
/// current `i_inj` and its derivative). With a device inductance `l_dev`
/// sharing the line current, the terminal voltage is
/// `(1−k)·source_side + k·(u − R i)`, `k = L_g/(l_dev + L_g)`.
pub fn source_side_voltage(grid: &GridParams, v_inj: Dq, i: Dq, i_inj: Dq, di_inj: Dq) -> Dq {
    let vg = grid.v_g();
    let ji = jrot(i_inj);
    let lw = grid.l_g / OMEGA0;
    [
        vg[0] + v_inj[0] + grid.r_g * (i[0] + i_inj[0]) + grid.l_g * ji[0] + lw * di_inj[0],
        vg[1] + v_inj[1] + grid.r_g * (i[1] + i_inj[1]) + grid.l_g * ji[1] + lw * di_inj[1],
    ]
}

#[inline]
pub fn divider_weight(l_dev: f64, l_g: f64) -> f64 {
    if l_g == 0.0 {
        0.0
    } else {
        l_g / (l_dev + l_g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InjectionKind {
    SeriesVoltage,
    ShuntCurrent,
}

impl InjectionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            InjectionKind::SeriesVoltage => "series-voltage",
            InjectionKind::ShuntCurrent => "shunt-current",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "series-voltage" | "voltage" => Some(InjectionKind::SeriesVoltage),
            "shunt-current" | "current" => Some(InjectionKind::ShuntCurrent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    D,
    Q,
}

impl Axis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Axis::D => "d",
            Axis::Q => "q",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "d" => Some(Axis::D),
            "q" => Some(Axis::Q),
            _ => None,
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Axis::D => 0,
            Axis::Q => 1,
        }
    }
}

/// A single-tone perturbation on one axis of the measurement frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionSpec {
    pub kind: InjectionKind,
    pub axis: Axis,
    pub freq: f64,
    pub magnitude: f64,
    pub t_start: f64,
    pub duration: f64,
    /// Phase of the tone at `t_start` (rad); 0 is a cosine.
    pub phase: f64,
}

impl InjectionSpec {
    pub fn new(kind: InjectionKind, axis: Axis, freq: f64, magnitude: f64, t_start: f64, duration: f64) -> Self {
        InjectionSpec {
            kind,
            axis,
            freq,
            magnitude,
            t_start,
            duration,
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::invalid(format!("injection frequency must be positive, got {}", self.freq)));
        }
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::invalid(format!("injection magnitude must be >= 0, got {}", self.magnitude)));
        }
        if self.duration * self.freq < 10.0 - 1e-9 {
            return Err(Error::invalid(format!(
                "injection lasts {:.3} cycles of {} Hz; at least 10 are needed",
                self.duration * self.freq,
                self.freq
            )));
        }
        Ok(())
    }

    /// Value and time derivative on the injection axis, with a one-cycle
    /// raised-cosine ramp at the start.
    #[inline]
    pub fn scalar(&self, t: f64) -> (f64, f64) {
        let tau = t - self.t_start;
        if tau < 0.0 || tau >= self.duration || self.magnitude == 0.0 {
            return (0.0, 0.0);
        }
        let w = 2.0 * PI * self.freq;
        let (s, c) = (w * tau + self.phase).sin_cos();
        let ramp = 1.0 / self.freq;
        let (env, denv) = if tau < ramp {
            let a = PI * tau / ramp;
            (0.5 * (1.0 - a.cos()), 0.5 * PI / ramp * a.sin())
        } else {
            (1.0, 0.0)
        };
        let m = self.magnitude;
        (m * env * c, m * (denv * c - env * w * s))
    }

    /// Value and derivative as dq vectors in the measurement frame.
    #[inline]
    pub fn vector(&self, t: f64) -> (Dq, Dq) {
        let (v, dv) = self.scalar(t);
        match self.axis {
            Axis::D => ([v, 0.0], [dv, 0.0]),
            Axis::Q => ([0.0, v], [0.0, dv]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scr_examples() {
        assert_eq!(scr_to_impedance(f64::INFINITY, 6.0).unwrap(), (0.0, 0.0));
        let (r, l) = scr_to_impedance(1.0, 1.0).unwrap();
        assert_relative_eq!(r, 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(l, 0.5f64.sqrt(), epsilon = 1e-15);
        let (r, l) = scr_to_impedance(1.5, 6.0).unwrap();
        assert_relative_eq!(r.hypot(l), 2.0 / 3.0, epsilon = 1e-12);
        assert!((r - 0.10960).abs() < 5e-5, "{r}");
        assert!((l - 0.65762).abs() < 5e-5, "{l}");
        assert!(scr_to_impedance(0.0, 6.0).is_err());
        assert!(scr_to_impedance(2.0, -1.0).is_err());
    }

    #[test]
    fn operating_point_trivial_cases() {
        let op = OperatingPoint::default();
        let (m, a) = solve_operating_point(0.0, 0.0, &op).unwrap();
        assert_eq!((m, a), (1.01, 0.0));
        let idle = OperatingPoint::new(1.01, 0.0, 0.0);
        let (m, a) = solve_operating_point(0.3, 0.9, &idle).unwrap();
        assert_eq!((m, a), (1.01, 0.0));
    }

    #[test]
    fn operating_point_matches_fixed_source_newton() {
        let op = OperatingPoint::default();
        let (r, l) = scr_to_impedance(1.6, 6.0).unwrap();
        let (m, a) = solve_operating_point(r, l, &op).unwrap();
        let vt = two_bus_terminal(Complex64::from_polar(m, a), Complex64::new(r, l), op.p, op.q).unwrap();
        assert!((vt - Complex64::new(1.01, 0.0)).norm() < 1e-10, "{vt}");
    }

    #[test]
    fn fixed_source_transfer_limit() {
        let (r, l) = scr_to_impedance(1.05, 6.0).unwrap();
        let z = Complex64::new(r, l);
        let pmax = max_transfer(1.0, z, 0.2);
        assert!(pmax > 0.1 && pmax < 1.0, "{pmax}");
        assert!(two_bus_terminal(Complex64::new(1.0, 0.0), z, pmax * 1.05, 0.2).is_err());
    }

    #[test]
    fn line_branch_is_stationary_with_matching_current() {
        let grid = GridParams::new(0.1, 0.6);
        let i = [0.9, -0.2];
        let z = grid.z() * Complex64::new(i[0], i[1]);
        let vt = [grid.v_g()[0] + z.re, grid.v_g()[1] + z.im];
        let d = line_rhs(i, vt, [0.0, 0.0], &grid).unwrap();
        assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
        assert!(line_rhs(i, vt, [0.0, 0.0], &GridParams::new(0.1, 0.0)).is_err());
    }

    #[test]
    fn injection_envelope_and_derivative() {
        let inj = InjectionSpec::new(InjectionKind::SeriesVoltage, Axis::Q, 7.0, 0.01, 0.5, 2.0);
        inj.validate().unwrap();
        assert_eq!(inj.vector(0.4).0, [0.0, 0.0]);
        let (v, _) = inj.vector(0.5 + 1.0);
        assert_relative_eq!(v[1], 0.01 * (2.0 * PI * 7.0).cos(), epsilon = 1e-15);
        for &t in &[0.52, 0.6, 0.64, 1.3] {
            let h = 1e-6;
            let num = (inj.scalar(t + h).0 - inj.scalar(t - h).0) / (2.0 * h);
            assert_relative_eq!(inj.scalar(t).1, num, epsilon = 1e-7);
        }
        let short = InjectionSpec::new(InjectionKind::SeriesVoltage, Axis::D, 7.0, 0.01, 0.0, 1.0);
        assert!(short.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scr_round_trip(scr in 0.5..50.0f64, xr in 0.1..30.0f64) {
                let (r, l) = scr_to_impedance(scr, xr).unwrap();
                let (s2, x2) = impedance_to_scr(r, l);
                prop_assert!((s2 - scr).abs() < 1e-9 * scr);
                prop_assert!((x2 - xr).abs() < 1e-9 * xr);
            }

            #[test]
            fn operating_point_residual(scr in 2.0..20.0f64, xr in 1.0..15.0f64, p in 0.0..1.0f64, q in -0.3..0.3f64) {
                let op = OperatingPoint::new(1.01, p, q);
                let (r, l) = scr_to_impedance(scr, xr).unwrap();
                let (m, a) = solve_operating_point(r, l, &op).unwrap();
                let vt = Complex64::new(1.01, 0.0);
                let i = (Complex64::new(p, q) / vt).conj();
                let res = vt - Complex64::new(r, l) * i - Complex64::from_polar(m, a);
                prop_assert!(res.norm() < 1e-10);
            }
        }
    }
}
