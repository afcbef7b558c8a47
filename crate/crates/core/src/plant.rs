//! Average-model grid-following inverter: coupling inductor, dq current
//! control with feedforward, P/Q control with frequency droop, and a
//! synchronous-frame PLL.
//!
//! The branch current is held in the grid dq frame; controls run in the PLL
//! frame, which sits `delta` radians ahead of the grid frame. `delta` is the
//! PLL angle minus `OMEGA0 * t`.

use crate::error::{Error, Result};
use crate::pu::{rotate, rotate_sc, Dq, F_NOMINAL, OMEGA0};

/// Number of inverter states.
pub const N_STATES: usize = 8;

// State indices inside the inverter slice.
pub const I_D: usize = 0;
pub const I_Q: usize = 1;
pub const XI_ID: usize = 2;
pub const XI_IQ: usize = 3;
pub const XI_P: usize = 4;
pub const XI_Q: usize = 5;
pub const DELTA: usize = 6;
pub const XI_PLL: usize = 7;

pub const STATE_NAMES: [&str; N_STATES] = ["i_d", "i_q", "xi_id", "xi_iq", "xi_p", "xi_q", "delta_pll", "xi_pll"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterParams {
    pub f: f64,
    pub s_base: f64,
    pub v_base: f64,
    pub l: f64,
    pub r_l: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    pub kp_pll: f64,
    pub ki_pll: f64,
    pub kp_p: f64,
    pub ki_p: f64,
    pub kp_q: f64,
    pub ki_q: f64,
    pub k_drp: f64,
}

impl Default for InverterParams {
    fn default() -> Self {
        InverterParams {
            f: 60.0,
            s_base: 200.0,
            v_base: 120.0,
            l: 0.15,
            r_l: 0.0015,
            kp_i: 0.5,
            ki_i: 20.0,
            kp_pll: 20.0,
            ki_pll: 700.0,
            kp_p: 0.5,
            ki_p: 20.0,
            kp_q: 0.5,
            ki_q: 20.0,
            k_drp: 20.0,
        }
    }
}

impl InverterParams {
    pub fn validate(&self) -> Result<()> {
        if (self.f - F_NOMINAL).abs() > 1e-12 {
            return Err(Error::invalid(format!("only a {F_NOMINAL} Hz system is supported, got {}", self.f)));
        }
        if !(self.l > 0.0) {
            return Err(Error::invalid(format!("coupling inductance must be positive, got {}", self.l)));
        }
        let gains = [
            ("r_l", self.r_l),
            ("kp_i", self.kp_i),
            ("ki_i", self.ki_i),
            ("kp_pll", self.kp_pll),
            ("ki_pll", self.ki_pll),
            ("kp_p", self.kp_p),
            ("ki_p", self.ki_p),
            ("kp_q", self.kp_q),
            ("ki_q", self.ki_q),
            ("k_drp", self.k_drp),
        ];
        for (name, g) in gains {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {g}")));
            }
        }
        if !(self.s_base > 0.0 && self.v_base > 0.0) {
            return Err(Error::invalid("bases must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub v_t: f64,
    pub p: f64,
    pub q: f64,
    pub p_ref: f64,
    pub q_ref: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        OperatingPoint::new(1.01, 0.975, 0.2)
    }
}

impl OperatingPoint {
    /// Operating point whose references equal the delivered powers.
    pub fn new(v_t: f64, p: f64, q: f64) -> Self {
        OperatingPoint {
            v_t,
            p,
            q,
            p_ref: p,
            q_ref: q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_t > 0.0 && self.v_t.is_finite()) {
            return Err(Error::invalid(format!("terminal voltage must be positive, got {}", self.v_t)));
        }
        for v in [self.p, self.q, self.p_ref, self.q_ref] {
            if !v.is_finite() {
                return Err(Error::invalid("operating point powers must be finite"));
            }
        }
        Ok(())
    }

    pub fn refs(&self) -> Refs {
        Refs {
            p_ref: self.p_ref,
            q_ref: self.q_ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refs {
    pub p_ref: f64,
    pub q_ref: f64,
}

/// Active and reactive power delivered through `i` at voltage `v`.
pub fn power(v: Dq, i: Dq) -> (f64, f64) {
    (v[0] * i[0] + v[1] * i[1], v[1] * i[0] - v[0] * i[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PllRates {
    /// PLL angular frequency (rad/s).
    pub omega: f64,
    pub d_xi: f64,
    pub f_pll: f64,
}

/// SRF-PLL: PI on the q-axis voltage, added to the nominal frequency.
#[inline]
pub fn pll_rhs(v_q: f64, xi_pll: f64, kp: f64, ki: f64) -> PllRates {
    let omega = OMEGA0 + kp * v_q + xi_pll;
    PllRates {
        omega,
        d_xi: ki * v_q,
        f_pll: omega / (2.0 * std::f64::consts::PI),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerOut {
    pub i_dref: f64,
    pub i_qref: f64,
    pub d_xi_p: f64,
    pub d_xi_q: f64,
}

#[inline]
pub fn power_controller(p: f64, q: f64, f_pll: f64, refs: Refs, xi_p: f64, xi_q: f64, prm: &InverterParams) -> PowerOut {
    let e_p = refs.p_ref + prm.k_drp * (F_NOMINAL - f_pll) / F_NOMINAL - p;
    let e_q = refs.q_ref - q;
    PowerOut {
        i_dref: prm.kp_p * e_p + xi_p,
        i_qref: -(prm.kp_q * e_q + xi_q),
        d_xi_p: prm.ki_p * e_p,
        d_xi_q: prm.ki_q * e_q,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentOut {
    /// Voltage reference in the PLL frame.
    pub u: Dq,
    pub d_xi: Dq,
}

/// PI current loop with full voltage feedforward and ωL decoupling, all in
/// the PLL frame.
#[inline]
pub fn current_controller(i: Dq, i_ref: Dq, v: Dq, xi: Dq, omega_pll: f64, prm: &InverterParams) -> CurrentOut {
    let e = [i_ref[0] - i[0], i_ref[1] - i[1]];
    let wl = omega_pll * prm.l / OMEGA0;
    CurrentOut {
        u: [
            v[0] + prm.kp_i * e[0] + xi[0] - wl * i[1],
            v[1] + prm.kp_i * e[1] + xi[1] + wl * i[0],
        ],
        d_xi: [prm.ki_i * e[0], prm.ki_i * e[1]],
    }
}

/// Controller outputs for a given state and grid-frame terminal voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEval {
    /// Applied voltage in the grid frame.
    pub u: Dq,
    /// Derivatives of `[xi_id, xi_iq, xi_p, xi_q, delta, xi_pll]`.
    pub d_ctrl: [f64; 6],
    pub p: f64,
    pub q: f64,
    pub f_pll: f64,
    pub i_ref: Dq,
}

/// Everything except the branch equation. `u` is affine in `v` for a fixed
/// state, which the network solver relies on.
pub fn controls(prm: &InverterParams, refs: Refs, x: &[f64], v: Dq) -> ControlEval {
    let i = [x[I_D], x[I_Q]];
    let (s, c) = x[DELTA].sin_cos();
    // grid → PLL frame
    let v_p = rotate_sc(v, -s, c);
    let i_p = rotate_sc(i, -s, c);
    let (p, q) = power(v_p, i_p);
    let pll = pll_rhs(v_p[1], x[XI_PLL], prm.kp_pll, prm.ki_pll);
    let pc = power_controller(p, q, pll.f_pll, refs, x[XI_P], x[XI_Q], prm);
    let i_ref = [pc.i_dref, pc.i_qref];
    let cc = current_controller(i_p, i_ref, v_p, [x[XI_ID], x[XI_IQ]], pll.omega, prm);
    ControlEval {
        u: rotate_sc(cc.u, s, c),
        d_ctrl: [cc.d_xi[0], cc.d_xi[1], pc.d_xi_p, pc.d_xi_q, pll.omega - OMEGA0, pll.d_xi],
        p,
        q,
        f_pll: pll.f_pll,
        i_ref,
    }
}

/// Branch equation `(L/ω0) di/dt = u − v − R i − L J i` in the grid frame.
#[inline]
pub fn branch_rhs(u: Dq, v: Dq, i: Dq, r: f64, l: f64) -> Dq {
    let k = OMEGA0 / l;
    [
        k * (u[0] - v[0] - r * i[0] + l * i[1]),
        k * (u[1] - v[1] - r * i[1] - l * i[0]),
    ]
}

/// Full inverter derivatives for a given grid-frame terminal voltage.
/// Returns the current flowing out of the inverter.
pub fn inverter_rhs(prm: &InverterParams, refs: Refs, x: &[f64], v: Dq, dx: &mut [f64]) -> Dq {
    let ev = controls(prm, refs, x, v);
    let i = [x[I_D], x[I_Q]];
    let di = branch_rhs(ev.u, v, i, prm.r_l, prm.l);
    dx[I_D] = di[0];
    dx[I_Q] = di[1];
    dx[XI_ID..=XI_PLL].copy_from_slice(&ev.d_ctrl);
    i
}

/// Equilibrium state with the terminal voltage at `v_t∠0` delivering the
/// operating point's P and Q. Only stationary when the references equal the
/// delivered powers.
pub fn equilibrium_state(prm: &InverterParams, op: &OperatingPoint) -> [f64; N_STATES] {
    let v = op.v_t;
    let i_d = op.p / v;
    let i_q = -op.q / v;
    let mut x = [0.0; N_STATES];
    x[I_D] = i_d;
    x[I_Q] = i_q;
    x[XI_ID] = prm.r_l * i_d;
    x[XI_IQ] = prm.r_l * i_q;
    x[XI_P] = i_d;
    x[XI_Q] = op.q / v;
    x
}

/// Rotate an inverter state so its PLL sits at `angle` relative to the grid.
pub fn rotate_state(x: &mut [f64], angle: f64) {
    let i = rotate([x[I_D], x[I_Q]], angle);
    x[I_D] = i[0];
    x[I_Q] = i[1];
    x[DELTA] += angle;
}

/// Branch impedance at dc, `[[R, -L], [L, R]]`.
pub fn branch_impedance_dc(prm: &InverterParams) -> [[f64; 2]; 2] {
    [[prm.r_l, -prm.l], [prm.l, prm.r_l]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_defaults() {
        let p = InverterParams::default();
        assert_eq!((p.l, p.r_l), (0.15, 0.0015));
        assert_eq!((p.kp_i, p.ki_i, p.kp_pll, p.ki_pll), (0.5, 20.0, 20.0, 700.0));
        assert_eq!((p.kp_p, p.ki_p, p.kp_q, p.ki_q, p.k_drp), (0.5, 20.0, 0.5, 20.0, 20.0));
        p.validate().unwrap();
        let op = OperatingPoint::default();
        assert_eq!((op.v_t, op.p, op.q), (1.01, 0.975, 0.2));
        // 195 MW and 40 MVAr on the 200 MVA base
        assert_relative_eq!(op.p * p.s_base, 195.0, max_relative = 1e-12);
        assert_relative_eq!(op.q * p.s_base, 40.0, max_relative = 1e-12);
    }

    #[test]
    fn bad_params_rejected() {
        let mut p = InverterParams::default();
        p.l = 0.0;
        assert!(p.validate().is_err());
        let mut p = InverterParams::default();
        p.kp_i = -1.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn pll_locked_and_ramp() {
        let r = pll_rhs(0.0, 0.0, 20.0, 700.0);
        assert_relative_eq!(r.f_pll, 60.0, max_relative = 1e-15);
        let r = pll_rhs(0.01, 0.0, 20.0, 700.0);
        assert_relative_eq!(r.d_xi, 7.0, max_relative = 1e-12);
        assert!(r.f_pll > 60.0);
    }

    #[test]
    fn droop_adds_two_tenths_at_minus_one_percent() {
        let prm = InverterParams {
            kp_p: 1.0,
            ..InverterParams::default()
        };
        let refs = Refs { p_ref: 0.5, q_ref: 0.0 };
        let out = power_controller(0.5, 0.0, 59.4, refs, 0.0, 0.0, &prm);
        assert_relative_eq!(out.i_dref, 0.2, max_relative = 1e-12);
        let eq = power_controller(0.5, 0.0, 60.0, refs, 0.3, 0.1, &prm);
        assert_eq!((eq.d_xi_p, eq.d_xi_q), (0.0, 0.0));
    }

    #[test]
    fn current_controller_feedforward_and_gain() {
        let prm = InverterParams::default();
        let i = [0.8, -0.3];
        let v = [1.0, 0.05];
        let out = current_controller(i, i, v, [0.0, 0.0], OMEGA0, &prm);
        assert_relative_eq!(out.u[0], v[0] - prm.l * i[1], epsilon = 1e-15);
        assert_relative_eq!(out.u[1], v[1] + prm.l * i[0], epsilon = 1e-15);
        let out = current_controller([0.0, 0.0], [0.1, 0.0], [0.0, 0.0], [0.0, 0.0], OMEGA0, &prm);
        assert_relative_eq!(out.u[0], 0.05, epsilon = 1e-15);
        assert_relative_eq!(out.d_xi[0], 2.0, epsilon = 1e-13);
    }

    #[test]
    fn analytic_equilibrium_is_stationary() {
        let prm = InverterParams::default();
        let op = OperatingPoint::default();
        let x = equilibrium_state(&prm, &op);
        let mut dx = [0.0; N_STATES];
        inverter_rhs(&prm, op.refs(), &x, [op.v_t, 0.0], &mut dx);
        for d in dx {
            assert!(d.abs() < 1e-9, "{dx:?}");
        }
        let (p, q) = power([op.v_t, 0.0], [x[I_D], x[I_Q]]);
        assert_relative_eq!(p, 0.975, max_relative = 1e-12);
        assert_relative_eq!(q, 0.2, max_relative = 1e-12);
    }

    #[test]
    fn equilibrium_is_frame_invariant() {
        // Rotating the whole problem leaves derivatives at zero.
        let prm = InverterParams::default();
        let op = OperatingPoint::default();
        let mut x = equilibrium_state(&prm, &op);
        rotate_state(&mut x, 0.4);
        let v = rotate([op.v_t, 0.0], 0.4);
        let mut dx = [0.0; N_STATES];
        inverter_rhs(&prm, op.refs(), &x, v, &mut dx);
        for (k, d) in dx.iter().enumerate() {
            if k != DELTA {
                assert!(d.abs() < 1e-9, "{dx:?}");
            }
        }
        assert!(dx[DELTA].abs() < 1e-9);
    }

    #[test]
    fn power_balance_identity() {
        let prm = InverterParams::default();
        let op = OperatingPoint::default();
        let mut x = equilibrium_state(&prm, &op);
        x[I_D] += 0.07;
        x[I_Q] -= 0.02;
        x[DELTA] = 0.03;
        let v = [0.98, 0.04];
        let ev = controls(&prm, op.refs(), &x, v);
        let i = [x[I_D], x[I_Q]];
        let di = branch_rhs(ev.u, v, i, prm.r_l, prm.l);
        let source = ev.u[0] * i[0] + ev.u[1] * i[1];
        let terminal = power(v, i).0;
        let loss = prm.r_l * (i[0] * i[0] + i[1] * i[1]);
        let stored = prm.l / OMEGA0 * (i[0] * di[0] + i[1] * di[1]);
        assert_relative_eq!(source, terminal + loss + stored, epsilon = 1e-12);
    }
}
