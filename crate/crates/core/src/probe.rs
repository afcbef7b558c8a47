//! Measurement PLL: supplies the dq frame the recorder and the injector use,
//! and the high-passed angle deviation that rotates measurements back into
//! the grid frame.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pu::{rotate, rotate_sc, Dq};

pub const N_STATES: usize = 4;
pub const DELTA_M: usize = 0;
pub const XI_M: usize = 1;
pub const THETA_INT: usize = 2;
pub const X_HPF: usize = 3;

pub const STATE_NAMES: [&str; N_STATES] = ["delta_m", "xi_m", "theta_int", "x_hpf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PllVariant {
    HighBandwidth,
    LowBandwidth,
}

impl PllVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            PllVariant::HighBandwidth => "high-bandwidth",
            PllVariant::LowBandwidth => "low-bandwidth",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "high-bandwidth" | "high" => Some(PllVariant::HighBandwidth),
            "low-bandwidth" | "low" => Some(PllVariant::LowBandwidth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementPllConfig {
    pub kp: f64,
    pub ki: f64,
    pub variant: PllVariant,
    /// First-order high-pass corner (Hz).
    pub hpf_corner: f64,
    /// Time at which the integrator and filter start receiving input (s).
    pub switch_release: f64,
}

/// Ratio of the default high-pass corner to the lowest injected frequency.
pub const HPF_CORNER_RATIO: f64 = 0.01;

/// Target bandwidth of the slow variant (Hz).
pub const LOW_BANDWIDTH_HZ: f64 = 0.5;

impl MeasurementPllConfig {
    /// Same loop gains as the inverter's own PLL.
    pub fn high_bandwidth(f_min: f64) -> Self {
        MeasurementPllConfig {
            kp: 20.0,
            ki: 700.0,
            variant: PllVariant::HighBandwidth,
            hpf_corner: HPF_CORNER_RATIO * f_min,
            switch_release: 0.5,
        }
    }

    pub fn low_bandwidth(f_min: f64) -> Self {
        let (kp, ki) = design_pll_gains(LOW_BANDWIDTH_HZ).expect("positive bandwidth");
        MeasurementPllConfig {
            kp,
            ki,
            variant: PllVariant::LowBandwidth,
            hpf_corner: HPF_CORNER_RATIO * f_min,
            switch_release: 0.5,
        }
    }

    pub fn for_variant(variant: PllVariant, f_min: f64) -> Self {
        match variant {
            PllVariant::HighBandwidth => Self::high_bandwidth(f_min),
            PllVariant::LowBandwidth => Self::low_bandwidth(f_min),
        }
    }

    pub fn validate(&self, f_min: Option<f64>) -> Result<()> {
        if !(self.kp >= 0.0 && self.ki >= 0.0) {
            return Err(Error::invalid("measurement PLL gains must be non-negative"));
        }
        if !(self.hpf_corner > 0.0) {
            return Err(Error::invalid("hpf corner must be positive"));
        }
        if let Some(f) = f_min {
            if self.hpf_corner >= f {
                return Err(Error::invalid(format!(
                    "hpf corner {} Hz must lie below the lowest injected frequency {f} Hz",
                    self.hpf_corner
                )));
            }
        }
        if !(self.switch_release >= 0.0) {
            return Err(Error::invalid("switch release time must be >= 0"));
        }
        Ok(())
    }

    /// Locked state: frame on the grid, no stored angle.
    pub fn initial_state(&self) -> [f64; N_STATES] {
        [0.0; N_STATES]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOut {
    pub delta_m: f64,
    pub dtheta_filtered: f64,
    pub v_m: Dq,
    pub i_m: Dq,
}

/// Probe derivatives for grid-frame terminal voltage `v` and current `i`.
pub fn probe_rhs(v: Dq, i: Dq, s: &[f64], cfg: &MeasurementPllConfig, t: f64, ds: &mut [f64]) -> ProbeOut {
    let (sn, cs) = s[DELTA_M].sin_cos();
    let v_m = rotate_sc(v, -sn, cs);
    let i_m = rotate_sc(i, -sn, cs);
    let pi_out = cfg.kp * v_m[1] + s[XI_M];
    let gate = if t >= cfg.switch_release { 1.0 } else { 0.0 };
    ds[DELTA_M] = pi_out;
    ds[XI_M] = cfg.ki * v_m[1];
    ds[THETA_INT] = gate * pi_out;
    ds[X_HPF] = 2.0 * PI * cfg.hpf_corner * (s[THETA_INT] - s[X_HPF]);
    ProbeOut {
        delta_m: s[DELTA_M],
        dtheta_filtered: s[THETA_INT] - s[X_HPF],
        v_m,
        i_m,
    }
}

/// Rate of the probe angle for a grid-frame voltage; affine in `v`.
#[inline]
pub fn frame_rate(v: Dq, s: &[f64], cfg: &MeasurementPllConfig) -> f64 {
    let (sn, cs) = s[DELTA_M].sin_cos();
    let vq = -sn * v[0] + cs * v[1];
    cfg.kp * vq + s[XI_M]
}

/// Rotate a measurement-frame vector back into the grid frame.
#[inline]
pub fn apply_pll_correction(x_m: Dq, dtheta: f64) -> Dq {
    rotate(x_m, dtheta)
}

/// Closed-loop angle transfer of the linearized PLL at input amplitude `v`.
pub fn pll_closed_loop(kp: f64, ki: f64, v: f64, f: f64) -> Complex64 {
    let s = Complex64::new(0.0, 2.0 * PI * f);
    let num = s * (kp * v) + ki * v;
    num / (s * s + num)
}

/// −3 dB frequency (Hz) of [`pll_closed_loop`], in closed form.
pub fn pll_bandwidth(kp: f64, ki: f64, v: f64) -> f64 {
    let a = kp * v;
    let b = ki * v;
    let c = 2.0 * b + a * a;
    let w2 = 0.5 * (c + (c * c + 4.0 * b * b).sqrt());
    w2.sqrt() / (2.0 * PI)
}

/// Critically damped PI gains whose closed-loop −3 dB point at unit input
/// amplitude equals `target_hz`.
pub fn design_pll_gains(target_hz: f64) -> Result<(f64, f64)> {
    if !(target_hz > 0.0 && target_hz.is_finite()) {
        return Err(Error::invalid(format!("bandwidth must be positive, got {target_hz}")));
    }
    // ζ = 1: ω_3dB = ω_n·√(3 + √10)
    let wn = 2.0 * PI * target_hz / (3.0 + 10f64.sqrt()).sqrt();
    Ok((2.0 * wn, wn * wn))
}

/// Gain of the first-order high-pass at `f`.
pub fn hpf_gain(f: f64, corner: f64) -> f64 {
    f / f.hypot(corner)
}
