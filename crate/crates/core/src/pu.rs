//! Per-unit conventions and small dq-vector helpers.
//!
//! Everything inside the crate is per-unit on the inverter ratings
//! (200 MVA, 120 kV line-to-line RMS by default) with time in seconds.
//! dq quantities are amplitude-invariant: a balanced set with peak 1 p.u.
//! has a dq vector of length 1. Reactances are per-unit at the nominal
//! frequency, so an inductance `l` (p.u.) appears as `l / OMEGA0` in a
//! time derivative.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;

pub const F_NOMINAL: f64 = 60.0;
pub const OMEGA0: f64 = 2.0 * PI * F_NOMINAL;

/// 2×2 complex matrix used for admittances, impedances and phasor pairs.
pub type CMat2 = Matrix2<Complex64>;

/// Real dq vector `[d, q]`.
pub type Dq = [f64; 2];

/// Rotate a dq vector by `angle` (multiplication by `e^{j angle}` in
/// complex notation).
#[inline]
pub fn rotate(x: Dq, angle: f64) -> Dq {
    let (s, c) = angle.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

#[inline]
pub(crate) fn rotate_sc(x: Dq, s: f64, c: f64) -> Dq {
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// `j·x`: the dq image of a 90° lead.
#[inline]
pub fn jrot(x: Dq) -> Dq {
    [-x[1], x[0]]
}

#[inline]
pub fn to_complex(x: Dq) -> Complex64 {
    Complex64::new(x[0], x[1])
}

#[inline]
pub fn from_complex(z: Complex64) -> Dq {
    [z.re, z.im]
}

/// System bases for converting between physical and per-unit magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bases {
    pub s_mva: f64,
    pub v_kv: f64,
}

impl Default for Bases {
    fn default() -> Self {
        Bases {
            s_mva: 200.0,
            v_kv: 120.0,
        }
    }
}

impl Bases {
    /// Base current in kA, `S / (√3 V_LL)`.
    pub fn i_ka(&self) -> f64 {
        self.s_mva / (3f64.sqrt() * self.v_kv)
    }

    pub fn z_ohm(&self) -> f64 {
        self.v_kv * self.v_kv / self.s_mva
    }

    pub fn kv_to_pu(&self, kv: f64) -> f64 {
        kv / self.v_kv
    }

    pub fn ka_to_pu(&self, ka: f64) -> f64 {
        ka / self.i_ka()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn base_current_is_close_to_one_ka() {
        let b = Bases::default();
        assert_relative_eq!(b.i_ka(), 0.962_250_448_649_376_6, max_relative = 1e-12);
        assert_relative_eq!(b.ka_to_pu(b.i_ka()), 1.0);
        assert_relative_eq!(b.z_ohm(), 72.0);
    }

    #[test]
    fn rotation_matches_complex_multiplication() {
        let x = [0.3, -1.2];
        let r = rotate(x, 0.7);
        let z = to_complex(x) * Complex64::from_polar(1.0, 0.7);
        assert_relative_eq!(r[0], z.re, epsilon = 1e-15);
        assert_relative_eq!(r[1], z.im, epsilon = 1e-15);
        assert_eq!(jrot(x), from_complex(Complex64::i() * to_complex(x)));
    }
}
