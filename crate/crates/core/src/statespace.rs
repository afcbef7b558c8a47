//! Real LTI systems in (A, B, C, D) form.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pu::CMat2;

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.ncols() != n || d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return Err(Error::invalid(format!(
                "inconsistent dimensions: A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.nrows(),
                c.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        Ok(StateSpaceModel { a, b, c, d })
    }

    /// Memoryless system `y = D u`.
    pub fn static_gain(d: DMatrix<f64>) -> Self {
        let (p, m) = d.shape();
        StateSpaceModel {
            a: DMatrix::zeros(0, 0),
            b: DMatrix::zeros(0, m),
            c: DMatrix::zeros(p, 0),
            d,
        }
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.c.nrows()
    }

    /// `C (sI − A)⁻¹ B + D`.
    pub fn response(&self, s: Complex64) -> Result<DMatrix<Complex64>> {
        let n = self.n_states();
        let dc = self.d.map(|v| Complex64::new(v, 0.0));
        if n == 0 {
            return Ok(dc);
        }
        let mut m = self.a.map(|v| Complex64::new(-v, 0.0));
        for k in 0..n {
            m[(k, k)] += s;
        }
        let bc = self.b.map(|v| Complex64::new(v, 0.0));
        let lu = m.lu();
        let x = lu
            .solve(&bc)
            .filter(|x| x.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
            .ok_or_else(|| Error::Singular(format!("s = {s} is an eigenvalue of A")))?;
        let cc = self.c.map(|v| Complex64::new(v, 0.0));
        Ok(cc * x + dc)
    }

    /// 2×2 response at `f` Hz.
    pub fn response2(&self, f: f64) -> Result<CMat2> {
        if self.n_inputs() != 2 || self.n_outputs() != 2 {
            return Err(Error::invalid("expected a 2-input, 2-output system"));
        }
        let h = self.response(Complex64::new(0.0, 2.0 * std::f64::consts::PI * f))?;
        Ok(CMat2::new(h[(0, 0)], h[(0, 1)], h[(1, 0)], h[(1, 1)]))
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        if self.n_states() == 0 {
            return Vec::new();
        }
        let mut ev: Vec<Complex64> = self.a.complex_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
        ev
    }

    /// Eigenvalue with the largest real part.
    pub fn dominant(&self) -> Option<Complex64> {
        self.eigenvalues().into_iter().next()
    }

    /// Real part of `H(0)`.
    pub fn dc_gain(&self) -> Result<DMatrix<f64>> {
        let h = self.response(Complex64::new(0.0, 0.0))?;
        Ok(h.map(|z| z.re))
    }

    /// Simulate `x' = Ax + Bu`, `y = Cx + Du` with forward RK4 and a held input.
    pub fn simulate_step(&self, u: &DVector<f64>, dt: f64, steps: usize) -> Vec<DVector<f64>> {
        let n = self.n_states();
        let mut x = DVector::zeros(n);
        let bu = &self.b * u;
        let f = |x: &DVector<f64>| &self.a * x + &bu;
        let mut out = Vec::with_capacity(steps + 1);
        out.push(&self.c * &x + &self.d * u);
        for _ in 0..steps {
            let k1 = f(&x);
            let k2 = f(&(&x + &k1 * (0.5 * dt)));
            let k3 = f(&(&x + &k2 * (0.5 * dt)));
            let k4 = f(&(&x + &k3 * dt));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            out.push(&self.c * &x + &self.d * u);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn static_system_returns_d() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let ss = StateSpaceModel::static_gain(d.clone());
        for f in [0.0, 1.0, 1e3] {
            let h = ss.response2(f).unwrap();
            assert_eq!(h[(1, 0)].re, 3.0);
            assert_eq!(h[(0, 1)].im, 0.0);
        }
        assert!(ss.eigenvalues().is_empty());
    }

    #[test]
    fn first_order_corner() {
        let wc = 40.0;
        let ss = StateSpaceModel::new(
            DMatrix::from_element(1, 1, -wc),
            DMatrix::from_element(1, 1, wc),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let h = ss.response(Complex64::new(0.0, wc)).unwrap()[(0, 0)];
        assert_relative_eq!(h.norm(), 0.5f64.sqrt(), epsilon = 1e-14);
        assert!(ss.response(Complex64::new(-wc, 0.0)).is_err());
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let r = StateSpaceModel::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 1), DMatrix::zeros(1, 2), DMatrix::zeros(1, 1));
        assert!(r.is_err());
    }

    #[test]
    fn step_response_reaches_dc_gain() {
        let ss = StateSpaceModel::new(
            DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -3.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let y = ss.simulate_step(&DVector::from_element(1, 1.0), 1e-3, 20_000);
        assert_relative_eq!(y.last().unwrap()[0], ss.dc_gain().unwrap()[(0, 0)], epsilon = 1e-9);
    }
}
