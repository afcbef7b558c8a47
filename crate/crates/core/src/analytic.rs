//! Reference small-signal model: Newton equilibrium and central-difference
//! linearization of the same nonlinear right-hand sides the simulator uses.

use nalgebra::{DMatrix, DVector};

use crate::bench::{Device, Testbench};
use crate::error::{Error, Result};
use crate::extract::AdmittanceTable;
use crate::network::{two_bus_terminal, GridParams};
use crate::plant::{self, InverterParams, OperatingPoint, Refs};
use crate::pu::to_complex;
use crate::simcore::Dynamics;
use crate::statespace::StateSpaceModel;

/// A system with explicit inputs and outputs.
pub trait InputOutput {
    fn n_states(&self) -> usize;
    fn n_inputs(&self) -> usize;
    fn n_outputs(&self) -> usize;
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]);
}

/// Inverter alone with the grid-frame terminal voltage as input and the
/// current into the inverter as output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverterPort {
    pub params: InverterParams,
    pub refs: Refs,
}

impl InputOutput for InverterPort {
    fn n_states(&self) -> usize {
        plant::N_STATES
    }
    fn n_inputs(&self) -> usize {
        2
    }
    fn n_outputs(&self) -> usize {
        2
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        plant::inverter_rhs(&self.params, self.refs, x, [u[0], u[1]], dx);
    }
    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y[0] = -x[plant::I_D];
        y[1] = -x[plant::I_Q];
    }
}

/// Autonomous system viewed as input/output with no ports.
pub struct Autonomous<'a, D: Dynamics>(pub &'a D);

impl<D: Dynamics> InputOutput for Autonomous<'_, D> {
    fn n_states(&self) -> usize {
        self.0.layout().len()
    }
    fn n_inputs(&self) -> usize {
        0
    }
    fn n_outputs(&self) -> usize {
        0
    }
    fn rhs(&self, x: &[f64], _u: &[f64], dx: &mut [f64]) {
        self.0.rhs(0.0, x, dx)
    }
    fn output(&self, _x: &[f64], _u: &[f64], _y: &mut [f64]) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Newton iteration on `rhs(x, u) = 0` for fixed `u`, with a central
/// difference Jacobian and backtracking.
pub fn newton<S: InputOutput + ?Sized>(sys: &S, seed: &[f64], u: &[f64], tol: f64, max_iter: usize) -> Result<Equilibrium> {
    let n = sys.n_states();
    let mut x = seed.to_vec();
    let mut f = vec![0.0; n];
    sys.rhs(&x, u, &mut f);
    let mut r = norm(&f);
    for _ in 0..max_iter {
        if r < tol {
            return Ok(Equilibrium {
                x,
                u: u.to_vec(),
                residual: r,
            });
        }
        let j = state_jacobian(sys, &x, u);
        let step = match j.lu().solve(&DVector::from_column_slice(&f)) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => break,
        };
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - lambda * s).collect();
            let mut ft = vec![0.0; n];
            sys.rhs(&trial, u, &mut ft);
            let rt = norm(&ft);
            if rt.is_finite() && rt < r {
                x = trial;
                f = ft;
                r = rt;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if r < tol {
        return Ok(Equilibrium {
            x,
            u: u.to_vec(),
            residual: r,
        });
    }
    Err(Error::EquilibriumDiverged { residual: r, last: x })
}

fn step_size(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

/// ∂rhs/∂x by central differences.
fn state_jacobian<S: InputOutput + ?Sized>(sys: &S, x: &[f64], u: &[f64]) -> DMatrix<f64> {
    let n = sys.n_states();
    let mut j = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    for c in 0..n {
        let h = step_size(x[c]);
        xp[c] = x[c] + h;
        sys.rhs(&xp, u, &mut fp);
        xp[c] = x[c] - h;
        sys.rhs(&xp, u, &mut fm);
        xp[c] = x[c];
        for r in 0..n {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    j
}

/// Central-difference Jacobian of `g(z)` (m outputs) at `z`, checked by
/// halving every step: entries must agree to `1e-5·max(|J|, 1)`. Returns
/// the Richardson-extrapolated values.
pub fn checked_jacobian(g: &dyn Fn(&[f64], &mut [f64]), z: &[f64], m: usize) -> Result<DMatrix<f64>> {
    let n = z.len();
    let mut j = DMatrix::zeros(m, n);
    let mut zp = z.to_vec();
    let (mut fp, mut fm) = (vec![0.0; m], vec![0.0; m]);
    let mut column = |zp: &mut Vec<f64>, c: usize, h: f64, out: &mut Vec<f64>| {
        zp[c] = z[c] + h;
        g(zp, &mut fp);
        zp[c] = z[c] - h;
        g(zp, &mut fm);
        zp[c] = z[c];
        for r in 0..m {
            out[r] = (fp[r] - fm[r]) / (2.0 * h);
        }
    };
    let (mut coarse, mut fine) = (vec![0.0; m], vec![0.0; m]);
    for c in 0..n {
        let h = step_size(z[c]);
        column(&mut zp, c, h, &mut coarse);
        column(&mut zp, c, 0.5 * h, &mut fine);
        for r in 0..m {
            let tol = 1e-5 * coarse[r].abs().max(fine[r].abs()).max(1.0);
            if !((coarse[r] - fine[r]).abs() <= tol) {
                return Err(Error::Richardson {
                    row: r,
                    col: c,
                    coarse: coarse[r],
                    fine: fine[r],
                });
            }
            j[(r, c)] = (4.0 * fine[r] - coarse[r]) / 3.0;
        }
    }
    Ok(j)
}

/// Linearize `sys` about `(x0, u0)`.
pub fn linearize<S: InputOutput + ?Sized>(sys: &S, x0: &[f64], u0: &[f64]) -> Result<StateSpaceModel> {
    let n = sys.n_states();
    let m = sys.n_inputs();
    let p = sys.n_outputs();
    let mut f0 = vec![0.0; n];
    sys.rhs(x0, u0, &mut f0);
    let r = norm(&f0);
    if !(r < 1e-8) {
        return Err(Error::invalid(format!("linearization point is not an equilibrium (residual {r:e})")));
    }
    let mut z = x0.to_vec();
    z.extend_from_slice(u0);
    let rhs = |z: &[f64], out: &mut [f64]| sys.rhs(&z[..n], &z[n..], out);
    let outp = |z: &[f64], out: &mut [f64]| sys.output(&z[..n], &z[n..], out);
    let jf = checked_jacobian(&rhs, &z, n)?;
    let jg = checked_jacobian(&outp, &z, p)?;
    StateSpaceModel::new(
        jf.columns(0, n).into_owned(),
        jf.columns(n, m).into_owned(),
        jg.columns(0, n).into_owned(),
        jg.columns(n, m).into_owned(),
    )
}

/// Reference admittance model at the terminal voltage `op.v_t∠0`.
pub fn oracle_admittance(params: &InverterParams, op: &OperatingPoint) -> Result<StateSpaceModel> {
    let port = InverterPort {
        params: *params,
        refs: op.refs(),
    };
    let u = [op.v_t, 0.0];
    let eq = newton(&port, &plant::equilibrium_state(params, op), &u, 1e-12, 50)?;
    linearize(&port, &eq.x, &eq.u)
}

/// Equilibrium of the inverter on the given grid (source held fixed).
///
/// Seeds from the two-bus solution for the references; when that does not
/// exist the Newton solve runs from the nominal seed and its failure is
/// reported.
pub fn find_equilibrium(params: &InverterParams, refs: Refs, grid: &GridParams) -> Result<Equilibrium> {
    let bench = Testbench::new(Device::Inverter { params: *params, refs }, *grid);
    let seed_op = |vt: num_complex::Complex64| {
        let op = OperatingPoint {
            v_t: vt.norm(),
            p: refs.p_ref,
            q: refs.q_ref,
            p_ref: refs.p_ref,
            q_ref: refs.q_ref,
        };
        let mut x = plant::equilibrium_state(params, &op);
        plant::rotate_state(&mut x, vt.arg());
        x
    };
    let seed = match two_bus_terminal(to_complex(grid.v_g()), grid.z(), refs.p_ref, refs.q_ref) {
        Ok(vt) => seed_op(vt),
        Err(_) => seed_op(to_complex(grid.v_g())),
    };
    find_equilibrium_from(&bench, &seed)
}

/// Newton polish of a seed (for example a settled snapshot) of any bench.
pub fn find_equilibrium_from(bench: &Testbench, seed: &[f64]) -> Result<Equilibrium> {
    newton(&Autonomous(bench), seed, &[], 1e-10, 60)
}

/// State matrix of the inverter on its grid, linearized at `eq`.
pub fn plant_state_matrix(bench: &Testbench, eq: &Equilibrium) -> Result<DMatrix<f64>> {
    Ok(linearize(&Autonomous(bench), &eq.x, &[])?.a)
}

/// Evaluate `ss` at each frequency (Hz) as an admittance table.
pub fn freq_response(ss: &StateSpaceModel, freqs: &[f64]) -> Result<AdmittanceTable> {
    let y = freqs.iter().map(|&f| ss.response2(f)).collect::<Result<Vec<_>>>()?;
    let mut t = AdmittanceTable::new(freqs.to_vec(), y)?;
    t.meta.set("source", "linearized model");
    Ok(t)
}

/// Grid-frame admittance of an open-loop R–L branch, `[[R, −L], [L, R]] + sL/ω0`, inverted.
pub fn rl_branch_admittance(r: f64, l: f64, f: f64) -> crate::pu::CMat2 {
    use num_complex::Complex64 as C;
    let jw = C::new(0.0, 2.0 * std::f64::consts::PI * f * l / crate::pu::OMEGA0);
    let z = crate::pu::CMat2::new(C::new(r, 0.0) + jw, C::new(-l, 0.0), C::new(l, 0.0), C::new(r, 0.0) + jw);
    z.try_inverse().expect("R–L branch impedance is invertible")
}

/// Passive R–L branch driven by its terminal voltage; output is the current
/// drawn from the terminal.
#[derive(Debug, Clone, Copy)]
pub struct RlBranch {
    pub r: f64,
    pub l: f64,
}

impl InputOutput for RlBranch {
    fn n_states(&self) -> usize {
        2
    }
    fn n_inputs(&self) -> usize {
        2
    }
    fn n_outputs(&self) -> usize {
        2
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        // current flows from the driven terminal into the branch
        let d = plant::branch_rhs([u[0], u[1]], [0.0, 0.0], [x[0], x[1]], self.r, self.l);
        dx[0] = d[0];
        dx[1] = d[1];
    }
    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y[0] = x[0];
        y[1] = x[1];
    }
}
