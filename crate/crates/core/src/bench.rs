//! The simulated test bench: a device at the terminal node, a Thevenin grid,
//! an optional perturbation source and an optional measurement PLL.
//!
//! The device inductor and the grid inductor carry the same current (plus
//! any shunt injection), so the grid adds no states; the terminal voltage is
//! solved from the inductive divider at every derivative evaluation.

use crate::error::{Error, Result};
use crate::network::{divider_weight, source_side_voltage, GridParams, InjectionKind, InjectionSpec};
use crate::plant::{self, InverterParams, OperatingPoint, Refs};
use crate::probe::{self, MeasurementPllConfig};
use crate::pu::{jrot, rotate_sc, Dq};
use crate::simcore::{self, Dynamics, Observe, SimConfig, SimState, Snapshot, StateLayout, SteadyCriteria};

/// What sits at the terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Device {
    Inverter { params: InverterParams, refs: Refs },
    /// Passive R–L branch from the terminal to ground.
    RlLoad { r: f64, l: f64 },
    OpenCircuit,
}

impl Device {
    pub fn inverter(params: InverterParams, op: &OperatingPoint) -> Self {
        Device::Inverter {
            params,
            refs: op.refs(),
        }
    }

    fn n_states(&self) -> usize {
        match self {
            Device::Inverter { .. } => plant::N_STATES,
            Device::RlLoad { .. } => 2,
            Device::OpenCircuit => 0,
        }
    }
}

/// Replace the grid impedance and source at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSwitch {
    pub t: f64,
    pub grid: GridParams,
}

/// Short half-sine series-voltage pulse on the grid d axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kick {
    pub t_start: f64,
    pub duration: f64,
    pub magnitude: f64,
}

impl Kick {
    fn value(&self, t: f64) -> f64 {
        let tau = t - self.t_start;
        if tau < 0.0 || tau >= self.duration {
            0.0
        } else {
            self.magnitude * (std::f64::consts::PI * tau / self.duration).sin()
        }
    }
}

/// Names of recorded channels, in order.
pub const CHANNELS: [&str; 10] = [
    "v_d",
    "v_q",
    "i_d",
    "i_q",
    "dtheta_filtered",
    "f_pll",
    "p",
    "q",
    "vg_d",
    "vg_q",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Testbench {
    pub device: Device,
    pub grid: GridParams,
    pub switch: Option<GridSwitch>,
    pub probe: Option<MeasurementPllConfig>,
    pub injection: Option<InjectionSpec>,
    pub kick: Option<Kick>,
}

/// Terminal quantities at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    /// Grid-frame terminal voltage.
    pub v: Dq,
    /// Grid-frame current out of the device.
    pub i: Dq,
}

impl Testbench {
    pub fn new(device: Device, grid: GridParams) -> Self {
        Testbench {
            device,
            grid,
            switch: None,
            probe: None,
            injection: None,
            kick: None,
        }
    }

    pub fn with_probe(mut self, cfg: MeasurementPllConfig) -> Self {
        self.probe = Some(cfg);
        self
    }

    pub fn with_injection(mut self, inj: InjectionSpec) -> Self {
        self.injection = Some(inj);
        self
    }

    fn probe_offset(&self) -> usize {
        self.device.n_states()
    }

    pub fn grid_at(&self, t: f64) -> &GridParams {
        match &self.switch {
            Some(sw) if t >= sw.t => &sw.grid,
            _ => &self.grid,
        }
    }

    /// Initial state at the analytic equilibrium (inverter) or at rest.
    pub fn initial_state(&self, op: &OperatingPoint) -> Result<SimState> {
        let mut x = vec![0.0; self.layout().len()];
        if let Device::Inverter { params, .. } = &self.device {
            x[..plant::N_STATES].copy_from_slice(&plant::equilibrium_state(params, op));
        }
        if let Some(p) = &self.probe {
            let o = self.probe_offset();
            x[o..o + probe::N_STATES].copy_from_slice(&p.initial_state());
        }
        SimState::new(0.0, x, self.layout())
    }

    /// Terminal voltage for the given state. `u(v)` of the inverter and the
    /// probe's frame rate are affine in `v`, so three trial evaluations pin
    /// down the fixed point exactly.
    pub fn terminal(&self, t: f64, x: &[f64]) -> Terminal {
        let grid = self.grid_at(t);
        let (i, k, r_dev) = match &self.device {
            Device::Inverter { params, .. } => {
                ([x[plant::I_D], x[plant::I_Q]], divider_weight(params.l, grid.l_g), params.r_l)
            }
            Device::RlLoad { r, l } => ([x[0], x[1]], divider_weight(*l, grid.l_g), *r),
            Device::OpenCircuit => ([0.0, 0.0], 0.0, 0.0),
        };

        let ps = self.probe.as_ref().map(|cfg| {
            let o = self.probe_offset();
            (cfg, &x[o..o + probe::N_STATES])
        });
        let (sn, cs) = ps.map_or((0.0, 1.0), |(_, s)| s[probe::DELTA_M].sin_cos());

        let (inj_m, dinj_m) = self.injection.map_or(([0.0; 2], [0.0; 2]), |inj| inj.vector(t));
        let kick = self.kick.map_or(0.0, |k| k.value(t));
        let shunt = matches!(self.injection, Some(InjectionSpec { kind: InjectionKind::ShuntCurrent, .. }));
        let v_inj = if shunt {
            [kick, 0.0]
        } else {
            let r = rotate_sc(inj_m, sn, cs);
            [r[0] + kick, r[1]]
        };
        let i_inj = if shunt { rotate_sc(inj_m, sn, cs) } else { [0.0; 2] };

        let f = |v: Dq| -> Dq {
            let di_inj = if shunt {
                let w = ps.map_or(0.0, |(cfg, s)| probe::frame_rate(v, s, cfg));
                let j = jrot(inj_m);
                rotate_sc([dinj_m[0] + w * j[0], dinj_m[1] + w * j[1]], sn, cs)
            } else {
                [0.0; 2]
            };
            let src = source_side_voltage(grid, v_inj, i, i_inj, di_inj);
            if k == 0.0 {
                return src;
            }
            let u = match &self.device {
                Device::Inverter { params, refs } => plant::controls(params, *refs, x, v).u,
                _ => [0.0; 2],
            };
            [
                (1.0 - k) * src[0] + k * (u[0] - r_dev * i[0]),
                (1.0 - k) * src[1] + k * (u[1] - r_dev * i[1]),
            ]
        };

        let depends = (k != 0.0 && matches!(self.device, Device::Inverter { .. })) || (shunt && ps.is_some());
        let v = if !depends {
            f([0.0; 2])
        } else {
            let f0 = f([0.0, 0.0]);
            let f1 = f([1.0, 0.0]);
            let f2 = f([0.0, 1.0]);
            // (I − M) v = f0, M columns f(e_k) − f0
            let m = [[f1[0] - f0[0], f2[0] - f0[0]], [f1[1] - f0[1], f2[1] - f0[1]]];
            let a = [[1.0 - m[0][0], -m[0][1]], [-m[1][0], 1.0 - m[1][1]]];
            let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
            [
                (a[1][1] * f0[0] - a[0][1] * f0[1]) / det,
                (-a[1][0] * f0[0] + a[0][0] * f0[1]) / det,
            ]
        };
        Terminal { v, i }
    }

    /// Settle from the analytic equilibrium (or rest) and freeze the result.
    pub fn settle(&self, op: &OperatingPoint, config: SimConfig, criteria: SteadyCriteria) -> Result<Snapshot<Testbench>> {
        let mut crit = criteria;
        if let Some(p) = &self.probe {
            crit.min_duration = crit.min_duration.max(p.switch_release + crit.window);
        }
        let state = self.initial_state(op)?;
        simcore::run_until_steady(state, self, config, crit)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if let Some(sw) = &self.switch {
            sw.grid.validate()?;
        }
        match &self.device {
            Device::Inverter { params, .. } => params.validate()?,
            Device::RlLoad { r, l } => {
                if !(*l > 0.0 && *r >= 0.0) {
                    return Err(Error::invalid("R–L load needs L > 0 and R >= 0"));
                }
            }
            Device::OpenCircuit => {}
        }
        if let Some(p) = &self.probe {
            p.validate(self.injection.map(|i| i.freq))?;
        }
        if let Some(inj) = &self.injection {
            inj.validate()?;
        }
        Ok(())
    }
}

impl Dynamics for Testbench {
    fn layout(&self) -> StateLayout {
        let mut l = StateLayout::new();
        match &self.device {
            Device::Inverter { .. } => {
                l.push("inverter", plant::N_STATES);
            }
            Device::RlLoad { .. } => {
                l.push("load", 2);
            }
            Device::OpenCircuit => {}
        }
        if self.probe.is_some() {
            l.push("probe", probe::N_STATES);
        }
        l
    }

    fn rhs(&self, t: f64, x: &[f64], dx: &mut [f64]) {
        let term = self.terminal(t, x);
        match &self.device {
            Device::Inverter { params, refs } => {
                plant::inverter_rhs(params, *refs, x, term.v, dx);
            }
            Device::RlLoad { r, l } => {
                let d = plant::branch_rhs([0.0; 2], term.v, term.i, *r, *l);
                dx[0] = d[0];
                dx[1] = d[1];
            }
            Device::OpenCircuit => {}
        }
        if let Some(cfg) = &self.probe {
            let o = self.probe_offset();
            probe::probe_rhs(term.v, term.i, &x[o..o + probe::N_STATES], cfg, t, &mut dx[o..o + probe::N_STATES]);
        }
    }
}

impl Observe for Testbench {
    fn channel_names(&self) -> Vec<String> {
        CHANNELS.iter().map(|s| s.to_string()).collect()
    }

    fn observe(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let term = self.terminal(t, x);
        let (v_m, i_m, dth) = match &self.probe {
            Some(cfg) => {
                let o = self.probe_offset();
                let mut scratch = [0.0; probe::N_STATES];
                let po = probe::probe_rhs(term.v, term.i, &x[o..o + probe::N_STATES], cfg, t, &mut scratch);
                (po.v_m, po.i_m, po.dtheta_filtered)
            }
            None => (term.v, term.i, 0.0),
        };
        let (f_pll, p, q) = match &self.device {
            Device::Inverter { params, refs } => {
                let ev = plant::controls(params, *refs, x, term.v);
                (ev.f_pll, ev.p, ev.q)
            }
            _ => {
                let (p, q) = plant::power(term.v, term.i);
                (crate::pu::F_NOMINAL, p, q)
            }
        };
        // currents are reported flowing into the device
        out[0] = v_m[0];
        out[1] = v_m[1];
        out[2] = -i_m[0];
        out[3] = -i_m[1];
        out[4] = dth;
        out[5] = f_pll;
        out[6] = p;
        out[7] = q;
        out[8] = term.v[0];
        out[9] = term.v[1];
    }
}
