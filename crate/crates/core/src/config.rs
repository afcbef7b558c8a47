//! Experiment configuration: a line-oriented `section.key = value` file.
//!
//! ```text
//! # comment
//! grid.scr = 4
//! grid.x_over_r = 6
//! operating.v_t = 121.2 kV   # converted with the 200 MVA / 120 kV bases
//! sweep.kind = series-voltage
//! ```
//!
//! Blank lines and `#` comments are ignored. Voltages accept a `kV` suffix,
//! currents a `kA` suffix and any per-unit quantity a `pu` suffix. Unknown
//! keys, repeated keys and malformed values are errors.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::extract::{BinMode, ExtractOptions, Method};
use crate::network::{GridParams, InjectionKind};
use crate::plant::{InverterParams, OperatingPoint};
use crate::probe::{MeasurementPllConfig, PllVariant};
use crate::pu::Bases;
use crate::simcore::{SimConfig, SteadyCriteria};
use crate::sweep::{plan_frequencies, plan_off_bin, RunSettings, SweepPlan};
use crate::vfit::{FitOptions, Weighting};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    Scr { scr: f64, x_over_r: f64 },
    Impedance { r_g: f64, l_g: f64 },
}

impl GridSpec {
    pub fn params(&self) -> Result<GridParams> {
        match *self {
            GridSpec::Scr { scr, .. } if scr.is_infinite() => Ok(GridParams::infinite_bus()),
            GridSpec::Scr { scr, x_over_r } => GridParams::from_scr(scr, x_over_r),
            GridSpec::Impedance { r_g, l_g } => {
                let g = GridParams::new(r_g, l_g);
                g.validate()?;
                Ok(g)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    pub min_cycles: usize,
    /// Align every tone to a bin of its window.
    pub coherent: bool,
    pub run: RunSettings,
    /// Standard deviation of additive measurement noise (p.u.); 0 disables.
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSpec {
    pub variant: PllVariant,
    /// Overrides the default corner (Hz).
    pub hpf_corner: Option<f64>,
    pub switch_release: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSpec {
    pub rms_target: f64,
    pub max_poles: usize,
    pub options: FitOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilitySpec {
    pub scr_min: f64,
    pub scr_max: f64,
    pub scr_step: f64,
    pub x_over_r: f64,
    /// Grid strength the time-domain probe settles on before switching.
    pub scr_initial: f64,
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateSpec {
    pub t_end: f64,
    /// Grid switch time (s) and the SCR switched to, if any.
    pub switch_time: Option<f64>,
    pub switch_scr: Option<f64>,
    pub decimation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub inverter: InverterParams,
    pub operating: OperatingPoint,
    pub grid: GridSpec,
    pub sim: SimConfig,
    pub settle: SteadyCriteria,
    pub sweep: SweepSpec,
    pub probe: ProbeSpec,
    pub extract: ExtractOptions,
    pub fit: FitSpec,
    pub stability: StabilitySpec,
    pub simulate: SimulateSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            inverter: InverterParams::default(),
            operating: OperatingPoint::default(),
            grid: GridSpec::Scr {
                scr: f64::INFINITY,
                x_over_r: 6.0,
            },
            sim: SimConfig::default(),
            settle: SteadyCriteria::default(),
            sweep: SweepSpec {
                f_min: 1.0,
                f_max: 200.0,
                n_points: 40,
                min_cycles: 10,
                coherent: true,
                run: RunSettings::default(),
                noise_sigma: 0.0,
                seed: 1,
            },
            probe: ProbeSpec {
                variant: PllVariant::HighBandwidth,
                hpf_corner: None,
                switch_release: 0.5,
            },
            extract: ExtractOptions::default(),
            fit: FitSpec {
                rms_target: 1e-3,
                max_poles: 20,
                options: FitOptions {
                    fit_d: false,
                    ..FitOptions::default()
                },
            },
            stability: StabilitySpec {
                scr_min: 1.3,
                scr_max: 4.0,
                scr_step: 0.1,
                x_over_r: 6.0,
                scr_initial: 4.0,
                duration: 6.0,
            },
            simulate: SimulateSpec {
                t_end: 2.0,
                switch_time: None,
                switch_scr: None,
                decimation: 10,
            },
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Unit {
    Voltage,
    Current,
    PerUnit,
    Plain,
}

struct Entry {
    line: usize,
    value: String,
}

struct Reader<'a> {
    origin: &'a str,
    entries: BTreeMap<String, Entry>,
    bases: Bases,
}

impl Reader<'_> {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line,
            msg: msg.into(),
        }
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn num(&mut self, key: &str, unit: Unit, into: &mut f64) -> Result<()> {
        let Some(e) = self.take(key) else { return Ok(()) };
        let mut parts = e.value.split_whitespace();
        let raw = parts.next().unwrap_or("");
        let suffix = parts.next();
        if parts.next().is_some() {
            return Err(self.err(e.line, format!("`{key}`: trailing text in `{}`", e.value)));
        }
        let v = match raw {
            "inf" | "infinity" => f64::INFINITY,
            _ => raw
                .parse::<f64>()
                .map_err(|_| self.err(e.line, format!("`{key}`: `{raw}` is not a number")))?,
        };
        *into = match (suffix, unit) {
            (None, _) => v,
            (Some("pu"), Unit::Voltage | Unit::Current | Unit::PerUnit) => v,
            (Some("kV"), Unit::Voltage) => self.bases.kv_to_pu(v),
            (Some("kA"), Unit::Current) => self.bases.ka_to_pu(v),
            (Some(s), _) => return Err(self.err(e.line, format!("`{key}`: unit `{s}` not accepted here"))),
        };
        Ok(())
    }

    fn int(&mut self, key: &str, into: &mut usize) -> Result<()> {
        let Some(e) = self.take(key) else { return Ok(()) };
        *into = e
            .value
            .parse()
            .map_err(|_| self.err(e.line, format!("`{key}`: `{}` is not a non-negative integer", e.value)))?;
        Ok(())
    }

    fn boolean(&mut self, key: &str, into: &mut bool) -> Result<()> {
        let Some(e) = self.take(key) else { return Ok(()) };
        *into = match e.value.as_str() {
            "true" | "yes" | "on" => true,
            "false" | "no" | "off" => false,
            v => return Err(self.err(e.line, format!("`{key}`: `{v}` is not a boolean"))),
        };
        Ok(())
    }

    fn word<T>(&mut self, key: &str, parse: impl Fn(&str) -> Option<T>, into: &mut T) -> Result<()> {
        let Some(e) = self.take(key) else { return Ok(()) };
        *into = parse(&e.value).ok_or_else(|| self.err(e.line, format!("`{key}`: unknown value `{}`", e.value)))?;
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut r = Reader {
            origin,
            entries: BTreeMap::new(),
            bases: Bases::default(),
        };
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| r.err(k + 1, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if !key.contains('.') {
                return Err(r.err(k + 1, format!("key `{key}` lacks a section prefix")));
            }
            if r.entries.contains_key(&key) {
                return Err(r.err(k + 1, format!("`{key}` set twice")));
            }
            r.entries.insert(
                key,
                Entry {
                    line: k + 1,
                    value: value.trim().to_string(),
                },
            );
        }

        let mut c = ExperimentConfig::default();
        let inv = &mut c.inverter;
        r.num("inverter.l", Unit::PerUnit, &mut inv.l)?;
        r.num("inverter.r_l", Unit::PerUnit, &mut inv.r_l)?;
        r.num("inverter.kp_i", Unit::Plain, &mut inv.kp_i)?;
        r.num("inverter.ki_i", Unit::Plain, &mut inv.ki_i)?;
        r.num("inverter.kp_pll", Unit::Plain, &mut inv.kp_pll)?;
        r.num("inverter.ki_pll", Unit::Plain, &mut inv.ki_pll)?;
        r.num("inverter.kp_p", Unit::Plain, &mut inv.kp_p)?;
        r.num("inverter.ki_p", Unit::Plain, &mut inv.ki_p)?;
        r.num("inverter.kp_q", Unit::Plain, &mut inv.kp_q)?;
        r.num("inverter.ki_q", Unit::Plain, &mut inv.ki_q)?;
        r.num("inverter.k_drp", Unit::Plain, &mut inv.k_drp)?;

        let (mut v_t, mut p, mut q) = (c.operating.v_t, c.operating.p, c.operating.q);
        r.num("operating.v_t", Unit::Voltage, &mut v_t)?;
        r.num("operating.p", Unit::PerUnit, &mut p)?;
        r.num("operating.q", Unit::PerUnit, &mut q)?;
        c.operating = OperatingPoint::new(v_t, p, q);

        let mut scr = f64::NAN;
        let mut xr = 6.0;
        let (mut r_g, mut l_g) = (f64::NAN, f64::NAN);
        let scr_line = r.entries.get("grid.scr").map(|e| e.line);
        r.num("grid.scr", Unit::Plain, &mut scr)?;
        r.num("grid.x_over_r", Unit::Plain, &mut xr)?;
        r.num("grid.r_g", Unit::PerUnit, &mut r_g)?;
        r.num("grid.l_g", Unit::PerUnit, &mut l_g)?;
        c.grid = match (scr.is_nan(), r_g.is_nan() && l_g.is_nan()) {
            (false, false) => {
                return Err(r.err(scr_line.unwrap_or(0), "give either grid.scr or grid.r_g/grid.l_g, not both"));
            }
            (false, true) => GridSpec::Scr { scr, x_over_r: xr },
            (true, false) => GridSpec::Impedance {
                r_g: if r_g.is_nan() { 0.0 } else { r_g },
                l_g: if l_g.is_nan() { 0.0 } else { l_g },
            },
            (true, true) => GridSpec::Scr {
                scr: f64::INFINITY,
                x_over_r: xr,
            },
        };

        r.num("sim.dt", Unit::Plain, &mut c.sim.dt)?;
        r.num("sim.settle_window", Unit::Plain, &mut c.settle.window)?;
        r.num("sim.settle_tol", Unit::PerUnit, &mut c.settle.tol)?;
        r.num("sim.settle_max", Unit::Plain, &mut c.settle.max_duration)?;

        let sw = &mut c.sweep;
        r.num("sweep.f_min", Unit::Plain, &mut sw.f_min)?;
        r.num("sweep.f_max", Unit::Plain, &mut sw.f_max)?;
        r.int("sweep.n_points", &mut sw.n_points)?;
        r.int("sweep.min_cycles", &mut sw.min_cycles)?;
        r.boolean("sweep.coherent", &mut sw.coherent)?;
        r.word("sweep.kind", InjectionKind::parse, &mut sw.run.kind)?;
        let unit = match sw.run.kind {
            InjectionKind::SeriesVoltage => Unit::Voltage,
            InjectionKind::ShuntCurrent => Unit::Current,
        };
        r.num("sweep.magnitude", unit, &mut sw.run.magnitude)?;
        r.num("sweep.settle", Unit::Plain, &mut sw.run.settle)?;
        r.int("sweep.decimation", &mut sw.run.decimation)?;
        r.num("sweep.harmonic_threshold", Unit::Plain, &mut sw.run.harmonic_threshold)?;
        r.num("sweep.noise_sigma", Unit::PerUnit, &mut sw.noise_sigma)?;
        let mut seed = sw.seed as usize;
        r.int("sweep.seed", &mut seed)?;
        sw.seed = seed as u64;

        r.word("probe.variant", PllVariant::parse, &mut c.probe.variant)?;
        let mut corner = f64::NAN;
        r.num("probe.hpf_corner", Unit::Plain, &mut corner)?;
        c.probe.hpf_corner = (!corner.is_nan()).then_some(corner);
        r.num("probe.switch_release", Unit::Plain, &mut c.probe.switch_release)?;

        r.boolean("extract.correction", &mut c.extract.correction)?;
        r.word(
            "extract.method",
            |s| match s {
                "two-injection" => Some(Method::TwoInjection),
                "direct" => Some(Method::Direct),
                _ => None,
            },
            &mut c.extract.method,
        )?;
        r.word(
            "extract.bin",
            |s| match s {
                "exact" => Some(BinMode::Exact),
                "nearest" => Some(BinMode::Nearest),
                _ => None,
            },
            &mut c.extract.bin,
        )?;

        r.num("fit.rms_target", Unit::Plain, &mut c.fit.rms_target)?;
        r.int("fit.max_poles", &mut c.fit.max_poles)?;
        r.int("fit.iterations", &mut c.fit.options.n_iterations)?;
        r.boolean("fit.constant_term", &mut c.fit.options.fit_d)?;
        r.word(
            "fit.weighting",
            |s| match s {
                "uniform" => Some(Weighting::Uniform),
                "inverse-magnitude" => Some(Weighting::InverseMagnitude),
                _ => None,
            },
            &mut c.fit.options.weighting,
        )?;

        let st = &mut c.stability;
        r.num("stability.scr_min", Unit::Plain, &mut st.scr_min)?;
        r.num("stability.scr_max", Unit::Plain, &mut st.scr_max)?;
        r.num("stability.scr_step", Unit::Plain, &mut st.scr_step)?;
        r.num("stability.x_over_r", Unit::Plain, &mut st.x_over_r)?;
        r.num("stability.scr_initial", Unit::Plain, &mut st.scr_initial)?;
        r.num("stability.duration", Unit::Plain, &mut st.duration)?;

        r.num("simulate.t_end", Unit::Plain, &mut c.simulate.t_end)?;
        r.int("simulate.decimation", &mut c.simulate.decimation)?;
        let (mut ts, mut ss) = (f64::NAN, f64::NAN);
        r.num("simulate.switch_time", Unit::Plain, &mut ts)?;
        r.num("simulate.switch_scr", Unit::Plain, &mut ss)?;
        c.simulate.switch_time = (!ts.is_nan()).then_some(ts);
        c.simulate.switch_scr = (!ss.is_nan()).then_some(ss);

        if let Some((key, e)) = r.entries.iter().next() {
            return Err(r.err(e.line, format!("unknown key `{key}`")));
        }
        c.validate()?;
        Ok(c)
    }

    /// Cross-module checks applied at load.
    pub fn validate(&self) -> Result<()> {
        self.inverter.validate()?;
        self.operating.validate()?;
        self.grid.params()?;
        self.sim.validate()?;
        if self.sweep.n_points > 0 {
            self.plan()?;
        }
        if !(self.sweep.run.magnitude >= 0.0) || self.sweep.run.decimation == 0 {
            return Err(Error::invalid("sweep magnitude must be >= 0 and decimation >= 1"));
        }
        if !(self.sweep.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        self.probe_config().validate(Some(self.sweep.f_min))?;
        if !(self.fit.rms_target > 0.0) || self.fit.max_poles == 0 {
            return Err(Error::invalid("fit needs a positive rms target and max_poles >= 1"));
        }
        crate::stability::scr_grid(self.stability.scr_min, self.stability.scr_max, self.stability.scr_step)?;
        if !(self.stability.x_over_r > 0.0 && self.stability.scr_initial > 0.0 && self.stability.duration >= 5.0) {
            return Err(Error::invalid("stability needs x/r > 0, a positive initial SCR and duration >= 5 s"));
        }
        if !(self.simulate.t_end > 0.0) || self.simulate.decimation == 0 {
            return Err(Error::invalid("simulate needs t_end > 0 and decimation >= 1"));
        }
        if self.simulate.switch_time.is_some() != self.simulate.switch_scr.is_some() {
            return Err(Error::invalid("simulate.switch_time and simulate.switch_scr go together"));
        }
        Ok(())
    }

    /// Sampling rate of the recorded sweep traces.
    pub fn sample_rate(&self) -> f64 {
        1.0 / (self.sim.dt * self.sweep.run.decimation as f64)
    }

    pub fn plan(&self) -> Result<SweepPlan> {
        let s = &self.sweep;
        let mut plan = if s.coherent {
            plan_frequencies(s.f_min, s.f_max, s.n_points, self.sample_rate(), s.min_cycles)?
        } else {
            plan_off_bin(s.f_min, s.f_max, s.n_points, self.sample_rate(), s.min_cycles)?
        };
        plan.magnitude = s.run.magnitude;
        plan.kind = s.run.kind;
        Ok(plan)
    }

    pub fn probe_config(&self) -> MeasurementPllConfig {
        let mut p = MeasurementPllConfig::for_variant(self.probe.variant, self.sweep.f_min);
        if let Some(c) = self.probe.hpf_corner {
            p.hpf_corner = c;
        }
        p.switch_release = self.probe.switch_release;
        p
    }
}
