//! Phasor extraction at the injected tone and assembly of the 2×2
//! admittance table.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::{Axis, InjectionKind};
use crate::probe::apply_pll_correction;
use crate::pu::CMat2;
use crate::simcore::Trace;
use crate::sweep::RunResult;

/// Largest accepted condition number of the terminal-voltage matrix.
pub const COND_LIMIT: f64 = 1e6;
/// Largest cross-axis / driven-axis voltage ratio for the direct method.
pub const CROSS_AXIS_LIMIT: f64 = 1e-2;

/// Fourier coefficients of terminal voltage and current at one frequency,
/// in the grid frame when corrected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasorSample {
    pub freq: f64,
    pub v: [Complex64; 2],
    pub i: [Complex64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// `Y = I V⁻¹` from the d and q runs together.
    TwoInjection,
    /// Column-by-column ratios, valid only when the cross-axis voltage is
    /// negligible.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinMode {
    /// Refuse frequencies that are not on a bin of the window.
    Exact,
    /// Read the nearest bin, as a plain FFT would.
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub correction: bool,
    pub method: Method,
    pub bin: BinMode,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            correction: true,
            method: Method::TwoInjection,
            bin: BinMode::Exact,
        }
    }
}

/// Bin index of `freq` in an `n`-sample window at `fs`.
pub fn bin_index(freq: f64, n: usize, fs: f64, mode: BinMode) -> Result<usize> {
    let k = freq * n as f64 / fs;
    let kr = k.round();
    if mode == BinMode::Exact && (k - kr).abs() > 1e-6 {
        return Err(Error::OffBin { freq, n, fs });
    }
    if kr < 1.0 || kr >= n as f64 / 2.0 {
        return Err(Error::OffBin { freq, n, fs });
    }
    Ok(kr as usize)
}

/// Single-sided DFT bin `k` of `x`: a coherent `A cos(ωt + φ)` yields `A e^{jφ}`.
pub fn dft_bin(x: &[f64], k: usize) -> Complex64 {
    let n = x.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for (m, v) in x.iter().enumerate() {
        let idx = (k as u128 * m as u128 % n as u128) as f64;
        let (s, c) = (2.0 * PI * idx / n as f64).sin_cos();
        acc += Complex64::new(v * c, -v * s);
    }
    acc * (2.0 / n as f64)
}

fn channel<'a>(trace: &'a Trace, name: &str) -> Result<&'a [f64]> {
    trace
        .channel(name)
        .ok_or_else(|| Error::invalid(format!("trace has no `{name}` channel")))
}

/// Fourier coefficients at `freq`, after rotating every sample back by the
/// recorded measurement-PLL angle when `correction` is set.
pub fn extract_phasor(trace: &Trace, freq: f64, correction: bool) -> Result<PhasorSample> {
    extract_phasor_with(trace, freq, correction, BinMode::Exact)
}

pub fn extract_phasor_with(trace: &Trace, freq: f64, correction: bool, mode: BinMode) -> Result<PhasorSample> {
    let n = trace.len();
    let k = bin_index(freq, n, trace.sample_rate(), mode)?;
    let vd = channel(trace, "v_d")?;
    let vq = channel(trace, "v_q")?;
    let id = channel(trace, "i_d")?;
    let iq = channel(trace, "i_q")?;
    let (vd, vq, id, iq) = if correction {
        let th = channel(trace, "dtheta_filtered")?;
        let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for m in 0..n {
            let v = apply_pll_correction([vd[m], vq[m]], th[m]);
            let i = apply_pll_correction([id[m], iq[m]], th[m]);
            out[0][m] = v[0];
            out[1][m] = v[1];
            out[2][m] = i[0];
            out[3][m] = i[1];
        }
        let [a, b, c, d] = out;
        (a, b, c, d)
    } else {
        (vd.to_vec(), vq.to_vec(), id.to_vec(), iq.to_vec())
    };
    let s = PhasorSample {
        freq,
        v: [dft_bin(&vd, k), dft_bin(&vq, k)],
        i: [dft_bin(&id, k), dft_bin(&iq, k)],
    };
    if s.v.iter().chain(&s.i).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::invalid(format!("non-finite phasor at {freq} Hz")));
    }
    Ok(s)
}

fn svd2(m: &CMat2) -> (f64, f64) {
    // singular values from the eigenvalues of MᴴM
    let h = m.adjoint() * m;
    let a = h[(0, 0)].re;
    let d = h[(1, 1)].re;
    let b = h[(0, 1)].norm();
    let tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let hi = (tr + disc).max(0.0).sqrt();
    let lo = (tr - disc).max(0.0).sqrt();
    (hi, lo)
}

/// 2-norm condition number of a complex 2×2 matrix.
pub fn cond2(m: &CMat2) -> f64 {
    let (hi, lo) = svd2(m);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `Y = I V⁻¹` with the d-run in the first column and the q-run in the second.
pub fn admittance_two_injections(d: &PhasorSample, q: &PhasorSample) -> Result<CMat2> {
    let v = CMat2::new(d.v[0], q.v[0], d.v[1], q.v[1]);
    let i = CMat2::new(d.i[0], q.i[0], d.i[1], q.i[1]);
    let c = cond2(&v);
    if !(c <= COND_LIMIT) {
        return Err(Error::IllConditioned { freq: d.freq, cond: c });
    }
    let vinv = v
        .try_inverse()
        .ok_or(Error::IllConditioned { freq: d.freq, cond: c })?;
    Ok(i * vinv)
}

/// One column of Y from a single driven axis.
pub fn admittance_direct(s: &PhasorSample, axis: Axis) -> Result<[Complex64; 2]> {
    let (drv, cross) = match axis {
        Axis::D => (s.v[0], s.v[1]),
        Axis::Q => (s.v[1], s.v[0]),
    };
    let ratio = cross.norm() / drv.norm();
    if !(ratio < CROSS_AXIS_LIMIT) {
        return Err(Error::CrossAxisVoltage { freq: s.freq, ratio });
    }
    Ok([s.i[0] / drv, s.i[1] / drv])
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TableMeta {
    pub entries: BTreeMap<String, String>,
}

impl TableMeta {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Per-frequency 2×2 admittance samples (p.u.).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdmittanceTable {
    pub freqs: Vec<f64>,
    pub y: Vec<CMat2>,
    pub meta: TableMeta,
}

pub const TABLE_HEADER: &str = "freq_hz,Re_Ydd,Im_Ydd,Re_Ydq,Im_Ydq,Re_Yqd,Im_Yqd,Re_Yqq,Im_Yqq";

impl AdmittanceTable {
    pub fn new(freqs: Vec<f64>, y: Vec<CMat2>) -> Result<Self> {
        let t = AdmittanceTable {
            freqs,
            y,
            meta: TableMeta::default(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.y.len() {
            return Err(Error::invalid("frequency and sample counts differ"));
        }
        if self.freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("table frequencies must be strictly increasing"));
        }
        if self.y.iter().flat_map(|m| m.iter()).any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid("table contains non-finite admittances"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        s.push_str(TABLE_HEADER);
        s.push('\n');
        for (f, m) in self.freqs.iter().zip(&self.y) {
            write!(s, "{f:e}").unwrap();
            for z in [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]] {
                write!(s, ",{:e},{:e}", z.re, z.im).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(self.to_csv_string().as_bytes())
    }

    pub fn read_csv<R: BufRead>(r: R, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let mut lines = r.lines();
        let head = lines.next().ok_or_else(|| perr(1, "empty file".into()))??;
        if head.trim() != TABLE_HEADER {
            return Err(perr(1, format!("expected header `{TABLE_HEADER}`")));
        }
        let mut freqs = Vec::new();
        let mut y = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| perr(k + 2, e.to_string()))?;
            if v.len() != 9 {
                return Err(perr(k + 2, format!("expected 9 columns, got {}", v.len())));
            }
            freqs.push(v[0]);
            let c = |a: usize| Complex64::new(v[a], v[a + 1]);
            y.push(CMat2::new(c(1), c(3), c(5), c(7)));
        }
        AdmittanceTable::new(freqs, y).map_err(|e| perr(0, e.to_string()))
    }

    /// Writes `path` and the `key = value` sidecar `path.meta`.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        let mut meta = String::new();
        for (k, v) in &self.meta.entries {
            writeln!(meta, "{k} = {v}").unwrap();
        }
        std::fs::write(meta_path(path), meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut t = Self::read_csv(std::io::BufReader::new(f), &path.display().to_string())?;
        if let Ok(text) = std::fs::read_to_string(meta_path(path)) {
            for line in text.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    t.meta.set(k.trim(), v.trim());
                }
            }
        }
        Ok(t)
    }
}

fn meta_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    s.into()
}

/// Assemble the table from paired d/q runs.
pub fn build_table(results: &[RunResult], opts: ExtractOptions) -> Result<AdmittanceTable> {
    let mut by_freq: BTreeMap<u64, [Option<&RunResult>; 2]> = BTreeMap::new();
    for r in results {
        let slot = by_freq.entry(r.spec.freq.to_bits()).or_default();
        slot[r.spec.axis.index()] = Some(r);
    }
    let missing: Vec<f64> = by_freq
        .iter()
        .filter(|(_, s)| s[0].is_none() || s[1].is_none())
        .map(|(f, _)| f64::from_bits(*f))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteSweep(missing));
    }
    let mut pairs: Vec<(f64, &RunResult, &RunResult)> = by_freq
        .values()
        .map(|s| (s[0].unwrap().spec.freq, s[0].unwrap(), s[1].unwrap()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut freqs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    for (f, rd, rq) in pairs {
        let pd = extract_phasor_with(&rd.trace, f, opts.correction, opts.bin)?;
        let pq = extract_phasor_with(&rq.trace, f, opts.correction, opts.bin)?;
        let y = match opts.method {
            Method::TwoInjection => admittance_two_injections(&pd, &pq)?,
            Method::Direct => {
                let cd = admittance_direct(&pd, Axis::D)?;
                let cq = admittance_direct(&pq, Axis::Q)?;
                CMat2::new(cd[0], cq[0], cd[1], cq[1])
            }
        };
        freqs.push(f);
        ys.push(y);
    }
    let mut t = AdmittanceTable::new(freqs, ys)?;
    if let Some(r) = results.first() {
        t.meta.set("injection_kind", r.spec.kind.as_str());
        t.meta.set("magnitude_pu", format!("{:e}", r.spec.magnitude));
    }
    t.meta.set("correction", opts.correction);
    t.meta.set(
        "method",
        match opts.method {
            Method::TwoInjection => "two-injection",
            Method::Direct => "direct",
        },
    );
    Ok(t)
}

/// Add zero-mean Gaussian noise of standard deviation `sigma` to the
/// measured voltage and current channels.
pub fn add_measurement_noise(trace: &mut Trace, sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for name in ["v_d", "v_q", "i_d", "i_q"] {
        if let Some(ch) = trace.channel_mut(name) {
            for v in ch.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }
}

pub fn frobenius(m: &CMat2) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ‖a − b‖_F / ‖b‖_F.
pub fn relative_error(a: &CMat2, b: &CMat2) -> f64 {
    frobenius(&(a - b)) / frobenius(b)
}

/// Per-frequency comparison of a measured table against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub freqs: Vec<f64>,
    /// Relative Frobenius error of the whole matrix.
    pub frobenius: Vec<f64>,
    /// Relative Frobenius error over Ydd, Ydq and Yqq only.
    pub main: Vec<f64>,
    /// Relative error of each element, `[dd, dq, qd, qq]`.
    pub elements: Vec<[f64; 4]>,
}

pub fn compare(measured: &AdmittanceTable, reference: &AdmittanceTable) -> Result<Comparison> {
    if measured.len() != reference.len()
        || measured
            .freqs
            .iter()
            .zip(&reference.freqs)
            .any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
    {
        return Err(Error::invalid("tables are sampled at different frequencies"));
    }
    let mut c = Comparison {
        freqs: measured.freqs.clone(),
        frobenius: Vec::new(),
        main: Vec::new(),
        elements: Vec::new(),
    };
    for (a, b) in measured.y.iter().zip(&reference.y) {
        c.frobenius.push(relative_error(a, b));
        let idx = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let el = idx.map(|ij| (a[ij] - b[ij]).norm() / b[ij].norm());
        c.elements.push(el);
        let num: f64 = [(0, 0), (0, 1), (1, 1)].iter().map(|&ij| (a[ij] - b[ij]).norm_sqr()).sum();
        let den: f64 = [(0, 0), (0, 1), (1, 1)].iter().map(|&ij| b[ij].norm_sqr()).sum();
        c.main.push((num / den).sqrt());
    }
    Ok(c)
}

impl Comparison {
    pub fn max_frobenius(&self) -> f64 {
        self.frobenius.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_frobenius(&self) -> f64 {
        if self.frobenius.is_empty() {
            0.0
        } else {
            self.frobenius.iter().sum::<f64>() / self.frobenius.len() as f64
        }
    }

    pub fn max_main(&self) -> f64 {
        self.main.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_element(&self, k: usize) -> f64 {
        self.elements.iter().map(|e| e[k]).fold(0.0, f64::max)
    }

    /// Identification accuracy gate: `dd`, `dq`, `qq` within `tol_main`
    /// jointly and `qd` within `tol_qd` at every frequency.
    pub fn within(&self, tol_main: f64, tol_qd: f64) -> bool {
        self.main.iter().all(|e| *e <= tol_main) && self.elements.iter().all(|e| e[2] <= tol_qd)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("freq_hz,rel_fro,rel_dd,rel_dq,rel_qd,rel_qq\n");
        for (k, f) in self.freqs.iter().enumerate() {
            let e = self.elements[k];
            writeln!(s, "{f:e},{:e},{:e},{:e},{:e},{:e}", self.frobenius[k], e[0], e[1], e[2], e[3]).unwrap();
        }
        s
    }
}

/// Injection kind recorded in a table's metadata, if any.
pub fn table_kind(t: &AdmittanceTable) -> Option<InjectionKind> {
    t.meta.get("injection_kind").and_then(InjectionKind::parse)
}
