//! Common-pole vector fitting of 2×2 frequency responses, order selection
//! and minimal state-space realization.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::extract::AdmittanceTable;
use crate::pu::CMat2;
use crate::statespace::StateSpaceModel;

/// Poles whose imaginary part is below this fraction of their magnitude
/// are treated as real.
const REAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RationalModel {
    /// Closed under conjugation; each complex pair is stored as `p, p*`.
    pub poles: Vec<Complex64>,
    pub residues: Vec<CMat2>,
    pub d: Matrix2<f64>,
    pub e: Matrix2<f64>,
    pub fit_rms: f64,
}

impl RationalModel {
    pub fn eval(&self, s: Complex64) -> CMat2 {
        let mut h = self.d.map(|v| Complex64::new(v, 0.0)) + self.e.map(|v| Complex64::new(v, 0.0)) * s;
        for (p, r) in self.poles.iter().zip(&self.residues) {
            h += r * (Complex64::new(1.0, 0.0) / (s - p));
        }
        h
    }

    pub fn eval_hz(&self, f: f64) -> CMat2 {
        self.eval(Complex64::new(0.0, 2.0 * PI * f))
    }

    pub fn order(&self) -> usize {
        self.poles.len()
    }

    /// Conjugate closure of poles and residues.
    pub fn validate(&self) -> Result<()> {
        if self.poles.len() != self.residues.len() {
            return Err(Error::invalid("pole and residue counts differ"));
        }
        let mut k = 0;
        while k < self.poles.len() {
            let p = self.poles[k];
            if !(p.re.is_finite() && p.im.is_finite()) {
                return Err(Error::invalid("non-finite pole"));
            }
            if is_real(p) {
                if self.residues[k].iter().any(|z| z.im.abs() > 1e-9 * z.norm().max(1e-300)) {
                    return Err(Error::invalid(format!("real pole {p} has a complex residue")));
                }
                k += 1;
            } else {
                let ok = k + 1 < self.poles.len()
                    && (self.poles[k + 1] - p.conj()).norm() <= 1e-12 * p.norm()
                    && self.residues[k + 1]
                        .iter()
                        .zip(self.residues[k].iter())
                        .all(|(a, b)| (a - b.conj()).norm() <= 1e-12 * b.norm().max(1e-300));
                if !ok {
                    return Err(Error::invalid(format!("pole {p} lacks its conjugate partner")));
                }
                k += 2;
            }
        }
        Ok(())
    }

    /// Plain-text export that round-trips every value exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# common-pole rational model, poles in rad/s\n");
        writeln!(s, "fit_rms {:e}", self.fit_rms).unwrap();
        writeln!(s, "order {}", self.poles.len()).unwrap();
        for (p, r) in self.poles.iter().zip(&self.residues) {
            writeln!(s, "pole {:e} {:e}", p.re, p.im).unwrap();
            write!(s, "residue").unwrap();
            for z in [r[(0, 0)], r[(0, 1)], r[(1, 0)], r[(1, 1)]] {
                write!(s, " {:e} {:e}", z.re, z.im).unwrap();
            }
            s.push('\n');
        }
        writeln!(s, "d {:e} {:e} {:e} {:e}", self.d[(0, 0)], self.d[(0, 1)], self.d[(1, 0)], self.d[(1, 1)]).unwrap();
        writeln!(s, "e {:e} {:e} {:e} {:e}", self.e[(0, 0)], self.e[(0, 1)], self.e[(1, 0)], self.e[(1, 1)]).unwrap();
        s
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, msg: &str| Error::Parse {
            path: origin.to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut fit_rms = None;
        let mut order = None;
        let mut poles = Vec::new();
        let mut residues = Vec::new();
        let mut d = None;
        let mut e = None;
        for (k, raw) in text.lines().enumerate() {
            let ln = k + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap();
            let nums: Vec<f64> = it
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|err| perr(ln, &err.to_string()))?;
            let want = |n: usize| {
                if nums.len() == n {
                    Ok(())
                } else {
                    Err(perr(ln, &format!("`{key}` takes {n} numbers, got {}", nums.len())))
                }
            };
            match key {
                "fit_rms" => {
                    want(1)?;
                    fit_rms = Some(nums[0]);
                }
                "order" => {
                    want(1)?;
                    if nums[0] < 0.0 || nums[0].fract() != 0.0 {
                        return Err(perr(ln, "order must be a non-negative integer"));
                    }
                    order = Some(nums[0] as usize);
                }
                "pole" => {
                    want(2)?;
                    if residues.len() != poles.len() {
                        return Err(perr(ln, "pole without a residue line"));
                    }
                    poles.push(Complex64::new(nums[0], nums[1]));
                }
                "residue" => {
                    want(8)?;
                    if residues.len() + 1 != poles.len() {
                        return Err(perr(ln, "residue must follow its pole"));
                    }
                    let c = |a: usize| Complex64::new(nums[a], nums[a + 1]);
                    residues.push(CMat2::new(c(0), c(2), c(4), c(6)));
                }
                "d" | "e" => {
                    want(4)?;
                    let m = Matrix2::new(nums[0], nums[1], nums[2], nums[3]);
                    if key == "d" {
                        d = Some(m);
                    } else {
                        e = Some(m);
                    }
                }
                _ => return Err(perr(ln, &format!("unknown key `{key}`"))),
            }
        }
        let order = order.ok_or_else(|| perr(0, "missing `order`"))?;
        if poles.len() != order || residues.len() != order {
            return Err(perr(0, &format!("declared order {order} but found {} poles", poles.len())));
        }
        let m = RationalModel {
            poles,
            residues,
            d: d.ok_or_else(|| perr(0, "missing `d`"))?,
            e: e.unwrap_or_else(Matrix2::zeros),
            fit_rms: fit_rms.unwrap_or(f64::NAN),
        };
        m.validate().map_err(|err| perr(0, &err.to_string()))?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn is_real(p: Complex64) -> bool {
    p.im.abs() <= REAL_TOL * p.norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    Uniform,
    InverseMagnitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub n_iterations: usize,
    pub weighting: Weighting,
    pub fit_d: bool,
    pub fit_e: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            n_iterations: 20,
            weighting: Weighting::Uniform,
            fit_d: true,
            fit_e: false,
        }
    }
}

/// Pole set with each complex pair represented once (positive imaginary
/// part).
#[derive(Debug, Clone)]
struct PoleSet {
    poles: Vec<Complex64>,
}

impl PoleSet {
    /// Real basis size.
    fn n(&self) -> usize {
        self.poles.iter().map(|p| if is_real(*p) { 1 } else { 2 }).sum()
    }

    /// Real-coefficient basis functions at `s`.
    fn basis(&self, s: Complex64, out: &mut Vec<Complex64>) {
        out.clear();
        let one = Complex64::new(1.0, 0.0);
        let j = Complex64::new(0.0, 1.0);
        for p in &self.poles {
            if is_real(*p) {
                out.push(one / (s - p.re));
            } else {
                let a = one / (s - p);
                let b = one / (s - p.conj());
                out.push(a + b);
                out.push(j * a - j * b);
            }
        }
    }

    /// Zeros of `1 + Σ c̃ φ` via the eigenvalues of `A − b c̃ᵀ`.
    fn relocate(&self, ct: &[f64]) -> Vec<Complex64> {
        let n = self.n();
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        let mut k = 0;
        for p in &self.poles {
            if is_real(*p) {
                a[(k, k)] = p.re;
                b[k] = 1.0;
                k += 1;
            } else {
                a[(k, k)] = p.re;
                a[(k, k + 1)] = p.im;
                a[(k + 1, k)] = -p.im;
                a[(k + 1, k + 1)] = p.re;
                b[k] = 2.0;
                k += 2;
            }
        }
        let ctv = DVector::from_column_slice(ct);
        let m = a - b * ctv.transpose();
        m.complex_eigenvalues().iter().copied().collect()
    }

    fn from_eigen(ev: &[Complex64]) -> PoleSet {
        let mut poles: Vec<Complex64> = ev
            .iter()
            .filter(|p| is_real(**p) || p.im > 0.0)
            .map(|p| {
                let re = if p.re > 0.0 { -p.re } else { p.re };
                if is_real(*p) {
                    Complex64::new(re, 0.0)
                } else {
                    Complex64::new(re, p.im)
                }
            })
            .collect();
        poles.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.im.total_cmp(&b.im)));
        PoleSet { poles }
    }

}

/// Starting poles: pairs with imaginary parts log-spaced over the table's
/// band and real parts at one hundredth of that, plus one real pole for an
/// odd order.
pub fn initial_poles(n_poles: usize, f_lo: f64, f_hi: f64) -> Vec<Complex64> {
    let (w_lo, w_hi) = (2.0 * PI * f_lo.max(1e-6), 2.0 * PI * f_hi.max(f_lo.max(1e-6)));
    let pairs = n_poles / 2;
    let mut v = Vec::new();
    for k in 0..pairs {
        let w = if pairs == 1 {
            (w_lo * w_hi).sqrt()
        } else {
            w_lo * (w_hi / w_lo).powf(k as f64 / (pairs - 1) as f64)
        };
        v.push(Complex64::new(-w / 100.0, w));
        v.push(Complex64::new(-w / 100.0, -w));
    }
    if n_poles % 2 == 1 {
        v.push(Complex64::new(-(w_lo * w_hi).sqrt(), 0.0));
    }
    v
}

fn element(h: &CMat2, e: usize) -> Complex64 {
    h[(e / 2, e % 2)]
}

/// Solve min‖Ax − b‖ with column equilibration. `strict` rejects rank
/// deficiency instead of returning the minimum-norm solution.
fn lstsq(a: DMatrix<f64>, b: DVector<f64>, strict: bool, what: &str) -> Result<DVector<f64>> {
    let ncol = a.ncols();
    if ncol == 0 {
        return Ok(DVector::zeros(0));
    }
    let mut a = a;
    let mut scale = DVector::zeros(ncol);
    for c in 0..ncol {
        let n = a.column(c).norm();
        let s = if n > 0.0 { 1.0 / n } else { 1.0 };
        scale[c] = s;
        a.column_mut(c).scale_mut(s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if strict && !(smin > 1e-13 * smax) {
        return Err(Error::RankDeficient(format!(
            "{what}: singular values span {:.1e}",
            smax / smin.max(f64::MIN_POSITIVE)
        )));
    }
    let x = svd
        .solve(&b, 1e-13 * smax)
        .map_err(|e| Error::RankDeficient(format!("{what}: {e}")))?;
    Ok(x.component_mul(&scale))
}

struct Data<'a> {
    s: Vec<Complex64>,
    h: &'a [CMat2],
    w: Vec<[f64; 4]>,
}

fn prepare(table: &AdmittanceTable, weighting: Weighting) -> Data<'_> {
    let s = table.freqs.iter().map(|f| Complex64::new(0.0, 2.0 * PI * f)).collect();
    let w = table
        .y
        .iter()
        .map(|h| {
            let mut w = [1.0; 4];
            if weighting == Weighting::InverseMagnitude {
                for (e, wv) in w.iter_mut().enumerate() {
                    let m = element(h, e).norm();
                    *wv = if m > 0.0 { 1.0 / m } else { 1.0 };
                }
            }
            w
        })
        .collect();
    Data { s, h: &table.y, w }
}

/// One relocation pass; returns the new pole set.
fn relocation_step(data: &Data, poles: &PoleSet, opts: &FitOptions) -> Result<PoleSet> {
    let n = poles.n();
    let extra = opts.fit_d as usize + opts.fit_e as usize;
    let per = n + extra;
    let ncol = 4 * per + n;
    let k = data.s.len();
    let mut a = DMatrix::zeros(8 * k, ncol);
    let mut b = DVector::zeros(8 * k);
    let mut phi = Vec::with_capacity(n);
    for (row_k, s) in data.s.iter().enumerate() {
        poles.basis(*s, &mut phi);
        for e in 0..4 {
            let hv = element(&data.h[row_k], e);
            let w = data.w[row_k][e];
            let r = 2 * (4 * row_k + e);
            let base = e * per;
            for (c, ph) in phi.iter().enumerate() {
                a[(r, base + c)] = w * ph.re;
                a[(r + 1, base + c)] = w * ph.im;
                let t = -hv * ph;
                a[(r, 4 * per + c)] = w * t.re;
                a[(r + 1, 4 * per + c)] = w * t.im;
            }
            let mut c = base + n;
            if opts.fit_d {
                a[(r, c)] = w;
                c += 1;
            }
            if opts.fit_e {
                a[(r, c)] = w * s.re;
                a[(r + 1, c)] = w * s.im;
            }
            b[r] = w * hv.re;
            b[r + 1] = w * hv.im;
        }
    }
    let x = lstsq(a, b, false, "pole relocation")?;
    let ct: Vec<f64> = x.rows(4 * per, n).iter().copied().collect();
    Ok(PoleSet::from_eigen(&poles.relocate(&ct)))
}

/// Residues, D and E for fixed poles.
fn residue_step(data: &Data, poles: &PoleSet, opts: &FitOptions) -> Result<RationalModel> {
    let n = poles.n();
    let extra = opts.fit_d as usize + opts.fit_e as usize;
    let per = n + extra;
    let k = data.s.len();
    let mut a = DMatrix::zeros(2 * k, per);
    let mut phi = Vec::with_capacity(n);
    for (row_k, s) in data.s.iter().enumerate() {
        poles.basis(*s, &mut phi);
        for (c, ph) in phi.iter().enumerate() {
            a[(2 * row_k, c)] = ph.re;
            a[(2 * row_k + 1, c)] = ph.im;
        }
        let mut c = n;
        if opts.fit_d {
            a[(2 * row_k, c)] = 1.0;
            c += 1;
        }
        if opts.fit_e {
            a[(2 * row_k, c)] = s.re;
            a[(2 * row_k + 1, c)] = s.im;
        }
    }
    let mut coef: Vec<DVector<f64>> = Vec::with_capacity(4);
    for e in 0..4 {
        let mut ae = a.clone();
        let mut b = DVector::zeros(2 * k);
        for row_k in 0..k {
            let w = data.w[row_k][e];
            let hv = element(&data.h[row_k], e);
            b[2 * row_k] = w * hv.re;
            b[2 * row_k + 1] = w * hv.im;
            ae.row_mut(2 * row_k).scale_mut(w);
            ae.row_mut(2 * row_k + 1).scale_mut(w);
        }
        coef.push(lstsq(ae, b, true, "residue identification")?);
    }

    let mut out_poles = Vec::new();
    let mut residues = Vec::new();
    let mut c = 0;
    let mat = |f: &dyn Fn(&DVector<f64>) -> Complex64| {
        CMat2::new(f(&coef[0]), f(&coef[1]), f(&coef[2]), f(&coef[3]))
    };
    for p in &poles.poles {
        if is_real(*p) {
            out_poles.push(Complex64::new(p.re, 0.0));
            residues.push(mat(&|v: &DVector<f64>| Complex64::new(v[c], 0.0)));
            c += 1;
        } else {
            let r = mat(&|v: &DVector<f64>| Complex64::new(v[c], v[c + 1]));
            out_poles.push(*p);
            out_poles.push(p.conj());
            residues.push(r);
            residues.push(r.map(|z| z.conj()));
            c += 2;
        }
    }
    let pick = |off: usize| Matrix2::new(coef[0][off], coef[1][off], coef[2][off], coef[3][off]);
    let d = if opts.fit_d { pick(n) } else { Matrix2::zeros() };
    let e = if opts.fit_e { pick(n + opts.fit_d as usize) } else { Matrix2::zeros() };
    let mut m = RationalModel {
        poles: out_poles,
        residues,
        d,
        e,
        fit_rms: 0.0,
    };
    m.fit_rms = rms_error(&m, data.s.as_slice(), data.h);
    Ok(m)
}

fn rms_error(m: &RationalModel, s: &[Complex64], h: &[CMat2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (sk, hk) in s.iter().zip(h) {
        let diff = m.eval(*sk) - hk;
        num += diff.iter().map(|z| z.norm_sqr()).sum::<f64>();
        den += hk.iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Relative ‖ΔH‖_F / ‖H‖_F of a model over a table.
pub fn fit_error(m: &RationalModel, table: &AdmittanceTable) -> f64 {
    let s: Vec<Complex64> = table.freqs.iter().map(|f| Complex64::new(0.0, 2.0 * PI * f)).collect();
    rms_error(m, &s, &table.y)
}

/// Vector fitting with `n_poles` common poles.
pub fn vector_fit(table: &AdmittanceTable, n_poles: usize, opts: &FitOptions) -> Result<RationalModel> {
    if n_poles == 0 {
        return Err(Error::invalid("at least one pole is required"));
    }
    if table.len() < 2 * n_poles {
        return Err(Error::invalid(format!(
            "{} frequencies cannot support {n_poles} poles (need {})",
            table.len(),
            2 * n_poles
        )));
    }
    let f_lo = table.freqs.first().copied().unwrap_or(1.0);
    let f_hi = table.freqs.last().copied().unwrap_or(1.0);
    vector_fit_from(table, &initial_poles(n_poles, f_lo, f_hi), opts)
}

/// Vector fitting from explicit starting poles.
pub fn vector_fit_from(table: &AdmittanceTable, start: &[Complex64], opts: &FitOptions) -> Result<RationalModel> {
    if opts.fit_e && !opts.fit_d {
        return Err(Error::invalid("a proportional term without a constant term is not supported"));
    }
    let data = prepare(table, opts.weighting);
    let mut poles = PoleSet::from_eigen(start);
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.n_iterations {
        let next = relocation_step(&data, &poles, opts)?;
        if next.poles.len() == poles.poles.len() {
            last_change = next
                .poles
                .iter()
                .zip(&poles.poles)
                .map(|(a, b)| (a - b).norm() / b.norm().max(1e-12))
                .fold(0.0, f64::max);
        }
        poles = next;
    }
    if opts.n_iterations > 0 && last_change > 1e-3 {
        log::warn!("pole relocation still moving after {} iterations (relative change {last_change:.2e})", opts.n_iterations);
    }
    residue_step(&data, &poles, opts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// `(order, fit_rms)` for every order tried.
    pub curve: Vec<(usize, f64)>,
    pub selected: usize,
    pub underfit: bool,
    pub rms_target: f64,
}

impl FitReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "rms_target = {:e}", self.rms_target).unwrap();
        writeln!(s, "selected_order = {}", self.selected).unwrap();
        writeln!(s, "underfit = {}", self.underfit).unwrap();
        s.push_str("order,fit_rms\n");
        for (n, r) in &self.curve {
            writeln!(s, "{n},{r:e}").unwrap();
        }
        s
    }
}

/// Increase the order two poles at a time until `fit_rms ≤ rms_target`.
pub fn auto_order_fit(table: &AdmittanceTable, rms_target: f64, max_poles: usize, opts: &FitOptions) -> Result<(RationalModel, FitReport)> {
    if !(rms_target > 0.0) {
        return Err(Error::invalid("rms target must be positive"));
    }
    let mut report = FitReport {
        curve: Vec::new(),
        selected: 0,
        underfit: true,
        rms_target,
    };
    let mut best: Option<RationalModel> = None;
    let mut n = 2;
    while n <= max_poles.max(2) && table.len() >= 2 * n {
        match vector_fit(table, n, opts) {
            Ok(m) => {
                report.curve.push((n, m.fit_rms));
                let better = best.as_ref().is_none_or(|b| m.fit_rms < b.fit_rms);
                let hit = m.fit_rms <= rms_target;
                if better || hit {
                    report.selected = n;
                    best = Some(m);
                }
                if hit {
                    report.underfit = false;
                    break;
                }
            }
            Err(Error::RankDeficient(msg)) => {
                log::warn!("order {n}: {msg}");
                break;
            }
            Err(e) => return Err(e),
        }
        n += 2;
    }
    let best = best.ok_or_else(|| Error::invalid("table too short for even a two-pole fit"))?;
    if report.underfit {
        log::warn!(
            "target rms {rms_target:e} not reached up to {max_poles} poles; best is {:e} at order {}",
            best.fit_rms,
            report.selected
        );
    }
    Ok((best, report))
}

/// Minimal modal realization: each residue is split into rank-one terms,
/// one state per term for a real pole and a 2×2 rotation block per term
/// for a complex pair.
pub fn realize_state_space(m: &RationalModel) -> Result<StateSpaceModel> {
    m.validate()?;
    if m.e.iter().any(|v| *v != 0.0) {
        return Err(Error::Improper);
    }
    let rmax = m
        .residues
        .iter()
        .flat_map(|r| r.iter())
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let keep = 1e-14 * rmax;
    let mut blocks: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = Vec::new();
    let mut k = 0;
    while k < m.poles.len() {
        let p = m.poles[k];
        let r = m.residues[k];
        if is_real(p) {
            let svd = r.map(|z| z.re).svd(true, true);
            let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            for t in 0..2 {
                let sv = svd.singular_values[t];
                if sv <= keep {
                    continue;
                }
                let rt = sv.sqrt();
                blocks.push((
                    DMatrix::from_element(1, 1, p.re),
                    DMatrix::from_row_slice(1, 2, &[vt[(t, 0)] * rt, vt[(t, 1)] * rt]),
                    DMatrix::from_row_slice(2, 1, &[u[(0, t)] * rt, u[(1, t)] * rt]),
                ));
            }
            k += 1;
            continue;
        }
        let svd = r.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        for t in 0..2 {
            let sv = svd.singular_values[t];
            if sv <= keep {
                continue;
            }
            let rt = sv.sqrt();
            let uc = [u[(0, t)] * rt, u[(1, t)] * rt];
            let w = [vt[(t, 0)] * rt, vt[(t, 1)] * rt];
            {
                blocks.push((
                    DMatrix::from_row_slice(2, 2, &[p.re, -p.im, p.im, p.re]),
                    DMatrix::from_row_slice(2, 2, &[w[0].re, w[1].re, w[0].im, w[1].im]),
                    DMatrix::from_row_slice(2, 2, &[2.0 * uc[0].re, -2.0 * uc[0].im, 2.0 * uc[1].re, -2.0 * uc[1].im]),
                ));
            }
        }
        k += 2;
    }
    let n: usize = blocks.iter().map(|b| b.0.nrows()).sum();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 2);
    let mut c = DMatrix::zeros(2, n);
    let mut o = 0;
    for (ab, bb, cb) in &blocks {
        let s = ab.nrows();
        a.view_mut((o, o), (s, s)).copy_from(ab);
        b.view_mut((o, 0), (s, 2)).copy_from(bb);
        c.view_mut((0, o), (2, s)).copy_from(cb);
        o += s;
    }
    let d = DMatrix::from_row_slice(2, 2, &[m.d[(0, 0)], m.d[(0, 1)], m.d[(1, 0)], m.d[(1, 1)]]);
    StateSpaceModel::new(a, b, c, d)
}

/// Table sampled from a rational model.
pub fn sample_model(m: &RationalModel, freqs: &[f64]) -> Result<AdmittanceTable> {
    AdmittanceTable::new(freqs.to_vec(), freqs.iter().map(|f| m.eval_hz(*f)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| a * (b / a).powf(k as f64 / (n - 1) as f64)).collect()
    }

    fn scalar_table(freqs: &[f64], h: impl Fn(Complex64) -> Complex64) -> AdmittanceTable {
        let z = Complex64::new(0.0, 0.0);
        let y = freqs
            .iter()
            .map(|f| {
                let v = h(Complex64::new(0.0, 2.0 * PI * f));
                CMat2::new(v, z, z, v)
            })
            .collect();
        AdmittanceTable::new(freqs.to_vec(), y).unwrap()
    }

    #[test]
    fn first_order_exact() {
        let freqs = logspace(0.05, 50.0, 20);
        let t = scalar_table(&freqs, |s| Complex64::new(10.0, 0.0) / (s + 5.0));
        let m = vector_fit(&t, 1, &FitOptions::default()).unwrap();
        assert_relative_eq!(m.poles[0].re, -5.0, max_relative = 1e-8);
        assert_relative_eq!(m.residues[0][(0, 0)].re, 10.0, max_relative = 1e-8);
        assert!(m.fit_rms < 1e-8, "{}", m.fit_rms);
    }

    #[test]
    fn constant_data_goes_to_d() {
        let freqs = logspace(1.0, 200.0, 30);
        let c = CMat2::new(
            Complex64::new(0.3, 0.0),
            Complex64::new(-1.0, 0.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(0.7, 0.0),
        );
        let t = AdmittanceTable::new(freqs.clone(), vec![c; freqs.len()]).unwrap();
        let m = vector_fit(&t, 4, &FitOptions::default()).unwrap();
        assert!(m.fit_rms < 1e-10, "{}", m.fit_rms);
        assert_relative_eq!(m.d[(1, 0)], 2.0, epsilon = 1e-9);
        assert!(m.residues.iter().flat_map(|r| r.iter()).all(|z| z.norm() < 1e-8));
    }

    #[test]
    fn infinite_target_takes_order_two() {
        let freqs = logspace(1.0, 100.0, 30);
        let t = scalar_table(&freqs, |s| Complex64::new(10.0, 0.0) / (s + 5.0));
        let (_, rep) = auto_order_fit(&t, f64::INFINITY, 10, &FitOptions::default()).unwrap();
        assert_eq!(rep.selected, 2);
        assert!(!rep.underfit);
    }

    #[test]
    fn realization_of_real_pole_and_pair() {
        let one = Complex64::new(1.0, 0.0);
        let r_real = CMat2::new(one * 2.0, one * 4.0, one, one * 2.0); // rank one
        let rc = CMat2::new(Complex64::new(1.0, 2.0), Complex64::new(0.5, -1.0), Complex64::new(-3.0, 0.1), Complex64::new(0.2, 0.2));
        let p = Complex64::new(-10.0, 100.0);
        let m = RationalModel {
            poles: vec![Complex64::new(-5.0, 0.0), p, p.conj()],
            residues: vec![r_real, rc, rc.map(|z| z.conj())],
            d: Matrix2::new(0.1, 0.0, 0.0, 0.2),
            e: Matrix2::zeros(),
            fit_rms: 0.0,
        };
        let ss = realize_state_space(&m).unwrap();
        assert_eq!(ss.a[(0, 0)], -5.0);
        let ev = ss.eigenvalues();
        assert!(ev.iter().any(|e| (e - p).norm() < 1e-9));
        assert!(ev.iter().any(|e| (e - Complex64::new(-5.0, 0.0)).norm() < 1e-12));
        for f in logspace(0.1, 300.0, 25) {
            let d = ss.response2(f).unwrap() - m.eval_hz(f);
            assert!(d.iter().all(|z| z.norm() < 1e-10), "{f}");
        }
        let mut bad = m.clone();
        bad.e[(0, 0)] = 1e-3;
        assert!(matches!(realize_state_space(&bad), Err(Error::Improper)));
    }

    #[test]
    fn model_text_rejects_garbage() {
        assert!(RationalModel::from_text("order 1\npole 1 2\n", "x").is_err());
        assert!(RationalModel::from_text("bogus 3\n", "x").is_err());
        assert!(RationalModel::from_text("order 2\npole -1 2\nresidue 1 0 0 0 0 0 1 0\nd 0 0 0 0\n", "x").is_err());
    }
}
