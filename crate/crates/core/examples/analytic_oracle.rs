//! Linearized admittance of the inverter at its operating point: poles,
//! low-frequency gain and a few points of the frequency response.

use admitlab::analytic::oracle_admittance;
use admitlab::plant::{InverterParams, OperatingPoint};

fn main() -> admitlab::Result<()> {
    let y = oracle_admittance(&InverterParams::default(), &OperatingPoint::default())?;
    println!("{} states, poles:", y.n_states());
    for p in y.eigenvalues() {
        println!("  {:+12.4} {:+12.4}j", p.re, p.im);
    }
    println!("dc gain:\n{:.5}", y.dc_gain()?);
    println!("{:>8} {:>22} {:>22} {:>22} {:>22}", "f (Hz)", "Ydd", "Ydq", "Yqd", "Yqq");
    for f in [1.0, 5.0, 20.0, 60.0, 200.0] {
        let m = y.response2(f)?;
        let c = |z: num_complex::Complex64| format!("{:+.4}{:+.4}j", z.re, z.im);
        println!("{f:>8} {:>22} {:>22} {:>22} {:>22}", c(m[(0, 0)]), c(m[(0, 1)]), c(m[(1, 0)]), c(m[(1, 1)]));
    }
    Ok(())
}
