//! Close the loop between the inverter admittance and grids of falling
//! strength and report where the dominant eigenvalue crosses into the
//! right half plane.

use admitlab::analytic::oracle_admittance;
use admitlab::plant::{InverterParams, OperatingPoint};
use admitlab::stability::{boundary, scr_grid, scr_sweep};

fn main() -> admitlab::Result<()> {
    let y = oracle_admittance(&InverterParams::default(), &OperatingPoint::default())?;
    let scrs = scr_grid(1.0, 4.0, 0.1)?;
    let verdicts = scr_sweep(&y, &scrs, 6.0)?;
    println!("{:>5} {:>8} {:>14} {:>10}", "scr", "stable", "max Re", "f (Hz)");
    for v in &verdicts {
        println!("{:>5.1} {:>8} {:>14.3} {:>10.3}", v.scr, v.stable, v.max_re_eig, v.dominant_freq_hz);
    }
    match boundary(&verdicts) {
        Some(b) => println!("weakest stable grid on this grid of points: SCR {b}"),
        None => println!("no instability in range"),
    }
    Ok(())
}
