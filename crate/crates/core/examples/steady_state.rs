//! Settle the inverter on a moderately weak grid and print the recorded
//! channels at steady state.
//!
//! ```text
//! cargo run --release --example steady_state
//! ```

use admitlab::bench::{Device, Testbench};
use admitlab::network::GridParams;
use admitlab::plant::{InverterParams, OperatingPoint};
use admitlab::simcore::{self, SimConfig, SteadyCriteria};

fn main() -> admitlab::Result<()> {
    let op = OperatingPoint::default();
    let grid = GridParams::from_scr(4.0, 6.0)?.dispatched(&op)?;
    println!("grid: r_g = {:.5} pu, l_g = {:.5} pu, |v_g| = {:.4} pu", grid.r_g, grid.l_g, grid.v_g_mag);

    let bench = Testbench::new(Device::inverter(InverterParams::default(), &op), grid);
    let snap = bench.settle(&op, SimConfig::default(), SteadyCriteria::default())?;
    println!("settled at t = {:.3} s", snap.state.t);

    let mut state = snap.restore();
    let trace = simcore::record_samples(&snap.system, &mut state, snap.config.dt, 200, 20)?;
    for name in trace.names() {
        let x = trace.channel(name).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let ptp = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        println!("{name:>16}: {mean:+.6}  (ptp {ptp:.1e})");
    }
    Ok(())
}
