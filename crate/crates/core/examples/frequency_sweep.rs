//! Inject tones through a series voltage source, extract the dq
//! admittance and compare it with the linearized model.
//!
//! ```text
//! cargo run --release --example frequency_sweep
//! ```

use admitlab::analytic::{freq_response, oracle_admittance};
use admitlab::bench::{Device, Testbench};
use admitlab::extract::{build_table, compare, ExtractOptions};
use admitlab::network::GridParams;
use admitlab::plant::{InverterParams, OperatingPoint};
use admitlab::probe::MeasurementPllConfig;
use admitlab::simcore::{SimConfig, SteadyCriteria};
use admitlab::sweep::{execute_sweep, plan_frequencies, RunSettings};

fn main() -> admitlab::Result<()> {
    let prm = InverterParams::default();
    let op = OperatingPoint::default();
    let settings = RunSettings::default();
    let sim = SimConfig {
        record_decimation: settings.decimation,
        ..SimConfig::default()
    };
    let f_min = 1.0;

    let bench = Testbench::new(Device::inverter(prm, &op), GridParams::from_scr(4.0, 6.0)?.dispatched(&op)?)
        .with_probe(MeasurementPllConfig::high_bandwidth(f_min));
    let snap = bench.settle(&op, sim, SteadyCriteria::default())?;

    let mut plan = plan_frequencies(f_min, 200.0, 12, sim.sample_rate(), 10)?;
    plan.magnitude = settings.magnitude;
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcome = execute_sweep(&snap, &plan, &settings, jobs)?;
    let measured = build_table(&outcome.complete(), ExtractOptions::default())?;

    let oracle = freq_response(&oracle_admittance(&prm, &op)?, &measured.freqs)?;
    let cmp = compare(&measured, &oracle)?;
    println!("{:>9} {:>10} {:>10} {:>10} {:>10}", "f (Hz)", "err dd", "err dq", "err qd", "err qq");
    for (k, f) in measured.freqs.iter().enumerate() {
        let e = cmp.elements[k];
        println!("{f:>9.3} {:>9.3}% {:>9.3}% {:>9.3}% {:>9.3}%", 100.0 * e[0], 100.0 * e[1], 100.0 * e[2], 100.0 * e[3]);
    }
    println!("worst joint dd/dq/qq error {:.3}%", 100.0 * cmp.max_main());
    Ok(())
}
