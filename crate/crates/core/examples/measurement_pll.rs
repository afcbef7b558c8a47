//! The two measurement-frame trackers: closed-loop response of each PLL
//! and the high-pass filter that removes drift from the frame angle.

use admitlab::probe::{hpf_gain, pll_bandwidth, pll_closed_loop, MeasurementPllConfig};

fn main() {
    let f_min = 1.0;
    for cfg in [MeasurementPllConfig::high_bandwidth(f_min), MeasurementPllConfig::low_bandwidth(f_min)] {
        println!(
            "{:<16} kp = {:<10.4} ki = {:<10.4} bandwidth {:.2} Hz, hpf corner {} Hz",
            cfg.variant.as_str(),
            cfg.kp,
            cfg.ki,
            pll_bandwidth(cfg.kp, cfg.ki, 1.0),
            cfg.hpf_corner
        );
        for f in [0.1, 1.0, 10.0, 100.0] {
            let h = pll_closed_loop(cfg.kp, cfg.ki, 1.0, f);
            println!(
                "    {f:>6} Hz  |T| = {:.4}  arg T = {:+7.2} deg  hpf {:.4}",
                h.norm(),
                h.arg().to_degrees(),
                hpf_gain(f, cfg.hpf_corner)
            );
        }
    }
}
