//! Fit a rational model to a sampled admittance, pick the order from the
//! error curve, and realize the result as a state-space system.

use admitlab::analytic::{freq_response, oracle_admittance};
use admitlab::plant::{InverterParams, OperatingPoint};
use admitlab::vfit::{auto_order_fit, realize_state_space, FitOptions};

fn main() -> admitlab::Result<()> {
    let y = oracle_admittance(&InverterParams::default(), &OperatingPoint::default())?;
    let freqs: Vec<f64> = (0..60).map(|k| 10f64.powf(k as f64 / 59.0 * 2.3)).collect();
    let table = freq_response(&y, &freqs)?;

    let opts = FitOptions {
        fit_d: false,
        ..FitOptions::default()
    };
    let (model, report) = auto_order_fit(&table, 1e-3, 12, &opts)?;
    print!("{}", report.to_text());
    println!("selected poles:");
    for p in &model.poles {
        println!("  {:+12.4} {:+12.4}j", p.re, p.im);
    }

    let ss = realize_state_space(&model)?;
    let worst = freqs
        .iter()
        .map(|&f| {
            let a = ss.response2(f).unwrap();
            let b = model.eval_hz(f);
            (a - b).norm() / b.norm()
        })
        .fold(0.0, f64::max);
    println!("realization: {} states, max deviation from the pole-residue form {worst:.2e}", ss.n_states());
    println!("\n{}", model.to_text());
    Ok(())
}
