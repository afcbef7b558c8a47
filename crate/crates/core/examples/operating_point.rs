//! Grid source needed to hold the terminal at its set point, and the
//! largest power each grid strength can carry.

use admitlab::network::{max_transfer, scr_to_impedance, solve_operating_point};
use admitlab::plant::OperatingPoint;
use num_complex::Complex64;

fn main() {
    let op = OperatingPoint::default();
    println!("terminal: V = {} pu, P = {} pu, Q = {} pu", op.v_t, op.p, op.q);
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "scr", "r_g", "l_g", "|v_g|", "p_max");
    for scr in [10.0, 4.0, 2.0, 1.6, 1.3, 1.0, 0.8] {
        let (r, l) = scr_to_impedance(scr, 6.0).unwrap();
        match solve_operating_point(r, l, &op) {
            Ok((vg, _)) => {
                let pmax = max_transfer(vg, Complex64::new(r, l), op.q);
                println!("{scr:>6} {r:>10.5} {l:>10.5} {vg:>10.5} {pmax:>10.4}");
            }
            Err(e) => println!("{scr:>6} {r:>10.5} {l:>10.5}  {e}"),
        }
    }
}
