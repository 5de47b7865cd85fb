//! Blackwell, Stone and left-tail behaviour of the renewal measure of the
//! tilted walk, estimated from path visit counts.

use prw_renewal::model::{ModelSpec, TiltedLaw};
use prw_renewal::renewal::{left_tail_check, renewal_interval_mc, stone_check};

fn main() {
    let z = TiltedLaw::normal(1.0, 2.0);
    for u in [20.0, 30.0, 40.0] {
        let e = renewal_interval_mc(&z, u, u + 1.0, 200_000, 1).unwrap();
        println!("H(({u}, {}]) = {:.4} +- {:.4}   (Blackwell: 1)", u + 1.0, e.value, e.stderr);
    }
    let stone = stone_check(&z, &[5.0, 10.0, 30.0], 200_000, 2).unwrap();
    for p in &stone.points {
        println!("H((-inf, {}]) - u = {:.4} +- {:.4}", p.u, p.value, p.stderr);
    }
    println!("Stone constant {} (converged: {})", stone.theory, stone.converged);

    let model = ModelSpec::canonical();
    let tilted = model.tilted().unwrap();
    for u in [0.0, 2.0, 5.0] {
        let e = left_tail_check(&tilted, &model, u, 1_000_000, 3).unwrap();
        println!("e^u H((-inf, -{u}]) = {:.4} +- {:.4}   (limit {})", e.value, e.stderr, e.theory);
    }
}
