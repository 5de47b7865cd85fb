//! Literal convolution of the renewal measure on a grid, compared bin by bin
//! with path visit counts.
//!
//!     cargo run --release --example lattice_oracle -- [paths]

use prw_renewal::model::{FactorLawSpec, TiltedLaw, make_tilted};
use prw_renewal::renewal::{renewal_bins_mc, renewal_lattice_oracle};

fn compare(name: &str, z: &TiltedLaw, paths: usize) {
    let table = renewal_lattice_oracle(z, 0.01, (-30.0, 60.0), 100_000).expect("oracle");
    let bins = renewal_bins_mc(z, -5.0, 1.0, 45, paths, 7).expect("mc");
    println!("{name}: {} convolutions, truncation bound {:.1e}", table.convolutions, table.truncation_bound);
    let mut worst = 0.0f64;
    for b in &bins {
        let oracle = table.mass_in(b.lo, b.hi);
        if oracle < 0.1 {
            continue;
        }
        let dev = (b.value - oracle).abs() / oracle;
        worst = worst.max(dev);
        if b.lo.rem_euclid(5.0) == 0.0 {
            println!("  ({:>4}, {:>4}]  oracle {oracle:.4}  mc {:.4} +- {:.4}", b.lo, b.hi, b.value, b.stderr);
        }
    }
    println!("  worst relative deviation {:.3}%", 100.0 * worst);
}

fn main() {
    let paths = std::env::args().nth(1).and_then(|s| s.parse::<f64>().ok()).unwrap_or(1e6) as usize;
    compare("normal(1, 2)", &TiltedLaw::normal(1.0, 2.0), paths);
    let two = make_tilted(&FactorLawSpec::canonical_two_point(), 1.0).expect("tilt");
    compare("two-point {1, -sqrt 2}", &two, paths);
}
