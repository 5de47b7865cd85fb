//! Tail of the supremum for the canonical model, the constant
//! `E min{AR, B}^alpha`, and the fixed-point check `R = max(AR, B)`.
//!
//!     cargo run --release --example supremum_tail -- [paths]

use prw_renewal::model::ModelSpec;
use prw_renewal::prw::{DEFAULT_TAU, fixed_point_distance, min_moment_alpha, tail_curve};

fn main() {
    let paths = std::env::args().nth(1).and_then(|s| s.parse::<f64>().ok()).unwrap_or(2e6) as usize;
    let m = ModelSpec::canonical();
    let mm = min_moment_alpha(&m, 30, 20_000, DEFAULT_TAU, 1).unwrap();
    println!("E min(AR, B) = {:.4} (IQR of block means {:.4})", mm.estimate.value, mm.estimate.spread);

    let grid: Vec<f64> = (0..=10).map(f64::from).collect();
    let curve = tail_curve(&m, &grid, paths, DEFAULT_TAU, 2).unwrap().with_second_order(&m, mm.estimate.value).unwrap();
    println!("mean steps {:.2}, truncated {}", curve.mean_steps, curve.truncated);
    println!("{:>4} {:>11} {:>23} {:>10} {:>10} {:>10}", "u", "p_hat", "95% interval", "e^u p", "1+u", "1+u-c");
    for p in &curve.points {
        let s = p.u.exp();
        println!(
            "{:>4} {:>11.4e} [{:.4e}, {:.4e}] {:>10.4} {:>10.4} {:>10.4}",
            p.u,
            p.p_hat,
            p.ci_low,
            p.ci_high,
            s * p.p_hat,
            s * p.theory_first,
            s * p.theory_second
        );
    }

    let fp = fixed_point_distance(&m, 100_000, DEFAULT_TAU, 3, false).unwrap();
    println!("KS(R, max(AR', B)) = {:.4} (null scale {:.4})", fp.ks, fp.null_scale);
}
