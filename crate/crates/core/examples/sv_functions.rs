//! Slowly varying functions in the log domain: de Haan integrals, the
//! `log lambda` limit, Karamata's theorem and Potter bounds.

use prw_renewal::sv::{LogProfile, SlowlyVaryingSpec, dehaan_ratio, karamata_ratio, potter_check, tilde_log};

fn main() {
    let catalog = [
        SlowlyVaryingSpec::constant(1.0),
        SlowlyVaryingSpec::log_power(1.0, 1.0),
        SlowlyVaryingSpec::iterated_log(1.0),
        SlowlyVaryingSpec::oscillating(),
    ];
    let grid: Vec<f64> = (1..=40).map(|k| 10.0 * k as f64).collect();
    for sv in &catalog {
        println!("{}", serde_json::to_string(sv).unwrap());
        for u in [10.0, 100.0, 400.0] {
            let t = tilde_log(sv, 1.0, u).unwrap();
            println!(
                "  u={u:>5}  L={:<9.4} L~(1,e^u)={:<12.4} L~(x,2x)/L(x)={:.4}  Karamata={:.4}",
                sv.ell(u),
                t.value,
                dehaan_ratio(sv, 2.0, u).unwrap(),
                karamata_ratio(sv, 1.0, 1.0, u).unwrap(),
            );
        }
        let p = potter_check(sv, 0.1, &grid).unwrap();
        println!("  Potter A(0.1) = {:.4} (half grid {:.4})", p.a, p.a_half_grid);
    }
    println!("log 2 = {:.4}", std::f64::consts::LN_2);
}
