//! The factor law, its critical exponent and tilted walk, and the induced
//! slowly varying function of a regularly varying perturbation.

use prw_renewal::model::{
    Dependence, FactorLawSpec, ModelSpec, PerturbationLaw, PerturbationTailSpec, check_arb, compute_rho, make_tilted,
    quantile_b, solve_alpha, tail_b, truncated_moment_b,
};
use prw_renewal::sv::{LogProfile, SlowlyVaryingSpec, tilde_log};

fn main() {
    for a in [FactorLawSpec::lognormal(-1.0, 2.0).unwrap(), FactorLawSpec::canonical_two_point()] {
        let alpha = solve_alpha(&a).unwrap();
        let rho = compute_rho(&a, alpha).unwrap();
        let z = make_tilted(&a, alpha).unwrap();
        println!(
            "{:<10} alpha={alpha:.9} rho={rho:.6} EZ={:.6} EZ^2={:.6} strongly non-lattice: {}",
            a.name(),
            z.mean,
            z.second_moment,
            z.strongly_non_lattice()
        );
    }
    match solve_alpha(&FactorLawSpec::lognormal(0.1, 2.0).unwrap()) {
        Ok(a) => println!("unexpected root {a}"),
        Err(e) => println!("lognormal(0.1, 2): {e}"),
    }

    // E B^alpha 1{B <= x} = alpha L~_B(0, x) - L_B(x)
    let tail = PerturbationTailSpec::new(1.0, SlowlyVaryingSpec::log_power(1.0, 1.0), 1.0).unwrap();
    let m = ModelSpec::new(
        FactorLawSpec::lognormal(-1.0, 2.0).unwrap(),
        PerturbationLaw::RegularlyVarying(tail.clone()),
        Dependence::Independent,
    )
    .unwrap();
    for u in [1.0f64, 3.0, 6.0] {
        let lhs = truncated_moment_b(&m, 0.0, u.exp()).unwrap();
        let rhs = tilde_log(&tail.induced(), 0.0, u).unwrap().value - tail.induced().ell(u);
        println!("u={u}: truncated moment {lhs:.10}  alpha L~ - L {rhs:.10}");
    }
    let q = quantile_b(&m, 1e-3).unwrap();
    println!("quantile(1e-3) = {q:.4}, tail there = {:.3e}", tail_b(&m, q));

    let arb = check_arb(&ModelSpec::canonical(), 0.5, 100_000, 1).unwrap();
    println!("E A^0.5 B^0.5 = {:.4} +- {:.4} (stable: {})", arb.estimate, arb.stderr, arb.stable);
}
