//! Every theorem check at the default sample sizes, with timings.
//!
//!     cargo run --release --example theorem_checks -- [scale]
//!
//! `scale` multiplies every path count (default 1).

use std::time::Instant;

use prw_renewal::model::{Dependence, FactorLawSpec, ModelSpec, PerturbationLaw, PerturbationTailSpec};
use prw_renewal::prw::{min_moment_alpha, tail_curve};
use prw_renewal::sv::SlowlyVaryingSpec;
use prw_renewal::verify::{self, Experiment, TheoremReport};

fn show(r: &TheoremReport, secs: f64) {
    println!("{:<12} {:?}  ({secs:.1}s)", r.theorem, r.verdict);
    for c in &r.criteria {
        println!("    {:<52} {:>10.4}  {}  {}", c.name, c.observed, c.target, if c.pass { "ok" } else { "FAIL" });
    }
    for (k, v) in &r.diagnostics {
        println!("    . {k} = {v:.5}");
    }
}

fn pareto_model(a: FactorLawSpec, sv: SlowlyVaryingSpec) -> ModelSpec {
    let b = PerturbationTailSpec::new(1.0, sv, 1.0).unwrap();
    ModelSpec::new(a, PerturbationLaw::RegularlyVarying(b), Dependence::Independent).unwrap()
}

fn main() {
    let scale: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let n = |x: f64| (x * scale) as usize;
    let canonical = ModelSpec::canonical();
    let lognormal = FactorLawSpec::lognormal(-1.0, 2.0).unwrap();
    let run = |name: &str, m: &ModelSpec, e: &Experiment| {
        let t = Instant::now();
        match verify::verify(name, m, e) {
            Ok(r) => show(&r, t.elapsed().as_secs_f64()),
            Err(err) => println!("{name}: error: {err}"),
        }
    };

    run("corl", &canonical, &Experiment::new(vec![50.0, 100.0, 200.0], n(1e5), 1));
    let osc = pareto_model(lognormal, SlowlyVaryingSpec::oscillating());
    run("corl", &osc, &Experiment::new(vec![100.0, 200.0, 400.0], n(1e5), 1));
    let lth_grid: Vec<f64> = (1..=8).map(|k| 50.0 * k as f64).collect();
    run("lth", &canonical, &Experiment::new(lth_grid, n(1e5), 2));

    let grid: Vec<f64> = (5..=10).map(f64::from).collect();
    let exp = Experiment::new(grid.clone(), n(1e7), 3);
    let t = Instant::now();
    let curve = tail_curve(&canonical, &grid, exp.n_paths, exp.tau, exp.seed).unwrap();
    let t_curve = t.elapsed().as_secs_f64();
    show(&verify::verify_pert_first_on(&canonical, &exp, &curve).unwrap(), t_curve);
    let t = Instant::now();
    let mut mexp = exp.clone();
    mexp.block_size = n(1e5);
    let mm = min_moment_alpha(&canonical, mexp.n_blocks, mexp.block_size, mexp.tau, mexp.seed).unwrap();
    show(&verify::verify_pert_second_on(&canonical, &mexp, &curve, &mm).unwrap(), t.elapsed().as_secs_f64());

    let two = pareto_model(FactorLawSpec::canonical_two_point(), SlowlyVaryingSpec::constant(1.0));
    run("pert1", &two, &exp);

    let goldie = ModelSpec::new(lognormal, PerturbationLaw::Uniform { uniform: [1.0, 2.0] }, Dependence::Independent).unwrap();
    let mut gexp = Experiment::new(vec![7.0, 8.0, 9.0], n(4e7), 4);
    gexp.plugin_paths = Some(n(1e6));
    run("goldie", &goldie, &gexp);
    gexp.theory_scale = 1.1;
    run("goldie", &goldie, &gexp);

    let sub = pareto_model(FactorLawSpec::lognormal(-2.0, 2.0).unwrap(), SlowlyVaryingSpec::constant(1.0));
    run("subcritical", &sub, &Experiment::new(vec![5.0, 7.0, 9.0], n(1e7), 5));
}
