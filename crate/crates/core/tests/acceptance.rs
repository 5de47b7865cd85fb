//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned here.
//!
//! Runs with `harness = false` so the lines reach the terminal. The process
//! fails if any criterion outside `KNOWN_RED` fails.

use std::path::PathBuf;
use std::time::Instant;

use prw_renewal::cli::run_args;
use prw_renewal::model::{
    Dependence, FactorLawSpec, ModelSpec, PerturbationLaw, PerturbationTailSpec, TiltedLaw, compute_rho, make_tilted,
    solve_alpha, truncated_moment_b,
};
use prw_renewal::prw::{DEFAULT_TAU, TailCurve, fixed_point_distance, goldie_plugin, min_moment_alpha, tail_curve};
use prw_renewal::renewal::{left_tail_check, renewal_bins_mc, renewal_interval_mc, renewal_lattice_oracle, stone_check};
use prw_renewal::sv::{LogProfile, SlowlyVaryingSpec, tilde_log};
use prw_renewal::verify::{self, Experiment};

/// Criteria expected to fail; the analysis lives in the project notes.
const KNOWN_RED: &[&str] = &["9"];

struct Board {
    rows: Vec<(String, bool)>,
}

impl Board {
    fn record(&mut self, id: &str, pass: bool, detail: String, t: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>3}] {detail}  ({:.1}s)", t.elapsed().as_secs_f64());
        self.rows.push((id.to_string(), pass));
    }
}

fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Spearman correlation for distinct values.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        for (k, &i) in idx.iter().enumerate() {
            r[i] = k as f64;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Trapezoid integral of `f` on `[a, b]` with `n` panels.
fn trapezoid(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|k| f(a + h * k as f64)).sum();
    h * (0.5 * f(a) + inner + 0.5 * f(b))
}

fn pareto_model(a: FactorLawSpec, sv: SlowlyVaryingSpec) -> ModelSpec {
    let b = PerturbationTailSpec::new(1.0, sv, 1.0).unwrap();
    ModelSpec::new(a, PerturbationLaw::RegularlyVarying(b), Dependence::Independent).unwrap()
}

/// `e^{u} p_hat(u)` and its binomial standard error, per grid point.
fn scaled(curve: &TailCurve) -> Vec<(f64, f64, f64)> {
    let n = curve.n_paths as f64;
    curve
        .points
        .iter()
        .map(|p| {
            let s = p.u.exp();
            (p.u, s * p.p_hat, s * (p.p_hat * (1.0 - p.p_hat) / n).sqrt())
        })
        .collect()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn main() {
    let mut board = Board { rows: vec![] };
    let (m0, s2) = (-1.0, 2.0);
    let lognormal = FactorLawSpec::lognormal(m0, s2).unwrap();
    let canonical = ModelSpec::canonical();
    let gauss = TiltedLaw::normal(1.0, 2.0);

    // 1. exact identities against closed forms
    let t = Instant::now();
    let alpha = solve_alpha(&lognormal).unwrap();
    let rho = compute_rho(&lognormal, alpha).unwrap();
    let (alpha_cf, rho_cf) = (-2.0 * m0 / s2, m0 + (-2.0 * m0 / s2) * s2);
    let mut worst_prop1: f64 = 0.0;
    let tail = canonical.b.tail_spec().unwrap();
    for u in [1.0f64, 3.0, 6.0] {
        // Pareto(1): E B 1{B <= e^u} = int_1^{e^u} t^-1 dt = u = (1 + u) - 1
        let moment = truncated_moment_b(&canonical, 0.0, u.exp()).unwrap();
        let identity = tilde_log(&tail.induced(), 0.0, u).unwrap().value - tail.induced().ell(u);
        worst_prop1 = worst_prop1.max((moment - u).abs() / u).max((identity - u).abs() / u);
    }
    let ok = (alpha - alpha_cf).abs() <= 1e-9 && (rho - rho_cf).abs() <= 1e-9 && worst_prop1 <= 1e-9;
    board.record("1", ok, format!("alpha={alpha:.12} rho={rho:.12} Prop1 worst rel err {worst_prop1:.1e}"), t);

    // 2. Blackwell
    let t = Instant::now();
    let b = renewal_interval_mc(&gauss, 30.0, 31.0, 200_000, 2).unwrap();
    board.record("2", (b.value - 1.0).abs() <= 0.02, format!("H((30,31]) = {:.4} +- {:.4}, band 1 +- 0.02", b.value, b.stderr), t);

    // 3. Stone: EZ = 1, EZ^2 = 2 + 1
    let t = Instant::now();
    let stone_cf = (2.0 + 1.0) / (2.0 * 1.0);
    let s = stone_check(&gauss, &[30.0], 1_000_000, 3).unwrap();
    let r = s.points[0];
    board.record("3", (r.value - stone_cf).abs() <= 0.05, format!("H((-inf,30]) - 30 = {:.4} +- {:.4}, band {stone_cf} +- 0.05", r.value, r.stderr), t);

    // 4. left tail: (-alpha E log A)^-1 = 1
    let t = Instant::now();
    let z = canonical.tilted().unwrap();
    let lt = left_tail_check(&z, &canonical, 5.0, 1_000_000, 4).unwrap();
    let limit = 1.0 / (-alpha_cf * m0);
    board.record("4", lt.value >= 0.8 * limit && lt.value <= 1.2 * limit, format!("e^5 H((-inf,-5]) = {:.4} +- {:.4}, band [0.8, 1.2]", lt.value, lt.stderr), t);

    // 5. lattice oracle vs visit counts
    let t = Instant::now();
    let two_point = make_tilted(&FactorLawSpec::canonical_two_point(), 1.0).unwrap();
    let mut worst5: f64 = 0.0;
    let mut compared = 0;
    for law in [&two_point, &gauss] {
        let table = renewal_lattice_oracle(law, 0.01, (-30.0, 60.0), 100_000).unwrap();
        for bin in renewal_bins_mc(law, -5.0, 1.0, 45, 1_000_000, 5).unwrap() {
            let o = table.mass_in(bin.lo, bin.hi);
            if o >= 0.1 {
                worst5 = worst5.max((bin.value - o).abs() / o);
                compared += 1;
            }
        }
    }
    board.record("5", worst5 <= 0.02, format!("worst relative deviation {:.3}% over {compared} bins, bound 2%", 100.0 * worst5), t);

    // 6. corL, theory recomputed here
    let t = Instant::now();
    let r_const = verify::verify_corl(&canonical, &Experiment::new(vec![50.0, 100.0, 200.0], 100_000, 6)).unwrap();
    let p = r_const.points.last().unwrap();
    let ratio_const = p.observed * p.theory / 200.0;
    let osc = pareto_model(lognormal, SlowlyVaryingSpec::oscillating());
    let r_osc = verify::verify_corl(&osc, &Experiment::new(vec![100.0, 200.0, 400.0], 100_000, 6)).unwrap();
    let p = r_osc.points.last().unwrap();
    // int_0^400 exp(sin sqrt v) dv = int_0^20 2w exp(sin w) dw
    let osc_oracle = trapezoid(|w| 2.0 * w * w.sin().exp(), 0.0, 20.0, 200_000);
    let ratio_osc = p.observed * p.theory / osc_oracle;
    let ok = (0.98..=1.02).contains(&ratio_const) && (0.9..=1.1).contains(&ratio_osc);
    board.record("6", ok, format!("ratio L=1 at 200: {ratio_const:.4} in [0.98,1.02]; oscillating at 400: {ratio_osc:.4} in [0.9,1.1]"), t);

    // 7. LTH with L~_B(0, e^u) = 1 + u and L_B(e^u) = 1
    let t = Instant::now();
    let lth_grid: Vec<f64> = (1..=8).map(|k| 50.0 * k as f64).collect();
    let r_lth = verify::verify_lth(&canonical, &Experiment::new(lth_grid.clone(), 100_000, 7)).unwrap();
    let d: Vec<f64> = r_lth.points.iter().map(|p| p.observed + p.theory - (1.0 + p.u)).collect();
    let max_d = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let slope_d = ols_slope(&lth_grid, &d);
    board.record("7", max_d <= 10.0 && slope_d.abs() <= 0.02, format!("max |D|/L_B = {max_d:.3} (<= 10), slope {slope_d:.5} (within 0.02)"), t);

    // 8. pert(i): slope of e^u p_hat against (1 + u) / rho
    let t = Instant::now();
    let grid: Vec<f64> = (5..=10).map(f64::from).collect();
    let curve = tail_curve(&canonical, &grid, 10_000_000, DEFAULT_TAU, 8).unwrap();
    let two_model = pareto_model(FactorLawSpec::canonical_two_point(), SlowlyVaryingSpec::constant(1.0));
    let curve_two = tail_curve(&two_model, &grid, 10_000_000, DEFAULT_TAU, 8).unwrap();
    let FactorLawSpec::TwoPoint { u1, u2, p } = FactorLawSpec::canonical_two_point() else { unreachable!() };
    let rho_two = p * u1.exp() * u1 + (1.0 - p) * u2.exp() * u2;
    let mut lines = vec![];
    let mut ok8 = true;
    for (name, c, rho) in [("lognormal", &curve, 1.0), ("two-point", &curve_two, rho_two)] {
        let pts = scaled(c);
        let x: Vec<f64> = pts.iter().map(|p| (1.0 + p.0) / rho).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let ratio: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a / b).collect();
        let slope = ols_slope(&x, &y);
        let trend = spearman(&grid, &ratio);
        let last = *ratio.last().unwrap();
        ok8 &= (0.9..=1.1).contains(&slope) && trend > 0.0 && (0.6..=1.1).contains(&last);
        lines.push(format!("{name} (rho {rho:.4}): slope {slope:.4}, Spearman {trend:.3}, ratio(10) {last:.4}"));
    }
    board.record("8", ok8, lines.join("; "), t);

    // 9. pert(ii): remainder e^u p_hat - (1 + u) against -E min{AR,B}^alpha / (alpha rho)
    let t = Instant::now();
    let mm = min_moment_alpha(&canonical, 30, 100_000, DEFAULT_TAU, 9).unwrap();
    let pts = scaled(&curve);
    let rem: Vec<f64> = pts.iter().map(|p| p.1 - (1.0 + p.0)).collect();
    let slope9 = ols_slope(&grid, &rem);
    let top = &pts[3..];
    let top_mean = rem[3..].iter().sum::<f64>() / 3.0;
    let top_se = top.iter().map(|p| p.2).sum::<f64>() / 3.0;
    let target = -mm.estimate.value;
    let z9 = (top_mean - target).abs() / (top_se * top_se + mm.estimate.stderr * mm.estimate.stderr).sqrt();
    let ok9a = slope9.abs() <= 0.1;
    let ok9b = z9 <= 3.0;
    board.record(
        "9",
        ok9a && ok9b,
        format!(
            "(a) slope {slope9:.4} within 0.1: {}; (b) top-half mean {top_mean:.4} +- {top_se:.4} vs {target:.4} +- {:.4}: z = {z9:.1}; \
             Stone-adjusted target {:.4}",
            if ok9a { "ok" } else { "no" },
            mm.estimate.stderr,
            stone_cf + target
        ),
        t,
    );

    // 10. fixed point
    let t = Instant::now();
    let fp = fixed_point_distance(&canonical, 100_000, DEFAULT_TAU, 10, false).unwrap();
    board.record("10", fp.ks <= 0.015, format!("KS = {:.4} (<= 0.015)", fp.ks), t);

    // 11. cross-regimes
    let t = Instant::now();
    let sub = pareto_model(FactorLawSpec::lognormal(-2.0, 2.0).unwrap(), SlowlyVaryingSpec::constant(1.0));
    let sub_grid = vec![5.0, 7.0, 9.0];
    let sub_curve = tail_curve(&sub, &sub_grid, 10_000_000, DEFAULT_TAU, 11).unwrap();
    // E A = exp(-2 + 2/2)
    let sub_limit = 1.0 / (1.0 - (-2.0f64 + 1.0).exp());
    let sub_ratio = sub_curve.points[2].p_hat / (-9.0f64).exp() / sub_limit;
    let goldie = ModelSpec::new(lognormal, PerturbationLaw::Uniform { uniform: [1.0, 2.0] }, Dependence::Independent).unwrap();
    let g_grid = vec![7.0, 8.0, 9.0];
    let g_curve = tail_curve(&goldie, &g_grid, 40_000_000, DEFAULT_TAU, 11).unwrap();
    let g_left = scaled(&g_curve)[2];
    let g_right = goldie_plugin(&goldie, 1_000_000, DEFAULT_TAU, 11, 1.0).unwrap();
    let zg = (g_left.1 - g_right.value).abs() / (g_left.2 * g_left.2 + g_right.stderr * g_right.stderr).sqrt();
    let ok = (sub_ratio - 1.0).abs() <= 0.10 && zg <= 3.0;
    board.record(
        "11",
        ok,
        format!(
            "subcritical ratio/limit {sub_ratio:.4} (within 10% of {sub_limit:.4}); Goldie {:.4} +- {:.4} vs plug-in {:.4} +- {:.4}: z = {zg:.2}",
            g_left.1, g_left.2, g_right.value, g_right.stderr
        ),
        t,
    );

    // 12. negative controls must fail
    let t = Instant::now();
    let mut controls = vec![];
    let scaled_exp = |grid: &[f64], n: usize, seed: u64, scale: f64| {
        let mut e = Experiment::new(grid.to_vec(), n, seed);
        e.theory_scale = scale;
        e
    };
    let e = scaled_exp(&grid, 10_000_000, 8, 1.3);
    controls.push(("pert1", verify::verify_pert_first_on(&canonical, &e, &curve).unwrap().passed()));
    let e2 = scaled_exp(&grid, 10_000_000, 8, 1.3);
    controls.push(("pert2", verify::verify_pert_second_on(&canonical, &e2, &curve, &mm).unwrap().passed()));
    let mut eg = scaled_exp(&g_grid, 40_000_000, 11, 1.1);
    eg.plugin_paths = Some(1_000_000);
    controls.push(("goldie", verify::verify_goldie_on(&goldie, &eg, &g_curve).unwrap().passed()));
    let es = scaled_exp(&sub_grid, 10_000_000, 11, 1.2);
    controls.push(("subcritical", verify::verify_subcritical_on(&sub, &es, &sub_curve).unwrap().passed()));
    // every control config through the binary's entry point, at reduced size
    let dir = configs().join("experiments");
    for (name, paths) in [("corl_constant", "1e5"), ("lth", "2e4"), ("pert1", "2e5"), ("pert2", "2e5"), ("subcritical", "1e7")] {
        let cfg = dir.join(format!("{name}_control.json"));
        let out = std::env::temp_dir().join(format!("prw-control-{name}-{}.json", std::process::id()));
        let code = run_args([
            "prw",
            "verify",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "12",
            "--paths",
            paths,
            "--out",
            out.to_str().unwrap(),
        ]);
        let _ = std::fs::remove_file(&out);
        controls.push((name, code != 1));
    }
    let leaked: Vec<&str> = controls.iter().filter(|c| c.1).map(|c| c.0).collect();
    board.record("12", leaked.is_empty(), format!("{} controls, not failing: {leaked:?}", controls.len()), t);

    // 13. byte-identical outputs for 1 and 8 workers
    let t = Instant::now();
    let smoke = dir.join("smoke.json");
    let model = configs().join("models/canonical.json");
    let tmp = std::env::temp_dir().join(format!("prw-determinism-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();
    let mut files = vec![];
    for w in ["1", "8", "1"] {
        let rep = tmp.join(format!("report-{w}-{}.json", files.len()));
        let csv = tmp.join(format!("points-{w}-{}.csv", files.len()));
        let curve_csv = tmp.join(format!("curve-{w}-{}.csv", files.len()));
        run_args(["prw", "--workers", w, "verify", "--config", smoke.to_str().unwrap(), "--seed", "13", "--out", rep.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
        let code = run_args([
            "prw", "--workers", w, "tail", "--model", model.to_str().unwrap(), "--u", "2:6:1", "--paths", "5e4", "--seed", "13",
            "--block-size", "1e3", "--out", curve_csv.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let mut meta = curve_csv.clone().into_os_string();
        meta.push(".meta.json");
        let read = |p: &PathBuf| std::fs::read(p).unwrap();
        files.push([read(&rep), read(&csv), read(&curve_csv), std::fs::read(meta).unwrap()]);
    }
    let _ = std::fs::remove_dir_all(&tmp);
    let same = files.windows(2).all(|w| w[0] == w[1]);
    board.record("13", same, "report JSON, points CSV, tail CSV and sidecar identical across workers 1, 8, 1".into(), t);

    let unexpected: Vec<&str> = board
        .rows
        .iter()
        .filter(|(id, pass)| !pass && !KNOWN_RED.contains(&id.as_str()))
        .map(|(id, _)| id.as_str())
        .collect();
    let passed = board.rows.iter().filter(|r| r.1).count();
    println!("{passed}/{} criteria pass; known red: {KNOWN_RED:?}", board.rows.len());
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
