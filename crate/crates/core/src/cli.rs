//! Command-line front end: argument parsing, worker pool, file output.
//!
//! Exit codes: 0 success or PASS, 1 theorem FAIL, 2 schema or operational
//! error, 3 I/O error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::{self, ExperimentConfig, parse_config};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, Regime, check_arb};
use crate::prw::{TailCurve, min_moment_alpha, tail_curve};
use crate::renewal::{
    left_tail_check, renewal_bins_mc, renewal_interval_mc, renewal_lattice_oracle, stone_check,
};
use crate::sv::{LogProfile, SlowlyVaryingSpec, dehaan_ratio, karamata_ratio, potter_check, tilde_log};
use crate::verify::{self, TheoremReport};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "prw", version, about = "Renewal measures and perturbed random walk tails")]
pub struct Cli {
    /// Worker threads (default: $PRW_WORKERS, else all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Blackwell,
    Stone,
    Lefttail,
    Oracle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical exponent, rho, tilted moments and the ARB moment of a model.
    ModelInfo {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "1e5", value_parser = count)]
        arb_paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Renewal-measure checks on the tilted walk of a model.
    Renewal {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
        /// Levels: `a,b,c` or `start:stop:step`.
        #[arg(long, value_parser = grid)]
        u: Grid,
        #[arg(long, default_value = "1e5", value_parser = count)]
        paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Grid step of the lattice oracle.
        #[arg(long, default_value_t = 0.01)]
        h: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tail curve of the supremum as CSV.
    Tail {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = grid)]
        u: Grid,
        #[arg(long, default_value = "1e6", value_parser = count)]
        paths: usize,
        #[arg(long, default_value_t = crate::prw::DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Blocks and block size of the min-moment estimate behind `theory_second`.
        #[arg(long, default_value_t = 30)]
        blocks: usize,
        #[arg(long, default_value = "1e4", value_parser = count)]
        block_size: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one theorem check and write its report.
    Verify {
        #[arg(long)]
        theorem: Option<String>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_parser = grid)]
        u: Option<Grid>,
        #[arg(long, value_parser = count)]
        paths: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate a slowly varying function and its de Haan, Karamata and Potter diagnostics.
    SvCheck {
        /// JSON `{"family": .., "params": {..}}`, or a bare family name with `--params`.
        #[arg(long)]
        sv: String,
        /// `name=value,...` for a bare family name.
        #[arg(long)]
        params: Option<String>,
        #[arg(long, value_parser = grid)]
        u: Grid,
        #[arg(long, default_value_t = 2.0)]
        lambda: f64,
        #[arg(long, default_value_t = 1.0)]
        x0: f64,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn grid(s: &str) -> std::result::Result<Grid, String> {
    config::parse_grid(s).map(Grid).map_err(|e| e.to_string())
}

fn count(s: &str) -> std::result::Result<usize, String> {
    config::parse_count(s).map_err(|e| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 3,
        _ => 2,
    }
}

/// Parse `args` (program name first) and run; returns the exit code.
pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    run_args(std::env::args_os())
}

fn in_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("worker pool: {e}")))?;
    pool.install(f)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    ModelSpec::from_json(&read(path)?)
}

/// SHA-256 of the canonical JSON of the effective inputs.
pub fn config_hash<T: Serialize>(inputs: &T) -> String {
    let bytes = serde_json::to_vec(inputs).expect("inputs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    version: &'static str,
    seed: u64,
    config_hash: String,
    #[serde(flatten)]
    body: &'a T,
}

fn stamped<T: Serialize>(seed: u64, hash: String, body: &T) -> String {
    serde_json::to_string_pretty(&Stamped { version: VERSION, seed, config_hash: hash, body }).expect("serialize")
}

fn finite(x: f64, what: &str) -> Result<String> {
    if x.is_finite() {
        Ok(format!("{x}"))
    } else {
        Err(Error::Precondition(format!("non-finite {what}")))
    }
}

fn csv_bytes(header: &[&str], rows: &[Vec<(f64, &str)>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(header)?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|(x, n)| finite(*x, n)).collect::<Result<_>>()?;
        w.write_record(&cells)?;
    }
    w.into_inner().map_err(|e| Error::Precondition(e.to_string()))
}

pub fn tail_csv(curve: &TailCurve) -> Result<Vec<u8>> {
    let rows: Vec<Vec<(f64, &str)>> = curve
        .points
        .iter()
        .map(|p| {
            vec![
                (p.u, "u"),
                (p.p_hat, "p_hat"),
                (p.ci_low, "ci_low"),
                (p.ci_high, "ci_high"),
                (p.theory_first, "theory_first"),
                (p.theory_second, "theory_second"),
                (p.bias_bound, "bias_bound"),
            ]
        })
        .collect();
    csv_bytes(&["u", "p_hat", "ci_low", "ci_high", "theory_first", "theory_second", "bias_bound"], &rows)
}

pub fn report_csv(report: &TheoremReport) -> Result<Vec<u8>> {
    let rows: Vec<Vec<(f64, &str)>> = report
        .points
        .iter()
        .map(|p| vec![(p.u, "u"), (p.observed, "observed"), (p.stderr, "stderr"), (p.theory, "theory")])
        .collect();
    csv_bytes(&["u", "observed", "stderr", "theory"], &rows)
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn run(cli: Cli) -> Result<i32> {
    let workers = cli.workers.unwrap_or_else(config::default_workers);
    match cli.command {
        Command::ModelInfo { model, arb_paths, seed, out } => {
            let m = load_model(&model)?;
            let body = in_pool(workers, || model_info(&m, arb_paths, seed))?;
            let hash = config_hash(&json!({"command": "model-info", "model": m, "arb_paths": arb_paths}));
            emit(out.as_deref(), &stamped(seed, hash, &body))?;
            Ok(0)
        }
        Command::Renewal { model, check, u, paths, seed, h, out } => {
            let m = load_model(&model)?;
            let body = in_pool(workers, || renewal_check(&m, check, &u.0, paths, seed, h))?;
            let pass = body["pass"].as_bool().unwrap_or(false);
            let hash = config_hash(&json!({"command": "renewal", "model": m, "inputs": body["inputs"]}));
            emit(out.as_deref(), &stamped(seed, hash, &body))?;
            Ok(if pass { 0 } else { 1 })
        }
        Command::Tail { model, u, paths, tau, seed, blocks, block_size, out } => {
            let m = load_model(&model)?;
            let curve = in_pool(workers, || {
                let curve = tail_curve(&m, &u.0, paths, tau, seed)?;
                match m.regime()? {
                    Regime::Subcritical { .. } => Ok(curve),
                    _ => {
                        let mm = min_moment_alpha(&m, blocks, block_size, tau, seed)?;
                        curve.with_second_order(&m, mm.estimate.value)
                    }
                }
            })?;
            let hash = config_hash(&json!({
                "command": "tail", "model": m, "u": u.0, "paths": paths, "tau": tau,
                "blocks": blocks, "block_size": block_size,
            }));
            let bytes = tail_csv(&curve)?;
            match out {
                Some(p) => {
                    write(&p, &bytes)?;
                    let meta = json!({
                        "n_paths": curve.n_paths, "tau": tau, "truncated_paths": curve.truncated,
                        "mean_steps": curve.mean_steps, "c_hat": curve.c_hat,
                    });
                    write(&sidecar(&p), stamped(seed, hash, &meta).as_bytes())?;
                }
                None => print!("{}", String::from_utf8_lossy(&bytes)),
            }
            Ok(0)
        }
        Command::Verify { theorem, model, config, seed, u, paths, out, csv } => {
            let (cfg, base) = match &config {
                Some(p) => (parse_config(&read(p)?)?, p.parent().map(Path::to_path_buf)),
                None => (ExperimentConfig::default(), None),
            };
            run_verify(cfg, base, VerifyArgs { theorem, model, seed, u: u.map(|g| g.0), paths, out, csv, workers: cli.workers })
        }
        Command::SvCheck { sv, params, u, lambda, x0, alpha, delta, out } => {
            let spec = parse_sv(&sv, params.as_deref())?;
            let body = sv_check(&spec, &u.0, lambda, x0, alpha, delta)?;
            let hash = config_hash(&json!({"command": "sv-check", "sv": spec, "u": u.0, "lambda": lambda, "x0": x0, "alpha": alpha, "delta": delta}));
            emit(out.as_deref(), &stamped(0, hash, &body))?;
            Ok(0)
        }
    }
}

/// Command-line overrides for `verify`.
pub struct VerifyArgs {
    pub theorem: Option<String>,
    pub model: Option<PathBuf>,
    pub seed: u64,
    pub u: Option<Vec<f64>>,
    pub paths: Option<usize>,
    pub out: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub workers: Option<usize>,
}

/// `verify` with a parsed config; relative model paths in the config are
/// resolved against the config file's directory.
pub fn run_verify(mut cfg: ExperimentConfig, base: Option<PathBuf>, args: VerifyArgs) -> Result<i32> {
    if let Some(u) = args.u {
        cfg.u_grid = Some(u);
    }
    if let Some(n) = args.paths {
        cfg.n_paths = n;
    }
    let theorem = args
        .theorem
        .or(cfg.theorem.clone())
        .ok_or_else(|| Error::Schema("--theorem is required (or \"theorem\" in the config)".into()))?;
    let model_path = match (args.model, &cfg.model) {
        (Some(p), _) => p,
        (None, Some(p)) => match &base {
            Some(dir) if Path::new(p).is_relative() => dir.join(p),
            _ => PathBuf::from(p),
        },
        (None, None) => return Err(Error::Schema("--model is required (or \"model\" in the config)".into())),
    };
    let model = load_model(&model_path)?;
    let exp = cfg.experiment(args.seed)?;
    let workers = args.workers.unwrap_or(cfg.workers);
    let report = in_pool(workers, || verify::verify(&theorem, &model, &exp))?;
    let hash = config_hash(&json!({"command": "verify", "theorem": theorem, "model": model, "experiment": exp}));
    let out = args.out.or(cfg.outputs.report.map(PathBuf::from));
    let csv = args.csv.or(cfg.outputs.csv.map(PathBuf::from));
    emit(out.as_deref(), &stamped(args.seed, hash, &report))?;
    if let Some(p) = csv {
        write(&p, &report_csv(&report)?)?;
    }
    Ok(if report.passed() { 0 } else { 1 })
}

fn model_info(m: &ModelSpec, arb_paths: usize, seed: u64) -> Result<serde_json::Value> {
    let regime = m.regime()?;
    let alpha = m.alpha()?;
    let tilted = m.tilted().ok();
    let arb = check_arb(m, 0.5 * alpha, arb_paths, seed)?;
    Ok(json!({
        "model": m,
        "regime": regime,
        "alpha": alpha,
        "rho": match regime {
            Regime::Critical { rho, .. } | Regime::Bounded { rho, .. } => Some(rho),
            Regime::Subcritical { .. } => None,
        },
        "ez": tilted.as_ref().map(|z| z.mean),
        "ez2": tilted.as_ref().map(|z| z.second_moment),
        "strongly_non_lattice": tilted.as_ref().map(|z| z.strongly_non_lattice()),
        "arb": arb,
    }))
}

fn renewal_check(m: &ModelSpec, check: Check, us: &[f64], paths: usize, seed: u64, h: f64) -> Result<serde_json::Value> {
    let z = m.tilted()?;
    let (mut est, mut se, mut theory) = (vec![], vec![], vec![]);
    let (name, pass) = match check {
        Check::Blackwell => {
            for &u in us {
                let e = renewal_interval_mc(&z, u, u + 1.0, paths, seed)?;
                est.push(e.value);
                se.push(e.stderr);
                theory.push(1.0 / z.mean);
            }
            let pass = est.iter().zip(&theory).all(|(e, t)| (e - t).abs() <= 0.02 * t);
            ("blackwell", pass)
        }
        Check::Stone => {
            let rep = stone_check(&z, us, paths, seed)?;
            for p in &rep.points {
                est.push(p.value);
                se.push(p.stderr);
                theory.push(rep.theory);
            }
            ("stone", (est.last().unwrap() - rep.theory).abs() <= 0.05)
        }
        Check::Lefttail => {
            for &u in us {
                let e = left_tail_check(&z, m, u, paths, seed)?;
                est.push(e.value);
                se.push(e.stderr);
                theory.push(e.theory);
            }
            let (e, t) = (est.last().unwrap(), theory.last().unwrap());
            ("lefttail", *e >= 0.8 * t && *e <= 1.2 * t)
        }
        Check::Oracle => {
            let gamma = z.left_exponent().min(1e3);
            let lo = us[0].min(0.0) - 30.0 / gamma;
            let hi = us[us.len() - 1] + 1.0 + 30.0 / gamma;
            let table = renewal_lattice_oracle(&z, h, (lo, hi), 1_000_000)?;
            let mut pass = true;
            for &u in us {
                let b = &renewal_bins_mc(&z, u, 1.0, 1, paths, seed)?[0];
                let o = table.mass_in(u, u + 1.0);
                if o >= 0.1 && (b.value - o).abs() > 0.02 * o {
                    pass = false;
                }
                est.push(b.value);
                se.push(b.stderr);
                theory.push(o);
            }
            ("oracle", pass)
        }
    };
    Ok(json!({
        "check": name,
        "inputs": {"u": us, "paths": paths, "h": if check == Check::Oracle { Some(h) } else { None }},
        "estimate": est,
        "stderr": se,
        "theory": theory,
        "pass": pass,
    }))
}

fn parse_sv(text: &str, params: Option<&str>) -> Result<SlowlyVaryingSpec> {
    let t = text.trim();
    if t.starts_with('{') {
        return Ok(serde_json::from_str(t)?);
    }
    let mut map = serde_json::Map::new();
    for kv in params.unwrap_or("").split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("--params entry '{kv}' is not name=value")))?;
        let x: f64 = v.trim().parse().map_err(|_| Error::Schema(format!("--params value '{v}' is not a number")))?;
        map.insert(k.trim().to_string(), json!(x));
    }
    Ok(serde_json::from_value(json!({"family": t, "params": map}))?)
}

fn sv_check(sv: &SlowlyVaryingSpec, us: &[f64], lambda: f64, x0: f64, alpha: f64, delta: f64) -> Result<serde_json::Value> {
    let mut rows = vec![];
    for &u in us {
        rows.push(json!({
            "u": u,
            "ell": sv.ell(u),
            "tilde": tilde_log(sv, x0, u)?.value,
            "dehaan_ratio": dehaan_ratio(sv, lambda, u)?,
            "karamata_ratio": karamata_ratio(sv, alpha, x0, u)?,
        }));
    }
    let potter = potter_check(sv, delta, us)?;
    Ok(json!({
        "sv": sv,
        "inputs": {"lambda": lambda, "x0": x0, "alpha": alpha, "delta": delta},
        "points": rows,
        "potter": potter,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_is_mandatory_for_verify() {
        assert_eq!(run_args(["prw", "verify", "--theorem", "corl", "--model", "m.json"]), 2);
    }

    #[test]
    fn paths_accept_float_notation() {
        let cli = Cli::try_parse_from(["prw", "tail", "--model", "m.json", "--u", "5:10:1", "--paths", "1e7"]).unwrap();
        match cli.command {
            Command::Tail { paths, u, .. } => {
                assert_eq!(paths, 10_000_000);
                assert_eq!(u.0.len(), 6);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn missing_model_is_io() {
        assert_eq!(run_args(["prw", "model-info", "--model", "/nonexistent/m.json"]), 3);
    }

    #[test]
    fn hash_is_stable() {
        let a = config_hash(&json!({"a": 1, "b": [1.5, 2.0]}));
        assert_eq!(a, config_hash(&json!({"a": 1, "b": [1.5, 2.0]})));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn sv_by_name() {
        let s = parse_sv("log_power", Some("c=1,beta=2")).unwrap();
        assert_eq!(s, SlowlyVaryingSpec::log_power(1.0, 2.0));
        assert!(parse_sv("log_power", Some("c=1,gamma=2")).is_err());
    }
}
