//! Experiment configuration: JSON in, validated struct out, with every
//! schema violation reported by JSON path.

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::prw::DEFAULT_TAU;
use crate::verify::{Experiment, Tolerances};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "PRW_WORKERS";

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Outputs {
    pub report: Option<String>,
    pub csv: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub model: Option<String>,
    pub theorem: Option<String>,
    pub u_grid: Option<Vec<f64>>,
    pub n_paths: usize,
    pub tau_stop: f64,
    pub x0: f64,
    pub n_blocks: usize,
    pub block_size: usize,
    pub plugin_paths: Option<usize>,
    pub seed: Option<u64>,
    pub workers: usize,
    pub theory_scale: f64,
    pub tolerances: Tolerances,
    pub outputs: Outputs,
}

pub const DEFAULT_PATHS: usize = 100_000;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: None,
            theorem: None,
            u_grid: None,
            n_paths: DEFAULT_PATHS,
            tau_stop: DEFAULT_TAU,
            x0: 1.0,
            n_blocks: 30,
            block_size: 100_000,
            plugin_paths: None,
            seed: None,
            workers: default_workers(),
            theory_scale: 1.0,
            tolerances: Tolerances::default(),
            outputs: Outputs::default(),
        }
    }
}

impl ExperimentConfig {
    /// The experiment for `seed`; the grid must be set by now.
    pub fn experiment(&self, seed: u64) -> Result<Experiment> {
        let grid = self.u_grid.clone().ok_or_else(|| Error::Schema("$.u_grid: required".into()))?;
        Ok(Experiment {
            u_grid: grid,
            n_paths: self.n_paths,
            seed,
            tau: self.tau_stop,
            x0: self.x0,
            n_blocks: self.n_blocks,
            block_size: self.block_size,
            plugin_paths: self.plugin_paths,
            theory_scale: self.theory_scale,
            tolerances: self.tolerances.clone(),
        })
    }
}

pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// `start:stop:step` with `stop` included, or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Schema(format!("u grid '{text}': {m}"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = if parts.len() == 3 {
        let nums: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<_>>()?;
        range_grid(nums[0], nums[1], nums[2]).map_err(|m| bad(&m))?
    } else if parts.len() == 1 {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad("not a number")))
            .collect::<Result<_>>()?
    } else {
        return Err(bad("expected start:stop:step or a comma-separated list"));
    };
    check_grid(&grid).map_err(|m| bad(&m))?;
    Ok(grid)
}

fn range_grid(start: f64, stop: f64, step: f64) -> std::result::Result<Vec<f64>, String> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err("need step > 0 and stop >= start".into());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    if n > 100_000 {
        return Err("too many grid points".into());
    }
    Ok((0..n).map(|k| start + step * k as f64).collect())
}

fn check_grid(g: &[f64]) -> std::result::Result<(), String> {
    if g.is_empty() {
        return Err("empty".into());
    }
    if g.iter().any(|u| !u.is_finite()) {
        return Err("non-finite value".into());
    }
    if g.windows(2).any(|w| w[1] <= w[0]) {
        return Err("must be strictly increasing".into());
    }
    Ok(())
}

/// Parse a count given as an integer or an integral float (`1e7`).
pub fn parse_count(text: &str) -> Result<usize> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Schema(format!("'{text}' is not a number")))?;
    count_from(v).ok_or_else(|| Error::Schema(format!("'{text}' is not a positive integer")))
}

fn count_from(v: f64) -> Option<usize> {
    (v >= 1.0 && v.fract() == 0.0 && v <= 1e15).then_some(v as usize)
}

const KEYS: [&str; 14] = [
    "model",
    "theorem",
    "u_grid",
    "n_paths",
    "tau_stop",
    "x0",
    "n_blocks",
    "block_size",
    "plugin_paths",
    "seed",
    "workers",
    "theory_scale",
    "tolerances",
    "outputs",
];

struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn fail(&mut self, path: &str, msg: impl std::fmt::Display) {
        self.errors.push(format!("{path}: {msg}"));
    }

    fn string(&mut self, path: &str, v: &Value) -> Option<String> {
        match v.as_str() {
            Some(s) => Some(s.to_string()),
            None => {
                self.fail(path, "expected a string");
                None
            }
        }
    }

    fn number(&mut self, path: &str, v: &Value) -> Option<f64> {
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.fail(path, "expected a finite number");
                None
            }
        }
    }

    fn count(&mut self, path: &str, v: &Value) -> Option<usize> {
        let c = v.as_f64().and_then(count_from);
        if c.is_none() {
            self.fail(path, "expected an integer >= 1");
        }
        c
    }
}

/// Validate a configuration document. Unknown keys are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Schema(format!("$: malformed JSON: {e}")))?;
    let obj: &Map<String, Value> = root.as_object().ok_or_else(|| Error::Schema("$: expected an object".into()))?;
    let mut ck = Checker { errors: vec![] };
    let mut cfg = ExperimentConfig::default();
    for (key, v) in obj {
        let path = format!("$.{key}");
        match key.as_str() {
            "model" => cfg.model = ck.string(&path, v),
            "theorem" => cfg.theorem = ck.string(&path, v),
            "u_grid" => cfg.u_grid = parse_grid_value(&mut ck, &path, v),
            "n_paths" => {
                if let Some(n) = ck.count(&path, v) {
                    cfg.n_paths = n;
                }
            }
            "tau_stop" => {
                if let Some(t) = ck.number(&path, v) {
                    if t > 0.0 && t < 1.0 {
                        cfg.tau_stop = t;
                    } else {
                        ck.fail(&path, "must lie in (0, 1)");
                    }
                }
            }
            "x0" => {
                if let Some(x) = ck.number(&path, v) {
                    if x > 0.0 { cfg.x0 = x } else { ck.fail(&path, "must be > 0") }
                }
            }
            "n_blocks" => cfg.n_blocks = ck.count(&path, v).unwrap_or(cfg.n_blocks),
            "block_size" => cfg.block_size = ck.count(&path, v).unwrap_or(cfg.block_size),
            "plugin_paths" => cfg.plugin_paths = ck.count(&path, v),
            "seed" => match v.as_u64() {
                Some(s) => cfg.seed = Some(s),
                None => ck.fail(&path, "expected a non-negative integer"),
            },
            "workers" => cfg.workers = ck.count(&path, v).unwrap_or(cfg.workers),
            "theory_scale" => {
                if let Some(x) = ck.number(&path, v) {
                    if x > 0.0 { cfg.theory_scale = x } else { ck.fail(&path, "must be > 0") }
                }
            }
            "tolerances" => match serde_json::from_value::<Tolerances>(v.clone()) {
                Ok(t) => cfg.tolerances = t,
                Err(e) => ck.fail(&path, e),
            },
            "outputs" => parse_outputs(&mut ck, &path, v, &mut cfg.outputs),
            _ => ck.fail(&path, format!("unknown key (allowed: {})", KEYS.join(", "))),
        }
    }
    if ck.errors.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Schema(ck.errors.join("\n")))
    }
}

fn parse_grid_value(ck: &mut Checker, path: &str, v: &Value) -> Option<Vec<f64>> {
    let grid = match v {
        Value::Array(items) => {
            let mut g = Vec::with_capacity(items.len());
            for (i, x) in items.iter().enumerate() {
                g.push(ck.number(&format!("{path}[{i}]"), x)?);
            }
            g
        }
        Value::Object(m) => {
            for k in m.keys() {
                if !matches!(k.as_str(), "start" | "stop" | "step") {
                    ck.fail(&format!("{path}.{k}"), "unknown key (allowed: start, stop, step)");
                }
            }
            let mut get = |k: &str| match m.get(k) {
                Some(x) => ck.number(&format!("{path}.{k}"), x),
                None => {
                    ck.fail(&format!("{path}.{k}"), "required");
                    None
                }
            };
            let (a, b, s) = (get("start"), get("stop"), get("step"));
            match range_grid(a?, b?, s?) {
                Ok(g) => g,
                Err(m) => {
                    ck.fail(path, m);
                    return None;
                }
            }
        }
        _ => {
            ck.fail(path, "expected a list or {start, stop, step}");
            return None;
        }
    };
    match check_grid(&grid) {
        Ok(()) => Some(grid),
        Err(m) => {
            ck.fail(path, m);
            None
        }
    }
}

fn parse_outputs(ck: &mut Checker, path: &str, v: &Value, out: &mut Outputs) {
    let Some(m) = v.as_object() else {
        ck.fail(path, "expected an object");
        return;
    };
    for (k, x) in m {
        let p = format!("{path}.{k}");
        match k.as_str() {
            "report" => out.report = ck.string(&p, x),
            "csv" => out.csv = ck.string(&p, x),
            _ => ck.fail(&p, "unknown key (allowed: report, csv)"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("{}").unwrap();
        assert_eq!(c.tau_stop, 1e-6);
        assert!(c.workers >= 1);
        assert_eq!(c.n_paths, DEFAULT_PATHS);
    }

    #[test]
    fn zero_paths_names_the_field() {
        let e = parse_config(r#"{"n_paths": 0}"#).unwrap_err().to_string();
        assert!(e.contains("$.n_paths"), "{e}");
    }

    #[test]
    fn unsorted_grid() {
        let e = parse_config(r#"{"u_grid": [5, 7, 6]}"#).unwrap_err().to_string();
        assert!(e.contains("$.u_grid") && e.contains("increasing"), "{e}");
    }

    #[test]
    fn all_errors_are_collected() {
        let e = parse_config(r#"{"tau_stop": 2, "bogus": 1, "outputs": {"pdf": "x"}}"#).unwrap_err().to_string();
        assert!(e.contains("$.tau_stop") && e.contains("$.bogus") && e.contains("$.outputs.pdf"), "{e}");
    }

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("5:10:1").unwrap(), vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
        assert_eq!(parse_grid("50,100").unwrap(), vec![50.0, 100.0]);
        let c = parse_config(r#"{"u_grid": {"start": 0, "stop": 1, "step": 0.25}, "n_paths": 1e7}"#).unwrap();
        assert_eq!(c.u_grid.unwrap().len(), 5);
        assert_eq!(c.n_paths, 10_000_000);
        assert!(parse_grid("3:1:1").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(parse_count("1e7").unwrap(), 10_000_000);
        assert!(parse_count("2.5").is_err());
        assert!(parse_count("0").is_err());
    }

    #[test]
    fn tolerance_overrides() {
        let c = parse_config(r#"{"tolerances": {"sigmas": 4}}"#).unwrap();
        assert_eq!(c.tolerances.sigmas, 4.0);
        assert_eq!(c.tolerances.lth_max_ratio, 10.0);
        assert!(parse_config(r#"{"tolerances": {"sigma": 4}}"#).is_err());
    }
}
