//! Slowly varying functions in the log domain.
//!
//! A slowly varying `L` is handled through `ell(u) = L(e^u)`, so that
//! arguments like `e^400` never have to be represented. The de Haan integral
//! `L~(x0, x) = int_{x0}^{x} L(t) / t dt` becomes `int_{log x0}^{log x} ell(v) dv`.

use std::collections::BTreeMap;
use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Quadrature};

/// A function given through its log-domain profile `ell(u) = L(e^u)`.
pub trait LogProfile: Sync {
    fn ell(&self, u: f64) -> f64;

    /// `int_a^b ell(v) dv` for finite `a <= b`.
    fn integral(&self, a: f64, b: f64) -> Result<Quadrature> {
        quad::integrate(|v| self.ell(v), a, b, quad::REL_TOL)
    }

    /// `int_{-inf}^{a} ell(v) dv`, when finite.
    fn left_integral(&self, _a: f64) -> Option<f64> {
        None
    }

    /// `int_a^{a+len} ell(v) dv`; profiles that are flat may avoid the
    /// cancellation in `(a + len) - a`.
    fn span_integral(&self, a: f64, len: f64) -> Result<f64> {
        Ok(self.integral(a, a + len)?.value)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SvFamily {
    /// `L(x) = c`.
    Constant { c: f64 },
    /// `L(x) = c (e + log+ x)^beta`, `beta > -1`.
    LogPower { c: f64, beta: f64 },
    /// `L(x) = c log(e + log+ x)`.
    IteratedLog { c: f64 },
    /// `L(x) = exp(sin(sqrt(log x)))` for `x >= 1`, `L(1)` below.
    Oscillating,
}

/// A catalog slowly varying function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSv", into = "RawSv")]
pub struct SlowlyVaryingSpec {
    pub family: SvFamily,
    /// Smallest `x` where the family formula applies (it is extended
    /// continuously below).
    pub domain_floor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSv {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

impl TryFrom<RawSv> for SlowlyVaryingSpec {
    type Error = Error;

    fn try_from(raw: RawSv) -> Result<Self> {
        let mut params = raw.params;
        let mut take = |name: &str, default: Option<f64>| -> Result<f64> {
            match (params.remove(name), default) {
                (Some(v), _) => Ok(v),
                (None, Some(d)) => Ok(d),
                (None, None) => Err(Error::InvalidSpec(format!(
                    "family {} needs parameter {name}",
                    raw.family
                ))),
            }
        };
        let family = match raw.family.as_str() {
            "constant" => SvFamily::Constant { c: take("c", Some(1.0))? },
            "log_power" => SvFamily::LogPower { c: take("c", Some(1.0))?, beta: take("beta", None)? },
            "iterated_log" => SvFamily::IteratedLog { c: take("c", Some(1.0))? },
            "oscillating" => SvFamily::Oscillating,
            other => return Err(Error::InvalidSpec(format!("unknown slowly varying family {other:?}"))),
        };
        if let Some(extra) = params.keys().next() {
            return Err(Error::InvalidSpec(format!(
                "unknown parameter {extra:?} for family {}",
                raw.family
            )));
        }
        SlowlyVaryingSpec::new(family)
    }
}

impl From<SlowlyVaryingSpec> for RawSv {
    fn from(sv: SlowlyVaryingSpec) -> Self {
        let mut params = BTreeMap::new();
        let family = match sv.family {
            SvFamily::Constant { c } => {
                params.insert("c".into(), c);
                "constant"
            }
            SvFamily::LogPower { c, beta } => {
                params.insert("c".into(), c);
                params.insert("beta".into(), beta);
                "log_power"
            }
            SvFamily::IteratedLog { c } => {
                params.insert("c".into(), c);
                "iterated_log"
            }
            SvFamily::Oscillating => "oscillating",
        };
        RawSv { family: family.into(), params }
    }
}

impl SlowlyVaryingSpec {
    pub fn new(family: SvFamily) -> Result<Self> {
        let positive = |c: f64| c.is_finite() && c > 0.0;
        let (ok, floor) = match family {
            SvFamily::Constant { c } => (positive(c), 0.0),
            SvFamily::LogPower { c, beta } => (positive(c) && beta.is_finite() && beta > -1.0, 1.0),
            SvFamily::IteratedLog { c } => (positive(c), 1.0),
            SvFamily::Oscillating => (true, 1.0),
        };
        if !ok {
            return Err(Error::InvalidSpec(format!("bad parameters for {family:?}")));
        }
        Ok(Self { family, domain_floor: floor })
    }

    pub fn constant(c: f64) -> Self {
        Self::new(SvFamily::Constant { c }).expect("c > 0")
    }

    pub fn log_power(c: f64, beta: f64) -> Self {
        Self::new(SvFamily::LogPower { c, beta }).expect("c > 0, beta > -1")
    }

    pub fn iterated_log(c: f64) -> Self {
        Self::new(SvFamily::IteratedLog { c }).expect("c > 0")
    }

    pub fn oscillating() -> Self {
        Self::new(SvFamily::Oscillating).expect("no parameters")
    }

    pub fn name(&self) -> &'static str {
        match self.family {
            SvFamily::Constant { .. } => "constant",
            SvFamily::LogPower { .. } => "log_power",
            SvFamily::IteratedLog { .. } => "iterated_log",
            SvFamily::Oscillating => "oscillating",
        }
    }

    /// Upper bound of `d/dt log ell(t)` over `t >= u`.
    pub fn log_slope_bound(&self, u: f64) -> f64 {
        let up = u.max(0.0);
        match self.family {
            SvFamily::Constant { .. } => 0.0,
            SvFamily::LogPower { beta, .. } => (beta / (E + up)).max(0.0),
            SvFamily::IteratedLog { .. } => 1.0 / ((E + up) * (E + up).ln()),
            SvFamily::Oscillating => {
                if u <= 0.0 {
                    f64::INFINITY
                } else {
                    0.5 / u.sqrt()
                }
            }
        }
    }

    /// `int_a^b ell` restricted to `v >= 0`, where the family formula acts.
    fn positive_part(&self, a: f64, b: f64) -> Result<Quadrature> {
        debug_assert!(0.0 <= a && a <= b);
        let exact = |value: f64| Ok(Quadrature { value, abs_err: 0.0, evals: 0 });
        match self.family {
            SvFamily::Constant { c } => exact(c * (b - a)),
            SvFamily::LogPower { c, beta } => {
                let p = beta + 1.0;
                exact(c * ((E + b).powf(p) - (E + a).powf(p)) / p)
            }
            SvFamily::IteratedLog { c } => {
                let anti = |v: f64| (E + v) * (E + v).ln() - (E + v);
                exact(c * (anti(b) - anti(a)))
            }
            SvFamily::Oscillating => {
                // v = w^2 removes the sqrt singularity at the origin
                quad::integrate(|w| 2.0 * w * w.sin().exp(), a.sqrt(), b.sqrt(), quad::REL_TOL)
            }
        }
    }
}

impl LogProfile for SlowlyVaryingSpec {
    fn ell(&self, u: f64) -> f64 {
        let up = u.max(0.0);
        match self.family {
            SvFamily::Constant { c } => c,
            SvFamily::LogPower { c, beta } => c * (E + up).powf(beta),
            SvFamily::IteratedLog { c } => c * (E + up).ln(),
            SvFamily::Oscillating => up.sqrt().sin().exp(),
        }
    }

    fn integral(&self, a: f64, b: f64) -> Result<Quadrature> {
        if a > b {
            let q = self.integral(b, a)?;
            return Ok(Quadrature { value: -q.value, ..q });
        }
        // below 0 every family is flat at ell(0)
        let flat = (b.min(0.0) - a).max(0.0) * self.ell(0.0);
        if b <= 0.0 {
            return Ok(Quadrature { value: flat, abs_err: 0.0, evals: 0 });
        }
        let q = self.positive_part(a.max(0.0), b)?;
        Ok(Quadrature { value: q.value + flat, ..q })
    }

    fn span_integral(&self, a: f64, len: f64) -> Result<f64> {
        match self.family {
            SvFamily::Constant { c } => Ok(c * len),
            _ => Ok(self.integral(a, a + len)?.value),
        }
    }
}

/// `ell(u) = L(e^u)`.
pub fn eval_log(sv: &SlowlyVaryingSpec, u: f64) -> f64 {
    sv.ell(u)
}

/// A de Haan integral `L~(x0, e^u)` together with its quadrature error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DeHaanValue {
    pub x0: f64,
    pub u: f64,
    pub value: f64,
    pub abs_tol: f64,
}

/// `L~(x0, e^u) = int_{log x0}^{u} ell(v) dv`; `x0 = 0` requires the profile
/// to be integrable at `-inf`.
pub fn tilde_log<P: LogProfile + ?Sized>(f: &P, x0: f64, u: f64) -> Result<DeHaanValue> {
    if !(x0 >= 0.0) {
        return Err(Error::Precondition(format!("x0 = {x0} must be >= 0")));
    }
    let (value, abs_tol) = if x0 == 0.0 {
        let cut = u.min(0.0);
        let left = f.left_integral(cut).ok_or_else(|| {
            Error::Precondition("L~(0, x) diverges: the profile is not integrable at 0+".into())
        })?;
        let q = f.integral(cut, u)?;
        (left + q.value, q.abs_err)
    } else {
        let a = x0.ln();
        if u < a {
            return Err(Error::Precondition(format!("u = {u} is below log x0 = {a}")));
        }
        let q = f.integral(a, u)?;
        (q.value, q.abs_err)
    };
    Ok(DeHaanValue { x0, u, value, abs_tol })
}

/// `L~(x, lambda x) / L(x)` with `x = e^u`; tends to `log lambda`.
pub fn dehaan_ratio<P: LogProfile + ?Sized>(f: &P, lambda: f64, u: f64) -> Result<f64> {
    if !(lambda > 1.0) {
        return Err(Error::Precondition(format!("lambda = {lambda} must exceed 1")));
    }
    Ok(f.span_integral(u, lambda.ln())? / f.ell(u))
}

/// `int_X^{e^u} t^(alpha-1) L(t) dt / (alpha^-1 e^(alpha u) L(e^u))`; tends to 1.
pub fn karamata_ratio<P: LogProfile + ?Sized>(f: &P, alpha: f64, x_lo: f64, u: f64) -> Result<f64> {
    if !(alpha > 0.0 && x_lo > 0.0) {
        return Err(Error::Precondition("alpha and X must be positive".into()));
    }
    let a = x_lo.ln();
    if !(u > a) {
        return Err(Error::Precondition(format!("u = {u} must exceed log X = {a}")));
    }
    // scaled by e^{-alpha u} so nothing overflows
    let q = quad::integrate(|v| (alpha * (v - u)).exp() * f.ell(v), a, u, quad::REL_TOL)?;
    Ok(alpha * q.value / f.ell(u))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PotterReport {
    pub delta: f64,
    /// Smallest `A >= 1` bounding every grid pair.
    pub a: f64,
    /// The same constant on the first half of the grid.
    pub a_half_grid: f64,
    /// Whether widening the grid increased `A`.
    pub grows: bool,
}

fn potter_constant<P: LogProfile + ?Sized>(f: &P, delta: f64, grid: &[f64]) -> f64 {
    let logs: Vec<f64> = grid.iter().map(|&u| f.ell(u).ln()).collect();
    let mut worst = 0.0f64;
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            worst = worst.max(logs[j] - logs[i] - delta * (grid[j] - grid[i]).abs());
        }
    }
    worst.exp()
}

/// Smallest Potter constant over the grid for `L(y)/L(x) <= A max((y/x)^d, (y/x)^-d)`.
pub fn potter_check<P: LogProfile + ?Sized>(f: &P, delta: f64, u_grid: &[f64]) -> Result<PotterReport> {
    if !(delta > 0.0) || u_grid.is_empty() {
        return Err(Error::Precondition("need delta > 0 and a nonempty grid".into()));
    }
    let a = potter_constant(f, delta, u_grid);
    let half = &u_grid[..u_grid.len().div_ceil(2)];
    let a_half_grid = potter_constant(f, delta, half);
    Ok(PotterReport { delta, a, a_half_grid, grows: a > a_half_grid * (1.0 + 1e-12) })
}
