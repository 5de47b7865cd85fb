//! Laws of the pair `(A, B)`, the critical exponent, and the tilted walk.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ensemble::map_chunks;
use crate::error::{Error, Result};
use crate::quad::{self, Quadrature};
use crate::rng::{StreamRng, lane};
use crate::stats::Moments;
use crate::sv::{LogProfile, SlowlyVaryingSpec, SvFamily};

/// Tolerance on `|kappa(alpha)|` for a law to count as critical at `alpha`.
pub const CRITICAL_TOL: f64 = 1e-9;

/// Log-sum-exp of weighted exponentials, skipping zero weights.
fn log_mix(terms: &[(f64, f64)]) -> f64 {
    let m = terms
        .iter()
        .filter(|(w, _)| *w > 0.0)
        .map(|(_, e)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = terms.iter().filter(|(w, _)| *w > 0.0).map(|(w, e)| w * (e - m).exp()).sum();
    m + s.ln()
}

/// Closest fraction `p/q` with `q <= max_den` (continued fractions).
fn nearest_fraction(x: f64, max_den: u64) -> f64 {
    let sign = x.signum();
    let x = x.abs();
    let (mut p0, mut q0, mut p1, mut q1) = (0u64, 1u64, 1u64, 0u64);
    let mut y = x;
    for _ in 0..64 {
        let a = y.floor();
        let a_i = a as u64;
        let q2 = q0 + a_i * q1;
        if q2 > max_den {
            break;
        }
        (p0, q0, p1, q1) = (p1, q1, p0 + a_i * p1, q2);
        let frac = y - a;
        if frac <= 0.0 {
            break;
        }
        y = 1.0 / frac;
    }
    let k = (max_den - q0) / q1.max(1);
    let semi = (p0 + k * p1) as f64 / (q0 + k * q1) as f64;
    let conv = p1 as f64 / q1.max(1) as f64;
    let best = if (semi - x).abs() < (conv - x).abs() { semi } else { conv };
    sign * best
}

/// Denominator bound and tolerance of the non-arithmetic screen for two-point laws.
pub const ARITHMETIC_MAX_DEN: u64 = 10_000;
pub const ARITHMETIC_TOL: f64 = 1e-9;

/// Law of `log A`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub enum FactorLawSpec {
    /// `log A ~ N(m, s2)`.
    LogNormal { m: f64, s2: f64 },
    /// `log A = u1` with probability `p`, else `u2`.
    TwoPoint { u1: f64, u2: f64, p: f64 },
    /// `A = 0` almost surely; only meaningful for the subcritical regime.
    Zero,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLaw {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

impl TryFrom<RawLaw> for FactorLawSpec {
    type Error = Error;

    fn try_from(raw: RawLaw) -> Result<Self> {
        let mut params = raw.params;
        let mut take = |k: &str| {
            params
                .remove(k)
                .ok_or_else(|| Error::InvalidSpec(format!("family {} needs parameter {k}", raw.family)))
        };
        let law = match raw.family.as_str() {
            "lognormal" => FactorLawSpec::LogNormal { m: take("m")?, s2: take("s2")? },
            "two_point" => FactorLawSpec::TwoPoint { u1: take("u1")?, u2: take("u2")?, p: take("p")? },
            "zero" => FactorLawSpec::Zero,
            other => return Err(Error::InvalidSpec(format!("unknown factor law {other:?}"))),
        };
        if let Some(extra) = params.keys().next() {
            return Err(Error::InvalidSpec(format!("unknown parameter {extra:?} for {}", raw.family)));
        }
        law.validated()
    }
}

impl From<FactorLawSpec> for RawLaw {
    fn from(law: FactorLawSpec) -> Self {
        let mut params = BTreeMap::new();
        let family = match law {
            FactorLawSpec::LogNormal { m, s2 } => {
                params.insert("m".into(), m);
                params.insert("s2".into(), s2);
                "lognormal"
            }
            FactorLawSpec::TwoPoint { u1, u2, p } => {
                params.insert("u1".into(), u1);
                params.insert("u2".into(), u2);
                params.insert("p".into(), p);
                "two_point"
            }
            FactorLawSpec::Zero => "zero",
        };
        RawLaw { family: family.into(), params }
    }
}

impl FactorLawSpec {
    pub fn lognormal(m: f64, s2: f64) -> Result<Self> {
        FactorLawSpec::LogNormal { m, s2 }.validated()
    }

    pub fn two_point(u1: f64, u2: f64, p: f64) -> Result<Self> {
        FactorLawSpec::TwoPoint { u1, u2, p }.validated()
    }

    /// Two-point law on `{1, -sqrt 2}` with `E A = 1`.
    pub fn canonical_two_point() -> Self {
        let r2 = std::f64::consts::SQRT_2;
        let p = (1.0 - (-r2).exp()) / (1.0_f64.exp() - (-r2).exp());
        FactorLawSpec::TwoPoint { u1: 1.0, u2: -r2, p }
    }

    fn validated(self) -> Result<Self> {
        match self {
            FactorLawSpec::LogNormal { m, s2 } => {
                if !(m.is_finite() && s2.is_finite() && s2 > 0.0) {
                    return Err(Error::InvalidSpec("lognormal needs finite m and s2 > 0".into()));
                }
            }
            FactorLawSpec::TwoPoint { u1, u2, p } => {
                if !(u1.is_finite() && u2.is_finite() && p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidSpec("two_point needs finite support and p in (0,1)".into()));
                }
                if u1 == 0.0 || u2 == 0.0 {
                    return Err(Error::InvalidSpec("two_point support must avoid 0 (arithmetic)".into()));
                }
                let ratio = u1 / u2;
                if (ratio - nearest_fraction(ratio, ARITHMETIC_MAX_DEN)).abs() <= ARITHMETIC_TOL {
                    return Err(Error::InvalidSpec(format!(
                        "two_point support ratio {ratio} is numerically rational: law of log A is arithmetic"
                    )));
                }
            }
            FactorLawSpec::Zero => {}
        }
        Ok(self)
    }

    pub fn name(&self) -> &'static str {
        match self {
            FactorLawSpec::LogNormal { .. } => "lognormal",
            FactorLawSpec::TwoPoint { .. } => "two_point",
            FactorLawSpec::Zero => "zero",
        }
    }

    /// `kappa(s) = log E A^s`.
    pub fn cumulant(&self, s: f64) -> f64 {
        match *self {
            FactorLawSpec::LogNormal { m, s2 } => m * s + 0.5 * s * s * s2,
            FactorLawSpec::TwoPoint { u1, u2, p } => log_mix(&[(p, s * u1), (1.0 - p, s * u2)]),
            FactorLawSpec::Zero => {
                if s == 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    /// `kappa'(s) = E A^s log A / E A^s`.
    pub fn cumulant_deriv(&self, s: f64) -> f64 {
        match *self {
            FactorLawSpec::LogNormal { m, s2 } => m + s * s2,
            FactorLawSpec::TwoPoint { u1, u2, p } => {
                let k = self.cumulant(s);
                p * (s * u1 - k).exp() * u1 + (1.0 - p) * (s * u2 - k).exp() * u2
            }
            FactorLawSpec::Zero => f64::NEG_INFINITY,
        }
    }

    /// `E log A`.
    pub fn mean_log(&self) -> f64 {
        match *self {
            FactorLawSpec::LogNormal { m, .. } => m,
            FactorLawSpec::TwoPoint { u1, u2, p } => p * u1 + (1.0 - p) * u2,
            FactorLawSpec::Zero => f64::NEG_INFINITY,
        }
    }

    /// Draw `log A`; always consumes two words of the stream.
    #[inline]
    pub fn sample_log(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            FactorLawSpec::LogNormal { m, s2 } => m + s2.sqrt() * rng.std_normal(),
            FactorLawSpec::TwoPoint { u1, u2, p } => {
                let u = rng.open01();
                rng.next_u64();
                if u < p { u1 } else { u2 }
            }
            FactorLawSpec::Zero => {
                rng.next_u64();
                rng.next_u64();
                f64::NEG_INFINITY
            }
        }
    }
}

/// The `alpha > 0` with `E A^alpha = 1`.
pub fn solve_alpha(a: &FactorLawSpec) -> Result<f64> {
    let k = |s: f64| a.cumulant(s);
    let slope0 = a.cumulant_deriv(0.0);
    if !(slope0 < 0.0) || slope0 == f64::NEG_INFINITY && k(1.0) == f64::NEG_INFINITY {
        return Err(Error::NoRoot(format!(
            "{}: kappa'(0) = {slope0} is not negative, E A^s never returns to 1",
            a.name()
        )));
    }
    let mut hi = 1.0;
    while !(k(hi) > 0.0) {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::NoRoot(format!("{}: kappa stays negative on (0, 1e4]", a.name())));
        }
    }
    let mut lo = hi;
    while !(k(lo) < 0.0) {
        lo *= 0.5;
        if lo < 1e-12 {
            return Err(Error::NoRoot("could not bracket the root".into()));
        }
    }
    // safeguarded Newton on the convex, increasing branch
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let fx = k(x);
        if fx.abs() <= 1e-14 {
            break;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let step = x - fx / a.cumulant_deriv(x);
        x = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    if k(x).abs() > 1e-12 {
        return Err(Error::NoRoot(format!("root refinement stalled at kappa = {}", k(x))));
    }
    Ok(x)
}

/// `rho = E A^alpha log A`, which equals `kappa'(alpha)` at a root.
pub fn compute_rho(a: &FactorLawSpec, alpha: f64) -> Result<f64> {
    let k = a.cumulant(alpha);
    if !(k.abs() <= CRITICAL_TOL) {
        return Err(Error::Precondition(format!("kappa({alpha}) = {k} is not 0")));
    }
    let rho = a.cumulant_deriv(alpha);
    if !(rho > 0.0) {
        return Err(Error::NonPositiveRho(rho));
    }
    Ok(rho)
}

/// Law of a random-walk increment.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum IncrementLaw {
    Normal { mean: f64, var: f64 },
    /// Atoms `(value, probability)`.
    Discrete { atoms: Vec<(f64, f64)> },
}

/// Law of `Z` with `P(Z in .) = E A^alpha 1{log A in .}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TiltedLaw {
    pub law: IncrementLaw,
    /// The tilting exponent (0 for an untilted or hand-built law).
    pub tilt: f64,
    pub mean: f64,
    pub second_moment: f64,
    #[serde(skip)]
    cdf: Vec<f64>,
}

impl TiltedLaw {
    pub fn normal(mean: f64, var: f64) -> Self {
        Self { law: IncrementLaw::Normal { mean, var }, tilt: 0.0, mean, second_moment: var + mean * mean, cdf: vec![] }
    }

    pub fn discrete(atoms: Vec<(f64, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        if atoms.is_empty() || atoms.iter().any(|a| !(a.1 >= 0.0) || !a.0.is_finite()) || !(total > 0.0) {
            return Err(Error::InvalidSpec("discrete law needs finite atoms with nonnegative mass".into()));
        }
        let atoms: Vec<(f64, f64)> = atoms.into_iter().map(|(z, w)| (z, w / total)).collect();
        let mean = atoms.iter().map(|(z, w)| z * w).sum();
        let second_moment = atoms.iter().map(|(z, w)| z * z * w).sum();
        let mut acc = 0.0;
        let cdf = atoms
            .iter()
            .map(|(_, w)| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { law: IncrementLaw::Discrete { atoms }, tilt: 0.0, mean, second_moment, cdf })
    }

    pub fn point_mass(at: f64) -> Self {
        Self::discrete(vec![(at, 1.0)]).expect("finite atom")
    }

    /// `log E e^{sZ}`, i.e. `kappa(alpha + s)` for a tilted factor law.
    pub fn cumulant(&self, s: f64) -> f64 {
        match &self.law {
            IncrementLaw::Normal { mean, var } => mean * s + 0.5 * var * s * s,
            IncrementLaw::Discrete { atoms } => {
                let terms: Vec<(f64, f64)> = atoms.iter().map(|&(z, w)| (w, s * z)).collect();
                log_mix(&terms)
            }
        }
    }

    pub fn variance(&self) -> f64 {
        self.second_moment - self.mean * self.mean
    }

    /// Only laws with an absolutely continuous part pass the Cramer-condition gate.
    pub fn strongly_non_lattice(&self) -> bool {
        matches!(self.law, IncrementLaw::Normal { .. })
    }

    /// The `gamma > 0` with `E e^{-gamma Z} = 1` (infinite when `Z > 0` a.s.).
    /// Excursions of the walk below its running level decay like `e^{-gamma h}`.
    pub fn left_exponent(&self) -> f64 {
        match &self.law {
            IncrementLaw::Normal { mean, var } => {
                if *mean > 0.0 {
                    2.0 * mean / var
                } else {
                    0.0
                }
            }
            IncrementLaw::Discrete { atoms } => {
                if atoms.iter().all(|a| a.0 > 0.0 || a.1 == 0.0) {
                    return f64::INFINITY;
                }
                if self.mean <= 0.0 {
                    return 0.0;
                }
                let f = |g: f64| self.cumulant(-g);
                let mut hi = 1.0;
                while f(hi) <= 0.0 {
                    hi *= 2.0;
                }
                let mut lo = hi / 2.0;
                while f(lo) > 0.0 && lo > 1e-12 {
                    lo /= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid) > 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                lo
            }
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match &self.law {
            IncrementLaw::Normal { mean, var } => mean + var.sqrt() * rng.std_normal(),
            IncrementLaw::Discrete { atoms } => {
                let u = rng.open01();
                let i = self.cdf.partition_point(|&c| c < u).min(atoms.len() - 1);
                atoms[i].0
            }
        }
    }
}

/// The exact law of `Z` for a catalog factor law at exponent `alpha`.
pub fn make_tilted(a: &FactorLawSpec, alpha: f64) -> Result<TiltedLaw> {
    let k = a.cumulant(alpha);
    if !(k.abs() <= CRITICAL_TOL) {
        return Err(Error::Precondition(format!("kappa({alpha}) = {k} is not 0")));
    }
    let mut z = match *a {
        FactorLawSpec::LogNormal { m, s2 } => TiltedLaw::normal(m + alpha * s2, s2),
        FactorLawSpec::TwoPoint { u1, u2, p } => {
            TiltedLaw::discrete(vec![(u1, p * (alpha * u1).exp()), (u2, (1.0 - p) * (alpha * u2).exp())])?
        }
        FactorLawSpec::Zero => return Err(Error::InvalidSpec("the zero law has no tilt".into())),
    };
    z.tilt = alpha;
    Ok(z)
}

/// Regularly varying perturbation: `P(B > x) = T(x)` with
/// `T(x) = min_{floor <= t <= x} min(1, t^-alpha L(t))` and `T = 1` below the floor.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "RawTail", into = "RawTail")]
pub struct PerturbationTailSpec {
    pub alpha: f64,
    pub sv: SlowlyVaryingSpec,
    pub x_floor: f64,
    envelope: Envelope,
}

impl PartialEq for PerturbationTailSpec {
    fn eq(&self, other: &Self) -> bool {
        self.alpha == other.alpha && self.sv == other.sv && self.x_floor == other.x_floor
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTail {
    alpha: f64,
    #[serde(rename = "L")]
    l: SlowlyVaryingSpec,
    x_floor: f64,
}

impl TryFrom<RawTail> for PerturbationTailSpec {
    type Error = Error;
    fn try_from(r: RawTail) -> Result<Self> {
        PerturbationTailSpec::new(r.alpha, r.l, r.x_floor)
    }
}

impl From<PerturbationTailSpec> for RawTail {
    fn from(t: PerturbationTailSpec) -> Self {
        RawTail { alpha: t.alpha, l: t.sv, x_floor: t.x_floor }
    }
}

/// Running minimum of `g(v) = -alpha v + log ell(v)` on `[log floor, horizon]`;
/// beyond the horizon `g` is strictly decreasing.
#[derive(Clone, Debug, Default)]
struct Envelope {
    log_floor: f64,
    horizon: f64,
    step: f64,
    running_min: Vec<f64>,
}

const ENVELOPE_STEP: f64 = 1e-4;
const ENVELOPE_MAX_POINTS: usize = 2_000_000;

impl PerturbationTailSpec {
    pub fn new(alpha: f64, sv: SlowlyVaryingSpec, x_floor: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && x_floor > 0.0 && x_floor.is_finite()) {
            return Err(Error::InvalidSpec("B tail needs alpha > 0 and x_floor > 0".into()));
        }
        let log_floor = x_floor.ln();
        // smallest v with sup_{t >= v} (log ell)'(t) < alpha
        let ok = |v: f64| sv.log_slope_bound(v) < alpha;
        let horizon = if ok(log_floor) {
            log_floor
        } else {
            let mut hi = log_floor.max(0.0) + 1.0;
            while !ok(hi) {
                hi = 2.0 * hi + 1.0;
                if hi > 1e9 {
                    return Err(Error::InvalidSpec("tail x^-alpha L(x) is not eventually decreasing".into()));
                }
            }
            let mut lo = log_floor;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if ok(mid) { hi = mid } else { lo = mid }
            }
            hi
        };
        let mut envelope = Envelope { log_floor, horizon, step: ENVELOPE_STEP, running_min: vec![] };
        if horizon > log_floor {
            let n = ((horizon - log_floor) / ENVELOPE_STEP).ceil() as usize + 1;
            if n > ENVELOPE_MAX_POINTS {
                return Err(Error::InvalidSpec("monotone envelope region too wide".into()));
            }
            let mut m = 0.0f64;
            envelope.running_min = (0..n)
                .map(|i| {
                    let v = log_floor + ENVELOPE_STEP * i as f64;
                    m = m.min(-alpha * v + sv.ell(v).ln());
                    m
                })
                .collect();
        }
        Ok(Self { alpha, sv, x_floor, envelope })
    }

    /// Pareto tail `P(B > x) = min(1, x^-alpha)` with floor 1.
    pub fn pareto(alpha: f64) -> Self {
        Self::new(alpha, SlowlyVaryingSpec::constant(1.0), 1.0).expect("valid Pareto")
    }

    /// Where the induced `x^alpha T(x)` starts to coincide with `L`
    /// (up to the running minimum reached before it).
    pub fn monotone_from(&self) -> f64 {
        self.envelope.horizon.exp()
    }

    fn g(&self, u: f64) -> f64 {
        -self.alpha * u + self.sv.ell(u).ln()
    }

    /// `log T(e^u)`.
    pub fn log_tail(&self, u: f64) -> f64 {
        let env = &self.envelope;
        if u < env.log_floor {
            return 0.0;
        }
        if u < env.horizon {
            let k = (((u - env.log_floor) / env.step) as usize).min(env.running_min.len() - 1);
            return env.running_min[k];
        }
        let before = env.running_min.last().copied().unwrap_or(0.0);
        self.g(u).min(before).min(0.0)
    }

    pub fn tail(&self, x: f64) -> f64 {
        if x < self.x_floor {
            return 1.0;
        }
        if let SvFamily::Constant { c } = self.sv.family {
            if self.envelope.running_min.is_empty() {
                return (c * x.powf(-self.alpha)).min(1.0);
            }
        }
        self.log_tail(x.ln()).exp()
    }

    /// `inf { x : T(x) <= q }`.
    pub fn quantile(&self, q: f64) -> f64 {
        debug_assert!(q > 0.0 && q < 1.0);
        let lq = q.ln();
        if let SvFamily::Constant { c } = self.sv.family {
            if self.envelope.running_min.is_empty() {
                return self.x_floor.max((c / q).powf(1.0 / self.alpha));
            }
        }
        let lf = self.envelope.log_floor;
        if self.log_tail(lf) <= lq {
            return self.x_floor;
        }
        let mut lo = lf;
        let mut hi = lf + 1.0;
        while self.log_tail(hi) > lq {
            lo = hi;
            hi = lf + 2.0 * (hi - lf);
        }
        while hi - lo > 1e-13 * hi.abs().max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.log_tail(mid) <= lq { hi = mid } else { lo = mid }
        }
        hi.exp()
    }

    /// The induced slowly varying function `L_B(x) = x^alpha T(x)`.
    pub fn induced(&self) -> InducedL<'_> {
        InducedL { tail: self }
    }
}

/// `L_B(e^u) = e^{alpha u} T(e^u)`; equals `e^{alpha u}` below the floor.
#[derive(Clone, Copy, Debug)]
pub struct InducedL<'a> {
    tail: &'a PerturbationTailSpec,
}

impl InducedL<'_> {
    /// Closed form for the constant family: `ell_B(v) = min(e^{alpha v}, c)`
    /// above the floor, `e^{alpha v}` below it.
    fn constant_integral(&self, c: f64, a: f64, b: f64) -> f64 {
        let al = self.tail.alpha;
        let lf = self.tail.envelope.log_floor;
        let exp_part = |lo: f64, hi: f64| if hi > lo { ((al * hi).exp() - (al * lo).exp()) / al } else { 0.0 };
        let flat = |from: f64| c * (b - a.max(from)).max(0.0);
        let below = exp_part(a, b.min(lf));
        if c < (al * lf).exp() {
            // T jumps at the floor; the profile is flat at c from there on
            below + flat(lf)
        } else {
            let cross = c.ln() / al;
            below + exp_part(a.max(lf), b.min(cross)) + flat(cross)
        }
    }
}

impl LogProfile for InducedL<'_> {
    fn ell(&self, u: f64) -> f64 {
        (self.tail.alpha * u + self.tail.log_tail(u)).exp()
    }

    fn integral(&self, a: f64, b: f64) -> Result<Quadrature> {
        if a > b {
            let q = self.integral(b, a)?;
            return Ok(Quadrature { value: -q.value, ..q });
        }
        if let SvFamily::Constant { c } = self.tail.sv.family {
            if self.tail.envelope.running_min.is_empty() {
                return Ok(Quadrature { value: self.constant_integral(c, a, b), abs_err: 0.0, evals: 0 });
            }
        }
        let env = &self.tail.envelope;
        let mut cuts = vec![a];
        for p in [env.log_floor, env.horizon] {
            if p > a && p < b {
                cuts.push(p);
            }
        }
        cuts.push(b);
        cuts.dedup();
        let mut out = Quadrature { value: 0.0, abs_err: 0.0, evals: 0 };
        for w in cuts.windows(2) {
            let q = quad::integrate(|v| self.ell(v), w[0], w[1], quad::REL_TOL * 1e-2)?;
            out.value += q.value;
            out.abs_err += q.abs_err;
            out.evals += q.evals;
        }
        Ok(out)
    }

    fn left_integral(&self, a: f64) -> Option<f64> {
        let lf = self.tail.envelope.log_floor;
        let al = self.tail.alpha;
        if a <= lf {
            Some((al * a).exp() / al)
        } else {
            Some((al * lf).exp() / al + self.integral(lf, a).ok()?.value)
        }
    }
}

/// Law of the perturbation `B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerturbationLaw {
    RegularlyVarying(PerturbationTailSpec),
    Uniform { uniform: [f64; 2] },
    Constant { constant: f64 },
}

impl PerturbationLaw {
    pub fn tail_spec(&self) -> Option<&PerturbationTailSpec> {
        match self {
            PerturbationLaw::RegularlyVarying(t) => Some(t),
            _ => None,
        }
    }

    pub fn tail(&self, x: f64) -> f64 {
        match self {
            PerturbationLaw::RegularlyVarying(t) => t.tail(x),
            PerturbationLaw::Uniform { uniform: [lo, hi] } => ((hi - x) / (hi - lo)).clamp(0.0, 1.0),
            PerturbationLaw::Constant { constant } => {
                if x < *constant { 1.0 } else { 0.0 }
            }
        }
    }

    #[inline]
    pub fn quantile(&self, q: f64) -> f64 {
        match self {
            PerturbationLaw::RegularlyVarying(t) => t.quantile(q),
            PerturbationLaw::Uniform { uniform: [lo, hi] } => hi - q * (hi - lo),
            PerturbationLaw::Constant { constant } => *constant,
        }
    }

    /// `E B_+^p` of the law itself, for bounded laws.
    pub fn bounded_moment(&self, p: f64) -> Option<f64> {
        match *self {
            PerturbationLaw::RegularlyVarying(_) => None,
            PerturbationLaw::Uniform { uniform: [lo, hi] } => {
                let q = p + 1.0;
                Some((hi.max(0.0).powf(q) - lo.max(0.0).powf(q)) / (q * (hi - lo)))
            }
            PerturbationLaw::Constant { constant } => Some(constant.max(0.0).powf(p)),
        }
    }

    /// `B` is bounded, so `E B^alpha < infinity` for every alpha.
    pub fn is_bounded(&self) -> bool {
        !matches!(self, PerturbationLaw::RegularlyVarying(_))
    }

    fn validate(&self) -> Result<()> {
        match self {
            PerturbationLaw::RegularlyVarying(_) => Ok(()),
            PerturbationLaw::Uniform { uniform: [lo, hi] } if lo.is_finite() && hi > lo => Ok(()),
            PerturbationLaw::Constant { constant } if constant.is_finite() => Ok(()),
            _ => Err(Error::InvalidSpec("bad bounded B law".into())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dependence {
    Independent,
    /// `B = A * B0` with `B0` drawn from the B law independently of `A`.
    Breiman,
}

/// Which limit theorem applies to the model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "regime", rename_all = "snake_case")]
pub enum Regime {
    /// `E A^alpha = 1` at the index of a regularly varying B with infinite alpha-moment.
    Critical { alpha: f64, rho: f64 },
    /// `E A^alpha < 1` at the index of B.
    Subcritical { alpha: f64, e_a_alpha: f64 },
    /// Critical A with a bounded B.
    Bounded { alpha: f64, rho: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "A")]
    pub a: FactorLawSpec,
    #[serde(rename = "B")]
    pub b: PerturbationLaw,
    pub dependence: Dependence,
}

impl ModelSpec {
    pub fn new(a: FactorLawSpec, b: PerturbationLaw, dependence: Dependence) -> Result<Self> {
        b.validate()?;
        let m = Self { a, b, dependence };
        m.regime()?;
        Ok(m)
    }

    /// lognormal(-1, 2) factor, Pareto(1) perturbation, independent.
    pub fn canonical() -> Self {
        Self::new(
            FactorLawSpec::LogNormal { m: -1.0, s2: 2.0 },
            PerturbationLaw::RegularlyVarying(PerturbationTailSpec::pareto(1.0)),
            Dependence::Independent,
        )
        .expect("canonical model is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelSpec = serde_json::from_str(text)?;
        m.b.validate()?;
        m.regime()?;
        Ok(m)
    }

    pub fn regime(&self) -> Result<Regime> {
        match &self.b {
            PerturbationLaw::RegularlyVarying(t) => {
                let k = self.a.cumulant(t.alpha);
                if k.abs() <= CRITICAL_TOL {
                    Ok(Regime::Critical { alpha: t.alpha, rho: compute_rho(&self.a, t.alpha)? })
                } else if k < 0.0 {
                    Ok(Regime::Subcritical { alpha: t.alpha, e_a_alpha: k.exp() })
                } else {
                    Err(Error::InvalidSpec(format!(
                        "E A^alpha = {} > 1 at the index of B: R is not heavy tailed with this index",
                        k.exp()
                    )))
                }
            }
            _ => {
                let alpha = solve_alpha(&self.a)?;
                Ok(Regime::Bounded { alpha, rho: compute_rho(&self.a, alpha)? })
            }
        }
    }

    /// The tail index driving the model (`alpha` of B, or the root for bounded B).
    pub fn alpha(&self) -> Result<f64> {
        Ok(match self.regime()? {
            Regime::Critical { alpha, .. } | Regime::Subcritical { alpha, .. } | Regime::Bounded { alpha, .. } => alpha,
        })
    }

    pub fn tilted(&self) -> Result<TiltedLaw> {
        match self.regime()? {
            Regime::Critical { alpha, .. } | Regime::Bounded { alpha, .. } => make_tilted(&self.a, alpha),
            Regime::Subcritical { .. } => Err(Error::NotCritical { e_a_alpha: self.regime_e_a_alpha() }),
        }
    }

    fn regime_e_a_alpha(&self) -> f64 {
        match self.regime() {
            Ok(Regime::Subcritical { e_a_alpha, .. }) => e_a_alpha,
            _ => 1.0,
        }
    }

    /// Draw `(log A, B)`; consumes exactly [`PAIR_WORDS`] words.
    #[inline]
    pub fn sample_log_pair(&self, rng: &mut StreamRng) -> (f64, f64) {
        let log_a = self.a.sample_log(rng);
        let u = rng.open01();
        rng.next_u64();
        let b0 = self.b.quantile(u);
        let b = match self.dependence {
            Dependence::Independent => b0,
            Dependence::Breiman => log_a.exp() * b0,
        };
        (log_a, b)
    }
}

/// Words of the stream consumed by one pair draw.
pub const PAIR_WORDS: u64 = 4;

/// One `(A, B)` draw from the stream's current position.
pub fn sample_pair(model: &ModelSpec, rng: &mut StreamRng) -> (f64, f64) {
    let (log_a, b) = model.sample_log_pair(rng);
    (log_a.exp(), b)
}

/// The `draw`-th pair of stream `(seed, stream)`, independent of earlier draws.
pub fn pair_at(model: &ModelSpec, seed: u64, stream: u64, draw: u64) -> (f64, f64) {
    let mut rng = StreamRng::new(seed, stream);
    rng.seek_u64(draw * PAIR_WORDS);
    sample_pair(model, &mut rng)
}

pub fn tail_b(model: &ModelSpec, x: f64) -> f64 {
    model.b.tail(x)
}

pub fn quantile_b(model: &ModelSpec, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Precondition(format!("quantile level {q} outside (0,1)")));
    }
    Ok(model.b.quantile(q))
}

fn rv_tail(model: &ModelSpec) -> Result<&PerturbationTailSpec> {
    model
        .b
        .tail_spec()
        .ok_or_else(|| Error::Precondition("operation needs a regularly varying B".into()))
}

/// `E B_+^{alpha + r} 1{B <= x}` by integration by parts against the tail.
pub fn truncated_moment_b(model: &ModelSpec, r: f64, x: f64) -> Result<f64> {
    let t = rv_tail(model)?;
    if !(x > 0.0 && r >= 0.0) {
        return Err(Error::Precondition("need x > 0 and r >= 0".into()));
    }
    let p = t.alpha + r;
    let ux = x.ln();
    let lf = t.x_floor.ln();
    // int_0^{min(x, floor)} p t^{p-1} dt, where T = 1
    let mut acc = (p * ux.min(lf)).exp();
    if ux > lf {
        let mut cuts = vec![lf];
        let h = t.envelope.horizon;
        if h > lf && h < ux {
            cuts.push(h);
        }
        cuts.push(ux);
        for w in cuts.windows(2) {
            let q = quad::integrate(|v| p * (p * v + t.log_tail(v)).exp(), w[0], w[1], quad::REL_TOL * 1e-2)?;
            acc += q.value;
        }
    }
    Ok(acc - (p * ux + t.log_tail(ux)).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArbReport {
    pub eta: f64,
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub half_estimate: f64,
    pub half_stderr: f64,
    /// Full and half-sample estimates agree within 3 combined standard errors.
    pub stable: bool,
}

/// Monte Carlo evidence for `E A^eta B_+^{alpha - eta} < infinity`.
pub fn check_arb(model: &ModelSpec, eta: f64, n: usize, seed: u64) -> Result<ArbReport> {
    let alpha = model.alpha()?;
    if !(eta > 0.0 && eta < alpha) {
        return Err(Error::Precondition(format!("eta = {eta} must lie in (0, {alpha})")));
    }
    if n < 10_000 {
        return Err(Error::Precondition("check_arb needs n >= 1e4".into()));
    }
    let half = n / 2;
    let parts = map_chunks(n, seed, lane::ARB, |c, rng| {
        let mut all = Moments::default();
        let mut first = Moments::default();
        for i in 0..c.len {
            let (log_a, b) = model.sample_log_pair(rng);
            let v = if b > 0.0 { (eta * log_a).exp() * b.powf(alpha - eta) } else { 0.0 };
            all.push(v);
            if c.start + i < half {
                first.push(v);
            }
        }
        (all, first)
    });
    let mut all = Moments::default();
    let mut first = Moments::default();
    for (a, f) in &parts {
        all.merge(a);
        first.merge(f);
    }
    let (se, hse) = (all.stderr(), first.stderr());
    let stable = (all.mean() - first.mean()).abs() < 3.0 * (se * se + hse * hse).sqrt();
    Ok(ArbReport {
        eta,
        n,
        estimate: all.mean(),
        stderr: se,
        half_estimate: first.mean(),
        half_stderr: hse,
        stable,
    })
}
