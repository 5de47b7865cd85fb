//! The renewal measure `H = sum_{n>=0} P(S_n in .)` of `S_n = Z_1 + ... + Z_n`.
//!
//! Functionals `int g dH` are estimated as `E sum_n g(S_n)` over simulated
//! paths, and checked against a literal lattice computation of
//! `sum_n mu^{*n}`.

use serde::Serialize;

use crate::ensemble::map_chunks;
use crate::error::{Error, Result};
use crate::model::{IncrementLaw, ModelSpec, TiltedLaw};
use crate::rng::lane;
use crate::stats::Moments;

/// Walks stop once `S_n > upper`, or are discarded after `cap` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StopRule {
    pub upper: f64,
    pub cap: usize,
}

pub const DEFAULT_STEP_CAP: usize = 1_000_000;
/// Stop margin in units of `1 / gamma`, gamma the left-excursion exponent.
pub const MARGIN_EXPONENT: f64 = 40.0;

impl StopRule {
    /// Stop `40 / gamma` above `u_max`: a walk returns that far down with
    /// probability at most `e^-40`.
    pub fn beyond(z: &TiltedLaw, u_max: f64) -> Self {
        let gamma = z.left_exponent();
        let margin = if gamma.is_infinite() { 0.0 } else { MARGIN_EXPONENT / gamma.max(1e-3) };
        Self { upper: u_max + margin, cap: DEFAULT_STEP_CAP }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SeedRecord {
    pub master: u64,
    pub lane: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RenewalFunctionalEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: u64,
    /// Paths that hit the step cap; excluded from `value`.
    pub discarded: u64,
    pub seed: SeedRecord,
    pub truncation: StopRule,
}

/// Several functionals `E sum_{n>=0} f_k(S_n)` from one ensemble of paths.
pub fn renewal_functionals_mc(
    z: &TiltedLaw,
    fs: &[&(dyn Fn(f64) -> f64 + Sync)],
    n_paths: usize,
    stop: StopRule,
    seed: u64,
) -> Result<Vec<RenewalFunctionalEstimate>> {
    if !(z.mean > 0.0) {
        return Err(Error::Precondition("the walk needs a positive drift".into()));
    }
    let k = fs.len();
    let parts = map_chunks(n_paths, seed, lane::WALK, |c, rng| {
        let mut acc = vec![Moments::default(); k];
        let mut sums = vec![0.0; k];
        let mut discarded = 0u64;
        for _ in 0..c.len {
            sums.iter_mut().for_each(|s| *s = 0.0);
            let mut s = 0.0;
            let mut steps = 0usize;
            let mut kept = true;
            loop {
                for (acc_j, f) in sums.iter_mut().zip(fs) {
                    *acc_j += f(s);
                }
                if s > stop.upper {
                    break;
                }
                if steps == stop.cap {
                    kept = false;
                    break;
                }
                s += z.sample(rng);
                steps += 1;
            }
            if kept {
                acc.iter_mut().zip(&sums).for_each(|(m, &v)| m.push(v));
            } else {
                discarded += 1;
            }
        }
        (acc, discarded)
    });
    let mut total = vec![Moments::default(); k];
    let mut discarded = 0;
    for (acc, d) in &parts {
        total.iter_mut().zip(acc).for_each(|(t, a)| t.merge(a));
        discarded += d;
    }
    Ok(total
        .into_iter()
        .map(|m| RenewalFunctionalEstimate {
            value: m.mean(),
            stderr: m.stderr(),
            n_paths: m.n,
            discarded,
            seed: SeedRecord { master: seed, lane: lane::WALK },
            truncation: stop,
        })
        .collect())
}

/// `int g 1_window dH`.
pub fn renewal_functional_mc<G, W>(
    z: &TiltedLaw,
    g: G,
    window: W,
    n_paths: usize,
    stop: StopRule,
    seed: u64,
) -> Result<RenewalFunctionalEstimate>
where
    G: Fn(f64) -> f64 + Sync,
    W: Fn(f64) -> bool + Sync,
{
    let f = move |s: f64| if window(s) { g(s) } else { 0.0 };
    let mut out = renewal_functionals_mc(z, &[&f], n_paths, stop, seed)?;
    Ok(out.remove(0))
}

/// `H((a, b])` as the mean number of visits per path.
pub fn renewal_interval_mc(z: &TiltedLaw, a: f64, b: f64, n_paths: usize, seed: u64) -> Result<RenewalFunctionalEstimate> {
    let stop = StopRule::beyond(z, b);
    if !(a < b) {
        return Ok(RenewalFunctionalEstimate {
            value: 0.0,
            stderr: 0.0,
            n_paths: n_paths as u64,
            discarded: 0,
            seed: SeedRecord { master: seed, lane: lane::WALK },
            truncation: stop,
        });
    }
    renewal_functional_mc(z, |_| 1.0, move |s| a < s && s <= b, n_paths, stop, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BinEstimate {
    pub lo: f64,
    pub hi: f64,
    pub value: f64,
    pub stderr: f64,
}

/// `H` on consecutive bins `(lo + k w, lo + (k+1) w]`, one ensemble.
pub fn renewal_bins_mc(z: &TiltedLaw, lo: f64, width: f64, bins: usize, n_paths: usize, seed: u64) -> Result<Vec<BinEstimate>> {
    if !(width > 0.0) || bins == 0 {
        return Err(Error::Precondition("need positive bin width and at least one bin".into()));
    }
    let stop = StopRule::beyond(z, lo + width * bins as f64);
    let parts = map_chunks(n_paths, seed, lane::WALK, |c, rng| {
        let mut acc = vec![Moments::default(); bins];
        let mut counts = vec![0u32; bins];
        for _ in 0..c.len {
            counts.iter_mut().for_each(|v| *v = 0);
            let mut s = 0.0f64;
            let mut steps = 0usize;
            loop {
                let k = ((s - lo) / width).ceil() - 1.0;
                if k >= 0.0 && (k as usize) < bins {
                    counts[k as usize] += 1;
                }
                if s > stop.upper || steps == stop.cap {
                    break;
                }
                s += z.sample(rng);
                steps += 1;
            }
            acc.iter_mut().zip(&counts).for_each(|(m, &v)| m.push(v as f64));
        }
        acc
    });
    let mut total = vec![Moments::default(); bins];
    for acc in &parts {
        total.iter_mut().zip(acc).for_each(|(t, a)| t.merge(a));
    }
    Ok(total
        .iter()
        .enumerate()
        .map(|(k, m)| BinEstimate {
            lo: lo + width * k as f64,
            hi: lo + width * (k + 1) as f64,
            value: m.mean(),
            stderr: m.stderr(),
        })
        .collect())
}

/// `sum_{n <= N} mu_h^{*n}` on the grid `h Z` restricted to a range.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeRenewalTable {
    pub h: f64,
    /// Grid index of `masses[0]`.
    pub first_index: i64,
    pub masses: Vec<f64>,
    pub convolutions: usize,
    pub escaped_left: f64,
    pub escaped_right: f64,
    /// Bound on the visit mass lost to truncation (escaped-left mass plus
    /// mass still in range, times a bound on expected visits to the range).
    pub truncation_bound: f64,
}

impl LatticeRenewalTable {
    fn index_of(&self, x: f64) -> i64 {
        (x / self.h).round() as i64
    }

    /// Mass at the grid point nearest to `x`.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.index_of(x) - self.first_index;
        if i < 0 || i as usize >= self.masses.len() { 0.0 } else { self.masses[i as usize] }
    }

    /// `H_h((a, b])` summed over grid points.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        let lo = (self.index_of(a) + 1 - self.first_index).max(0);
        let hi = (self.index_of(b) - self.first_index).min(self.masses.len() as i64 - 1);
        if hi < lo {
            return 0.0;
        }
        self.masses[lo as usize..=hi as usize].iter().sum()
    }

    pub fn grid_point(&self, i: usize) -> f64 {
        (self.first_index + i as i64) as f64 * self.h
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mean-preserving discretization of the increment law onto `h Z`:
/// returns the first grid index and the masses.
pub fn discretize(z: &TiltedLaw, h: f64) -> (i64, Vec<f64>) {
    match &z.law {
        IncrementLaw::Normal { mean, var } => {
            let sd = var.sqrt();
            // E (x - Z)_+ ; the hat function's mass is its second difference / h
            let g = |x: f64| {
                let t = (x - mean) / sd;
                (x - mean) * std_normal_cdf(t) + sd * (-0.5 * t * t).exp() / (std::f64::consts::TAU).sqrt()
            };
            let lo = ((mean - 10.0 * sd) / h).floor() as i64;
            let hi = ((mean + 10.0 * sd) / h).ceil() as i64;
            let mut w: Vec<f64> = (lo..=hi)
                .map(|k| {
                    let x = k as f64 * h;
                    ((g(x + h) - 2.0 * g(x) + g(x - h)) / h).max(0.0)
                })
                .collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (lo, w)
        }
        IncrementLaw::Discrete { atoms } => {
            let split: Vec<(i64, f64, f64)> = atoms
                .iter()
                .map(|&(x, p)| {
                    let r = x / h;
                    let mut k = r.floor();
                    let mut frac = r - k;
                    if frac > 1.0 - 1e-9 {
                        k += 1.0;
                        frac = 0.0;
                    } else if frac < 1e-9 {
                        frac = 0.0;
                    }
                    (k as i64, p, frac)
                })
                .collect();
            let lo = split.iter().map(|s| s.0).min().unwrap();
            let hi = split.iter().map(|s| s.0 + 1).max().unwrap();
            let mut w = vec![0.0; (hi - lo + 1) as usize];
            for (k, p, frac) in split {
                w[(k - lo) as usize] += p * (1.0 - frac);
                w[(k - lo + 1) as usize] += p * frac;
            }
            while w.last() == Some(&0.0) {
                w.pop();
            }
            (lo, w)
        }
    }
}

/// Target bound on the truncation error of the lattice table.
pub const LATTICE_TRUNCATION: f64 = 1e-6;

/// Literal `sum_n mu_h^{*n}` on `[range.0, range.1]` with grid step `h`.
pub fn renewal_lattice_oracle(z: &TiltedLaw, h: f64, range: (f64, f64), max_convolutions: usize) -> Result<LatticeRenewalTable> {
    if !(h > 0.0) || !(range.0 <= 0.0 && range.1 > 0.0) {
        return Err(Error::Precondition("need h > 0 and a range containing 0".into()));
    }
    if !(z.mean > 0.0) {
        return Err(Error::Precondition("the walk needs a positive drift".into()));
    }
    let (k_lo, kernel) = discretize(z, h);
    let first = (range.0 / h).round() as i64;
    let last = (range.1 / h).round() as i64;
    let n = (last - first + 1) as usize;
    let visits_bound = (range.1 - range.0) / z.mean + z.second_moment / (z.mean * z.mean) + 1.0;

    let mut cur = vec![0.0; n];
    cur[(-first) as usize] = 1.0;
    let mut acc = cur.clone();
    let mut next = vec![0.0; n];
    let (mut escaped_left, mut escaped_right) = (0.0, 0.0);
    let mut convolutions = 0;
    loop {
        let remaining: f64 = cur.iter().sum();
        if remaining * visits_bound <= 0.5 * LATTICE_TRUNCATION {
            let bound = (remaining + escaped_left) * visits_bound;
            if escaped_left * visits_bound > 0.5 * LATTICE_TRUNCATION {
                return Err(Error::RangeTooSmall(format!(
                    "mass {escaped_left:e} escaped below {}; widen the range",
                    range.0
                )));
            }
            return Ok(LatticeRenewalTable {
                h,
                first_index: first,
                masses: acc,
                convolutions,
                escaped_left,
                escaped_right,
                truncation_bound: bound,
            });
        }
        if convolutions == max_convolutions {
            return Err(Error::Precondition(format!(
                "{max_convolutions} convolutions leave mass {remaining:e} in range"
            )));
        }
        next.iter_mut().for_each(|v| *v = 0.0);
        for (i, &m) in cur.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            // target index t = i + k_lo + j
            let base = i as i64 + k_lo;
            let j0 = (-base).max(0) as usize;
            let j1 = ((n as i64 - base).min(kernel.len() as i64)).max(0) as usize;
            for (j, &w) in kernel.iter().enumerate() {
                if j < j0 {
                    escaped_left += m * w;
                } else if j >= j1 {
                    escaped_right += m * w;
                }
            }
            if j1 > j0 {
                let t0 = (base + j0 as i64) as usize;
                for (dst, &w) in next[t0..t0 + (j1 - j0)].iter_mut().zip(&kernel[j0..j1]) {
                    *dst += m * w;
                }
            }
        }
        // drop denormal dust so the support stays compact
        next.iter_mut().for_each(|v| {
            if *v < 1e-300 {
                *v = 0.0
            }
        });
        std::mem::swap(&mut cur, &mut next);
        acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += c);
        convolutions += 1;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StoneRemainder {
    pub u: f64,
    /// `H^((-inf, u]) - u / EZ`.
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StoneReport {
    pub points: Vec<StoneRemainder>,
    /// `EZ^2 / (2 (EZ)^2)`.
    pub theory: f64,
    /// The last remainder lies within 3 standard errors of the theory value.
    pub converged: bool,
}

pub fn require_strongly_non_lattice(z: &TiltedLaw) -> Result<()> {
    if z.strongly_non_lattice() {
        Ok(())
    } else {
        Err(Error::Gate("increment law is not certified strongly non-lattice (lognormal-derived laws only)".into()))
    }
}

pub fn stone_check(z: &TiltedLaw, u_grid: &[f64], n_paths: usize, seed: u64) -> Result<StoneReport> {
    require_strongly_non_lattice(z)?;
    let u_max = u_grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !u_max.is_finite() {
        return Err(Error::Precondition("empty u grid".into()));
    }
    let indicators: Vec<Box<dyn Fn(f64) -> f64 + Sync>> = u_grid
        .iter()
        .map(|&u| Box::new(move |s: f64| if s <= u { 1.0 } else { 0.0 }) as Box<dyn Fn(f64) -> f64 + Sync>)
        .collect();
    let refs: Vec<&(dyn Fn(f64) -> f64 + Sync)> = indicators.iter().map(|b| b.as_ref()).collect();
    let est = renewal_functionals_mc(z, &refs, n_paths, StopRule::beyond(z, u_max), seed)?;
    let points: Vec<StoneRemainder> = u_grid
        .iter()
        .zip(&est)
        .map(|(&u, e)| StoneRemainder { u, value: e.value - u / z.mean, stderr: e.stderr })
        .collect();
    let theory = z.second_moment / (2.0 * z.mean * z.mean);
    let last = points.last().unwrap();
    let converged = (last.value - theory).abs() <= 3.0 * last.stderr;
    Ok(StoneReport { points, theory, converged })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LeftTailEstimate {
    pub u: f64,
    /// `e^{alpha u} H^((-inf, -u])`; the interval contains `S_0 = 0` when `u = 0`.
    pub value: f64,
    pub stderr: f64,
    /// `(-alpha E log A)^-1`.
    pub theory: f64,
}

pub fn left_tail_check(z: &TiltedLaw, model: &ModelSpec, u: f64, n_paths: usize, seed: u64) -> Result<LeftTailEstimate> {
    if !(u >= 0.0) {
        return Err(Error::Precondition("u must be >= 0".into()));
    }
    let alpha = model.alpha()?;
    let mean_log = model.a.mean_log();
    if !(mean_log < 0.0 && mean_log.is_finite()) {
        return Err(Error::Precondition("E log A must be finite and negative".into()));
    }
    let e = renewal_functional_mc(z, |_| 1.0, move |s| s <= -u, n_paths, StopRule::beyond(z, -u), seed)?;
    let scale = (alpha * u).exp();
    Ok(LeftTailEstimate { u, value: scale * e.value, stderr: scale * e.stderr, theory: 1.0 / (-alpha * mean_log) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorLawSpec, make_tilted};

    fn gauss() -> TiltedLaw {
        TiltedLaw::normal(1.0, 2.0)
    }

    #[test]
    fn zero_functional() {
        let e = renewal_functional_mc(&gauss(), |_| 0.0, |_| true, 5000, StopRule::beyond(&gauss(), 10.0), 1).unwrap();
        assert_eq!((e.value, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn empty_interval() {
        assert_eq!(renewal_interval_mc(&gauss(), 3.0, 3.0, 100, 1).unwrap().value, 0.0);
    }

    #[test]
    fn interval_equals_functional_with_indicator() {
        let z = gauss();
        let a = renewal_interval_mc(&z, 5.0, 6.5, 20_000, 9).unwrap();
        let b = renewal_functional_mc(&z, |_| 1.0, |s| 5.0 < s && s <= 6.5, 20_000, StopRule::beyond(&z, 6.5), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blackwell_window() {
        let e = renewal_functional_mc(&gauss(), |_| 1.0, |s| 0.0 < s && s <= 100.0, 20_000, StopRule::beyond(&gauss(), 100.0), 2)
            .unwrap();
        assert!((e.value - 100.0).abs() < 2.0 + 4.0 * e.stderr, "{e:?}");
    }

    #[test]
    fn left_part_is_finite_and_small() {
        let e = renewal_functional_mc(&gauss(), |_| 1.0, |s| s <= 0.0, 50_000, StopRule::beyond(&gauss(), 0.0), 4).unwrap();
        assert!(e.value >= 1.0 && e.value < 2.0, "{e:?}");
        let deep = renewal_interval_mc(&gauss(), -5.0, -4.0, 200_000, 5).unwrap();
        assert!(deep.value > 0.0 && deep.value < 5.0 * (-5.0f64).exp(), "{deep:?}");
    }

    #[test]
    fn lattice_point_mass() {
        let z = TiltedLaw::point_mass(1.0);
        let t = renewal_lattice_oracle(&z, 1.0, (0.0, 30.0), 100).unwrap();
        for k in 0..=30 {
            assert!((t.at(k as f64) - 1.0).abs() < 1e-15);
        }
        assert_eq!(t.escaped_left, 0.0);
    }

    #[test]
    fn lattice_rejects_short_left_range() {
        let z = gauss();
        assert!(matches!(renewal_lattice_oracle(&z, 0.05, (-2.0, 20.0), 10_000), Err(Error::RangeTooSmall(_))));
    }

    #[test]
    fn discretization_preserves_mean_and_mass() {
        for z in [gauss(), make_tilted(&FactorLawSpec::canonical_two_point(), 1.0).unwrap()] {
            let h = 0.01;
            let (lo, w) = discretize(&z, h);
            let mass: f64 = w.iter().sum();
            let mean: f64 = w.iter().enumerate().map(|(i, p)| (lo + i as i64) as f64 * h * p).sum();
            assert!((mass - 1.0).abs() < 1e-12);
            assert!((mean - z.mean).abs() < 1e-9, "{mean} vs {}", z.mean);
        }
    }

    #[test]
    fn lattice_blackwell_and_stone() {
        let z = gauss();
        let t = renewal_lattice_oracle(&z, 0.02, (-30.0, 80.0), 10_000).unwrap();
        assert!(t.truncation_bound <= LATTICE_TRUNCATION);
        assert!(t.masses.iter().all(|&m| m >= 0.0));
        assert!((t.mass_in(30.0, 31.0) - 1.0).abs() < 0.02);
        // Stone: H((-inf, 30]) - 30 = 3/2 up to O(h) discretization
        let stone = t.mass_in(-31.0, 30.0) - 30.0;
        assert!((stone - 1.5).abs() < 0.02, "{stone}");
    }

    #[test]
    fn stone_gate_rejects_two_point() {
        let z = make_tilted(&FactorLawSpec::canonical_two_point(), 1.0).unwrap();
        assert!(matches!(stone_check(&z, &[5.0], 100, 1), Err(Error::Gate(_))));
    }

    #[test]
    fn left_tail_zero_level_includes_origin() {
        let m = ModelSpec::canonical();
        let z = m.tilted().unwrap();
        let e = left_tail_check(&z, &m, 0.0, 20_000, 3).unwrap();
        assert!(e.value >= 1.0);
        assert_eq!(e.theory, 1.0);
    }
}
