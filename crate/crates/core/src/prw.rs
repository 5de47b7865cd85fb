//! The supremum `R = sup_{n>=1} A_1 ... A_{n-1} B_n` of the perturbed
//! multiplicative random walk, its tail, and the constant
//! `E min{AR, B}_+^alpha`.

use serde::Serialize;

use crate::ensemble::{map_chunks, map_chunks2};
use crate::error::{Error, Result};
use crate::model::{Dependence, ModelSpec, Regime};
use crate::rng::{StreamRng, lane};
use crate::stats::{MedianOfMeans, Moments, Z95, ks_two_sample, median_of_means, wilson};
use crate::sv::tilde_log;

pub const DEFAULT_TAU: f64 = 1e-6;
pub const DEFAULT_CAP: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupConfig {
    /// Stop once the running product falls to `tau`.
    pub tau: f64,
    pub cap: usize,
    /// Multiplies every B draw; `R` is 1-homogeneous in B.
    pub b_scale: f64,
}

impl SupConfig {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::Precondition(format!("tau = {tau} must lie in (0, 1)")));
        }
        Ok(Self { tau, cap: DEFAULT_CAP, b_scale: 1.0 })
    }
}

impl Default for SupConfig {
    fn default() -> Self {
        Self { tau: DEFAULT_TAU, cap: DEFAULT_CAP, b_scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SupSample {
    pub value: f64,
    pub steps: usize,
    pub pi_final: f64,
    /// The step cap was hit before the product reached `tau`.
    pub truncated: bool,
}

pub fn sample_sup(model: &ModelSpec, tau: f64, cap: usize, rng: &mut StreamRng) -> SupSample {
    sample_sup_with(model, &SupConfig { tau, cap, b_scale: 1.0 }, rng)
}

#[inline]
pub fn sample_sup_with(model: &ModelSpec, cfg: &SupConfig, rng: &mut StreamRng) -> SupSample {
    let log_tau = cfg.tau.ln();
    let mut log_pi = 0.0f64;
    let mut best = f64::NEG_INFINITY;
    let mut steps = 0;
    loop {
        let (log_a, b) = model.sample_log_pair(rng);
        best = best.max(log_pi.exp() * b * cfg.b_scale);
        log_pi += log_a;
        steps += 1;
        if log_pi <= log_tau {
            return SupSample { value: best, steps, pi_final: log_pi.exp(), truncated: false };
        }
        if steps == cfg.cap {
            return SupSample { value: best, steps, pi_final: log_pi.exp(), truncated: true };
        }
    }
}

/// `n` samples of `R` from one lane. Memory grows with `n`; the tail curve
/// streams instead.
pub fn sample_sups(model: &ModelSpec, n: usize, cfg: &SupConfig, seed: u64, lane_id: u32) -> Vec<SupSample> {
    map_chunks(n, seed, lane_id, |c, rng| (0..c.len).map(|_| sample_sup_with(model, cfg, rng)).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Moment order used in the truncation bias bound.
pub fn bias_exponent(alpha: f64) -> f64 {
    if alpha > 0.2 { alpha - 0.1 } else { 0.5 * alpha }
}

/// First-order and second-order tail predictions at level `e^u`.
pub fn theory_columns(model: &ModelSpec, u: f64, c_hat: Option<f64>) -> Result<(f64, f64)> {
    Ok(match model.regime()? {
        Regime::Critical { alpha, rho } => {
            let t = model.b.tail_spec().expect("critical regime has a tail spec");
            let first = (-alpha * u).exp() * tilde_log(&t.induced(), 0.0, u)?.value / rho;
            let second = c_hat.map_or(first, |c| first - (-alpha * u).exp() * c / (alpha * rho));
            (first, second)
        }
        Regime::Bounded { alpha, rho } => {
            let mut moment = model.b.bounded_moment(alpha).expect("bounded law");
            if model.dependence == Dependence::Breiman {
                moment *= model.a.cumulant(alpha).exp();
            }
            let scale = (-alpha * u).exp() / (alpha * rho);
            (scale * moment, c_hat.map_or(scale * moment, |c| scale * (moment - c)))
        }
        Regime::Subcritical { alpha, e_a_alpha } => {
            let mut t = model.b.tail(u.exp());
            if model.dependence == Dependence::Breiman {
                t *= model.a.cumulant(alpha).exp();
            }
            let v = t / (1.0 - e_a_alpha);
            (v, v)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailPoint {
    pub u: f64,
    pub exceed: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub theory_first: f64,
    pub theory_second: f64,
    pub bias_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailCurve {
    pub points: Vec<TailPoint>,
    pub n_paths: u64,
    pub seed: u64,
    pub config: SupConfig,
    pub alpha: f64,
    pub truncated: u64,
    pub mean_steps: f64,
    /// `E R_+^beta` with `beta` the bias exponent, from the same ensemble.
    pub r_moment: f64,
    pub c_hat: Option<f64>,
}

impl TailCurve {
    /// Attach `E min{AR,B}_+^alpha` and recompute the second-order column.
    pub fn with_second_order(mut self, model: &ModelSpec, c_hat: f64) -> Result<Self> {
        for p in &mut self.points {
            p.theory_second = theory_columns(model, p.u, Some(c_hat))?.1;
        }
        self.c_hat = Some(c_hat);
        Ok(self)
    }
}

pub fn tail_curve(model: &ModelSpec, u_grid: &[f64], n_paths: usize, tau: f64, seed: u64) -> Result<TailCurve> {
    tail_curve_with(model, u_grid, n_paths, &SupConfig::new(tau)?, seed)
}

pub fn tail_curve_with(model: &ModelSpec, u_grid: &[f64], n_paths: usize, cfg: &SupConfig, seed: u64) -> Result<TailCurve> {
    if n_paths == 0 || u_grid.is_empty() {
        return Err(Error::Precondition("need at least one path and one level".into()));
    }
    let alpha = model.alpha()?;
    let beta = bias_exponent(alpha);
    let levels: Vec<f64> = u_grid.iter().map(|u| u.exp()).collect();
    let parts = map_chunks(n_paths, seed, lane::SUP, |c, rng| {
        let mut counts = vec![0u64; levels.len()];
        let (mut truncated, mut steps) = (0u64, 0u64);
        let mut mom = Moments::default();
        for _ in 0..c.len {
            let s = sample_sup_with(model, cfg, rng);
            for (k, &x) in counts.iter_mut().zip(&levels) {
                *k += (s.value > x) as u64;
            }
            truncated += s.truncated as u64;
            steps += s.steps as u64;
            mom.push(s.value.max(0.0).powf(beta));
        }
        (counts, truncated, steps, mom)
    });
    let mut counts = vec![0u64; levels.len()];
    let (mut truncated, mut steps) = (0u64, 0u64);
    let mut mom = Moments::default();
    for (c, t, s, m) in &parts {
        counts.iter_mut().zip(c).for_each(|(a, b)| *a += b);
        truncated += t;
        steps += s;
        mom.merge(m);
    }
    let n = n_paths as u64;
    let r_moment = mom.mean();
    let mut points = Vec::with_capacity(levels.len());
    for (&u, &k) in u_grid.iter().zip(&counts) {
        let p_hat = k as f64 / n as f64;
        let (ci_low, ci_high) = wilson(k, n, Z95);
        let (theory_first, theory_second) = theory_columns(model, u, None)?;
        let bias_bound = cfg.tau.powf(beta) * r_moment * (-beta * u).exp();
        let expected = theory_first.max(p_hat);
        if bias_bound > 0.05 * expected {
            return Err(Error::BiasZone { u, bound: bias_bound, p_hat: expected });
        }
        points.push(TailPoint { u, exceed: k, p_hat, ci_low, ci_high, theory_first, theory_second, bias_bound });
    }
    Ok(TailCurve {
        points,
        n_paths: n,
        seed,
        config: *cfg,
        alpha,
        truncated,
        mean_steps: steps as f64 / n as f64,
        r_moment,
        c_hat: None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MinMoment {
    pub alpha: f64,
    pub n_blocks: usize,
    pub block_size: usize,
    /// Median of the block means of `min(a r, b)_+^alpha`.
    pub estimate: MedianOfMeans,
}

/// `E min{AR, B}_+^alpha`, with `R` independent of `(A, B)`.
pub fn min_moment_alpha(model: &ModelSpec, n_blocks: usize, block_size: usize, tau: f64, seed: u64) -> Result<MinMoment> {
    if n_blocks == 0 || block_size == 0 {
        return Err(Error::Precondition("need at least one block of one draw".into()));
    }
    let cfg = SupConfig::new(tau)?;
    let alpha = model.alpha()?;
    let total = n_blocks * block_size;
    // per chunk: (block, partial sum) runs in path order
    let parts = map_chunks2(total, seed, (lane::MIN_MOMENT_PAIR, lane::MIN_MOMENT_SUP), |c, rp, rs| {
        let mut runs: Vec<(usize, f64)> = Vec::new();
        for i in c.start..c.start + c.len {
            let (log_a, b) = model.sample_log_pair(rp);
            let r = sample_sup_with(model, &cfg, rs).value;
            let v = (log_a.exp() * r).min(b).max(0.0).powf(alpha);
            let blk = i / block_size;
            match runs.last_mut() {
                Some((k, s)) if *k == blk => *s += v,
                _ => runs.push((blk, v)),
            }
        }
        runs
    });
    let mut sums = vec![0.0; n_blocks];
    for (blk, s) in parts.into_iter().flatten() {
        sums[blk] += s;
    }
    let means = sums.into_iter().map(|s| s / block_size as f64).collect();
    Ok(MinMoment { alpha, n_blocks, block_size, estimate: median_of_means(means) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FixedPointReport {
    pub n: usize,
    pub ks: f64,
    /// 95% null scale `1.36 sqrt(2 / n)` of the KS statistic.
    pub null_scale: f64,
    pub coupled: bool,
    /// `n >= 10^4`; smaller samples are reported without a verdict.
    pub gated: bool,
}

pub const FIXED_POINT_MIN_N: usize = 10_000;

/// KS distance between samples of `R` and of `max(A R', B)`. With
/// `coupled`, `R'` reuses the stream of `R`.
pub fn fixed_point_distance(model: &ModelSpec, n: usize, tau: f64, seed: u64, coupled: bool) -> Result<FixedPointReport> {
    let cfg = SupConfig::new(tau)?;
    let r: Vec<f64> = sample_sups(model, n, &cfg, seed, lane::SUP).iter().map(|s| s.value).collect();
    let partner_lane = if coupled { lane::SUP } else { lane::SUP_PARTNER };
    let mapped: Vec<f64> = map_chunks2(n, seed, (lane::PAIR, partner_lane), |c, rp, rs| {
        (0..c.len)
            .map(|_| {
                let (log_a, b) = model.sample_log_pair(rp);
                let r2 = sample_sup_with(model, &cfg, rs).value;
                (log_a.exp() * r2).max(b)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(FixedPointReport {
        n,
        ks: ks_two_sample(&r, &mapped),
        null_scale: 1.36 * (2.0 / n.max(1) as f64).sqrt(),
        coupled,
        gated: n >= FIXED_POINT_MIN_N,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PluginEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
}

/// `E(max(AR_+, B_+)^alpha - (AR_+)^alpha) / (alpha rho)` by plug-in, with
/// `rho` multiplied by `rho_scale` (1 for the real constant).
pub fn goldie_plugin(model: &ModelSpec, n: usize, tau: f64, seed: u64, rho_scale: f64) -> Result<PluginEstimate> {
    let (alpha, rho) = match model.regime()? {
        Regime::Bounded { alpha, rho } | Regime::Critical { alpha, rho } => (alpha, rho * rho_scale),
        Regime::Subcritical { e_a_alpha, .. } => return Err(Error::NotCritical { e_a_alpha }),
    };
    let cfg = SupConfig::new(tau)?;
    let parts = map_chunks2(n, seed, (lane::PLUGIN_PAIR, lane::PLUGIN_SUP), |c, rp, rs| {
        let mut m = Moments::default();
        for _ in 0..c.len {
            let (log_a, b) = model.sample_log_pair(rp);
            let ar = (log_a.exp() * sample_sup_with(model, &cfg, rs).value).max(0.0);
            m.push(ar.max(b.max(0.0)).powf(alpha) - ar.powf(alpha));
        }
        m
    });
    let mut m = Moments::default();
    parts.iter().for_each(|p| m.merge(p));
    let s = alpha * rho;
    Ok(PluginEstimate { value: m.mean() / s, stderr: m.stderr() / s, n: m.n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FactorLawSpec, PerturbationLaw, PerturbationTailSpec, pair_at};
    use crate::rng::stream_index;

    #[test]
    fn value_dominates_first_term() {
        let m = ModelSpec::new(
            FactorLawSpec::canonical_two_point(),
            PerturbationLaw::RegularlyVarying(PerturbationTailSpec::pareto(1.0)),
            Dependence::Independent,
        )
        .unwrap();
        for chunk in 0..20 {
            let (_, b1) = pair_at(&m, 11, stream_index(lane::SUP, chunk), 0);
            let mut rng = StreamRng::for_chunk(11, lane::SUP, chunk);
            let s = sample_sup(&m, DEFAULT_TAU, DEFAULT_CAP, &mut rng);
            assert!(s.value >= b1);
            assert!(s.pi_final <= DEFAULT_TAU || s.truncated);
        }
    }

    #[test]
    fn mean_steps_and_truncation() {
        let m = ModelSpec::canonical();
        let c = tail_curve(&m, &[0.0], 50_000, DEFAULT_TAU, 3).unwrap();
        // E log A = -1 and log tau = -13.8: roughly 14 steps plus overshoot
        assert!((13.0..=20.0).contains(&c.mean_steps), "{}", c.mean_steps);
        assert_eq!(c.truncated, 0);
    }

    #[test]
    fn below_floor_everything_exceeds() {
        let c = tail_curve(&ModelSpec::canonical(), &[-1.0], 10_000, DEFAULT_TAU, 1).unwrap();
        assert_eq!(c.points[0].p_hat, 1.0);
    }

    #[test]
    fn tail_is_monotone_with_ordered_intervals() {
        let grid: Vec<f64> = (0..=8).map(|u| u as f64).collect();
        let c = tail_curve(&ModelSpec::canonical(), &grid, 100_000, DEFAULT_TAU, 5).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].p_hat <= w[0].p_hat);
        }
        for p in &c.points {
            assert!(p.ci_low <= p.p_hat && p.p_hat <= p.ci_high);
        }
    }

    #[test]
    fn scaling_b_shifts_the_curve() {
        let m = ModelSpec::canonical();
        let grid = [2.0, 3.0, 4.0];
        let shifted: Vec<f64> = grid.iter().map(|u| u + 2f64.ln()).collect();
        let base = tail_curve(&m, &grid, 50_000, DEFAULT_TAU, 8).unwrap();
        let cfg = SupConfig { b_scale: 2.0, ..SupConfig::default() };
        let twice = tail_curve_with(&m, &shifted, 50_000, &cfg, 8).unwrap();
        for (a, b) in base.points.iter().zip(&twice.points) {
            assert!((a.exceed as i64 - b.exceed as i64).abs() <= 2, "{} vs {}", a.exceed, b.exceed);
        }
    }

    #[test]
    fn larger_b_never_lowers_the_supremum() {
        let m = ModelSpec::canonical();
        let big = SupConfig { b_scale: 1.5, ..SupConfig::default() };
        for chunk in 0..50 {
            let a = sample_sup_with(&m, &SupConfig::default(), &mut StreamRng::for_chunk(2, lane::SUP, chunk));
            let b = sample_sup_with(&m, &big, &mut StreamRng::for_chunk(2, lane::SUP, chunk));
            assert!(b.value >= a.value);
        }
    }

    #[test]
    fn zero_factor_gives_zero_min_moment() {
        let m = ModelSpec::new(
            FactorLawSpec::Zero,
            PerturbationLaw::RegularlyVarying(PerturbationTailSpec::pareto(1.0)),
            Dependence::Independent,
        )
        .unwrap();
        let mm = min_moment_alpha(&m, 4, 100, DEFAULT_TAU, 1).unwrap();
        assert_eq!(mm.estimate.value, 0.0);
    }

    #[test]
    fn single_draw_blocks_give_the_median() {
        let m = ModelSpec::canonical();
        let mm = min_moment_alpha(&m, 101, 1, DEFAULT_TAU, 4).unwrap();
        let mut v = mm.estimate.block_means.clone();
        v.sort_by(f64::total_cmp);
        assert_eq!(mm.estimate.value, v[50]);
    }

    #[test]
    fn fixed_point_small_sample_is_ungated() {
        let r = fixed_point_distance(&ModelSpec::canonical(), 100, DEFAULT_TAU, 1, false).unwrap();
        assert!(!r.gated);
        assert!(r.ks >= 0.0 && r.ks <= 1.0);
    }

    #[test]
    fn goldie_plugin_constant_b_is_positive() {
        let m = ModelSpec::new(
            FactorLawSpec::lognormal(-1.0, 2.0).unwrap(),
            PerturbationLaw::Constant { constant: 1.0 },
            Dependence::Independent,
        )
        .unwrap();
        let g = goldie_plugin(&m, 20_000, DEFAULT_TAU, 1, 1.0).unwrap();
        assert!(g.value > 0.0);
    }

    #[test]
    fn bias_zone_refuses_coarse_tau() {
        let m = ModelSpec::canonical();
        assert!(matches!(tail_curve(&m, &[10.0], 1000, 0.5, 1), Err(Error::BiasZone { .. })));
    }
}
