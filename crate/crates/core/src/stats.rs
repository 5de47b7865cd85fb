//! Small statistical helpers shared by the estimators and the checks.

use serde::Serialize;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Streaming mean / variance (Welford). Merging is order-sensitive in the
/// last bits, so callers merge in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 { 0.0 } else { self.mean }
    }

    /// Sample variance (n - 1 denominator).
    pub fn variance(&self) -> f64 {
        if self.n < 2 { 0.0 } else { self.m2 / (self.n - 1) as f64 }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() }
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let hi = if k as f64 == n { 1.0 } else { (centre + half).min(1.0) };
    (lo, hi)
}

/// Linear-interpolation quantile of sorted data (Hyndman-Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted_copy(xs), 0.5)
}

pub fn iqr(xs: &[f64]) -> f64 {
    let s = sorted_copy(xs);
    quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25)
}

/// Median of block means with a robust spread.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct MedianOfMeans {
    pub value: f64,
    /// Interquartile range of the block means.
    pub spread: f64,
    /// Standard error of the median, from the IQR-based scale of the block means.
    pub stderr: f64,
    pub block_means: Vec<f64>,
}

pub fn median_of_means(block_means: Vec<f64>) -> MedianOfMeans {
    let k = block_means.len();
    let value = median(&block_means);
    let spread = iqr(&block_means);
    // sigma ~ IQR / 1.349, se(median) ~ sqrt(pi/2) sigma / sqrt(k)
    let stderr = if k > 1 {
        1.253_314_137_315_5 * spread / 1.348_979_500_392_163 / (k as f64).sqrt()
    } else {
        0.0
    };
    MedianOfMeans { value, spread, stderr, block_means }
}

/// Two-sample Kolmogorov-Smirnov statistic. Inputs need not be sorted.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted_copy(a);
    let b = sorted_copy(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && xs[idx[e + 1]] == xs[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> LineFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    LineFit { slope, intercept: my - slope * mx }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wilson_known_value() {
        // 10/100 at 95%: (0.0552, 0.1744)
        let (lo, hi) = wilson(10, 100, Z95);
        assert!((lo - 0.05522).abs() < 1e-4, "{lo}");
        assert!((hi - 0.17437).abs() < 1e-4, "{hi}");
    }

    #[test]
    fn wilson_zero_successes_has_positive_upper() {
        let (lo, hi) = wilson(0, 1000, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.01);
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&a, &[10.0, 11.0]), 1.0);
    }

    #[test]
    fn ks_hand_example() {
        // F_a jumps at 1,2,3,4 ; F_b at 2.5,3.5 -> max gap 0.5 at x in [2,2.5)
        let d = ks_two_sample(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5]);
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[1.0, 5.0, 7.0, 100.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_means_single_block_per_draw() {
        let m = median_of_means(vec![3.0, 1.0, 2.0]);
        assert_eq!(m.value, 2.0);
    }

    proptest! {
        #[test]
        fn wilson_contains_point_estimate(k in 0u64..1000, extra in 0u64..1000) {
            let n = k + extra + 1;
            let (lo, hi) = wilson(k, n, Z95);
            let p = k as f64 / n as f64;
            prop_assert!(lo <= p + 1e-15 && p <= hi + 1e-15);
        }

        #[test]
        fn moments_merge_matches_sequential(xs in prop::collection::vec(-1e3f64..1e3, 2..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let mut all = Moments::default();
            xs.iter().for_each(|&x| all.push(x));
            let mut a = Moments::default();
            let mut b = Moments::default();
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert!((a.mean() - all.mean()).abs() < 1e-9);
            prop_assert!((a.variance() - all.variance()).abs() < 1e-6 * (1.0 + all.variance()));
        }

        #[test]
        fn fit_recovers_exact_line(s in -5f64..5.0, c in -5f64..5.0) {
            let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
            let y: Vec<f64> = x.iter().map(|v| c + s * v).collect();
            let f = fit_line(&x, &y);
            prop_assert!((f.slope - s).abs() < 1e-9);
            prop_assert!((f.intercept - c).abs() < 1e-9);
        }
    }
}
