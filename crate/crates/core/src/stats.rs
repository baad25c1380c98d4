//! Interval estimates and the small set of tests used by the estimators.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.575_829_303_548_901;

/// Monte Carlo estimate with a 99% interval.
///
/// Proportions use the Wilson score interval; means use the normal
/// interval. `estimate` is always the raw sample value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub estimate: f64,
    pub half_width: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: u64,
    pub seed: u64,
}

impl EstimateWithCI {
    pub fn proportion(successes: u64, n: u64, seed: u64) -> Self {
        if n == 0 {
            return EstimateWithCI {
                estimate: f64::NAN,
                half_width: f64::INFINITY,
                ci_low: 0.0,
                ci_high: 1.0,
                n,
                seed,
            };
        }
        let nf = n as f64;
        let p = successes as f64 / nf;
        let z2 = Z99 * Z99;
        let denom = 1.0 + z2 / nf;
        let center = (p + z2 / (2.0 * nf)) / denom;
        let hw = Z99 / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
        EstimateWithCI {
            estimate: p,
            half_width: hw,
            ci_low: (center - hw).max(0.0),
            ci_high: (center + hw).min(1.0),
            n,
            seed,
        }
    }

    pub fn mean(values: &[f64], seed: u64) -> Self {
        let n = values.len() as u64;
        let (m, sd) = mean_sd(values);
        let hw = if n > 1 {
            Z99 * sd / (n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        EstimateWithCI {
            estimate: m,
            half_width: hw,
            ci_low: m - hw,
            ci_high: m + hw,
            n,
            seed,
        }
    }

    /// One standard error implied by the interval.
    pub fn sigma(&self) -> f64 {
        self.half_width / Z99
    }

    /// Is `target` within `k` standard errors of the interval center?
    pub fn within_sigmas(&self, target: f64, k: f64) -> bool {
        let center = 0.5 * (self.ci_low + self.ci_high);
        let center = if self.ci_low == 0.0 || self.ci_high == 1.0 {
            self.estimate
        } else {
            center
        };
        (center - target).abs() <= k * self.sigma() + 1e-12
    }

    pub fn contains(&self, x: f64) -> bool {
        self.ci_low - 1e-12 <= x && x <= self.ci_high + 1e-12
    }
}

/// Sample mean and (n-1)-normalized standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let m = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, var.sqrt())
}

pub fn normal_sf(z: f64) -> f64 {
    Normal::standard().sf(z)
}

/// Two-sided Mann-Whitney U test (normal approximation with tie and
/// continuity corrections). Returns `(U of the first sample, p-value)`.
/// Degenerate inputs (an empty sample, or all values tied) give `p = 1`.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> (f64, f64) {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return (0.0, 1.0);
    }
    let mut all: Vec<(f64, usize)> = a
        .iter()
        .map(|&x| (x, 0))
        .chain(b.iter().map(|&x| (x, 1)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut rank_sum_a = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        for item in &all[i..=j] {
            if item.1 == 0 {
                rank_sum_a += mid;
            }
        }
        i = j + 1;
    }
    let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
    let u = rank_sum_a - f1 * (f1 + 1.0) / 2.0;
    let mu = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return (u, 1.0);
    }
    let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
    (u, (2.0 * normal_sf(z)).min(1.0))
}

/// `P[X >= k]` for `X ~ Binomial(n, p)`.
pub fn binomial_upper_tail(k: u64, n: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let b = Binomial::new(p, n).expect("valid binomial parameters");
    b.sf(k - 1)
}

/// Kolmogorov-Smirnov distance of a sample from Uniform[0, 1).
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let lo = i as f64 / n;
            let hi = (i + 1) as f64 / n;
            (x - lo).abs().max((hi - x).abs())
        })
        .fold(0.0, f64::max)
}

/// One-dimensional 2-means by exhaustive split of the sorted values.
/// Returns the two centers in increasing order.
pub fn two_means(values: &[f64]) -> Option<(f64, f64)> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.len() < 2 {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix2 = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
        prefix2[i + 1] = prefix2[i] + v[i] * v[i];
    }
    let sse = |lo: usize, hi: usize| {
        let k = (hi - lo) as f64;
        let s = prefix[hi] - prefix[lo];
        prefix2[hi] - prefix2[lo] - s * s / k
    };
    let best = (1..n)
        .min_by(|&i, &j| (sse(0, i) + sse(i, n)).total_cmp(&(sse(0, j) + sse(j, n))))
        .expect("n >= 2");
    Some((
        prefix[best] / best as f64,
        (prefix[n] - prefix[best]) / (n - best) as f64,
    ))
}
