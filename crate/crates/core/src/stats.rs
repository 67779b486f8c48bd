//! Campaign statistics: deterministic accumulation, summaries, histograms.
//!
//! All reductions are performed in path-index order (sequential or pairwise)
//! so estimates are bit-identical for a fixed seed regardless of how worker
//! threads were scheduled.

use std::collections::BTreeMap;

/// Mean/variance/standard-error summary of one scalar quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub count: u64,
}

/// Streaming accumulator; feed values in path order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Accumulator {
    n: u64,
    sum: f64,
    sumsq: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn summarize(&self) -> SummaryStats {
        let n = self.n as f64;
        let mean = self.mean();
        let variance = if self.n < 2 {
            0.0
        } else {
            ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
        };
        SummaryStats {
            mean,
            variance,
            stderr: if self.n == 0 { f64::NAN } else { (variance / n).sqrt() },
            count: self.n,
        }
    }
}

/// Pairwise (tree) summation over a path-indexed slice; deterministic and
/// more accurate than naive left-to-right addition.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Summary of a path-indexed sample vector using pairwise reduction.
pub fn summarize_samples(xs: &[f64]) -> SummaryStats {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return SummaryStats {
            mean: f64::NAN,
            variance: 0.0,
            stderr: f64::NAN,
            count: 0,
        };
    }
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return SummaryStats {
            mean,
            variance: 0.0,
            stderr: 0.0,
            count: 1,
        };
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let variance = (pairwise_sum(&sq) / (n - 1.0)).max(0.0);
    SummaryStats {
        mean,
        variance,
        stderr: (variance / n).sqrt(),
        count: xs.len() as u64,
    }
}

/// Histogram over integer-valued samples (counts of a discrete species).
pub fn integer_histogram(values: impl IntoIterator<Item = f64>) -> BTreeMap<i64, u64> {
    let mut h = BTreeMap::new();
    for v in values {
        *h.entry(v.round() as i64).or_insert(0) += 1;
    }
    h
}

/// Total variation distance between two empirical integer distributions.
pub fn total_variation(a: &BTreeMap<i64, u64>, b: &BTreeMap<i64, u64>) -> f64 {
    let na: u64 = a.values().sum();
    let nb: u64 = b.values().sum();
    if na == 0 || nb == 0 {
        return 1.0;
    }
    let keys: std::collections::BTreeSet<i64> = a.keys().chain(b.keys()).copied().collect();
    0.5 * keys
        .iter()
        .map(|k| {
            let pa = a.get(k).copied().unwrap_or(0) as f64 / na as f64;
            let pb = b.get(k).copied().unwrap_or(0) as f64 / nb as f64;
            (pa - pb).abs()
        })
        .sum::<f64>()
}

/// Evenly spaced recording grid `0 = t_0 < ... < t_n = horizon`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1 && horizon > 0.0);
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}
