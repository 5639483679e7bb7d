//! Zipf-distributed ranks from a precomputed cumulative table.

use rand::Rng;

/// Samples ranks in `[1, n]` with `P(i) = i^-alpha / H(n, alpha)`.
#[derive(Debug, Clone)]
pub struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    pub fn new(n: u64, alpha: f64) -> Self {
        assert!(n >= 1, "zipf needs at least one rank");
        assert!(alpha >= 0.0 && alpha.is_finite(), "alpha must be >= 0");
        let mut cdf = Vec::with_capacity(n as usize);
        let mut acc = 0.0;
        for i in 1..=n {
            acc += (i as f64).powf(-alpha);
            cdf.push(acc);
        }
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        // Guard against rounding leaving the last entry just below 1.
        *cdf.last_mut().unwrap() = 1.0;
        Zipf { cdf }
    }

    pub fn n(&self) -> u64 {
        self.cdf.len() as u64
    }

    /// Probability of rank `i` (1-based).
    pub fn probability(&self, i: u64) -> f64 {
        let i = i as usize;
        assert!(i >= 1 && i <= self.cdf.len());
        if i == 1 {
            self.cdf[0]
        } else {
            self.cdf[i - 1] - self.cdf[i - 2]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u) as u64 + 1
    }
}
