//! Batch-means accumulation and delete-one-batch jackknife errors.
//!
//! Samples `0..n` are split into contiguous batches. Linear statistics get
//! batch-means standard errors; smooth nonlinear functions of the sample
//! means get jackknife standard errors over the batches.

use crate::error::{Error, Result};

pub const DEFAULT_BATCHES: usize = 100;

#[derive(Debug, Clone)]
pub struct BatchAccumulator {
    dim: usize,
    sums: Vec<Vec<f64>>,
    counts: Vec<usize>,
    total: usize,
}

/// Batch index of sample `i` out of `n` when using `batches` batches.
pub fn batch_of(i: usize, n: usize, batches: usize) -> usize {
    ((i as u128 * batches as u128) / n as u128) as usize
}

/// Number of batches actually used for `n` samples.
pub fn effective_batches(n: usize, requested: usize) -> usize {
    requested.min(n).max(1)
}

impl BatchAccumulator {
    pub fn new(dim: usize, batches: usize) -> Self {
        let batches = batches.max(1);
        Self {
            dim,
            sums: vec![vec![0.0; dim]; batches],
            counts: vec![0; batches],
            total: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batches(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self) -> usize {
        self.total
    }

    pub fn add(&mut self, batch: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.dim);
        for (s, v) in self.sums[batch].iter_mut().zip(values) {
            *s += v;
        }
        self.counts[batch] += 1;
        self.total += 1;
    }

    /// Adds a full batch of precomputed sums.
    pub fn add_batch_sums(&mut self, batch: usize, sums: &[f64], count: usize) {
        for (s, v) in self.sums[batch].iter_mut().zip(sums) {
            *s += v;
        }
        self.counts[batch] += count;
        self.total += count;
    }

    fn total_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for b in &self.sums {
            for (o, v) in out.iter_mut().zip(b) {
                *o += v;
            }
        }
        out
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.total_sums().into_iter().map(|s| s / n).collect()
    }

    fn active(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&b| self.counts[b] > 0).collect()
    }

    /// Leave-one-batch-out means.
    fn loo_means(&self) -> Vec<Vec<f64>> {
        let total = self.total_sums();
        self.active()
            .into_iter()
            .map(|b| {
                let n = (self.total - self.counts[b]) as f64;
                total
                    .iter()
                    .zip(&self.sums[b])
                    .map(|(t, s)| (t - s) / n)
                    .collect()
            })
            .collect()
    }

    /// Batch-means standard error of each coordinate mean.
    pub fn std_err(&self) -> Vec<f64> {
        let active = self.active();
        let b = active.len();
        if b < 2 {
            return vec![f64::INFINITY; self.dim];
        }
        let mean = self.mean();
        let mut var = vec![0.0; self.dim];
        // Weighted by batch size so unequal batches stay unbiased.
        for &bi in &active {
            let nb = self.counts[bi] as f64;
            for d in 0..self.dim {
                let m = self.sums[bi][d] / nb;
                var[d] += nb * (m - mean[d]).powi(2);
            }
        }
        let n = self.total as f64;
        var.into_iter()
            .map(|v| (v / n / (b as f64 - 1.0)).sqrt())
            .collect()
    }

    /// Estimate `f(mean)` with its delete-one-batch jackknife standard error.
    pub fn jackknife<F: Fn(&[f64]) -> f64>(&self, f: F) -> (f64, f64) {
        let (est, se) = self.jackknife_vec(|m| vec![f(m)]);
        (est[0], se[0])
    }

    pub fn jackknife_vec<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> (Vec<f64>, Vec<f64>) {
        let est = f(&self.mean());
        let loo: Vec<Vec<f64>> = self.loo_means().iter().map(|m| f(m)).collect();
        let b = loo.len();
        if b < 2 {
            return (est.clone(), vec![f64::INFINITY; est.len()]);
        }
        let bf = b as f64;
        let se = (0..est.len())
            .map(|d| {
                let avg = loo.iter().map(|v| v[d]).sum::<f64>() / bf;
                let ss: f64 = loo.iter().map(|v| (v[d] - avg).powi(2)).sum();
                ((bf - 1.0) / bf * ss).sqrt()
            })
            .collect();
        (est, se)
    }
}

pub fn require_samples(samples: usize, min: usize, what: &str) -> Result<()> {
    if samples < min {
        return Err(Error::Samples(format!(
            "{what} needs at least {min} samples, got {samples}"
        )));
    }
    Ok(())
}
