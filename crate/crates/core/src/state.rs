use crate::error::{Error, Result};

/// Per-leaf sample counts and reward sums.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalState {
    counts: Vec<u64>,
    sums: Vec<f64>,
    t: u64,
}

impl EmpiricalState {
    /// Empty state; every count is zero.
    pub fn new(num_leaves: usize) -> Self {
        EmpiricalState {
            counts: vec![0; num_leaves],
            sums: vec![0.0; num_leaves],
            t: 0,
        }
    }

    /// State with the given counts and empirical means.
    pub fn from_counts_means(counts: &[u64], means: &[f64]) -> Result<Self> {
        if counts.len() != means.len() {
            return Err(Error::Domain(format!(
                "{} counts but {} means",
                counts.len(),
                means.len()
            )));
        }
        let sums = counts.iter().zip(means).map(|(&n, &m)| n as f64 * m).collect();
        Ok(EmpiricalState {
            counts: counts.to_vec(),
            sums,
            t: counts.iter().sum(),
        })
    }

    pub fn num_leaves(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, leaf: usize, reward: f64) {
        self.counts[leaf] += 1;
        self.sums[leaf] += reward;
        self.t += 1;
    }

    pub fn count(&self, leaf: usize) -> u64 {
        self.counts[leaf]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mean(&self, leaf: usize) -> f64 {
        self.sums[leaf] / self.counts[leaf] as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|l| self.mean(l)).collect()
    }

    /// Total number of samples drawn so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_initialized(&self) -> bool {
        self.counts.iter().all(|&n| n >= 1)
    }

    pub(crate) fn require_initialized(&self) -> Result<()> {
        if self.is_initialized() {
            Ok(())
        } else {
            Err(Error::Domain("every leaf must be sampled at least once".into()))
        }
    }
}
