//! Pairwise summation shared by the naive recursions and the incremental engine.
//!
//! Both code paths add the same terms in the same balanced order, so a sum kept
//! in a [`SumTree`] and refreshed slot by slot is bitwise equal to a fresh
//! [`balanced_sum`] over the current terms. No drift accumulates.

/// Sum of `terms` over a complete binary tree of pairwise additions, padded
/// with zeros to the next power of two.
pub fn balanced_sum(terms: &[f64]) -> f64 {
    match terms.len() {
        0 => 0.0,
        1 => terms[0],
        n => {
            let cap = n.next_power_of_two();
            let mut level: Vec<f64> = Vec::with_capacity(cap);
            level.extend_from_slice(terms);
            level.resize(cap, 0.0);
            while level.len() > 1 {
                let half = level.len() / 2;
                for i in 0..half {
                    level[i] = level[2 * i] + level[2 * i + 1];
                }
                level.truncate(half);
            }
            level[0]
        }
    }
}

/// Balanced sum of `f(i)` for `i` in `0..n`.
pub fn balanced_sum_by(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    let terms: Vec<f64> = (0..n).map(f).collect();
    balanced_sum(&terms)
}

/// Fixed-size array of terms with a maintained balanced sum.
#[derive(Clone, Debug)]
pub struct SumTree {
    cap: usize,
    len: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(terms: &[f64]) -> Self {
        let len = terms.len();
        let cap = len.max(1).next_power_of_two();
        let mut nodes = vec![0.0; 2 * cap];
        nodes[cap..cap + len].copy_from_slice(terms);
        for i in (1..cap).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        SumTree { cap, len, nodes }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        assert!(i < self.len, "slot {i} out of range");
        self.nodes[self.cap + i]
    }

    /// Overwrites slot `i` and refreshes the partial sums above it.
    pub fn set(&mut self, i: usize, value: f64) {
        assert!(i < self.len, "slot {i} out of range");
        let mut p = self.cap + i;
        self.nodes[p] = value;
        while p > 1 {
            p /= 2;
            self.nodes[p] = self.nodes[2 * p] + self.nodes[2 * p + 1];
        }
    }

    pub fn sum(&self) -> f64 {
        self.nodes[1]
    }
}
