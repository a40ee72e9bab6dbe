//! GLR statistic, the stopping threshold β(t, δ) and its special functions.

use crate::allocation::{check_theta, flip_costs, flip_costs_for};
use crate::error::{Error, Result};
use crate::numeric::{balanced_sum, balanced_sum_by};
use crate::reward::RewardFamily;
use crate::state::EmpiricalState;
use crate::tree::{Answer, GameTree, NodeId};

/// h(x) = x - ln x.
pub fn h(x: f64) -> f64 {
    x - x.ln()
}

/// Inverse of h on the branch x >= 1.
pub fn h_inverse(y: f64) -> Result<f64> {
    if !(y >= 1.0) || !y.is_finite() {
        return Err(Error::Domain(format!("h_inverse needs a finite y >= 1, got {y}")));
    }
    if y == 1.0 {
        return Ok(1.0);
    }
    let mut lo = y;
    let mut hi = y + (y + (2.0 * (y - 1.0)).sqrt()).ln() + 1.0;
    let mut x = (y + y.ln()).clamp(lo, hi);
    for _ in 0..200 {
        let f = h(x) - y;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = 1.0 - 1.0 / x;
        let mut next = x - f / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= f64::EPSILON * x {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

fn h_tilde(x: f64) -> Result<f64> {
    let boundary = h(1.0 / 1.5f64.ln());
    if x >= boundary {
        let hi = h_inverse(x)?;
        Ok((1.0 / hi).exp() * hi)
    } else {
        Ok(1.5 * (x - 1.5f64.ln().ln()))
    }
}

/// C_exp(x) = 2 h~((h^{-1}(1 + x) + ln(π²/3)) / 2).
pub fn c_exp(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("c_exp needs x >= 0, got {x}")));
    }
    let pi2_3 = std::f64::consts::PI * std::f64::consts::PI / 3.0;
    let inner = (h_inverse(1.0 + x)? + pi2_3.ln()) / 2.0;
    Ok(2.0 * h_tilde(inner)?)
}

/// The δ- and |L|-dependent part of the threshold, computed once per run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdParams {
    pub delta: f64,
    pub num_leaves: usize,
    /// |L| C_exp(ln(1/δ)/|L|).
    pub constant: f64,
}

impl ThresholdParams {
    pub fn new(delta: f64, num_leaves: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
        }
        if num_leaves == 0 {
            return Err(Error::Domain("tree has no leaves".into()));
        }
        let l = num_leaves as f64;
        let constant = l * c_exp((1.0 / delta).ln() / l)?;
        Ok(ThresholdParams {
            delta,
            num_leaves,
            constant,
        })
    }

    /// One summand of the count-dependent part: ln(1 + ln n).
    #[inline]
    pub fn count_term(n: u64) -> f64 {
        (1.0 + (n as f64).ln()).ln()
    }

    pub fn beta_from_terms(&self, log_terms_sum: f64) -> f64 {
        3.0 * log_terms_sum + self.constant
    }
}

/// β(t, δ) = 3 Σ ln(1 + ln N_ℓ) + |L| C_exp(ln(1/δ)/|L|).
pub fn beta(state: &EmpiricalState, params: &ThresholdParams) -> Result<f64> {
    state.require_initialized()?;
    if state.num_leaves() != params.num_leaves {
        return Err(Error::Domain("leaf count mismatch between state and params".into()));
    }
    let counts = state.counts();
    let terms = balanced_sum_by(counts.len(), |l| ThresholdParams::count_term(counts[l]));
    Ok(params.beta_from_terms(terms))
}

fn check_state(tree: &GameTree, state: &EmpiricalState) -> Result<()> {
    if state.num_leaves() != tree.num_leaves() {
        return Err(Error::Domain(format!(
            "state has {} leaves, tree has {}",
            state.num_leaves(),
            tree.num_leaves()
        )));
    }
    state.require_initialized()
}

/// GLR statistic Z_{s0}(t) under the empirical answer.
pub fn glr(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> Result<f64> {
    check_theta(family, theta)?;
    check_state(tree, state)?;
    Ok(glr_unchecked(tree, state, theta, family))
}

pub(crate) fn glr_unchecked(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> f64 {
    let means = state.means();
    let counts = state.counts();
    flip_costs(tree, &means, theta, family, |l| counts[l] as f64)[tree.root()]
}

/// GLR statistics of every node under the recursion for `answer`.
pub(crate) fn glr_nodes(
    tree: &GameTree,
    state: &EmpiricalState,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
    answer: Answer,
) -> Vec<f64> {
    let counts = state.counts();
    flip_costs_for(tree, means, theta, family, answer, |l| counts[l] as f64)
}

/// GLR statistic of the subtree rooted at `s` under its own empirical answer.
pub fn glr_at(
    tree: &GameTree,
    s: NodeId,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> Result<f64> {
    check_theta(family, theta)?;
    check_state(tree, state)?;
    tree.node(s)?;
    let means = state.means();
    let answer = Answer::from_value(tree.values(&means)[s], theta);
    Ok(glr_nodes(tree, state, &means, theta, family, answer)[s])
}

pub fn should_stop(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
    params: &ThresholdParams,
) -> Result<bool> {
    Ok(glr(tree, state, theta, family)? >= beta(state, params)?)
}

/// Sum of the terms ln(1 + ln N_ℓ), balanced over leaves.
pub fn count_terms_sum(counts: &[u64]) -> f64 {
    let terms: Vec<f64> = counts.iter().map(|&n| ThresholdParams::count_term(n)).collect();
    balanced_sum(&terms)
}
