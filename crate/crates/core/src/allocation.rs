//! Characteristic values d_s and the optimal leaf allocation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::balanced_sum;
use crate::reward::RewardFamily;
use crate::tree::{Answer, GameTree, NodeId, NodeLabel};

/// Root values closer to θ than this violate the separation assumption.
pub const SEPARATION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Allocation {
    /// d_s per node id.
    pub d: Vec<f64>,
    /// Optimal proportions per leaf id.
    pub w: Vec<f64>,
    pub answer: Answer,
}

impl Allocation {
    pub fn d_root(&self) -> f64 {
        self.d[0]
    }
}

pub fn check_theta(family: &RewardFamily, theta: f64) -> Result<()> {
    if family.is_interior(theta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("threshold {theta} is not interior to the mean domain")))
    }
}

pub fn check_means(tree: &GameTree, family: &RewardFamily, means: &[f64]) -> Result<()> {
    if means.len() != tree.num_leaves() {
        return Err(Error::Domain(format!(
            "expected {} leaf means, got {}",
            tree.num_leaves(),
            means.len()
        )));
    }
    for (l, &m) in means.iter().enumerate() {
        let ok = match family {
            RewardFamily::Bernoulli => (0.0..=1.0).contains(&m),
            RewardFamily::Gaussian { .. } => m.is_finite(),
        };
        if !ok {
            return Err(Error::Domain(format!("mean {m} of leaf {l} outside the domain")));
        }
    }
    Ok(())
}

/// Label as seen by the recursion for `answer`: the Lose case swaps MAX and MIN.
#[inline]
pub(crate) fn effective_label(label: NodeLabel, answer: Answer) -> NodeLabel {
    match answer {
        Answer::Win => label,
        Answer::Lose => label.flip(),
    }
}

/// Whether a leaf mean agrees with `answer`.
#[inline]
pub(crate) fn leaf_agrees(mean: f64, theta: f64, answer: Answer) -> bool {
    match answer {
        Answer::Win => mean >= theta,
        Answer::Lose => mean < theta,
    }
}

/// d_s for every node under the recursion for `answer`. Inputs are trusted.
pub fn characteristic_values(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
    answer: Answer,
) -> Vec<f64> {
    let mut d = vec![0.0; tree.len()];
    let mut recip = Vec::new();
    for s in (0..tree.len()).rev() {
        let node = &tree.nodes()[s];
        d[s] = match (node.leaf, node.label) {
            (Some(l), _) => {
                if leaf_agrees(means[l], theta, answer) {
                    family.divergence(means[l], theta)
                } else {
                    0.0
                }
            }
            (None, Some(label)) => match effective_label(label, answer) {
                NodeLabel::Max => node.children.iter().map(|&c| d[c]).fold(0.0, f64::max),
                NodeLabel::Min => {
                    if node.children.iter().all(|&c| d[c] > 0.0) {
                        recip.clear();
                        recip.extend(node.children.iter().map(|&c| 1.0 / d[c]));
                        1.0 / balanced_sum(&recip)
                    } else {
                        0.0
                    }
                }
            },
            (None, None) => unreachable!("validated tree"),
        };
    }
    d
}

/// Allocation for arbitrary (possibly empirical) means, without the
/// separation check. Degenerate subtrees get uniform weight.
pub fn allocation_for(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
) -> Allocation {
    let answer = Answer::from_value(tree.values(means)[tree.root()], theta);
    let d = characteristic_values(tree, means, theta, family, answer);
    let mut w = vec![0.0; tree.num_leaves()];
    let mut stack: Vec<(NodeId, f64)> = vec![(tree.root(), 1.0)];
    let mut recip = Vec::new();
    while let Some((s, mass)) = stack.pop() {
        let node = &tree.nodes()[s];
        if let Some(l) = node.leaf {
            w[l] += mass;
            continue;
        }
        if d[s] == 0.0 {
            let (lo, hi) = node.leaf_range;
            let share = mass / (hi - lo) as f64;
            for x in &mut w[lo..hi] {
                *x += share;
            }
            continue;
        }
        match effective_label(node.label.expect("internal"), answer) {
            NodeLabel::Max => {
                let best = node
                    .children
                    .iter()
                    .copied()
                    .find(|&c| d[c] == d[s])
                    .expect("max is attained");
                stack.push((best, mass));
            }
            NodeLabel::Min => {
                recip.clear();
                recip.extend(node.children.iter().map(|&c| 1.0 / d[c]));
                let total = balanced_sum(&recip);
                for (&c, &r) in node.children.iter().zip(&recip) {
                    stack.push((c, mass * (r / total)));
                }
            }
        }
    }
    Allocation { d, w, answer }
}

/// Optimal allocation w^{s0}(μ) and characteristic values d_s(μ).
pub fn optimal_allocation(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
) -> Result<Allocation> {
    check_theta(family, theta)?;
    check_means(tree, family, means)?;
    let v = tree.values(means)[tree.root()];
    if (v - theta).abs() <= SEPARATION_TOL {
        return Err(Error::AssumptionViolated(format!(
            "root value {v} is within {SEPARATION_TOL} of the threshold {theta}"
        )));
    }
    Ok(allocation_for(tree, means, theta, family))
}

/// Checks that `w` is a probability vector over the leaves.
pub fn check_simplex(tree: &GameTree, w: &[f64]) -> Result<()> {
    if w.len() != tree.num_leaves() {
        return Err(Error::Domain(format!(
            "expected {} weights, got {}",
            tree.num_leaves(),
            w.len()
        )));
    }
    if w.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain("weights must be nonnegative".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Cheapest way, under weights `w`, to move leaf means so the root answer flips:
/// inf over Alt(μ) of Σ w_ℓ d(μ_ℓ, λ_ℓ).
pub fn alt_infimum(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
    w: &[f64],
) -> Result<f64> {
    check_theta(family, theta)?;
    check_means(tree, family, means)?;
    check_simplex(tree, w)?;
    Ok(flip_costs(tree, means, theta, family, |l| w[l])[tree.root()])
}

/// Per-node cost of flipping the root's current answer inside each subtree,
/// with leaf `l` weighted by `weight(l)`. The GLR statistic is this with
/// weights equal to the counts.
pub(crate) fn flip_costs(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
    weight: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let answer = Answer::from_value(tree.values(means)[tree.root()], theta);
    flip_costs_for(tree, means, theta, family, answer, weight)
}

pub(crate) fn flip_costs_for(
    tree: &GameTree,
    means: &[f64],
    theta: f64,
    family: &RewardFamily,
    answer: Answer,
    weight: impl Fn(usize) -> f64,
) -> Vec<f64> {
    let mut z = vec![0.0; tree.len()];
    let mut terms = Vec::new();
    for s in (0..tree.len()).rev() {
        let node = &tree.nodes()[s];
        z[s] = match (node.leaf, node.label) {
            (Some(l), _) => {
                if leaf_agrees(means[l], theta, answer) {
                    weight(l) * family.divergence(means[l], theta)
                } else {
                    0.0
                }
            }
            // Every agreeing child must be flipped at an effective MAX node;
            // one suffices at an effective MIN node.
            (None, Some(label)) => match effective_label(label, answer) {
                NodeLabel::Max => {
                    terms.clear();
                    terms.extend(node.children.iter().map(|&c| z[c]));
                    balanced_sum(&terms)
                }
                NodeLabel::Min => node
                    .children
                    .iter()
                    .map(|&c| z[c])
                    .fold(f64::INFINITY, f64::min),
            },
            (None, None) => unreachable!("validated tree"),
        };
    }
    z
}

/// Asymptotic lower bound ln(1/δ)/d_{s0} on the expected stopping time.
pub fn lower_bound_t(d_s0: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    if !(d_s0 > 0.0) {
        return Err(Error::AssumptionViolated(format!(
            "characteristic value {d_s0} must be positive"
        )));
    }
    Ok((1.0 / delta).ln() / d_s0)
}
