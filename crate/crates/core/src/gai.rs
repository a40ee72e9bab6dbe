//! Good action identification: find a root child with value at least θ, or
//! report that none exists.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::allocation::check_theta;
use crate::error::{Error, Result};
use crate::glr::{glr_nodes, glr_unchecked};
use crate::reward::RewardFamily;
use crate::sampling::{run_loop, RunConfig, RunResult, StopMode};
use crate::state::EmpiricalState;
use crate::tree::{Answer, GameTree, NodeId, NodeLabel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaiAnswer {
    Child(NodeId),
    NoGoodAction,
}

impl std::fmt::Display for GaiAnswer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GaiAnswer::Child(c) => write!(f, "child {c}"),
            GaiAnswer::NoGoodAction => f.write_str("no_good_action"),
        }
    }
}

pub(crate) fn require_max_root(tree: &GameTree) -> Result<()> {
    if tree.label(tree.root()) == Some(NodeLabel::Max) {
        Ok(())
    } else {
        Err(Error::Config("good action identification needs a MAX root".into()))
    }
}

fn check(tree: &GameTree, state: &EmpiricalState, theta: f64, family: &RewardFamily) -> Result<()> {
    require_max_root(tree)?;
    check_theta(family, theta)?;
    if state.num_leaves() != tree.num_leaves() {
        return Err(Error::Domain("state and tree disagree on the leaf count".into()));
    }
    state.require_initialized()
}

/// Z^GAI: the best child's GLR statistic when the root looks winning, the
/// full root statistic otherwise.
pub fn glr_gai(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> Result<f64> {
    check(tree, state, theta, family)?;
    Ok(glr_gai_unchecked(tree, state, theta, family))
}

pub(crate) fn glr_gai_unchecked(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> f64 {
    gai_step(tree, state, theta, family).0
}

/// Z^GAI together with the current recommendation, sharing one pass.
pub(crate) fn gai_step(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> (f64, GaiAnswer) {
    let means = state.means();
    let values = tree.values(&means);
    let z = glr_nodes(tree, state, &means, theta, family, Answer::Win);
    let mut best: Option<(NodeId, f64)> = None;
    for &c in tree.children(tree.root()) {
        if values[c] >= theta && best.map_or(true, |(_, bz)| z[c] > bz) {
            best = Some((c, z[c]));
        }
    }
    match best {
        Some((c, zc)) => (zc, GaiAnswer::Child(c)),
        None => (glr_unchecked(tree, state, theta, family), GaiAnswer::NoGoodAction),
    }
}

/// Empirically good child with the largest GLR statistic (lowest order on ties).
pub fn recommend_gai(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> Result<GaiAnswer> {
    check(tree, state, theta, family)?;
    Ok(recommend_unchecked(tree, state, theta, family))
}

pub(crate) fn recommend_unchecked(
    tree: &GameTree,
    state: &EmpiricalState,
    theta: f64,
    family: &RewardFamily,
) -> GaiAnswer {
    gai_step(tree, state, theta, family).1
}

/// Whether `answer` is correct for the true means.
pub fn is_correct(tree: &GameTree, means: &[f64], theta: f64, answer: GaiAnswer) -> bool {
    let values = tree.values(means);
    match answer {
        GaiAnswer::Child(c) => tree.parent(c) == Some(tree.root()) && values[c] >= theta,
        GaiAnswer::NoGoodAction => tree
            .children(tree.root())
            .iter()
            .all(|&c| values[c] < theta),
    }
}

/// Ratio-rule sampling with the GAI stopping statistic. With `throttle`, the
/// statistic is only evaluated every ⌈ln t⌉ rounds.
pub fn run_gai<R: Rng + ?Sized>(
    tree: &GameTree,
    means: &[f64],
    cfg: &RunConfig,
    throttle: bool,
    rng: &mut R,
) -> Result<RunResult> {
    let cfg = RunConfig {
        sampler: crate::sampling::SamplerKind::Rd,
        ..cfg.clone()
    };
    run_loop(tree, means, &cfg, rng, StopMode::Gai { throttle })
}
