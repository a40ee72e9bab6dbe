//! Confidence-interval baselines adapted to the threshold question:
//! UGapE-MCTS and LUCB-micro with ε = 0.

use std::time::Instant;

use rand::Rng;

use crate::error::{Error, Result};
use crate::glr::{c_exp, ThresholdParams};
use crate::reward::RewardFamily;
use crate::sampling::{check_instance, RunConfig, RunResult, TraceStep};
use crate::state::EmpiricalState;
use crate::tree::{Answer, GameTree, LeafId, NodeId, NodeLabel};

/// Leaf confidence widths. The exploration rate is the single-leaf form of
/// the GLR threshold at level δ/|L|, a union bound over leaves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiParams {
    pub family: RewardFamily,
    /// C_exp(ln(|L|/δ)).
    constant: f64,
}

impl CiParams {
    pub fn new(family: RewardFamily, delta: f64, num_leaves: usize) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
        }
        Ok(CiParams {
            family,
            constant: c_exp((num_leaves as f64 / delta).ln())?,
        })
    }

    pub fn beta(&self, n: u64) -> f64 {
        3.0 * ThresholdParams::count_term(n) + self.constant
    }

    /// Half-width of a leaf interval after `n` samples.
    pub fn width(&self, n: u64) -> f64 {
        let b = self.beta(n);
        match self.family {
            RewardFamily::Bernoulli => (b / (2.0 * n as f64)).sqrt(),
            RewardFamily::Gaussian { sigma2 } => (2.0 * sigma2 * b / n as f64).sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeInterval {
    pub lcb: f64,
    pub ucb: f64,
}

/// Leaf intervals μ̂ ± width, propagated by max/min at internal nodes.
pub fn propagate_intervals(
    tree: &GameTree,
    state: &EmpiricalState,
    params: &CiParams,
) -> Result<Vec<NodeInterval>> {
    state.require_initialized()?;
    if state.num_leaves() != tree.num_leaves() {
        return Err(Error::Domain("state and tree disagree on the leaf count".into()));
    }
    let mut out = vec![NodeInterval { lcb: 0.0, ucb: 0.0 }; tree.len()];
    for s in (0..tree.len()).rev() {
        let node = &tree.nodes()[s];
        out[s] = match (node.leaf, node.label) {
            (Some(l), _) => {
                let m = state.mean(l);
                let w = params.width(state.count(l));
                NodeInterval {
                    lcb: m - w,
                    ucb: m + w,
                }
            }
            (None, Some(NodeLabel::Max)) => NodeInterval {
                lcb: node.children.iter().map(|&c| out[c].lcb).fold(f64::NEG_INFINITY, f64::max),
                ucb: node.children.iter().map(|&c| out[c].ucb).fold(f64::NEG_INFINITY, f64::max),
            },
            (None, Some(NodeLabel::Min)) => NodeInterval {
                lcb: node.children.iter().map(|&c| out[c].lcb).fold(f64::INFINITY, f64::min),
                ucb: node.children.iter().map(|&c| out[c].ucb).fold(f64::INFINITY, f64::min),
            },
            (None, None) => unreachable!("validated tree"),
        };
    }
    Ok(out)
}

/// Lowest-order position maximizing `score`.
fn best_by(items: &[NodeId], score: impl Fn(NodeId) -> f64) -> NodeId {
    let mut best = items[0];
    for &c in &items[1..] {
        if score(c) > score(best) {
            best = c;
        }
    }
    best
}

/// Representative leaf of `s`: the child with the highest upper bound at MAX
/// nodes and the lowest lower bound at MIN nodes, down to a leaf.
fn optimistic_leaf(tree: &GameTree, iv: &[NodeInterval], mut s: NodeId) -> LeafId {
    loop {
        let node = &tree.nodes()[s];
        if let Some(l) = node.leaf {
            return l;
        }
        s = match node.label {
            Some(NodeLabel::Max) => best_by(&node.children, |c| iv[c].ucb),
            _ => best_by(&node.children, |c| -iv[c].lcb),
        };
    }
}

/// Stop decision from the root interval.
fn decide(iv: &NodeInterval, theta: f64) -> Option<Answer> {
    if iv.lcb >= theta {
        Some(Answer::Win)
    } else if iv.ucb < theta {
        Some(Answer::Lose)
    } else {
        None
    }
}

struct CiRun<'a, R: ?Sized> {
    tree: &'a GameTree,
    means: &'a [f64],
    cfg: &'a RunConfig,
    params: CiParams,
    state: EmpiricalState,
    trace: Vec<TraceStep>,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> CiRun<'_, R> {
    fn draw(&mut self, leaf: LeafId) -> Result<()> {
        if self.state.t() >= self.cfg.max_rounds {
            return Err(Error::RoundCap(self.cfg.max_rounds));
        }
        let r = self.cfg.family.draw(self.means[leaf], self.rng);
        self.state.record(leaf, r);
        Ok(())
    }

    fn intervals(&self) -> Vec<NodeInterval> {
        propagate_intervals(self.tree, &self.state, &self.params).expect("initialized")
    }

    fn push_trace(&mut self, leaf: LeafId, root: NodeInterval) {
        if self.cfg.record_trace {
            self.trace.push(TraceStep {
                leaf,
                z: root.lcb,
                beta: root.ucb,
            });
        }
    }
}

fn setup<'a, R: Rng + ?Sized>(
    tree: &'a GameTree,
    means: &'a [f64],
    cfg: &'a RunConfig,
    rng: &'a mut R,
) -> Result<CiRun<'a, R>> {
    check_instance(tree, means, cfg.theta, &cfg.family, cfg.delta)?;
    if tree.label(tree.root()) != Some(NodeLabel::Max) {
        return Err(Error::Config("confidence-interval baselines need a MAX root".into()));
    }
    let mut run = CiRun {
        tree,
        means,
        cfg,
        params: CiParams::new(cfg.family, cfg.delta, tree.num_leaves())?,
        state: EmpiricalState::new(tree.num_leaves()),
        trace: Vec::new(),
        rng,
    };
    for l in 0..tree.num_leaves() {
        run.draw(l)?;
    }
    Ok(run)
}

fn finish<R: ?Sized>(run: CiRun<'_, R>, answer: Answer, started: Instant) -> Result<RunResult> {
    let truth = run.tree.answer(run.tree.root(), run.means, run.cfg.theta)?;
    Ok(RunResult {
        tau: run.state.t(),
        answer,
        correct: answer == truth,
        counts: run.state.counts().to_vec(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        gai: None,
        trace: run.trace,
    })
}

/// UGapE over the root's children: best arm by gap index, challenger by
/// upper bound, sample the wider of the two by optimistic descent.
pub fn run_ugape<R: Rng + ?Sized>(
    tree: &GameTree,
    means: &[f64],
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let started = Instant::now();
    let mut run = setup(tree, means, cfg, rng)?;
    let children = tree.children(tree.root()).to_vec();
    loop {
        let iv = run.intervals();
        if let Some(answer) = decide(&iv[tree.root()], cfg.theta) {
            return finish(run, answer, started);
        }
        let gap_index = |c: NodeId| {
            let rival = children
                .iter()
                .filter(|&&o| o != c)
                .map(|&o| iv[o].ucb)
                .fold(f64::NEG_INFINITY, f64::max);
            rival - iv[c].lcb
        };
        let best = best_by(&children, |c| -gap_index(c));
        let pick = match children.iter().copied().filter(|&c| c != best).collect::<Vec<_>>() {
            others if others.is_empty() => best,
            others => {
                let challenger = best_by(&others, |c| iv[c].ucb);
                let width = |c: NodeId| iv[c].ucb - iv[c].lcb;
                if width(challenger) > width(best) {
                    challenger
                } else {
                    best
                }
            }
        };
        let leaf = optimistic_leaf(tree, &iv, pick);
        run.draw(leaf)?;
        let root = run.intervals()[tree.root()];
        run.push_trace(leaf, root);
    }
}

/// LUCB over the root's children: each round samples the representative
/// leaves of the empirically best child and of the rival with the highest
/// upper bound.
pub fn run_lucb_micro<R: Rng + ?Sized>(
    tree: &GameTree,
    means: &[f64],
    cfg: &RunConfig,
    rng: &mut R,
) -> Result<RunResult> {
    let started = Instant::now();
    let mut run = setup(tree, means, cfg, rng)?;
    let children = tree.children(tree.root()).to_vec();
    loop {
        let iv = run.intervals();
        if let Some(answer) = decide(&iv[tree.root()], cfg.theta) {
            return finish(run, answer, started);
        }
        let values = tree.values(&run.state.means());
        let best = best_by(&children, |c| values[c]);
        let mut picks = vec![optimistic_leaf(tree, &iv, best)];
        let others: Vec<NodeId> = children.iter().copied().filter(|&c| c != best).collect();
        if !others.is_empty() {
            let challenger = best_by(&others, |c| iv[c].ucb);
            picks.push(optimistic_leaf(tree, &iv, challenger));
        }
        for leaf in picks {
            run.draw(leaf)?;
            let root = run.intervals()[tree.root()];
            run.push_trace(leaf, root);
            if let Some(answer) = decide(&root, cfg.theta) {
                return finish(run, answer, started);
            }
        }
    }
}
