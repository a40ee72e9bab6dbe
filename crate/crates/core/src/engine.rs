//! Incremental engine: signed per-node statistics refreshed along one
//! leaf-to-root path per sample, O(depth · log arity) per round.
//!
//! Each node s keeps d̃_s and Z̃_s whose signs encode the node's empirical
//! answer (non-negative means win), and RD_s = (key, leaf), the leaf the
//! ratio rule would pick inside the subtree. Internal nodes keep heaps over
//! their children's d̃, Z̃ and RD keys plus two balanced sums: reciprocals
//! of same-sign children's d̃ and same-sign children's Z̃.

use crate::error::{Error, Result};
use crate::glr::ThresholdParams;
use crate::heap::{IndexedHeap, Orientation};
use crate::numeric::SumTree;
use crate::reward::RewardFamily;
use crate::state::EmpiricalState;
use crate::tree::{Answer, GameTree, LeafId, NodeId, NodeLabel};

#[derive(Clone, Debug)]
struct Aggregates {
    d_heap: IndexedHeap<f64>,
    z_heap: IndexedHeap<f64>,
    rd_heap: IndexedHeap<f64>,
    rsr: SumTree,
    sz: SumTree,
}

/// Signed statistics of one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeStats {
    pub d: f64,
    pub z: f64,
    pub rd_key: f64,
    pub rd_leaf: LeafId,
}

#[derive(Clone, Debug)]
pub struct IncrementalEngine<'a> {
    tree: &'a GameTree,
    family: RewardFamily,
    theta: f64,
    state: EmpiricalState,
    stats: Vec<NodeStats>,
    aggs: Vec<Option<Aggregates>>,
    counts: IndexedHeap<u64>,
    count_terms: SumTree,
    refresh_interval: Option<u64>,
    updates_since_refresh: u64,
}

impl<'a> IncrementalEngine<'a> {
    /// Builds every statistic bottom-up from a state where each leaf has been drawn.
    pub fn new(
        tree: &'a GameTree,
        state: EmpiricalState,
        theta: f64,
        family: RewardFamily,
    ) -> Result<Self> {
        if state.num_leaves() != tree.num_leaves() {
            return Err(Error::Domain("state and tree disagree on the leaf count".into()));
        }
        state.require_initialized()?;
        crate::allocation::check_theta(&family, theta)?;
        let placeholder = NodeStats {
            d: 0.0,
            z: 0.0,
            rd_key: f64::INFINITY,
            rd_leaf: 0,
        };
        let mut engine = IncrementalEngine {
            tree,
            family,
            theta,
            stats: vec![placeholder; tree.len()],
            aggs: vec![None; tree.len()],
            counts: IndexedHeap::heapify(state.counts().to_vec(), Orientation::Min),
            count_terms: SumTree::new(&[]),
            state,
            refresh_interval: None,
            updates_since_refresh: 0,
        };
        engine.rebuild();
        Ok(engine)
    }

    /// Rebuilds from scratch every `interval` updates.
    pub fn with_refresh_interval(mut self, interval: Option<u64>) -> Self {
        self.refresh_interval = interval.filter(|&n| n > 0);
        self
    }

    fn rebuild(&mut self) {
        let tree = self.tree;
        for s in (0..tree.len()).rev() {
            let node = &tree.nodes()[s];
            match (node.leaf, node.label) {
                (Some(l), _) => self.stats[s] = self.leaf_stats(l),
                (None, Some(label)) => {
                    let children = &node.children;
                    let child = |c: &NodeId| self.stats[*c];
                    let (dir, rd_dir) = match label {
                        NodeLabel::Max => (Orientation::Max, Orientation::Min),
                        NodeLabel::Min => (Orientation::Min, Orientation::Max),
                    };
                    let agg = Aggregates {
                        d_heap: IndexedHeap::heapify(children.iter().map(|c| child(c).d).collect(), dir),
                        z_heap: IndexedHeap::heapify(children.iter().map(|c| child(c).z).collect(), dir),
                        rd_heap: IndexedHeap::heapify(
                            children.iter().map(|c| child(c).rd_key).collect(),
                            rd_dir,
                        ),
                        rsr: SumTree::new(
                            &children.iter().map(|c| rsr_term(label, child(c).d)).collect::<Vec<_>>(),
                        ),
                        sz: SumTree::new(
                            &children.iter().map(|c| sz_term(label, child(c))).collect::<Vec<_>>(),
                        ),
                    };
                    self.aggs[s] = Some(agg);
                    self.stats[s] = self.combine(s, label);
                }
                (None, None) => unreachable!("validated tree"),
            }
        }
        self.counts = IndexedHeap::heapify(self.state.counts().to_vec(), Orientation::Min);
        let terms: Vec<f64> = self
            .state
            .counts()
            .iter()
            .map(|&n| ThresholdParams::count_term(n))
            .collect();
        self.count_terms = SumTree::new(&terms);
        self.updates_since_refresh = 0;
    }

    fn leaf_stats(&self, l: LeafId) -> NodeStats {
        let mean = self.state.mean(l);
        let n = self.state.count(l) as f64;
        let kl = self.family.divergence(mean, self.theta);
        let d = if mean >= self.theta { kl } else { -kl };
        NodeStats {
            d,
            z: n * d,
            rd_key: if d == 0.0 { f64::INFINITY } else { 1.0 / (d * n) },
            rd_leaf: l,
        }
    }

    /// Recomputes a node's statistics from its aggregates.
    fn combine(&self, s: NodeId, label: NodeLabel) -> NodeStats {
        let agg = self.aggs[s].as_ref().expect("internal node");
        let children = self.tree.children(s);
        let (d_ext, c_ext) = agg.d_heap.peek().expect("internal nodes have children");
        // The extreme child settles the sign: a MAX node wins iff some child
        // wins, a MIN node loses iff some child loses.
        let decided = match label {
            NodeLabel::Max => d_ext >= 0.0,
            NodeLabel::Min => d_ext <= 0.0,
        };
        if decided {
            let rd = self.stats[children[c_ext]];
            NodeStats {
                d: d_ext,
                z: agg.sz.sum(),
                rd_key: rd.rd_key,
                rd_leaf: rd.rd_leaf,
            }
        } else {
            let (z_ext, _) = agg.z_heap.peek().expect("non-empty");
            let (rd_key, c_rd) = agg.rd_heap.peek().expect("non-empty");
            NodeStats {
                d: 1.0 / agg.rsr.sum(),
                z: z_ext,
                rd_key,
                rd_leaf: self.stats[children[c_rd]].rd_leaf,
            }
        }
    }

    /// Records a reward at `leaf` and refreshes the statistics on its root path.
    pub fn update(&mut self, leaf: LeafId, reward: f64) {
        self.state.record(leaf, reward);
        let n = self.state.count(leaf);
        self.counts.set(leaf, n);
        self.count_terms.set(leaf, ThresholdParams::count_term(n));
        if let Some(interval) = self.refresh_interval {
            self.updates_since_refresh += 1;
            if self.updates_since_refresh >= interval {
                self.rebuild();
                return;
            }
        }
        let tree = self.tree;
        let mut s = tree.leaf_node(leaf);
        self.stats[s] = self.leaf_stats(leaf);
        while let Some(p) = tree.parent(s) {
            let k = tree.nodes()[s].child_pos;
            let label = tree.label(p).expect("internal");
            let st = self.stats[s];
            let agg = self.aggs[p].as_mut().expect("internal node");
            agg.d_heap.set(k, st.d);
            agg.z_heap.set(k, st.z);
            agg.rd_heap.set(k, st.rd_key);
            agg.rsr.set(k, rsr_term(label, st.d));
            agg.sz.set(k, sz_term(label, st));
            self.stats[p] = self.combine(p, label);
            s = p;
        }
    }

    /// Leaf chosen by forced exploration or else by the ratio rule, for the
    /// round that will bring the sample count to `t`.
    pub fn select(&self, t: u64) -> LeafId {
        let (n_min, l_min) = self.counts.peek().expect("non-empty tree");
        let floor = (t as f64).sqrt() - self.tree.num_leaves() as f64 / 2.0;
        if (n_min as f64) < floor {
            return l_min;
        }
        let root = self.stats[self.tree.root()];
        if root.rd_key == f64::INFINITY {
            // d̃ = 0 at the root: every leaf has equal weight, so the ratio rule
            // reduces to the least-sampled leaf.
            return l_min;
        }
        root.rd_leaf
    }

    /// Z̃_{s0}: its magnitude is the GLR statistic, its sign the recommendation.
    pub fn stop_stat(&self) -> f64 {
        self.stats[self.tree.root()].z
    }

    pub fn answer(&self) -> Answer {
        if self.stats[self.tree.root()].d >= 0.0 {
            Answer::Win
        } else {
            Answer::Lose
        }
    }

    pub fn beta(&self, params: &ThresholdParams) -> f64 {
        params.beta_from_terms(self.count_terms.sum())
    }

    pub fn should_stop(&self, params: &ThresholdParams) -> bool {
        self.stop_stat().abs() >= self.beta(params)
    }

    pub fn stats(&self, s: NodeId) -> NodeStats {
        self.stats[s]
    }

    pub fn all_stats(&self) -> &[NodeStats] {
        &self.stats
    }

    pub fn state(&self) -> &EmpiricalState {
        &self.state
    }

    pub fn into_state(self) -> EmpiricalState {
        self.state
    }

    /// Verifies heap position maps and orders of every aggregate.
    pub fn check_heaps(&self) {
        for agg in self.aggs.iter().flatten() {
            agg.d_heap.check_consistency();
            agg.z_heap.check_consistency();
            agg.rd_heap.check_consistency();
        }
        self.counts.check_consistency();
    }
}

#[inline]
fn rsr_term(label: NodeLabel, d: f64) -> f64 {
    let same_sign = match label {
        NodeLabel::Max => d < 0.0,
        NodeLabel::Min => d > 0.0,
    };
    if same_sign {
        1.0 / d
    } else {
        0.0
    }
}

#[inline]
fn sz_term(label: NodeLabel, st: NodeStats) -> f64 {
    let counted = match label {
        NodeLabel::Max => st.d >= 0.0,
        NodeLabel::Min => st.d < 0.0,
    };
    if counted {
        st.z
    } else {
        0.0
    }
}
