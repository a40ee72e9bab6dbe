//! Question trees: MAX/MIN internal nodes over stochastic leaves.
//!
//! Node ids are dense and assigned in pre-order (document order), so every
//! child id is larger than its parent's id and iterating ids in reverse is a
//! valid bottom-up traversal. Leaf ids are dense in depth-first order, which
//! makes the leaves of any subtree a contiguous range.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;
pub type LeafId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeLabel {
    #[serde(rename = "MAX")]
    Max,
    #[serde(rename = "MIN")]
    Min,
}

impl NodeLabel {
    pub fn flip(self) -> Self {
        match self {
            NodeLabel::Max => NodeLabel::Min,
            NodeLabel::Min => NodeLabel::Max,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Win,
    Lose,
}

impl Answer {
    pub fn from_value(value: f64, theta: f64) -> Self {
        if value >= theta {
            Answer::Win
        } else {
            Answer::Lose
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Win => f.write_str("win"),
            Answer::Lose => f.write_str("lose"),
        }
    }
}

/// A node as written in a tree document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DocNode {
    Leaf {
        leaf: String,
    },
    Internal {
        label: NodeLabel,
        children: Vec<DocNode>,
    },
}

impl DocNode {
    pub fn leaf(name: impl Into<String>) -> Self {
        DocNode::Leaf { leaf: name.into() }
    }

    pub fn max(children: Vec<DocNode>) -> Self {
        DocNode::Internal {
            label: NodeLabel::Max,
            children,
        }
    }

    pub fn min(children: Vec<DocNode>) -> Self {
        DocNode::Internal {
            label: NodeLabel::Min,
            children,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TreeFile {
    root: DocNode,
}

/// Unvalidated node record, addressed by position in a slice.
#[derive(Clone, Debug, PartialEq)]
pub struct RawNode {
    pub label: Option<NodeLabel>,
    pub children: Vec<NodeId>,
    pub name: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub label: Option<NodeLabel>,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub leaf: Option<LeafId>,
    pub name: Option<String>,
    /// Position of this node among its parent's children.
    pub child_pos: usize,
    pub depth: usize,
    /// Leaves of the subtree rooted here, as a half-open range of leaf ids.
    pub leaf_range: (LeafId, LeafId),
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameTree {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
    depth: usize,
}

/// Checks the structural invariants of a raw node table rooted at `root`.
pub fn validate(nodes: &[RawNode], root: NodeId) -> Result<()> {
    let malformed = |msg: String| Err(Error::MalformedTree(msg));
    if nodes.is_empty() {
        return malformed("tree has no nodes".into());
    }
    if root >= nodes.len() {
        return malformed(format!("root {root} out of range"));
    }
    let mut parent: Vec<Option<NodeId>> = vec![None; nodes.len()];
    for (id, node) in nodes.iter().enumerate() {
        let mut seen = HashSet::new();
        for &c in &node.children {
            if c >= nodes.len() {
                return malformed(format!("node {id} has out-of-range child {c}"));
            }
            if !seen.insert(c) {
                return malformed(format!("node {id} lists child {c} twice"));
            }
            if c == root {
                return malformed(format!("root {root} appears as a child of node {id}"));
            }
            if let Some(p) = parent[c] {
                return malformed(format!("node {c} has two parents ({p} and {id})"));
            }
            parent[c] = Some(id);
        }
        match (node.children.is_empty(), node.label) {
            (false, None) => return malformed(format!("internal node {id} has no label")),
            (true, Some(_)) => return malformed(format!("leaf node {id} carries a label")),
            _ => {}
        }
    }
    for (id, p) in parent.iter().enumerate() {
        if id != root && p.is_none() {
            return malformed(format!("node {id} has no parent (second root or orphan)"));
        }
    }
    // With one parent per non-root node, reachability from the root rules out cycles.
    let mut reached = vec![false; nodes.len()];
    let mut stack = vec![root];
    while let Some(s) = stack.pop() {
        if reached[s] {
            return malformed(format!("cycle through node {s}"));
        }
        reached[s] = true;
        stack.extend(nodes[s].children.iter().copied());
    }
    if let Some(id) = reached.iter().position(|r| !r) {
        return malformed(format!("node {id} is not reachable from the root"));
    }
    let mut names = HashSet::new();
    for (id, node) in nodes.iter().enumerate() {
        if node.children.is_empty() {
            if let Some(name) = &node.name {
                if !names.insert(name.as_str()) {
                    return malformed(format!("duplicate leaf name {name:?} at node {id}"));
                }
            }
        }
    }
    Ok(())
}

impl GameTree {
    /// Builds a tree from a raw node table. Node ids are renumbered in pre-order.
    pub fn from_raw(nodes: &[RawNode], root: NodeId) -> Result<Self> {
        validate(nodes, root)?;
        let mut tree = GameTree {
            nodes: Vec::with_capacity(nodes.len()),
            leaves: Vec::new(),
            depth: 0,
        };
        tree.push_raw(nodes, root, None, 0, 0);
        tree.finish();
        Ok(tree)
    }

    fn push_raw(
        &mut self,
        raw: &[RawNode],
        src: NodeId,
        parent: Option<NodeId>,
        child_pos: usize,
        depth: usize,
    ) -> NodeId {
        let id = self.nodes.len();
        let r = &raw[src];
        let leaf = r.children.is_empty().then(|| {
            self.leaves.push(id);
            self.leaves.len() - 1
        });
        let name = match (leaf, &r.name) {
            (Some(l), None) => Some(format!("l{l}")),
            (_, n) => n.clone(),
        };
        self.nodes.push(Node {
            label: r.label,
            parent,
            children: Vec::with_capacity(r.children.len()),
            leaf,
            name,
            child_pos,
            depth,
            leaf_range: (0, 0),
        });
        for (pos, &c) in r.children.iter().enumerate() {
            let cid = self.push_raw(raw, c, Some(id), pos, depth + 1);
            self.nodes[id].children.push(cid);
        }
        id
    }

    fn finish(&mut self) {
        for id in (0..self.nodes.len()).rev() {
            let range = match self.nodes[id].leaf {
                Some(l) => (l, l + 1),
                None => {
                    let ch = &self.nodes[id].children;
                    let first = self.nodes[ch[0]].leaf_range.0;
                    let last = self.nodes[*ch.last().unwrap()].leaf_range.1;
                    (first, last)
                }
            };
            self.nodes[id].leaf_range = range;
        }
        self.depth = self.nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    }

    pub fn from_doc(doc: &DocNode) -> Result<Self> {
        fn flatten(doc: &DocNode, out: &mut Vec<RawNode>) -> NodeId {
            let id = out.len();
            match doc {
                DocNode::Leaf { leaf } => out.push(RawNode {
                    label: None,
                    children: vec![],
                    name: Some(leaf.clone()),
                }),
                DocNode::Internal { label, children } => {
                    out.push(RawNode {
                        label: Some(*label),
                        children: vec![],
                        name: None,
                    });
                    let ids: Vec<NodeId> = children.iter().map(|c| flatten(c, out)).collect();
                    out[id].children = ids;
                }
            }
            id
        }
        let mut raw = Vec::new();
        let root = flatten(doc, &mut raw);
        Self::from_raw(&raw, root)
    }

    /// Complete `arity`-ary tree of the given depth, MAX at even depths and MIN
    /// at odd depths. Leaves are named `l0`, `l1`, ... in depth-first order.
    pub fn complete(depth: usize, arity: usize) -> Result<Self> {
        if arity == 0 {
            return Err(Error::Config("arity must be positive".into()));
        }
        fn build(level: usize, depth: usize, arity: usize, next: &mut usize) -> DocNode {
            if level == depth {
                let name = format!("l{next}");
                *next += 1;
                return DocNode::leaf(name);
            }
            let label = if level % 2 == 0 {
                NodeLabel::Max
            } else {
                NodeLabel::Min
            };
            DocNode::Internal {
                label,
                children: (0..arity).map(|_| build(level + 1, depth, arity, next)).collect(),
            }
        }
        let mut next = 0;
        Self::from_doc(&build(0, depth, arity, &mut next))
    }

    pub fn to_doc(&self) -> DocNode {
        self.doc_at(self.root())
    }

    fn doc_at(&self, s: NodeId) -> DocNode {
        let node = &self.nodes[s];
        match node.label {
            None => DocNode::leaf(node.name.clone().unwrap_or_default()),
            Some(label) => DocNode::Internal {
                label,
                children: node.children.iter().map(|&c| self.doc_at(c)).collect(),
            },
        }
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn max_arity(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    pub fn node(&self, s: NodeId) -> Result<&Node> {
        self.nodes.get(s).ok_or(Error::UnknownNode(s))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn children(&self, s: NodeId) -> &[NodeId] {
        &self.nodes[s].children
    }

    pub fn parent(&self, s: NodeId) -> Option<NodeId> {
        self.nodes[s].parent
    }

    pub fn label(&self, s: NodeId) -> Option<NodeLabel> {
        self.nodes[s].label
    }

    /// Node id of a leaf.
    pub fn leaf_node(&self, leaf: LeafId) -> NodeId {
        self.leaves[leaf]
    }

    pub fn leaf_nodes(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn leaf_of(&self, s: NodeId) -> Option<LeafId> {
        self.nodes[s].leaf
    }

    pub fn leaf_name(&self, leaf: LeafId) -> &str {
        self.nodes[self.leaves[leaf]].name.as_deref().unwrap_or("")
    }

    pub fn leaf_by_name(&self, name: &str) -> Option<LeafId> {
        (0..self.leaves.len()).find(|&l| self.leaf_name(l) == name)
    }

    /// Minimax values of every node, indexed by node id.
    pub fn values(&self, means: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.nodes.len()];
        for s in (0..self.nodes.len()).rev() {
            let node = &self.nodes[s];
            v[s] = match (node.leaf, node.label) {
                (Some(l), _) => means[l],
                (None, Some(NodeLabel::Max)) => node
                    .children
                    .iter()
                    .map(|&c| v[c])
                    .fold(f64::NEG_INFINITY, f64::max),
                (None, Some(NodeLabel::Min)) => node
                    .children
                    .iter()
                    .map(|&c| v[c])
                    .fold(f64::INFINITY, f64::min),
                (None, None) => unreachable!("validated tree"),
            };
        }
        v
    }

    pub fn value(&self, s: NodeId, means: &[f64]) -> Result<f64> {
        let node = self.node(s)?;
        self.check_means(means)?;
        Ok(match (node.leaf, node.label) {
            (Some(l), _) => means[l],
            (None, Some(NodeLabel::Max)) => {
                let mut best = f64::NEG_INFINITY;
                for &c in &node.children {
                    best = best.max(self.value(c, means)?);
                }
                best
            }
            (None, Some(NodeLabel::Min)) => {
                let mut best = f64::INFINITY;
                for &c in &node.children {
                    best = best.min(self.value(c, means)?);
                }
                best
            }
            (None, None) => unreachable!("validated tree"),
        })
    }

    pub fn answer(&self, s: NodeId, means: &[f64], theta: f64) -> Result<Answer> {
        Ok(Answer::from_value(self.value(s, means)?, theta))
    }

    /// Children of `s` whose value is at least `theta`, in document order.
    pub fn good_children(&self, s: NodeId, means: &[f64], theta: f64) -> Result<Vec<NodeId>> {
        let node = self.node(s)?;
        if node.is_leaf() {
            return Err(Error::LeafNode(s));
        }
        let mut good = Vec::new();
        for &c in &node.children {
            if self.value(c, means)? >= theta {
                good.push(c);
            }
        }
        Ok(good)
    }

    fn check_means(&self, means: &[f64]) -> Result<()> {
        if means.len() != self.leaves.len() {
            return Err(Error::Domain(format!(
                "expected {} leaf means, got {}",
                self.leaves.len(),
                means.len()
            )));
        }
        Ok(())
    }
}

fn syntax(e: serde_json::Error) -> Error {
    Error::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn parse_tree(text: &str) -> Result<GameTree> {
    let file: TreeFile = serde_json::from_str(text).map_err(syntax)?;
    GameTree::from_doc(&file.root)
}

pub fn serialize_tree(tree: &GameTree) -> String {
    let file = TreeFile {
        root: tree.to_doc(),
    };
    serde_json::to_string_pretty(&file).expect("tree documents always serialize")
}

/// Parses a means document (leaf name to real) into a vector indexed by leaf id.
pub fn parse_leaf_map(tree: &GameTree, text: &str) -> Result<Vec<f64>> {
    let map: std::collections::BTreeMap<String, f64> =
        serde_json::from_str(text).map_err(syntax)?;
    let mut out = vec![f64::NAN; tree.num_leaves()];
    for (name, v) in &map {
        let l = tree
            .leaf_by_name(name)
            .ok_or_else(|| Error::Domain(format!("unknown leaf {name:?}")))?;
        out[l] = *v;
    }
    if let Some(l) = out.iter().position(|v| v.is_nan()) {
        return Err(Error::Domain(format!(
            "missing value for leaf {:?}",
            tree.leaf_name(l)
        )));
    }
    Ok(out)
}

pub fn serialize_leaf_map(tree: &GameTree, values: &[f64]) -> String {
    let map: serde_json::Map<String, serde_json::Value> = (0..tree.num_leaves())
        .map(|l| (tree.leaf_name(l).to_string(), serde_json::json!(values[l])))
        .collect();
    serde_json::to_string_pretty(&map).expect("leaf maps always serialize")
}
