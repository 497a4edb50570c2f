//! Finite scenario trees: the filtration of a discrete problem, one node per
//! information state.
//!
//! Node identifiers are assigned breadth-first from the root, children in
//! insertion order, so enumeration order (and everything printed from it) is
//! reproducible.

use std::collections::hash_map::DefaultHasher;
use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::scalar::Scalar;

/// Tolerance for checking that inexact child probabilities sum to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub time: Scalar,
    pub state: Vec<Scalar>,
    pub parent: Option<NodeId>,
    /// Transition probability from the parent; one at the root.
    pub prob: Scalar,
    pub children: Vec<NodeId>,
    pub depth: usize,
}

impl Node {
    pub fn t(&self) -> f64 {
        self.time.to_f64()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("tree has no root node")]
    NoRoot,
    #[error("tree has more than one root ({0} and {1})")]
    MultipleRoots(String, String),
    #[error("duplicate node label `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` refers to unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("node `{0}` is not reachable from the root")]
    Unreachable(String),
    #[error("node `{node}` has transition probability {prob} outside (0, 1]")]
    InvalidProbability { node: String, prob: f64 },
    #[error("child probabilities of node `{node}` sum to {sum}, not 1")]
    ProbabilitySum { node: String, sum: f64 },
    #[error("time does not increase from node `{parent}` (t={parent_time}) to child `{child}` (t={child_time})")]
    NonIncreasingTime { parent: String, child: String, parent_time: f64, child_time: f64 },
    #[error("leaves have different time stamps ({0} and {1})")]
    UnequalLeafTimes(f64, f64),
}

/// A node description before validation. Labels are arbitrary strings; the
/// built tree renumbers nodes breadth-first.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeSpec {
    pub label: String,
    pub parent: Option<String>,
    pub prob: Scalar,
    pub time: Scalar,
    pub state: Vec<Scalar>,
}

#[derive(Default, Clone, Debug)]
pub struct TreeBuilder {
    specs: Vec<NodeSpec>,
}

impl TreeBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&mut self, label: impl Into<String>, time: Scalar, state: Vec<Scalar>) -> &mut Self {
        self.specs.push(NodeSpec { label: label.into(), parent: None, prob: Scalar::ONE, time, state });
        self
    }

    pub fn child(
        &mut self,
        label: impl Into<String>,
        parent: impl Into<String>,
        prob: Scalar,
        time: Scalar,
        state: Vec<Scalar>,
    ) -> &mut Self {
        self.specs.push(NodeSpec { label: label.into(), parent: Some(parent.into()), prob, time, state });
        self
    }

    pub fn push(&mut self, spec: NodeSpec) -> &mut Self {
        self.specs.push(spec);
        self
    }

    pub fn build(&self) -> Result<ScenarioTree, TreeError> {
        ScenarioTree::from_specs(&self.specs)
    }
}

#[derive(Clone, Debug)]
pub struct ScenarioTree {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
    labels: Vec<String>,
    /// Euler-tour entry/exit indices for O(1) ancestor queries.
    tin: Vec<usize>,
    tout: Vec<usize>,
    fingerprint: u64,
}

impl ScenarioTree {
    pub fn from_specs(specs: &[NodeSpec]) -> Result<Self, TreeError> {
        if specs.is_empty() {
            return Err(TreeError::Empty);
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, s) in specs.iter().enumerate() {
            if index.insert(s.label.as_str(), i).is_some() {
                return Err(TreeError::DuplicateNode(s.label.clone()));
            }
        }
        let mut root: Option<usize> = None;
        let mut kids: Vec<Vec<usize>> = vec![Vec::new(); specs.len()];
        for (i, s) in specs.iter().enumerate() {
            match &s.parent {
                None => {
                    if let Some(r) = root {
                        return Err(TreeError::MultipleRoots(specs[r].label.clone(), s.label.clone()));
                    }
                    root = Some(i);
                }
                Some(p) => {
                    let &pi = index.get(p.as_str()).ok_or_else(|| TreeError::UnknownParent {
                        node: s.label.clone(),
                        parent: p.clone(),
                    })?;
                    kids[pi].push(i);
                }
            }
        }
        let root = root.ok_or(TreeError::NoRoot)?;

        // Breadth-first renumbering; anything unvisited is unreachable (this
        // also rules out parent cycles, which can never touch the root).
        let mut order = Vec::with_capacity(specs.len());
        let mut new_id = vec![usize::MAX; specs.len()];
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            new_id[i] = order.len();
            order.push(i);
            queue.extend(kids[i].iter().copied());
        }
        if let Some(i) = new_id.iter().position(|&n| n == usize::MAX) {
            return Err(TreeError::Unreachable(specs[i].label.clone()));
        }

        let mut nodes: Vec<Node> = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for &i in &order {
            let s = &specs[i];
            let parent = s.parent.as_ref().map(|p| NodeId(new_id[index[p.as_str()]]));
            let depth = parent.map_or(0, |p| nodes[p.0].depth + 1);
            let prob = if parent.is_none() { Scalar::ONE } else { s.prob };
            let pf = prob.to_f64();
            if parent.is_some() && !(pf > 0.0 && pf <= 1.0 + PROB_SUM_TOL) {
                return Err(TreeError::InvalidProbability { node: s.label.clone(), prob: pf });
            }
            nodes.push(Node {
                id: NodeId(nodes.len()),
                time: s.time,
                state: s.state.clone(),
                parent,
                prob,
                children: kids[i].iter().map(|&k| NodeId(new_id[k])).collect(),
                depth,
            });
            labels.push(s.label.clone());
        }

        for n in &nodes {
            if n.children.is_empty() {
                continue;
            }
            let sum: Scalar = n.children.iter().map(|c| nodes[c.0].prob).sum();
            let ok = match sum.as_rational() {
                Some(r) => r == crate::scalar::Rational::from_integer(1),
                None => (sum.to_f64() - 1.0).abs() <= PROB_SUM_TOL,
            };
            if !ok {
                return Err(TreeError::ProbabilitySum { node: labels[n.id.0].clone(), sum: sum.to_f64() });
            }
            for c in &n.children {
                let child = &nodes[c.0];
                if !child.time.gt(&n.time) {
                    return Err(TreeError::NonIncreasingTime {
                        parent: labels[n.id.0].clone(),
                        child: labels[c.0].clone(),
                        parent_time: n.t(),
                        child_time: child.t(),
                    });
                }
            }
        }

        let leaves: Vec<NodeId> = nodes.iter().filter(|n| n.is_leaf()).map(|n| n.id).collect();
        let first = &nodes[leaves[0].0];
        for l in &leaves[1..] {
            let leaf = &nodes[l.0];
            if !leaf.time.tol_eq(&first.time) {
                return Err(TreeError::UnequalLeafTimes(first.t(), leaf.t()));
            }
        }

        let mut tree = ScenarioTree { nodes, leaves, labels, tin: Vec::new(), tout: Vec::new(), fingerprint: 0 };
        tree.index_tour();
        tree.fingerprint = tree.compute_fingerprint();
        Ok(tree)
    }

    fn index_tour(&mut self) {
        let n = self.nodes.len();
        self.tin = vec![0; n];
        self.tout = vec![0; n];
        let mut clock = 0;
        let mut stack = vec![(0usize, false)];
        while let Some((u, done)) = stack.pop() {
            if done {
                self.tout[u] = clock;
                continue;
            }
            self.tin[u] = clock;
            clock += 1;
            stack.push((u, true));
            for c in self.nodes[u].children.iter().rev() {
                stack.push((c.0, false));
            }
        }
    }

    fn compute_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for n in &self.nodes {
            n.parent.map(|p| p.0).hash(&mut h);
            n.t().to_bits().hash(&mut h);
            n.prob.to_f64().to_bits().hash(&mut h);
        }
        h.finish()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn time(&self, id: NodeId) -> Scalar {
        self.nodes[id.0].time
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id.0]
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Terminal time T shared by all leaves.
    pub fn horizon(&self) -> Scalar {
        self.nodes[self.leaves[0].0].time
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// True when `a` lies on the root path of `b` (including `a == b`).
    pub fn is_ancestor_or_self(&self, a: NodeId, b: NodeId) -> bool {
        self.tin[a.0] <= self.tin[b.0] && self.tout[b.0] <= self.tout[a.0]
    }

    pub fn is_strict_ancestor(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.is_ancestor_or_self(a, b)
    }

    /// Strict ancestors of `id`, nearest first.
    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.parent(id), move |&p| self.parent(p))
    }

    /// Nodes of the subtree rooted at `id`, in breadth-first (id) order.
    pub fn subtree(&self, id: NodeId) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self.ids().filter(|&n| self.is_ancestor_or_self(id, n)).collect();
        out.sort();
        out
    }

    pub fn leaves_under(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.leaves.iter().copied().filter(move |&l| self.is_ancestor_or_self(id, l))
    }

    /// Leveled trees have every node at depth `d` sharing one time stamp,
    /// and all leaves at the same depth. Returns the level times.
    pub fn level_times(&self) -> Option<Vec<Scalar>> {
        let mut times: Vec<Scalar> = Vec::new();
        for n in &self.nodes {
            match times.get(n.depth) {
                Some(t) if !t.tol_eq(&n.time) => return None,
                Some(_) => {}
                None => times.push(n.time),
            }
        }
        let depth = self.nodes[self.leaves[0].0].depth;
        if self.leaves.iter().any(|l| self.nodes[l.0].depth != depth) {
            return None;
        }
        Some(times)
    }

    /// Distinct node times in increasing order.
    pub fn distinct_times(&self) -> Vec<Scalar> {
        let mut times: Vec<Scalar> = self.nodes.iter().map(|n| n.time).collect();
        times.sort_by(|a, b| a.cmp_tol(b));
        times.dedup_by(|a, b| a.tol_eq(b));
        times
    }

    /// Keeps only nodes with time at or before `t`; nodes at `t` become the
    /// new leaves. Returns the truncated tree and, for each new node id, the
    /// id it had in `self`.
    pub fn truncate(&self, t: Scalar) -> Result<(ScenarioTree, Vec<NodeId>), TreeError> {
        let specs: Vec<NodeSpec> = self
            .nodes
            .iter()
            .filter(|n| !n.time.gt(&t))
            .map(|n| NodeSpec {
                label: self.labels[n.id.0].clone(),
                parent: n.parent.map(|p| self.labels[p.0].clone()),
                prob: n.prob,
                time: n.time,
                state: n.state.clone(),
            })
            .collect();
        let tree = ScenarioTree::from_specs(&specs)?;
        let by_label: HashMap<&str, NodeId> = self.ids().map(|id| (self.label(id), id)).collect();
        let map = tree.ids().map(|id| by_label[tree.label(id)]).collect();
        Ok((tree, map))
    }

    /// Node specs with labels equal to the breadth-first ids; used to print
    /// a tree back in explicit form.
    pub fn to_specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                label: n.id.to_string(),
                parent: n.parent.map(|p| p.to_string()),
                prob: n.prob,
                time: n.time,
                state: n.state.clone(),
            })
            .collect()
    }
}

/// Deterministic line: one node per time, a single path.
pub fn line(times: &[Scalar]) -> Result<ScenarioTree, TreeError> {
    let mut b = TreeBuilder::new();
    for (i, &t) in times.iter().enumerate() {
        if i == 0 {
            b.root("0", t, vec![t]);
        } else {
            b.child(i.to_string(), (i - 1).to_string(), Scalar::ONE, t, vec![t]);
        }
    }
    b.build()
}

/// Non-recombining random walk: each node branches into `moves.len()`
/// children with the given probabilities, the state moving by the matching
/// increment over a step of length `dt`.
pub fn walk(
    depth: usize,
    moves: &[Scalar],
    probs: &[Scalar],
    x0: Scalar,
    dt: Scalar,
) -> Result<ScenarioTree, TreeError> {
    assert_eq!(moves.len(), probs.len(), "moves and probabilities differ in length");
    let mut b = TreeBuilder::new();
    b.root("r", Scalar::ZERO, vec![x0]);
    let mut frontier = vec![("r".to_string(), x0)];
    for level in 1..=depth {
        let t = dt * Scalar::int(level as i64);
        let mut next = Vec::with_capacity(frontier.len() * moves.len());
        for (label, x) in &frontier {
            for (k, (&m, &p)) in moves.iter().zip(probs).enumerate() {
                let child = format!("{label}.{k}");
                let y = *x + m;
                b.child(child.clone(), label.clone(), p, t, vec![y]);
                next.push((child, y));
            }
        }
        frontier = next;
    }
    b.build()
}

pub fn binomial(depth: usize, p: Scalar, up: Scalar, down: Scalar, x0: Scalar, dt: Scalar) -> Result<ScenarioTree, TreeError> {
    walk(depth, &[up, down], &[p, Scalar::ONE - p], x0, dt)
}
