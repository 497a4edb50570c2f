//! Equilibrium constructions on a finite scenario tree: the stopping map
//! `F`, the backward induction solution, the naive chain and the
//! sophisticated time.
//!
//! `F(ρ)` stops, on each path, at the first node `v` strictly before ρ whose
//! immediate value `J(v; v)` strictly beats every stopping time in the band
//! `(time(v), ρ]`, and at ρ when there is none.
//!
//! On a finite tree the smallest family that contains the horizon and is
//! closed under `F` and under infima of chains is the orbit
//! `T ≥ F(T) ≥ F²(T) ≥ …`: the orbit is a decreasing chain in a finite
//! lattice, so it reaches a fixed point after finitely many steps, and the
//! infimum of any subchain is one of its own elements. [`delimiting_chain`]
//! therefore returns the distinct orbit elements.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::pref::{self, PrefError, PreferenceFlow, SupBand, SupMethod};
use crate::scalar::Scalar;
use crate::stopping::{self, StopError, StoppingTime, DEFAULT_ENUM_CAP};
use crate::tree::{NodeId, ScenarioTree, TreeError};

/// Tie-breaking rule. `Later` only stops when stopping is strictly better;
/// `Earlier` also stops on ties.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Hash)]
pub enum Principle {
    #[default]
    Later,
    Earlier,
}

impl Principle {
    pub fn prefers_stop(self, immediate: &Scalar, alternative: &Scalar) -> bool {
        match self {
            Principle::Later => immediate.gt(alternative),
            Principle::Earlier => immediate.ge(alternative),
        }
    }
}

impl fmt::Display for Principle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Principle::Later => "later",
            Principle::Earlier => "earlier",
        })
    }
}

impl std::str::FromStr for Principle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "later" => Ok(Principle::Later),
            "earlier" => Ok(Principle::Earlier),
            _ => Err(format!("unknown principle '{s}', expected later or earlier")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EngineConfig {
    pub principle: Principle,
    pub enum_cap: u128,
    pub max_iter: usize,
    pub sup: SupMethod,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { principle: Principle::Later, enum_cap: DEFAULT_ENUM_CAP, max_iter: 10_000, sup: SupMethod::Auto }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Pref(#[from] PrefError),
    #[error("backward induction needs a tree whose nodes at equal depth share a time")]
    NotLeveled,
    #[error("naive chain did not reach a fixed point within {0} iterations")]
    CapReached(usize),
    #[error("{0} is not a time of the tree")]
    NotALevel(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("internal check failed: {0}")]
    Check(String),
}

impl From<StopError> for EngineError {
    fn from(e: StopError) -> Self {
        EngineError::Pref(PrefError::Stop(e))
    }
}

impl EngineError {
    pub fn is_overflow(&self) -> bool {
        matches!(self, EngineError::Pref(PrefError::Stop(StopError::Overflow { .. })))
    }
}

/// A node where immediate stopping beat the band supremum.
#[derive(Clone, Debug)]
pub struct Domination {
    pub node: NodeId,
    pub band: SupBand,
}

fn band(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    v: NodeId,
    rho: &StoppingTime,
    cfg: &EngineConfig,
) -> Result<SupBand, EngineError> {
    Ok(pref::sup_band(flow, tree, v, rho, cfg.enum_cap, cfg.sup)?)
}

/// `F(ρ)` together with the nodes that triggered a stop.
pub fn f_map_detailed(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    rho: &StoppingTime,
    cfg: &EngineConfig,
) -> Result<(StoppingTime, Vec<Domination>), EngineError> {
    if rho.tree_fingerprint() != tree.fingerprint() {
        return Err(StopError::TreeMismatch.into());
    }
    let mut stops = Vec::new();
    let mut hits = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(u) = stack.pop() {
        if rho.contains(u) {
            stops.push(u);
            continue;
        }
        let b = band(tree, flow, u, rho, cfg)?;
        if cfg.principle.prefers_stop(&b.immediate, &b.value) {
            stops.push(u);
            hits.push(Domination { node: u, band: b });
        } else {
            stack.extend(tree.children(u).iter().rev());
        }
    }
    stops.sort();
    hits.sort_by_key(|d| d.node);
    Ok((StoppingTime::canonical(tree, stops)?, hits))
}

pub fn f_map(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    rho: &StoppingTime,
    cfg: &EngineConfig,
) -> Result<StoppingTime, EngineError> {
    Ok(f_map_detailed(tree, flow, rho, cfg)?.0)
}

#[derive(Clone, Debug)]
pub struct Approachability {
    pub approachable: bool,
    /// Earliest node (by time, then id) at which stopping dominates.
    pub witness: Option<Domination>,
}

pub fn is_approachable(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    tau: &StoppingTime,
    cfg: &EngineConfig,
) -> Result<Approachability, EngineError> {
    let (image, hits) = f_map_detailed(tree, flow, tau, cfg)?;
    let witness = hits.into_iter().min_by(|a, b| {
        tree.time(a.node).cmp_tol(&tree.time(b.node)).then(a.node.cmp(&b.node))
    });
    Ok(Approachability { approachable: image == *tau, witness })
}

/// Per-node backward induction solutions, each stored as its stop nodes
/// inside the node's subtree.
#[derive(Clone, Debug, PartialEq)]
pub struct BisFamily {
    local: Vec<Vec<NodeId>>,
}

impl BisFamily {
    pub fn local(&self, v: NodeId) -> &[NodeId] {
        &self.local[v.index()]
    }

    /// τ^b_v as a stopping time on the whole tree (leaves off subtree(v)).
    pub fn full(&self, tree: &ScenarioTree, v: NodeId) -> StoppingTime {
        StoppingTime::at_leaves(tree).paste(tree, v, self.local(v))
    }

    pub fn root(&self, tree: &ScenarioTree) -> StoppingTime {
        self.full(tree, tree.root())
    }
}

fn require_leveled(tree: &ScenarioTree) -> Result<(), EngineError> {
    tree.level_times().map(|_| ()).ok_or(EngineError::NotLeveled)
}

fn local_value(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    v: NodeId,
    local: &[NodeId],
) -> Result<Scalar, EngineError> {
    let tau = StoppingTime::at_leaves(tree).paste(tree, v, local);
    Ok(flow.evaluate(tree, &tau, v)?)
}

/// Backward induction: at each node compare stopping now with the pasted
/// solutions of the children.
pub fn bis(tree: &ScenarioTree, flow: &dyn PreferenceFlow, cfg: &EngineConfig) -> Result<BisFamily, EngineError> {
    require_leveled(tree)?;
    let mut local: Vec<Vec<NodeId>> = vec![Vec::new(); tree.len()];
    // Children carry larger breadth-first ids than their parent.
    for v in (0..tree.len()).rev().map(NodeId) {
        if tree.node(v).is_leaf() {
            local[v.index()] = vec![v];
            continue;
        }
        let mut cont: Vec<NodeId> = tree.children(v).iter().flat_map(|c| local[c.index()].iter().copied()).collect();
        cont.sort();
        let now = pref::immediate(flow, tree, v)?;
        let later = local_value(tree, flow, v, &cont)?;
        local[v.index()] = if cfg.principle.prefers_stop(&now, &later) { vec![v] } else { cont };
    }
    Ok(BisFamily { local })
}

/// The same family through the iterative form: τ_v is the earlier of the
/// continuation and the first node at or after `v` where stopping beats
/// the continuation planned from there.
pub fn bis_iterative(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    cfg: &EngineConfig,
) -> Result<BisFamily, EngineError> {
    require_leveled(tree)?;
    let n = tree.len();
    let mut tau: Vec<Option<StoppingTime>> = vec![None; n];
    let mut stops_here = vec![false; n];
    for v in (0..n).rev().map(NodeId) {
        if tree.node(v).is_leaf() {
            tau[v.index()] = Some(StoppingTime::at_node(tree, v));
            continue;
        }
        // Continuation: the children's solutions glued together.
        let mut cont = StoppingTime::at_leaves(tree);
        for &c in tree.children(v) {
            let child = tau[c.index()].as_ref().expect("children first");
            cont = cont.paste(tree, c, &child.restricted(tree, c));
        }
        let now = pref::immediate(flow, tree, v)?;
        let later = flow.evaluate(tree, &cont, v)?;
        stops_here[v.index()] = cfg.principle.prefers_stop(&now, &later);
        // First stopping node along every path from v.
        let mut hit = Vec::new();
        for leaf in tree.leaves_under(v) {
            let mut path: Vec<NodeId> = std::iter::once(leaf).chain(tree.ancestors(leaf)).collect();
            path.reverse();
            let start = path.iter().position(|&u| u == v).expect("leaf below v");
            let first = path[start..]
                .iter()
                .copied()
                .find(|&u| !tree.node(u).is_leaf() && stops_here[u.index()])
                .unwrap_or(leaf);
            hit.push(first);
        }
        let hit = StoppingTime::canonical(tree, hit.into_iter().chain(off_subtree_leaves(tree, v)))?;
        tau[v.index()] = Some(stopping::meet(tree, &hit, &cont)?);
    }
    let local = tau.into_iter().enumerate().map(|(i, t)| t.expect("all nodes").restricted(tree, NodeId(i))).collect();
    Ok(BisFamily { local })
}

fn off_subtree_leaves(tree: &ScenarioTree, v: NodeId) -> impl Iterator<Item = NodeId> + '_ {
    tree.leaves().iter().copied().filter(move |&l| !tree.is_ancestor_or_self(v, l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainStatus {
    FixedPoint,
    CapReached,
}

impl fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChainStatus::FixedPoint => "fixed_point",
            ChainStatus::CapReached => "cap_reached",
        })
    }
}

/// `ρ⁰ = T, ρⁿ = F(ρⁿ⁻¹)`. When a fixed point is reached the repeated
/// element is kept as the last entry.
#[derive(Clone, Debug)]
pub struct NaiveChain {
    pub elements: Vec<StoppingTime>,
    pub status: ChainStatus,
}

impl NaiveChain {
    pub fn last(&self) -> &StoppingTime {
        self.elements.last().expect("chain starts at the horizon")
    }

    /// Number of applications of F.
    pub fn steps(&self) -> usize {
        self.elements.len() - 1
    }
}

pub fn naive_chain(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    cfg: &EngineConfig,
) -> Result<NaiveChain, EngineError> {
    let mut elements = vec![StoppingTime::at_leaves(tree)];
    for _ in 0..cfg.max_iter {
        let next = f_map(tree, flow, elements.last().unwrap(), cfg)?;
        let done = next == *elements.last().unwrap();
        elements.push(next);
        if done {
            return Ok(NaiveChain { elements, status: ChainStatus::FixedPoint });
        }
    }
    Ok(NaiveChain { elements, status: ChainStatus::CapReached })
}

/// Limit of the naive chain; checked to be approachable.
pub fn sophisticated(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    cfg: &EngineConfig,
) -> Result<StoppingTime, EngineError> {
    let chain = naive_chain(tree, flow, cfg)?;
    if chain.status == ChainStatus::CapReached {
        return Err(EngineError::CapReached(cfg.max_iter));
    }
    let tau = chain.last().clone();
    if !is_approachable(tree, flow, &tau, cfg)?.approachable {
        return Err(EngineError::Check("chain limit is not approachable".into()));
    }
    Ok(tau)
}

/// Join of every approachable stopping time, found by enumerating the whole
/// lattice.
pub fn sophisticated_bruteforce(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    cfg: &EngineConfig,
) -> Result<StoppingTime, EngineError> {
    let all = stopping::enumerate_all(tree, &StoppingTime::at_leaves(tree), cfg.enum_cap)?;
    let mut best = StoppingTime::at_root(tree);
    for tau in all {
        if f_map(tree, flow, &tau, cfg)? == tau {
            best = stopping::join(tree, &best, &tau)?;
        }
    }
    if !is_approachable(tree, flow, &best, cfg)?.approachable {
        return Err(EngineError::Check("join of approachable times is not approachable".into()));
    }
    Ok(best)
}

/// Distinct elements of the naive chain, latest first. The last element is
/// the sophisticated time.
pub fn delimiting_chain(
    tree: &ScenarioTree,
    flow: &dyn PreferenceFlow,
    cfg: &EngineConfig,
) -> Result<Vec<StoppingTime>, EngineError> {
    let chain = naive_chain(tree, flow, cfg)?;
    if chain.status == ChainStatus::CapReached {
        return Err(EngineError::CapReached(cfg.max_iter));
    }
    let mut out = chain.elements;
    out.dedup();
    for w in out.windows(2) {
        if !stopping::le(tree, &w[1], &w[0])? {
            return Err(EngineError::Check("delimiting chain is not decreasing".into()));
        }
    }
    if !is_approachable(tree, flow, out.last().unwrap(), cfg)?.approachable {
        return Err(EngineError::Check("smallest delimiting time is not approachable".into()));
    }
    Ok(out)
}

/// Tree cut at time `t`, plus the original id of every kept node. Preference
/// flows read decision times off the nodes, so they carry over unchanged.
pub fn truncate_horizon(tree: &ScenarioTree, t: Scalar) -> Result<(ScenarioTree, Vec<NodeId>), EngineError> {
    if !tree.distinct_times().iter().any(|s| s.cmp_tol(&t) == Ordering::Equal) {
        return Err(EngineError::NotALevel(t.to_string()));
    }
    Ok(tree.truncate(t)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::pref::{ModelFlow, PrefEntry, PrefKind, Selector};
    use crate::tree;

    fn line(n: i64) -> ScenarioTree {
        tree::line(&(0..=n).map(Scalar::int).collect::<Vec<_>>()).unwrap()
    }

    fn functional(pairs: &[(i64, &str)]) -> ModelFlow {
        ModelFlow::new(
            pairs
                .iter()
                .map(|(t, f)| PrefEntry {
                    selector: Selector::At(Scalar::int(*t)),
                    kind: PrefKind::Functional(Expr::parse(f).unwrap()),
                })
                .collect(),
        )
        .unwrap()
    }

    fn first_example() -> (ScenarioTree, ModelFlow) {
        let flow = functional(&[
            (0, "5 - |tau - 1|"),
            (1, "tau"),
            (2, "tau"),
            (3, "tau"),
            (4, "5 - tau"),
            (5, "5 - tau"),
        ]);
        (line(5), flow)
    }

    fn time_of(t: &ScenarioTree, s: &StoppingTime) -> f64 {
        s.deterministic_time(t).unwrap()
    }

    #[test]
    fn first_example_bis_and_chain() {
        let (t, flow) = first_example();
        let cfg = EngineConfig::default();
        let b = bis(&t, &flow, &cfg).unwrap();
        let times: Vec<f64> = (0..6).rev().map(|i| time_of(&t, &b.full(&t, NodeId(i)))).collect();
        assert_eq!(times, vec![5.0, 4.0, 4.0, 4.0, 4.0, 0.0]);
        assert_eq!(bis_iterative(&t, &flow, &cfg).unwrap(), b);

        let chain = naive_chain(&t, &flow, &cfg).unwrap();
        let ct: Vec<f64> = chain.elements.iter().map(|s| time_of(&t, s)).collect();
        assert_eq!(ct, vec![5.0, 4.0, 4.0]);
        assert_eq!(chain.status, ChainStatus::FixedPoint);
        let soph = sophisticated(&t, &flow, &cfg).unwrap();
        assert_eq!(time_of(&t, &soph), 4.0);
        assert_eq!(sophisticated_bruteforce(&t, &flow, &cfg).unwrap(), soph);
        let d = delimiting_chain(&t, &flow, &cfg).unwrap();
        assert_eq!(d.iter().map(|s| time_of(&t, s)).collect::<Vec<_>>(), vec![5.0, 4.0]);

        let at5 = StoppingTime::at_leaves(&t);
        let a = is_approachable(&t, &flow, &at5, &cfg).unwrap();
        assert!(!a.approachable);
        let w = a.witness.unwrap();
        assert_eq!(t.node(w.node).t(), 4.0);
        assert_eq!(w.band.value, Scalar::ZERO);
        assert!(is_approachable(&t, &flow, &StoppingTime::at_root(&t), &cfg).unwrap().approachable);
    }

    #[test]
    fn time_consistent_flow_is_fixed() {
        let t = line(5);
        let flow = ModelFlow::new(vec![PrefEntry {
            selector: Selector::Default,
            kind: PrefKind::Functional(Expr::parse("tau").unwrap()),
        }])
        .unwrap();
        let cfg = EngineConfig::default();
        let chain = naive_chain(&t, &flow, &cfg).unwrap();
        assert_eq!(chain.elements.len(), 2);
        assert_eq!(*chain.last(), StoppingTime::at_leaves(&t));
        assert_eq!(bis(&t, &flow, &cfg).unwrap().root(&t), StoppingTime::at_leaves(&t));
        assert_eq!(delimiting_chain(&t, &flow, &cfg).unwrap(), vec![StoppingTime::at_leaves(&t)]);
        for s in 0..=5 {
            let rho = StoppingTime::at_time(&t, s as f64);
            assert_eq!(f_map(&t, &flow, &rho, &cfg).unwrap(), rho);
        }
    }

    #[test]
    fn bis_needs_levels() {
        let mut b = tree::TreeBuilder::new();
        b.root("r", Scalar::ZERO, vec![])
            .child("a", "r", Scalar::ratio(1, 2), Scalar::ONE, vec![])
            .child("b", "r", Scalar::ratio(1, 2), Scalar::int(2), vec![])
            .child("c", "a", Scalar::ONE, Scalar::int(2), vec![]);
        let t = b.build().unwrap();
        let flow = functional(&[(0, "tau"), (1, "tau"), (2, "tau")]);
        let cfg = EngineConfig::default();
        assert_eq!(bis(&t, &flow, &cfg).unwrap_err(), EngineError::NotLeveled);
        // The chain does not care.
        assert!(sophisticated(&t, &flow, &cfg).is_ok());
    }

    #[test]
    fn truncation_at_horizon_is_identity() {
        let t = line(5);
        let (u, map) = truncate_horizon(&t, Scalar::int(5)).unwrap();
        assert_eq!(u.len(), t.len());
        assert_eq!(map, t.ids().collect::<Vec<_>>());
        assert!(truncate_horizon(&t, Scalar::ratio(1, 2)).is_err());
    }
}
