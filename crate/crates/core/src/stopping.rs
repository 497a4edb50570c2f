//! Stopping times on a scenario tree, stored as stop regions.
//!
//! A stopping time is the set of nodes at which the player stops: an
//! antichain that meets every root-to-leaf path exactly once. Because the
//! region is a set of nodes, adaptedness holds by construction, and because
//! times strictly increase along paths the region determined by a stopping
//! time is unique, so equality of stop sets is equality of stopping times.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::tree::{NodeId, ScenarioTree};

/// Default bound on the number of stopping times a brute-force enumeration
/// may produce.
pub const DEFAULT_ENUM_CAP: u128 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StopError {
    #[error("stopping times belong to different trees")]
    TreeMismatch,
    #[error("node {0} does not exist in the tree")]
    UnknownNode(NodeId),
    #[error("stop set is not an antichain: node {ancestor} precedes node {descendant}")]
    NotAntichain { ancestor: NodeId, descendant: NodeId },
    #[error("stop set misses the path ending at leaf {0}")]
    Uncovered(NodeId),
    #[error("band is empty: node {0} is at or after the bounding stopping time")]
    EmptyBand(NodeId),
    #[error("enumeration would produce {count} stopping times, above the cap of {cap}")]
    Overflow { count: u128, cap: u128 },
}

/// Result of comparing two stopping times pathwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathOrder {
    Eq,
    /// `τ1 ≤ τ2` on every path and the two differ.
    Leq,
    Geq,
    Incomparable,
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct StoppingTime {
    tree: u64,
    stops: Vec<NodeId>,
}

impl fmt::Debug for StoppingTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.stops.iter().map(|n| n.0)).finish()
    }
}

impl StoppingTime {
    /// Validates an exact stop region: an antichain covering every path.
    pub fn new(tree: &ScenarioTree, nodes: impl IntoIterator<Item = NodeId>) -> Result<Self, StopError> {
        let mut stops: Vec<NodeId> = nodes.into_iter().collect();
        stops.sort();
        stops.dedup();
        if let Some(&bad) = stops.iter().find(|n| !tree.contains(**n)) {
            return Err(StopError::UnknownNode(bad));
        }
        for &s in &stops {
            if let Some(a) = tree.ancestors(s).find(|a| stops.binary_search(a).is_ok()) {
                return Err(StopError::NotAntichain { ancestor: a, descendant: s });
            }
        }
        let st = StoppingTime { tree: tree.fingerprint(), stops };
        for &leaf in tree.leaves() {
            if st.stop_on_path(tree, leaf).is_none() {
                return Err(StopError::Uncovered(leaf));
            }
        }
        Ok(st)
    }

    /// Reduces an arbitrary node set that meets every path to its minimal
    /// elements: on each path, the first listed node.
    pub fn canonical(tree: &ScenarioTree, nodes: impl IntoIterator<Item = NodeId>) -> Result<Self, StopError> {
        let mut set: Vec<NodeId> = nodes.into_iter().collect();
        set.sort();
        set.dedup();
        if let Some(&bad) = set.iter().find(|n| !tree.contains(**n)) {
            return Err(StopError::UnknownNode(bad));
        }
        let minimal: Vec<NodeId> = set
            .iter()
            .copied()
            .filter(|&n| !tree.ancestors(n).any(|a| set.binary_search(&a).is_ok()))
            .collect();
        StoppingTime::new(tree, minimal)
    }

    pub(crate) fn from_sorted_unchecked(tree: &ScenarioTree, stops: Vec<NodeId>) -> Self {
        debug_assert!(stops.windows(2).all(|w| w[0] < w[1]));
        StoppingTime { tree: tree.fingerprint(), stops }
    }

    pub fn at_root(tree: &ScenarioTree) -> Self {
        StoppingTime { tree: tree.fingerprint(), stops: vec![tree.root()] }
    }

    pub fn at_leaves(tree: &ScenarioTree) -> Self {
        StoppingTime { tree: tree.fingerprint(), stops: tree.leaves().to_vec() }
    }

    /// Deterministic time: on each path the first node with time at or after
    /// `t`, or the leaf when the path ends earlier.
    pub fn at_time(tree: &ScenarioTree, t: f64) -> Self {
        let stops = tree
            .ids()
            .filter(|&n| {
                let node = tree.node(n);
                let reached = node.t() >= t - 1e-12 || node.is_leaf();
                let parent_reached = node.parent.is_some_and(|p| tree.node(p).t() >= t - 1e-12);
                reached && !parent_reached
            })
            .collect();
        StoppingTime { tree: tree.fingerprint(), stops }
    }

    /// Stops at `v` and at the leaves of every path avoiding `v`. Used as
    /// "stop immediately" when evaluating from `v`.
    pub fn at_node(tree: &ScenarioTree, v: NodeId) -> Self {
        let mut stops: Vec<NodeId> =
            tree.leaves().iter().copied().filter(|&l| !tree.is_ancestor_or_self(v, l)).collect();
        stops.push(v);
        stops.sort();
        StoppingTime { tree: tree.fingerprint(), stops }
    }

    /// Replaces the part of `self` inside subtree(v) with `local`, which must
    /// be a covering antichain of subtree(v). Requires that no stop node of
    /// `self` is a strict ancestor of `v`.
    pub fn paste(&self, tree: &ScenarioTree, v: NodeId, local: &[NodeId]) -> Self {
        let mut stops: Vec<NodeId> =
            self.stops.iter().copied().filter(|&s| !tree.is_ancestor_or_self(v, s)).collect();
        stops.extend_from_slice(local);
        stops.sort();
        StoppingTime { tree: tree.fingerprint(), stops }
    }

    pub fn stops(&self) -> &[NodeId] {
        &self.stops
    }

    pub fn tree_fingerprint(&self) -> u64 {
        self.tree
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.stops.binary_search(&n).is_ok()
    }

    /// Stop nodes inside subtree(v).
    pub fn restricted(&self, tree: &ScenarioTree, v: NodeId) -> Vec<NodeId> {
        self.stops.iter().copied().filter(|&s| tree.is_ancestor_or_self(v, s)).collect()
    }

    /// True when some stop node strictly precedes `v`.
    pub fn stops_before(&self, tree: &ScenarioTree, v: NodeId) -> bool {
        tree.ancestors(v).any(|a| self.contains(a))
    }

    /// The stop node on the path ending at `leaf`.
    pub fn stop_on_path(&self, tree: &ScenarioTree, leaf: NodeId) -> Option<NodeId> {
        std::iter::once(leaf).chain(tree.ancestors(leaf)).find(|&n| self.contains(n))
    }

    /// If every stop node carries the same time, that time.
    pub fn deterministic_time(&self, tree: &ScenarioTree) -> Option<f64> {
        let t0 = tree.node(self.stops[0]).t();
        self.stops.iter().all(|&s| tree.node(s).t() == t0).then_some(t0)
    }

    /// Compact description: the time when deterministic, otherwise the stop
    /// nodes with their times.
    pub fn describe(&self, tree: &ScenarioTree) -> String {
        match self.deterministic_time(tree) {
            Some(t) => format_time(t),
            None => {
                let parts: Vec<String> =
                    self.stops.iter().map(|&s| format!("{}@{}", s, format_time(tree.node(s).t()))).collect();
                format!("{{{}}}", parts.join(" "))
            }
        }
    }

    /// Transfers a stopping time from a truncated tree to the original one
    /// through the id map returned by [`ScenarioTree::truncate`].
    pub fn lift(&self, full: &ScenarioTree, map: &[NodeId]) -> Result<Self, StopError> {
        StoppingTime::new(full, self.stops.iter().map(|s| map[s.0]))
    }

    /// CSV with columns `node_id,time,stopped`, one row per node.
    pub fn to_csv(&self, tree: &ScenarioTree) -> String {
        let mut out = String::from("node_id,time,stopped\n");
        for n in tree.nodes() {
            out.push_str(&format!("{},{},{}\n", n.id, n.time, u8::from(self.contains(n.id))));
        }
        out
    }
}

pub(crate) fn format_time(t: f64) -> String {
    if t.fract() == 0.0 && t.abs() < 1e15 {
        format!("{}", t as i64)
    } else {
        format!("{t}")
    }
}

fn same_tree(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime) -> Result<(), StopError> {
    if a.tree != tree.fingerprint() || b.tree != tree.fingerprint() {
        return Err(StopError::TreeMismatch);
    }
    Ok(())
}

/// Pathwise comparison.
pub fn order(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime) -> Result<PathOrder, StopError> {
    same_tree(tree, a, b)?;
    if a.stops == b.stops {
        return Ok(PathOrder::Eq);
    }
    let (mut le, mut ge) = (true, true);
    for &leaf in tree.leaves() {
        let sa = a.stop_on_path(tree, leaf).expect("valid stopping time");
        let sb = b.stop_on_path(tree, leaf).expect("valid stopping time");
        match tree.node(sa).depth.cmp(&tree.node(sb).depth) {
            Ordering::Less => ge = false,
            Ordering::Greater => le = false,
            Ordering::Equal => {}
        }
    }
    Ok(match (le, ge) {
        (true, true) => PathOrder::Eq,
        (true, false) => PathOrder::Leq,
        (false, true) => PathOrder::Geq,
        (false, false) => PathOrder::Incomparable,
    })
}

/// `a ≤ b` pathwise.
pub fn le(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime) -> Result<bool, StopError> {
    Ok(matches!(order(tree, a, b)?, PathOrder::Eq | PathOrder::Leq))
}

/// Pathwise maximum.
pub fn join(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime) -> Result<StoppingTime, StopError> {
    same_tree(tree, a, b)?;
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(u) = stack.pop() {
        match (a.contains(u), b.contains(u)) {
            (true, true) => out.push(u),
            (true, false) => out.extend(b.restricted(tree, u)),
            (false, true) => out.extend(a.restricted(tree, u)),
            (false, false) => stack.extend(tree.children(u).iter().copied()),
        }
    }
    out.sort();
    Ok(StoppingTime::from_sorted_unchecked(tree, out))
}

/// Pathwise minimum.
pub fn meet(tree: &ScenarioTree, a: &StoppingTime, b: &StoppingTime) -> Result<StoppingTime, StopError> {
    same_tree(tree, a, b)?;
    let mut out = Vec::new();
    let mut stack = vec![tree.root()];
    while let Some(u) = stack.pop() {
        if a.contains(u) || b.contains(u) {
            out.push(u);
        } else {
            stack.extend(tree.children(u).iter().copied());
        }
    }
    out.sort();
    Ok(StoppingTime::from_sorted_unchecked(tree, out))
}

/// Number of local stop regions of subtree(u) bounded above by `rho`,
/// allowing a stop at `u` itself. Saturates instead of overflowing.
fn count_from(tree: &ScenarioTree, u: NodeId, rho: &StoppingTime) -> u128 {
    if rho.contains(u) {
        return 1;
    }
    let inner = tree
        .children(u)
        .iter()
        .fold(1u128, |acc, &c| acc.saturating_mul(count_from(tree, c, rho)));
    inner.saturating_add(1)
}

fn check_band(tree: &ScenarioTree, v: NodeId, rho: &StoppingTime) -> Result<(), StopError> {
    if rho.tree != tree.fingerprint() {
        return Err(StopError::TreeMismatch);
    }
    if !tree.contains(v) {
        return Err(StopError::UnknownNode(v));
    }
    if rho.contains(v) || rho.stops_before(tree, v) {
        return Err(StopError::EmptyBand(v));
    }
    Ok(())
}

/// Size of the band {τ on subtree(v) : time(v) < τ ≤ ρ}.
pub fn band_count(tree: &ScenarioTree, v: NodeId, rho: &StoppingTime) -> Result<u128, StopError> {
    check_band(tree, v, rho)?;
    Ok(tree
        .children(v)
        .iter()
        .fold(1u128, |acc, &c| acc.saturating_mul(count_from(tree, c, rho))))
}

/// Number of stopping times τ ≤ ρ on the whole tree, including stopping at
/// the root.
pub fn total_count(tree: &ScenarioTree, rho: &StoppingTime) -> u128 {
    count_from(tree, tree.root(), rho)
}

fn local_options(tree: &ScenarioTree, u: NodeId, rho: &StoppingTime) -> Vec<Vec<NodeId>> {
    if rho.contains(u) {
        return vec![vec![u]];
    }
    let mut out = vec![vec![u]];
    out.extend(product(tree.children(u).iter().map(|&c| local_options(tree, c, rho)).collect()));
    out
}

/// Cartesian product of per-child option lists, concatenating the chosen
/// regions. The first child varies slowest.
fn product(parts: Vec<Vec<Vec<NodeId>>>) -> Vec<Vec<NodeId>> {
    parts.into_iter().fold(vec![Vec::new()], |acc, opts| {
        let mut next = Vec::with_capacity(acc.len() * opts.len());
        for prefix in &acc {
            for o in &opts {
                let mut v = prefix.clone();
                v.extend_from_slice(o);
                next.push(v);
            }
        }
        next
    })
}

/// All stopping times strictly after `v` and no later than `rho` on
/// subtree(v). Each is returned as a full stopping time that agrees with
/// `rho` off subtree(v).
pub fn enumerate_band(
    tree: &ScenarioTree,
    v: NodeId,
    rho: &StoppingTime,
    cap: u128,
) -> Result<Vec<StoppingTime>, StopError> {
    let count = band_count(tree, v, rho)?;
    if count > cap {
        return Err(StopError::Overflow { count, cap });
    }
    let locals = product(tree.children(v).iter().map(|&c| local_options(tree, c, rho)).collect());
    Ok(locals.iter().map(|local| rho.paste(tree, v, local)).collect())
}

/// Every stopping time τ ≤ ρ on the tree, stopping at the root included.
pub fn enumerate_all(tree: &ScenarioTree, rho: &StoppingTime, cap: u128) -> Result<Vec<StoppingTime>, StopError> {
    let count = total_count(tree, rho);
    if count > cap {
        return Err(StopError::Overflow { count, cap });
    }
    Ok(local_options(tree, tree.root(), rho)
        .into_iter()
        .map(|mut s| {
            s.sort();
            StoppingTime::from_sorted_unchecked(tree, s)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;
    use crate::tree;

    fn line3() -> ScenarioTree {
        tree::line(&[Scalar::int(0), Scalar::int(1), Scalar::int(2)]).unwrap()
    }

    fn binary(depth: usize) -> ScenarioTree {
        let h = Scalar::ratio(1, 2);
        tree::binomial(depth, h, Scalar::ONE, -Scalar::ONE, Scalar::ZERO, Scalar::ONE).unwrap()
    }

    #[test]
    fn root_before_leaves() {
        let t = binary(2);
        let r = StoppingTime::at_root(&t);
        let l = StoppingTime::at_leaves(&t);
        assert_eq!(order(&t, &r, &l).unwrap(), PathOrder::Leq);
        assert_eq!(order(&t, &l, &r).unwrap(), PathOrder::Geq);
        assert_eq!(order(&t, &l, &l).unwrap(), PathOrder::Eq);
    }

    #[test]
    fn branchwise_early_stops_are_incomparable() {
        let t = binary(2);
        // A stops early on branch 1 only, B on branch 2 only.
        let a = StoppingTime::new(&t, [NodeId(1), NodeId(5), NodeId(6)]).unwrap();
        let b = StoppingTime::new(&t, [NodeId(2), NodeId(3), NodeId(4)]).unwrap();
        assert_eq!(order(&t, &a, &b).unwrap(), PathOrder::Incomparable);
        let j = join(&t, &a, &b).unwrap();
        let m = meet(&t, &a, &b).unwrap();
        assert_eq!(j, StoppingTime::at_leaves(&t));
        assert_eq!(m.stops(), &[NodeId(1), NodeId(2)]);
    }

    #[test]
    fn join_identities() {
        let t = binary(2);
        let a = StoppingTime::new(&t, [NodeId(1), NodeId(5), NodeId(6)]).unwrap();
        assert_eq!(join(&t, &a, &a).unwrap(), a);
        assert_eq!(join(&t, &StoppingTime::at_root(&t), &a).unwrap(), a);
        assert_eq!(meet(&t, &StoppingTime::at_leaves(&t), &a).unwrap(), a);
    }

    #[test]
    fn validation_errors() {
        let t = binary(2);
        assert!(matches!(
            StoppingTime::new(&t, [NodeId(1), NodeId(3), NodeId(5), NodeId(6)]),
            Err(StopError::NotAntichain { .. })
        ));
        assert!(matches!(StoppingTime::new(&t, [NodeId(1)]), Err(StopError::Uncovered(_))));
        assert!(matches!(StoppingTime::new(&t, [NodeId(42)]), Err(StopError::UnknownNode(_))));
        let c = StoppingTime::canonical(&t, [NodeId(1), NodeId(3), NodeId(5), NodeId(6), NodeId(2)]).unwrap();
        assert_eq!(c.stops(), &[NodeId(1), NodeId(2)]);
        let again = StoppingTime::canonical(&t, c.stops().to_vec()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn mismatched_trees_are_rejected() {
        let a = binary(2);
        let b = binary(3);
        let r = StoppingTime::at_root(&a);
        let l = StoppingTime::at_leaves(&b);
        assert_eq!(order(&a, &r, &l), Err(StopError::TreeMismatch));
        assert_eq!(join(&a, &r, &l), Err(StopError::TreeMismatch));
    }

    #[test]
    fn band_on_line() {
        let t = line3();
        let rho = StoppingTime::at_leaves(&t);
        let band = enumerate_band(&t, NodeId(0), &rho, DEFAULT_ENUM_CAP).unwrap();
        let stops: Vec<_> = band.iter().map(|s| s.stops().to_vec()).collect();
        assert_eq!(stops, vec![vec![NodeId(1)], vec![NodeId(2)]]);
    }

    #[test]
    fn band_on_binary_tree_counts_four() {
        let t = binary(2);
        let rho = StoppingTime::at_leaves(&t);
        assert_eq!(band_count(&t, NodeId(0), &rho).unwrap(), 4);
        let band = enumerate_band(&t, NodeId(0), &rho, DEFAULT_ENUM_CAP).unwrap();
        assert_eq!(band.len(), 4);
        for (i, a) in band.iter().enumerate() {
            for b in &band[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn band_at_leaf_or_rho_is_empty() {
        let t = binary(2);
        let rho = StoppingTime::at_leaves(&t);
        assert_eq!(enumerate_band(&t, NodeId(3), &rho, 10), Err(StopError::EmptyBand(NodeId(3))));
        let early = StoppingTime::new(&t, [NodeId(1), NodeId(2)]).unwrap();
        assert_eq!(band_count(&t, NodeId(1), &early), Err(StopError::EmptyBand(NodeId(1))));
        assert_eq!(band_count(&t, NodeId(3), &early), Err(StopError::EmptyBand(NodeId(3))));
    }

    #[test]
    fn overflow_is_explicit() {
        let t = binary(4);
        let rho = StoppingTime::at_leaves(&t);
        let n = band_count(&t, NodeId(0), &rho).unwrap();
        assert_eq!(enumerate_band(&t, NodeId(0), &rho, n - 1), Err(StopError::Overflow { count: n, cap: n - 1 }));
    }

    #[test]
    fn deterministic_time_helpers() {
        let t = binary(2);
        let s = StoppingTime::at_time(&t, 1.0);
        assert_eq!(s.stops(), &[NodeId(1), NodeId(2)]);
        assert_eq!(s.describe(&t), "1");
        assert_eq!(StoppingTime::at_time(&t, 9.0), StoppingTime::at_leaves(&t));
        let mixed = StoppingTime::new(&t, [NodeId(1), NodeId(5), NodeId(6)]).unwrap();
        assert_eq!(mixed.describe(&t), "{1@1 5@2 6@2}");
        assert!(mixed.to_csv(&t).starts_with("node_id,time,stopped\n0,0,0\n1,1,1\n"));
    }
}
