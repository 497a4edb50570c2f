//! Preference flows `J(τ; v)` and the band maximisation used by the
//! stopping map.

use std::fmt;

use thiserror::Error;

use crate::expr::{self, Env, Expr, Var};
use crate::scalar::Scalar;
use crate::stopping::{self, StopError, StoppingTime};
use crate::tree::{NodeId, ScenarioTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrefError {
    #[error(transparent)]
    Stop(#[from] StopError),
    #[error("stopping time stops before node {0}")]
    StopsBefore(NodeId),
    #[error("no preference entry covers time {0}")]
    Missing(String),
    #[error("evaluating at node {node}: {source}")]
    Expr { node: NodeId, source: expr::EvalError },
}

/// A family of objectives indexed by the node the decision is taken at.
///
/// `evaluate(tree, τ, v)` must only look at subtree(v) and at τ restricted
/// to it. Flows of the additive form `J(τ; v) = Σ_u P(u | v) h_v(u)`, summed
/// over the stop nodes `u` of τ below `v`, expose `h_v` through
/// [`PreferenceFlow::stop_payoff`], which lets [`sup_band`] use backward
/// recursion instead of enumeration.
pub trait PreferenceFlow: Send + Sync {
    fn evaluate(&self, tree: &ScenarioTree, tau: &StoppingTime, v: NodeId) -> Result<Scalar, PrefError>;

    /// True when `J(τ; t) = E_t[D(τ - t) g(X_τ)]` for a declared discount
    /// curve and reward.
    fn expectation_form(&self) -> bool {
        false
    }

    fn stop_payoff(&self, _tree: &ScenarioTree, _v: NodeId, _u: NodeId) -> Result<Option<Scalar>, PrefError> {
        Ok(None)
    }
}

/// Checks that `tau` can be evaluated from `v`.
pub fn check_evaluable(tree: &ScenarioTree, tau: &StoppingTime, v: NodeId) -> Result<(), PrefError> {
    if tau.tree_fingerprint() != tree.fingerprint() {
        return Err(StopError::TreeMismatch.into());
    }
    if !tree.contains(v) {
        return Err(StopError::UnknownNode(v).into());
    }
    if tau.stops_before(tree, v) {
        return Err(PrefError::StopsBefore(v));
    }
    Ok(())
}

/// Probability of reaching `u` from its ancestor `v`.
pub fn conditional_prob(tree: &ScenarioTree, v: NodeId, u: NodeId) -> Scalar {
    let mut p = Scalar::ONE;
    let mut n = u;
    while n != v {
        p = p * tree.node(n).prob;
        n = tree.parent(n).expect("v is an ancestor of u");
    }
    p
}

/// `Σ_u P(u | v) h(u)` over the stop nodes of `tau` in subtree(v).
pub fn additive_value(
    tree: &ScenarioTree,
    tau: &StoppingTime,
    v: NodeId,
    mut h: impl FnMut(NodeId) -> Result<Scalar, PrefError>,
) -> Result<Scalar, PrefError> {
    check_evaluable(tree, tau, v)?;
    let mut total = Scalar::ZERO;
    for u in tau.restricted(tree, v) {
        total = total + conditional_prob(tree, v, u) * h(u)?;
    }
    Ok(total)
}

/// Wraps a closure as a black-box flow.
pub struct FnFlow<F>(pub F);

impl<F> PreferenceFlow for FnFlow<F>
where
    F: Fn(&ScenarioTree, &StoppingTime, NodeId) -> Scalar + Send + Sync,
{
    fn evaluate(&self, tree: &ScenarioTree, tau: &StoppingTime, v: NodeId) -> Result<Scalar, PrefError> {
        check_evaluable(tree, tau, v)?;
        Ok((self.0)(tree, tau, v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiscountCurve {
    /// `e^{-r t}`
    Exponential { rate: Scalar },
    /// `1 / (1 + β t)`
    Hyperbolic { beta: Scalar },
    /// Linear interpolation in a table starting at `(0, 1)`; constant after
    /// the last point.
    Tabulated { points: Vec<(Scalar, Scalar)> },
}

impl DiscountCurve {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            DiscountCurve::Exponential { rate } => {
                if !rate.gt(&Scalar::ZERO) {
                    return Err(format!("exponential rate must be positive, got {rate}"));
                }
            }
            DiscountCurve::Hyperbolic { beta } => {
                if !beta.gt(&Scalar::ZERO) {
                    return Err(format!("hyperbolic beta must be positive, got {beta}"));
                }
            }
            DiscountCurve::Tabulated { points } => {
                match points.first() {
                    Some((t, d)) if t.is_zero() && d.tol_eq(&Scalar::ONE) => {}
                    _ => return Err("discount table must start at 0:1".into()),
                }
                for w in points.windows(2) {
                    if !w[1].0.gt(&w[0].0) {
                        return Err("discount table times must increase".into());
                    }
                    if w[1].1.gt(&w[0].1) {
                        return Err("discount table values must not increase".into());
                    }
                }
                if points.iter().any(|(_, d)| !d.gt(&Scalar::ZERO)) {
                    return Err("discount table values must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn factor(&self, s: Scalar) -> Scalar {
        if s.is_zero() {
            return Scalar::ONE;
        }
        match self {
            DiscountCurve::Exponential { rate } => Scalar::Approx((-(rate.to_f64() * s.to_f64())).exp()),
            DiscountCurve::Hyperbolic { beta } => Scalar::ONE / (Scalar::ONE + *beta * s),
            DiscountCurve::Tabulated { points } => {
                for w in points.windows(2) {
                    let ((t0, d0), (t1, d1)) = (w[0], w[1]);
                    if !s.gt(&t1) {
                        return d0 + (d1 - d0) * (s - t0) / (t1 - t0);
                    }
                }
                points.last().map_or(Scalar::ONE, |p| p.1)
            }
        }
    }

    /// `D(t) D(s) <= D(t + s)` for every pair drawn from `grid`.
    pub fn decreasing_impatience(&self, grid: &[Scalar]) -> bool {
        grid.iter().all(|&t| {
            grid.iter()
                .all(|&s| self.factor(t + s).ge(&(self.factor(t) * self.factor(s))))
        })
    }
}

impl fmt::Display for DiscountCurve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiscountCurve::Exponential { rate } => write!(f, "exponential r={rate}"),
            DiscountCurve::Hyperbolic { beta } => write!(f, "hyperbolic beta={beta}"),
            DiscountCurve::Tabulated { points } => {
                let parts: Vec<String> = points.iter().map(|(t, d)| format!("{t}:{d}")).collect();
                write!(f, "table points={}", parts.join(","))
            }
        }
    }
}

/// Which decision times a preference entry applies to.
#[derive(Clone, Debug, PartialEq)]
pub enum Selector {
    At(Scalar),
    /// Closed range `[lo, hi]`.
    Range(Scalar, Scalar),
    Default,
}

impl Selector {
    pub fn matches(&self, t: Scalar) -> bool {
        match self {
            Selector::At(s) => s.tol_eq(&t),
            Selector::Range(lo, hi) => t.ge(lo) && hi.ge(&t),
            Selector::Default => true,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::At(t) => write!(f, "t={t}"),
            Selector::Range(lo, hi) => write!(f, "t={lo}..{hi}"),
            Selector::Default => f.write_str("default"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PrefKind {
    /// `J(τ; t) = E_t[D(τ - t) g(X_τ)]`
    Discounted { curve: DiscountCurve, reward: Expr },
    /// `J(τ; t) = E_t[f_t(τ)]`, with `f_t` piecewise linear in `tau`.
    Functional(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefEntry {
    pub selector: Selector,
    pub kind: PrefKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("no preference entry covers decision time {0}")]
    Missing(String),
    #[error("preference entry {0} matches no decision time of the tree")]
    Dangling(String),
    #[error("more than one entry for {0}")]
    Duplicate(String),
    #[error("functional \"{0}\" is not piecewise linear in tau")]
    NotPiecewiseLinear(String),
    #[error("functional \"{0}\" may only use tau")]
    FunctionalUsesState(String),
    #[error("reward \"{0}\" may not use tau")]
    RewardUsesTau(String),
    #[error("{0}")]
    Discount(String),
    #[error("range {0} is empty")]
    EmptyRange(String),
}

/// Preference flow read from a model file: one entry per decision time,
/// time range, or a default.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFlow {
    pub entries: Vec<PrefEntry>,
}

impl ModelFlow {
    pub fn new(entries: Vec<PrefEntry>) -> Result<Self, FlowError> {
        let mut defaults = 0;
        for (i, e) in entries.iter().enumerate() {
            match &e.selector {
                Selector::Default => defaults += 1,
                Selector::At(t) => {
                    if entries[..i].iter().any(|o| matches!(o.selector, Selector::At(s) if s.tol_eq(t))) {
                        return Err(FlowError::Duplicate(e.selector.to_string()));
                    }
                }
                Selector::Range(lo, hi) => {
                    if lo.gt(hi) {
                        return Err(FlowError::EmptyRange(e.selector.to_string()));
                    }
                }
            }
            if defaults > 1 {
                return Err(FlowError::Duplicate("default".into()));
            }
            match &e.kind {
                PrefKind::Discounted { curve, reward } => {
                    curve.validate().map_err(FlowError::Discount)?;
                    if reward.uses(Var::Tau) {
                        return Err(FlowError::RewardUsesTau(reward.to_string()));
                    }
                }
                PrefKind::Functional(f) => {
                    if f.uses_state() {
                        return Err(FlowError::FunctionalUsesState(f.to_string()));
                    }
                    if !f.is_piecewise_linear_in_tau() {
                        return Err(FlowError::NotPiecewiseLinear(f.to_string()));
                    }
                }
            }
        }
        Ok(ModelFlow { entries })
    }

    /// Exact-time entries win over ranges, ranges over the default; among
    /// ranges the first listed wins.
    pub fn rule_for(&self, t: Scalar) -> Option<&PrefKind> {
        let pick = |want: fn(&Selector) -> bool| {
            self.entries.iter().find(|e| want(&e.selector) && e.selector.matches(t)).map(|e| &e.kind)
        };
        pick(|s| matches!(s, Selector::At(_)))
            .or_else(|| pick(|s| matches!(s, Selector::Range(..))))
            .or_else(|| pick(|s| matches!(s, Selector::Default)))
    }

    /// Every node time needs an entry and every exact or range entry must
    /// hit some node time.
    pub fn check_against(&self, tree: &ScenarioTree) -> Result<(), FlowError> {
        let times = tree.distinct_times();
        for t in &times {
            if self.rule_for(*t).is_none() {
                return Err(FlowError::Missing(t.to_string()));
            }
        }
        for e in &self.entries {
            if e.selector != Selector::Default && !times.iter().any(|&t| e.selector.matches(t)) {
                return Err(FlowError::Dangling(e.selector.to_string()));
            }
        }
        Ok(())
    }

    fn payoff(&self, tree: &ScenarioTree, v: NodeId, u: NodeId) -> Result<Scalar, PrefError> {
        let tv = tree.time(v);
        let rule = self.rule_for(tv).ok_or_else(|| PrefError::Missing(tv.to_string()))?;
        let node = tree.node(u);
        match rule {
            PrefKind::Discounted { curve, reward } => {
                let g = reward
                    .eval(&Env { tau: None, state: &node.state })
                    .map_err(|source| PrefError::Expr { node: u, source })?;
                Ok(curve.factor(node.time - tv) * g)
            }
            PrefKind::Functional(f) => f
                .eval(&Env { tau: Some(node.time), state: &node.state })
                .map_err(|source| PrefError::Expr { node: u, source }),
        }
    }
}

impl PreferenceFlow for ModelFlow {
    fn evaluate(&self, tree: &ScenarioTree, tau: &StoppingTime, v: NodeId) -> Result<Scalar, PrefError> {
        additive_value(tree, tau, v, |u| self.payoff(tree, v, u))
    }

    fn expectation_form(&self) -> bool {
        self.entries.iter().all(|e| matches!(e.kind, PrefKind::Discounted { .. }))
    }

    fn stop_payoff(&self, tree: &ScenarioTree, v: NodeId, u: NodeId) -> Result<Option<Scalar>, PrefError> {
        self.payoff(tree, v, u).map(Some)
    }
}

/// `J(v; v)`: the value of stopping on the spot.
pub fn immediate(flow: &dyn PreferenceFlow, tree: &ScenarioTree, v: NodeId) -> Result<Scalar, PrefError> {
    flow.evaluate(tree, &StoppingTime::at_node(tree, v), v)
}

#[derive(Clone, Debug)]
pub struct SupBand {
    pub value: Scalar,
    /// Latest maximiser found; agrees with ρ off subtree(v).
    pub argmax: StoppingTime,
    /// `J(v; v)`
    pub immediate: Scalar,
    /// `J(v; v) > value`
    pub strictly_dominated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SupMethod {
    /// Backward recursion when the flow exposes stop payoffs, enumeration
    /// otherwise.
    #[default]
    Auto,
    Enumerate,
}

/// Maximises `J(τ; v)` over τ on subtree(v) with `time(v) < τ <= ρ`.
pub fn sup_band(
    flow: &dyn PreferenceFlow,
    tree: &ScenarioTree,
    v: NodeId,
    rho: &StoppingTime,
    cap: u128,
    method: SupMethod,
) -> Result<SupBand, PrefError> {
    let immediate = immediate(flow, tree, v)?;
    let (value, argmax) = match method {
        SupMethod::Auto if flow.stop_payoff(tree, v, v)?.is_some() => sup_dp(flow, tree, v, rho)?,
        _ => sup_enumerate(flow, tree, v, rho, cap)?,
    };
    Ok(SupBand { value, argmax, strictly_dominated: immediate.gt(&value), immediate })
}

fn sup_enumerate(
    flow: &dyn PreferenceFlow,
    tree: &ScenarioTree,
    v: NodeId,
    rho: &StoppingTime,
    cap: u128,
) -> Result<(Scalar, StoppingTime), PrefError> {
    let mut best: Option<(Scalar, StoppingTime)> = None;
    for tau in stopping::enumerate_band(tree, v, rho, cap)? {
        let val = flow.evaluate(tree, &tau, v)?;
        best = match best {
            None => Some((val, tau)),
            Some((b, bt)) => {
                if val.gt(&b) || (val.tol_eq(&b) && stopping::le(tree, &bt, &tau)?) {
                    Some((val, tau))
                } else {
                    Some((b, bt))
                }
            }
        };
    }
    Ok(best.expect("band is nonempty"))
}

fn sup_dp(
    flow: &dyn PreferenceFlow,
    tree: &ScenarioTree,
    v: NodeId,
    rho: &StoppingTime,
) -> Result<(Scalar, StoppingTime), PrefError> {
    stopping::band_count(tree, v, rho)?;
    let payoff = |u: NodeId| -> Result<Scalar, PrefError> {
        Ok(flow.stop_payoff(tree, v, u)?.expect("additive flow"))
    };
    // Snell envelope on the band; ties continue, which yields the largest
    // optimal stopping time.
    fn envelope(
        tree: &ScenarioTree,
        u: NodeId,
        rho: &StoppingTime,
        payoff: &dyn Fn(NodeId) -> Result<Scalar, PrefError>,
        stops: &mut Vec<NodeId>,
    ) -> Result<Scalar, PrefError> {
        let h = payoff(u)?;
        if rho.contains(u) {
            stops.push(u);
            return Ok(h);
        }
        let mark = stops.len();
        let mut cont = Scalar::ZERO;
        for &c in tree.children(u) {
            cont = cont + tree.node(c).prob * envelope(tree, c, rho, payoff, stops)?;
        }
        if h.gt(&cont) {
            stops.truncate(mark);
            stops.push(u);
            Ok(h)
        } else {
            Ok(cont)
        }
    }
    let mut stops = Vec::new();
    let mut value = Scalar::ZERO;
    for &c in tree.children(v) {
        value = value + tree.node(c).prob * envelope(tree, c, rho, &payoff, &mut stops)?;
    }
    stops.sort();
    Ok((value, rho.paste(tree, v, &stops)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree;

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

    fn ints(n: i64) -> Vec<Scalar> {
        (0..=n).map(Scalar::int).collect()
    }

    #[test]
    fn functional_value_at_stop_node() {
        let t = tree::line(&ints(5)).unwrap();
        let flow = functional(&[(4, "5 - tau")]);
        let at4 = StoppingTime::at_time(&t, 4.0);
        assert_eq!(flow.evaluate(&t, &at4, NodeId(4)).unwrap(), Scalar::ONE);
        assert_eq!(
            flow.evaluate(&t, &StoppingTime::at_root(&t), NodeId(4)).unwrap_err(),
            PrefError::StopsBefore(NodeId(4))
        );
    }

    #[test]
    fn discounted_binary_hand_sum() {
        let t = tree::binomial(1, Scalar::ratio(1, 2), Scalar::ONE, Scalar::int(-1), Scalar::ZERO, Scalar::ONE).unwrap();
        let flow = ModelFlow::new(vec![PrefEntry {
            selector: Selector::Default,
            kind: PrefKind::Discounted {
                curve: DiscountCurve::Hyperbolic { beta: Scalar::ONE },
                reward: Expr::parse("abs(x)").unwrap(),
            },
        }])
        .unwrap();
        assert!(flow.expectation_form());
        let v = flow.evaluate(&t, &StoppingTime::at_leaves(&t), t.root()).unwrap();
        assert_eq!(v, Scalar::ratio(1, 2));
        // Immediate stop pays g at the node.
        assert_eq!(immediate(&flow, &t, NodeId(1)).unwrap(), Scalar::ONE);
    }

    #[test]
    fn band_sup_time_consistent_and_dominated() {
        let t = tree::line(&ints(5)).unwrap();
        let tc = ModelFlow::new(vec![PrefEntry {
            selector: Selector::Default,
            kind: PrefKind::Functional(Expr::parse("tau").unwrap()),
        }])
        .unwrap();
        let leaves = StoppingTime::at_leaves(&t);
        for method in [SupMethod::Auto, SupMethod::Enumerate] {
            let s = sup_band(&tc, &t, t.root(), &leaves, 1000, method).unwrap();
            assert_eq!(s.value, Scalar::int(5));
            assert_eq!(s.argmax, leaves);
            assert!(!s.strictly_dominated);
        }
        let ex = functional(&[(0, "tau"), (1, "tau"), (2, "tau"), (3, "tau"), (4, "5 - tau"), (5, "5 - tau")]);
        let s = sup_band(&ex, &t, NodeId(4), &leaves, 1000, SupMethod::Enumerate).unwrap();
        assert_eq!(s.value, Scalar::ZERO);
        assert_eq!(s.immediate, Scalar::ONE);
        assert!(s.strictly_dominated);
    }

    #[test]
    fn discount_curves() {
        let h = DiscountCurve::Hyperbolic { beta: Scalar::ONE };
        assert_eq!(h.factor(Scalar::ONE), Scalar::ratio(1, 2));
        let grid: Vec<Scalar> = (0..20).map(|i| Scalar::ratio(i, 4)).collect();
        assert!(h.decreasing_impatience(&grid));
        let e = DiscountCurve::Exponential { rate: Scalar::ONE };
        assert!(e.decreasing_impatience(&grid));
        // Faster-than-exponential decay violates it.
        let fast = DiscountCurve::Tabulated {
            points: vec![(Scalar::ZERO, Scalar::ONE), (Scalar::ONE, Scalar::ratio(9, 10)), (Scalar::int(2), Scalar::ratio(1, 10))],
        };
        fast.validate().unwrap();
        assert!(!fast.decreasing_impatience(&grid));
        assert!(DiscountCurve::Hyperbolic { beta: Scalar::ZERO }.validate().is_err());
    }

    #[test]
    fn coverage_checks() {
        let t = tree::line(&ints(2)).unwrap();
        assert_eq!(functional(&[(0, "tau"), (1, "tau")]).check_against(&t), Err(FlowError::Missing("2".into())));
        assert_eq!(
            functional(&[(0, "tau"), (1, "tau"), (2, "tau"), (7, "tau")]).check_against(&t),
            Err(FlowError::Dangling("t=7".into()))
        );
        let dup = vec![
            PrefEntry { selector: Selector::At(Scalar::ONE), kind: PrefKind::Functional(Expr::parse("tau").unwrap()) },
            PrefEntry { selector: Selector::At(Scalar::ONE), kind: PrefKind::Functional(Expr::parse("tau").unwrap()) },
        ];
        assert!(matches!(ModelFlow::new(dup), Err(FlowError::Duplicate(_))));
    }
}
