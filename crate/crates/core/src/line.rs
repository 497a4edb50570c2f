//! Deterministic stopping on a time interval `[0, T]`, where stopping times
//! are plain numbers and `J(t, τ)` is supplied in closed form.
//!
//! `J(t, ·)` is described regime by regime: for `t` in a regime, `τ ↦ J(t, τ)`
//! is linear between the regime's knots and may jump at a knot. The band
//! supremum is then read off from knot values and one-sided limits, and the
//! first dominated time is located by scanning a grid and the regime starts,
//! followed by bisection.

use thiserror::Error;

pub const DEFAULT_EPS: f64 = 1e-6;
pub const DEFAULT_H: f64 = 1e-4;
pub const DEFAULT_TOL: f64 = 1e-9;

/// Shape of `J(t, ·)` for the `t` it was requested for.
#[derive(Clone, Debug, PartialEq)]
pub struct Regime {
    /// The regime covers decision times in `[start, end)`.
    pub start: f64,
    pub end: f64,
    /// Points in τ where `J(t, ·)` changes slope or jumps.
    pub knots: Vec<f64>,
    /// False when `J(t, ·)` is not piecewise linear; the supremum then falls
    /// back to grid sampling.
    pub linear: bool,
}

pub trait LineFlow: Send + Sync {
    fn horizon(&self) -> f64;
    /// `J(t, τ)` for `0 <= t <= τ <= T`.
    fn value(&self, t: f64, tau: f64) -> f64;
    fn regime(&self, t: f64) -> Regime;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineError {
    #[error("empty band: t = {t} is not before rho = {rho}")]
    EmptyBand { t: f64, rho: f64 },
    #[error("{0} lies outside [0, T]")]
    OutOfRange(f64),
    #[error("invalid parameters: {0}")]
    Parameters(String),
}

#[derive(Clone, Copy)]
pub struct LineProblem<'a> {
    pub flow: &'a dyn LineFlow,
    pub h: f64,
    pub eps: f64,
    pub tol: f64,
}

impl<'a> LineProblem<'a> {
    pub fn new(flow: &'a dyn LineFlow) -> Self {
        LineProblem { flow, h: DEFAULT_H, eps: DEFAULT_EPS, tol: DEFAULT_TOL }
    }

    fn horizon(&self) -> f64 {
        self.flow.horizon()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupTail {
    /// `max(attained, limit)`
    pub value: f64,
    /// Latest point where `value` is attained, or the point it is
    /// approached at when it is not attained.
    pub argmax: f64,
    pub attained: bool,
    /// Largest value taken at some τ in the band.
    pub attained_max: f64,
    /// Largest one-sided limit at a piece boundary; may be unattained.
    pub limit_sup: f64,
}

/// Supremum of `J(t, τ)` over `τ ∈ (t, ρ]`.
pub fn sup_tail(p: &LineProblem, t: f64, rho: f64) -> Result<SupTail, LineError> {
    if t >= rho {
        return Err(LineError::EmptyBand { t, rho });
    }
    if rho > p.horizon() + p.tol || t < -p.tol {
        return Err(LineError::OutOfRange(if t < 0.0 { t } else { rho }));
    }
    let regime = p.flow.regime(t);
    let f = |tau: f64| p.flow.value(t, tau);
    let gap = (rho - t) * 1e-9;
    let mut cuts: Vec<f64> = regime.knots.iter().copied().filter(|&k| k > t + gap && k < rho - gap).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    // Attained values: the knots inside the band and ρ itself.
    let mut best_at = rho;
    let mut best = f(rho);
    for &k in cuts.iter().rev() {
        let v = f(k);
        if v > best + p.tol {
            best = v;
            best_at = k;
        }
    }
    if !regime.linear {
        let n = (((rho - t) / p.h).ceil() as usize).max(1);
        for i in (1..n).rev() {
            let tau = t + (rho - t) * i as f64 / n as f64;
            let v = f(tau);
            if v > best + p.tol {
                best = v;
                best_at = tau;
            }
        }
    }
    // One-sided limits at both ends of every linear piece, extrapolated from
    // two interior points.
    let mut lim = f64::NEG_INFINITY;
    let mut lim_at = rho;
    let mut bounds = vec![t];
    bounds.extend_from_slice(&cuts);
    bounds.push(rho);
    for w in bounds.windows(2).rev() {
        let (a, b) = (w[0], w[1]);
        let (p1, p2) = (a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0);
        let (f1, f2) = (f(p1), f(p2));
        for (v, at) in [(2.0 * f2 - f1, b), (2.0 * f1 - f2, a)] {
            if v > lim + p.tol {
                lim = v;
                lim_at = at;
            }
        }
    }
    let attained = best + p.tol >= lim;
    Ok(SupTail {
        value: best.max(lim),
        argmax: if attained { best_at } else { lim_at },
        attained,
        attained_max: best,
        limit_sup: lim,
    })
}

/// True when `J(t, t) > J(t, τ)` for every `τ ∈ (t, ρ]`.
pub fn dominated(p: &LineProblem, t: f64, rho: f64) -> Result<bool, LineError> {
    let s = sup_tail(p, t, rho)?;
    let now = p.flow.value(t, t);
    Ok(now > s.attained_max + p.tol && now >= s.limit_sup - p.tol)
}

/// Earliest `t < ρ` at which stopping dominates the band `(t, ρ]`.
pub fn first_dominated(p: &LineProblem, rho: f64) -> Result<Option<f64>, LineError> {
    if !(0.0..=p.horizon() + p.tol).contains(&rho) {
        return Err(LineError::OutOfRange(rho));
    }
    let inv_h = p.h.recip().round();
    // Candidates in increasing order, each flagged when it is a regime start.
    let mut prev: Option<f64> = None;
    let check = |c: f64, is_start: bool, prev: &mut Option<f64>| -> Result<Option<f64>, LineError> {
        if c >= rho || prev.is_some_and(|q| c <= q) {
            return Ok(None);
        }
        if dominated(p, c, rho)? {
            return refine(p, rho, *prev, c, is_start).map(Some);
        }
        *prev = Some(c);
        Ok(None)
    };
    let mut i = 0u64;
    loop {
        let g = i as f64 / inv_h;
        if g >= rho {
            break;
        }
        let s = p.flow.regime(g).start;
        if let Some(hit) = check(s, true, &mut prev)? {
            return Ok(Some(hit));
        }
        if let Some(hit) = check(g, false, &mut prev)? {
            return Ok(Some(hit));
        }
        i += 1;
    }
    // Regimes ending at ρ may be shorter than one grid step, or than eps.
    let just_below = rho - rho.abs().max(1.0) * 4.0 * f64::EPSILON;
    let mut probes = vec![rho - p.eps, just_below];
    probes.sort_by(f64::total_cmp);
    let mut starts: Vec<f64> = probes.iter().filter(|&&x| x > 0.0).map(|&x| p.flow.regime(x).start).collect();
    starts.sort_by(f64::total_cmp);
    let mut late: Vec<(f64, bool)> = starts.into_iter().map(|s| (s, true)).collect();
    late.extend(probes.into_iter().filter(|&x| x > 0.0).map(|x| (x, false)));
    late.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (c, is_start) in late {
        if let Some(hit) = check(c, is_start, &mut prev)? {
            return Ok(Some(hit));
        }
    }
    Ok(None)
}

/// `c` is dominated and `prev`, the previous candidate, is not. A regime
/// start whose left neighbourhood is not dominated is the exact infimum;
/// otherwise bisect down to `eps`.
fn refine(p: &LineProblem, rho: f64, prev: Option<f64>, c: f64, is_start: bool) -> Result<f64, LineError> {
    let Some(mut lo) = prev else { return Ok(c) };
    if is_start && (c - p.eps < lo || !dominated(p, c - p.eps, rho)?) {
        return Ok(c);
    }
    let mut hi = c;
    while hi - lo > p.eps {
        let mid = 0.5 * (lo + hi);
        if dominated(p, mid, rho)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// The stopping map on the line.
pub fn f_scalar(p: &LineProblem, rho: f64) -> Result<f64, LineError> {
    if rho <= 0.0 {
        return Err(LineError::OutOfRange(rho));
    }
    Ok(first_dominated(p, rho)?.unwrap_or(rho))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarChain {
    /// `ρ⁰ = T, ρ¹, …` with no repeats.
    pub values: Vec<f64>,
    pub fixed_point: bool,
    /// Extrapolated limit; the last value when a fixed point was reached.
    pub limit: f64,
}

pub fn naive_chain_scalar(p: &LineProblem, n_max: usize) -> Result<ScalarChain, LineError> {
    let mut values = vec![p.horizon()];
    let mut fixed_point = false;
    for _ in 0..n_max {
        let last = *values.last().unwrap();
        if last <= 0.0 {
            fixed_point = true;
            break;
        }
        let next = f_scalar(p, last)?;
        if next == last {
            fixed_point = true;
            break;
        }
        values.push(next);
    }
    let n = values.len() - 1;
    let limit = if fixed_point || n < 2 {
        *values.last().unwrap()
    } else {
        // ρⁿ ≈ L + c/n.
        let (a, b) = (values[n - 1], values[n]);
        n as f64 * b - (n - 1) as f64 * a
    };
    Ok(ScalarChain { values, fixed_point, limit })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarApproachability {
    pub approachable: bool,
    pub witness: Option<f64>,
}

pub fn is_approachable_scalar(p: &LineProblem, tau: f64) -> Result<ScalarApproachability, LineError> {
    if !(0.0..=p.horizon() + p.tol).contains(&tau) {
        return Err(LineError::OutOfRange(tau));
    }
    if tau == 0.0 {
        return Ok(ScalarApproachability { approachable: true, witness: None });
    }
    let witness = first_dominated(p, tau)?;
    Ok(ScalarApproachability { approachable: witness.is_none(), witness })
}

/// Largest approachable time. A witness `w` for `τ` rules out all of
/// `(w, τ]`, so the search jumps from witness to witness.
pub fn sophisticated_scalar(p: &LineProblem) -> Result<f64, LineError> {
    let inv_h = p.h.recip().round();
    let mut c = p.horizon();
    // Last witness: everything in (witness, T] is known not to be
    // approachable.
    let mut bound = None;
    while let Some(w) = is_approachable_scalar(p, c)?.witness {
        bound = Some(w);
        let step = c - 0.5 * p.h;
        c = if w <= step { w } else { (step * inv_h).floor() / inv_h };
        if c <= 0.0 {
            return Ok(0.0);
        }
    }
    let Some(w) = bound else { return Ok(c) };
    if w <= c || is_approachable_scalar(p, w)?.approachable {
        return Ok(w.max(c));
    }
    // c is approachable and w is not; close the gap.
    let (mut lo, mut hi) = (c, w);
    while hi - lo > p.eps {
        let mid = 0.5 * (lo + hi);
        match is_approachable_scalar(p, mid)?.witness {
            None => lo = mid,
            Some(w) => hi = w.max(lo),
        }
    }
    Ok(lo)
}

/// Flow whose regimes accumulate at `base` from above: with
/// `t_k = base + scale / k` and `T = base + 2 scale`,
///
/// * `t >= t_1`: `J = t_1 - τ`;
/// * `t ∈ [t_{k+1}, t_k)`: `J = |τ - t_k|` for `τ <= t_k`, `τ` after;
/// * `t <= base`: `J = base - |τ - peak|` for `τ <= base`, `τ` after.
///
/// The naive chain is `t_n`, its limit `base` is not approachable, and the
/// largest approachable time is `peak`. `base = scale = 1, peak = 1/2` is
/// the standard instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccumulatingFlow {
    pub base: f64,
    pub scale: f64,
    pub peak: f64,
}

impl Default for AccumulatingFlow {
    fn default() -> Self {
        AccumulatingFlow { base: 1.0, scale: 1.0, peak: 0.5 }
    }
}

impl AccumulatingFlow {
    pub fn new(base: f64, scale: f64, peak: f64) -> Result<Self, LineError> {
        if !(base > 0.0 && scale > 0.0 && peak > 0.0 && peak < base) {
            return Err(LineError::Parameters(format!("need base > 0, scale > 0, 0 < peak < base; got {base}, {scale}, {peak}")));
        }
        Ok(AccumulatingFlow { base, scale, peak })
    }

    pub fn t(&self, k: u64) -> f64 {
        self.base + self.scale / k as f64
    }

    /// The `k` with `t ∈ [t_{k+1}, t_k)`, for `base < t < t_1`.
    fn index(&self, t: f64) -> u64 {
        let mut k = ((self.scale / (t - self.base)).floor().max(1.0)).min(u64::MAX as f64 / 2.0) as u64;
        while t < self.t(k + 1) {
            k += 1;
        }
        while k > 1 && t >= self.t(k) {
            k -= 1;
        }
        k
    }
}

impl LineFlow for AccumulatingFlow {
    fn horizon(&self) -> f64 {
        self.base + 2.0 * self.scale
    }

    fn value(&self, t: f64, tau: f64) -> f64 {
        let t1 = self.t(1);
        if t >= t1 {
            t1 - tau
        } else if t > self.base {
            let tk = self.t(self.index(t));
            if tau <= tk {
                (tau - tk).abs()
            } else {
                tau
            }
        } else if tau <= self.base {
            self.base - (tau - self.peak).abs()
        } else {
            tau
        }
    }

    fn regime(&self, t: f64) -> Regime {
        let t1 = self.t(1);
        if t >= t1 {
            Regime { start: t1, end: self.horizon(), knots: vec![], linear: true }
        } else if t > self.base {
            let k = self.index(t);
            Regime { start: self.t(k + 1), end: self.t(k), knots: vec![self.t(k)], linear: true }
        } else {
            Regime { start: 0.0, end: self.base, knots: vec![self.peak, self.base], linear: true }
        }
    }
}

/// `J(t, τ) = τ`: waiting is always best.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeConsistent {
    pub horizon: f64,
}

impl LineFlow for TimeConsistent {
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn value(&self, _t: f64, tau: f64) -> f64 {
        tau
    }
    fn regime(&self, _t: f64) -> Regime {
        Regime { start: 0.0, end: self.horizon, knots: vec![], linear: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Constant {
    pub horizon: f64,
    pub value: f64,
}

impl LineFlow for Constant {
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn value(&self, _t: f64, _tau: f64) -> f64 {
        self.value
    }
    fn regime(&self, _t: f64) -> Regime {
        Regime { start: 0.0, end: self.horizon, knots: vec![], linear: true }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulating_regimes() {
        let f = AccumulatingFlow::default();
        assert_eq!(f.horizon(), 3.0);
        assert_eq!(f.regime(2.5).start, 2.0);
        let r = f.regime(1.4);
        assert_eq!((r.start, r.end), (f.t(3), 1.5));
        assert_eq!(f.regime(f.t(3)).start, f.t(3));
        assert_eq!(f.regime(0.7).knots, vec![0.5, 1.0]);
        assert_eq!(f.value(0.5, 0.5), 1.0);
        assert_eq!(f.value(0.5, 1.0), 0.5);
        assert_eq!(f.value(0.5, 1.5), 1.5);
    }

    #[test]
    fn sup_tail_cases() {
        let f = AccumulatingFlow::default();
        let p = LineProblem::new(&f);
        let s = sup_tail(&p, 0.5, 1.0).unwrap();
        assert!(!s.attained);
        assert!((s.limit_sup - 1.0).abs() < 1e-12);
        assert!((s.attained_max - 0.5).abs() < 1e-12);
        assert!(dominated(&p, 0.5, 1.0).unwrap());
        let s = sup_tail(&p, 0.25, 3.0).unwrap();
        assert_eq!((s.value, s.argmax), (3.0, 3.0));
        assert!(!dominated(&p, 0.25, 3.0).unwrap());

        let c = Constant { horizon: 2.0, value: 7.0 };
        let s = sup_tail(&LineProblem::new(&c), 0.3, 1.7).unwrap();
        assert_eq!((s.value, s.argmax), (7.0, 1.7));
        assert!(sup_tail(&p, 1.0, 1.0).is_err());
    }

    #[test]
    fn first_steps_of_the_chain() {
        let f = AccumulatingFlow::default();
        let p = LineProblem::new(&f);
        assert!((f_scalar(&p, 3.0).unwrap() - 2.0).abs() <= p.eps);
        assert!((f_scalar(&p, 2.0).unwrap() - 1.5).abs() <= p.eps);
        let w = is_approachable_scalar(&p, 1.0).unwrap();
        assert!(!w.approachable);
        assert!((w.witness.unwrap() - 0.5).abs() <= p.eps);
        assert!(is_approachable_scalar(&p, 0.5).unwrap().approachable);
        assert!(is_approachable_scalar(&p, 0.0).unwrap().approachable);
    }

    #[test]
    fn time_consistent_line() {
        let f = TimeConsistent { horizon: 2.0 };
        let p = LineProblem::new(&f);
        assert_eq!(f_scalar(&p, 1.3).unwrap(), 1.3);
        let c = naive_chain_scalar(&p, 10).unwrap();
        assert_eq!(c.values, vec![2.0]);
        assert!(c.fixed_point);
        assert_eq!(sophisticated_scalar(&p).unwrap(), 2.0);
    }

    #[test]
    fn bad_parameters() {
        assert!(AccumulatingFlow::new(1.0, 1.0, 1.5).is_err());
        assert!(AccumulatingFlow::new(0.5, 2.0, 0.25).is_ok());
    }
}
