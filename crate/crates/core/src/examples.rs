//! Built-in models and the regression suite behind `equistop examples`.

use std::fmt;

use crate::engine::{self, EngineConfig, Principle};
use crate::hyperbolic::{HyperbolicModel, McSettings};
use crate::line::{self, AccumulatingFlow, LineProblem};
use crate::model::{parse_model, Model};
use crate::scalar::Scalar;
use crate::stopping::StoppingTime;
use crate::tree::ScenarioTree;

/// Five periods; the backward induction solution stops at once while the
/// equilibrium waits until 4.
pub const EARLY_BIS: &str = "\
# deterministic line, horizon 5
tree line 0..5
pref t=0 functional \"5 - |tau - 1|\"
pref t=1..3 functional \"tau\"
pref t=4..5 functional \"5 - tau\"
";

/// Shortening the horizon from 5 to 4 moves the backward induction
/// solution later (1 to 2) but the equilibrium earlier (5 to 2).
pub const HORIZON: &str = "\
# deterministic line, horizon 5
tree line 0..5
pref t=0 functional \"tau\"
pref t=1 functional \"5 - |tau - 2|\"
pref t=2 functional \"|tau - 3.2|\"
pref t=3..5 functional \"tau\"
";

pub const BLOCKS: [&str; 4] = ["early-bis", "horizon", "counterexample", "hyperbolic"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skipped => "SKIPPED",
        })
    }
}

#[derive(Clone, Debug)]
pub struct Item {
    pub block: &'static str,
    pub name: String,
    pub outcome: Outcome,
    pub detail: String,
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}/{}: {}", self.outcome, self.block, self.name, self.detail)
    }
}

struct Suite {
    block: &'static str,
    principle: Principle,
    items: Vec<Item>,
}

impl Suite {
    fn check(&mut self, name: &str, ok: Result<bool, String>, detail: String) {
        let (outcome, detail) = match ok {
            Ok(true) => (Outcome::Pass, detail),
            Ok(false) => (Outcome::Fail, detail),
            Err(e) => (Outcome::Fail, format!("error: {e}")),
        };
        self.items.push(Item { block: self.block, name: name.into(), outcome, detail });
    }

    /// Items relying on the iteration theorem hold only under `later`.
    fn iteration(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String), String>) {
        if self.principle == Principle::Earlier {
            self.items.push(Item {
                block: self.block,
                name: name.into(),
                outcome: Outcome::Skipped,
                detail: "needs the stop-later principle".into(),
            });
            return;
        }
        self.plain(name, f);
    }

    fn plain(&mut self, name: &str, f: impl FnOnce() -> Result<(bool, String), String>) {
        match f() {
            Ok((ok, detail)) => self.check(name, Ok(ok), detail),
            Err(e) => self.check(name, Err(e), String::new()),
        }
    }
}

pub fn model(text: &str) -> Model {
    parse_model(text).expect("built-in model parses")
}

/// Deterministic stop time of `tau`, or NaN when it is not deterministic.
pub fn stop_time(tree: &ScenarioTree, tau: &StoppingTime) -> f64 {
    tau.deterministic_time(tree).unwrap_or(f64::NAN)
}

/// `τ^b` seen from the root, and the equilibrium, for the model truncated
/// at `horizon`.
pub fn root_solutions(m: &Model, horizon: i64, cfg: &EngineConfig) -> Result<(f64, f64), String> {
    let (tree, _) = engine::truncate_horizon(&m.tree, Scalar::int(horizon)).map_err(|e| e.to_string())?;
    let b = engine::bis(&tree, &m.flow, cfg).map_err(|e| e.to_string())?;
    let s = engine::sophisticated(&tree, &m.flow, cfg).map_err(|e| e.to_string())?;
    Ok((stop_time(&tree, &b.root(&tree)), stop_time(&tree, &s)))
}

fn early_bis(s: &mut Suite, cfg: &EngineConfig) {
    let m = model(EARLY_BIS);
    let t = &m.tree;
    s.plain("bis-family", || {
        let b = engine::bis(t, &m.flow, cfg).map_err(|e| e.to_string())?;
        let times: Vec<f64> = t.ids().collect::<Vec<_>>().into_iter().rev().map(|v| stop_time(t, &b.full(t, v))).collect();
        Ok((times == [5.0, 4.0, 4.0, 4.0, 4.0, 0.0], format!("times 5..0 -> {times:?}")))
    });
    s.iteration("naive-chain", || {
        let c = engine::naive_chain(t, &m.flow, cfg).map_err(|e| e.to_string())?;
        let v: Vec<f64> = c.elements.iter().map(|x| stop_time(t, x)).collect();
        Ok((v == [5.0, 4.0, 4.0], format!("{v:?}")))
    });
    s.iteration("sophisticated", || {
        let soph = engine::sophisticated(t, &m.flow, cfg).map_err(|e| e.to_string())?;
        let brute = engine::sophisticated_bruteforce(t, &m.flow, cfg).map_err(|e| e.to_string())?;
        let d = engine::delimiting_chain(t, &m.flow, cfg).map_err(|e| e.to_string())?;
        let dt: Vec<f64> = d.iter().map(|x| stop_time(t, x)).collect();
        let ok = stop_time(t, &soph) == 4.0 && brute == soph && dt == [5.0, 4.0];
        Ok((ok, format!("tau_star = {}, delimiting = {dt:?}", stop_time(t, &soph))))
    });
    s.iteration("horizon-not-approachable", || {
        let a = engine::is_approachable(t, &m.flow, &StoppingTime::at_leaves(t), cfg).map_err(|e| e.to_string())?;
        let w = a.witness.as_ref().map(|d| (t.time(d.node).to_f64(), d.band.value.to_f64()));
        Ok((!a.approachable && w == Some((4.0, 0.0)), format!("witness {w:?}")))
    });
}

fn horizon(s: &mut Suite, cfg: &EngineConfig) {
    let m = model(HORIZON);
    s.plain("bis-not-monotone", || {
        let (b5, _) = root_solutions(&m, 5, cfg)?;
        let (b4, _) = root_solutions(&m, 4, cfg)?;
        Ok((b5 == 1.0 && b4 == 2.0, format!("tau_b(5) = {b5}, tau_b(4) = {b4}")))
    });
    s.iteration("sophisticated-monotone", || {
        let (_, s5) = root_solutions(&m, 5, cfg)?;
        let (_, s4) = root_solutions(&m, 4, cfg)?;
        Ok((s5 == 5.0 && s4 == 2.0, format!("tau_star(5) = {s5}, tau_star(4) = {s4}")))
    });
}

fn counterexample(s: &mut Suite) {
    let flow = AccumulatingFlow::default();
    let p = LineProblem::new(&flow);
    s.plain("chain", || {
        let c = line::naive_chain_scalar(&p, 20).map_err(|e| e.to_string())?;
        let worst = c
            .values
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, r)| (r - (1.0 + 1.0 / (i + 1) as f64)).abs())
            .fold(0.0, f64::max);
        let limit = c.limit;
        let ok = c.values.len() >= 21 && worst < 1e-5 && (limit - 1.0).abs() < 1e-4;
        Ok((ok, format!("max |rho_n - (1 + 1/n)| = {worst:.2e}, limit = {limit:.6}")))
    });
    s.iteration("limit-not-approachable", || {
        let a = line::is_approachable_scalar(&p, 1.0).map_err(|e| e.to_string())?;
        let w = a.witness.unwrap_or(f64::NAN);
        Ok((!a.approachable && (w - 0.5).abs() < 1e-4, format!("witness t = {w:.6}")))
    });
    s.iteration("sophisticated", || {
        let v = line::sophisticated_scalar(&p).map_err(|e| e.to_string())?;
        Ok(((v - 0.5).abs() < 1e-4, format!("tau_star = {v:.6} (derived, 0.5)")))
    });
}

fn hyperbolic(s: &mut Suite) {
    let m = HyperbolicModel::new(1.0).expect("beta > 0");
    s.plain("eta-boundary", || {
        let worst = (1..=20)
            .map(|i| {
                let a = 0.1 * i as f64;
                m.eta(a, a).map(|e| (e - a).abs())
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?
            .into_iter()
            .fold(0.0, f64::max);
        Ok((worst < 1e-8, format!("max |eta(a, a) - a| = {worst:.1e}")))
    });
    s.plain("threshold-scaling", || {
        let mut v = Vec::new();
        for beta in [0.5, 1.0, 2.0, 4.0] {
            let a = HyperbolicModel::new(beta).and_then(|h| h.a_star(1e-7)).map_err(|e| e.to_string())?;
            if !(a > 0.0 && a < beta.powf(-0.5)) {
                return Ok((false, format!("a*({beta}) = {a} out of range")));
            }
            v.push(a * beta.sqrt());
        }
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        Ok((spread < 1e-3, format!("a* sqrt(beta) = {:.6}, spread {spread:.1e}", v[0])))
    });
    s.plain("interior-root", || {
        let a = m.a_star(1e-7).map_err(|e| e.to_string())?;
        let x = m.x_star(2.0 * a, a).map_err(|e| e.to_string())?;
        Ok((x > 0.0 && x < a, format!("x*(2a*) = {x:.6}, a* = {a:.6}")))
    });
    s.plain("monte-carlo", || {
        let settings = McSettings { paths: 20_000, dt: 1e-4, ..McSettings::default() };
        let (x, a) = (0.1, 0.3);
        let q = m.eta(x, a).map_err(|e| e.to_string())?;
        let mc = m.mc_eta(x, a, &settings).map_err(|e| e.to_string())?;
        let z = (mc.mean - q).abs() / mc.se;
        Ok((z < 3.0, format!("eta = {q:.6}, mc = {:.6} +- {:.1e}", mc.mean, mc.se)))
    });
}

/// Runs the regression suite, optionally restricted to one block.
pub fn run(only: Option<&str>, principle: Principle) -> Result<Vec<Item>, String> {
    if let Some(b) = only {
        if !BLOCKS.contains(&b) {
            return Err(format!("unknown block {b:?}; expected one of {}", BLOCKS.join(", ")));
        }
    }
    let cfg = EngineConfig { principle, ..EngineConfig::default() };
    let mut items = Vec::new();
    for block in BLOCKS {
        if only.is_some_and(|b| b != block) {
            continue;
        }
        let mut s = Suite { block, principle, items: Vec::new() };
        match block {
            "early-bis" => early_bis(&mut s, &cfg),
            "horizon" => horizon(&mut s, &cfg),
            "counterexample" => counterexample(&mut s),
            _ => hyperbolic(&mut s),
        }
        items.extend(s.items);
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horizon_example_values() {
        let m = model(HORIZON);
        let cfg = EngineConfig::default();
        assert_eq!(root_solutions(&m, 5, &cfg).unwrap(), (1.0, 5.0));
        assert_eq!(root_solutions(&m, 4, &cfg).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn filtered_blocks() {
        let items = run(Some("early-bis"), Principle::Later).unwrap();
        assert!(items.iter().all(|i| i.block == "early-bis" && i.outcome == Outcome::Pass), "{items:?}");
        let earlier = run(Some("early-bis"), Principle::Earlier).unwrap();
        assert!(earlier.iter().any(|i| i.outcome == Outcome::Skipped));
        assert!(earlier.iter().all(|i| i.outcome != Outcome::Fail), "{earlier:?}");
        assert!(run(Some("nope"), Principle::Later).is_err());
    }
}
