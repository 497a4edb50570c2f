//! Random leveled trees with random preference flows, checked against the
//! structural properties of the equilibrium constructions.
//!
//! Instance `i` of a run with seed `s` draws from a ChaCha stream keyed by
//! `(s, i)`, so an instance can be replayed on its own and the output does
//! not depend on scheduling.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::{self, EngineConfig};
use crate::model::{parse_model, parse_spec, Model};
use crate::pref::{self, PreferenceFlow, SupMethod};
use crate::stopping::{self, StoppingTime};
use crate::tree::NodeId;

#[derive(Clone, Copy, Debug)]
pub struct FuzzConfig {
    pub seed: u64,
    pub instances: usize,
    /// Upper bound on the number of stopping times of a generated tree.
    pub max_stopping_times: u128,
    /// Sampled stopping times per instance for the map checks.
    pub samples: usize,
    /// Harness self-check: report the ordering property inverted, so that
    /// every instance fails.
    pub invert: bool,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig { seed: 42, instances: 500, max_stopping_times: 3_000, samples: 24, invert: false }
    }
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub index: usize,
    pub text: String,
    pub nodes: usize,
    pub periods: usize,
    pub family: &'static str,
    pub summary: String,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct FuzzReport {
    pub config: FuzzConfig,
    pub instances: Vec<Instance>,
}

impl FuzzReport {
    pub fn failures(&self) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(|i| !i.violations.is_empty())
    }

    /// One line per instance followed by a summary; byte-stable for a
    /// fixed configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for i in &self.instances {
            let status = if i.violations.is_empty() { "ok".to_string() } else { i.violations.join(";") };
            writeln!(out, "{} nodes={} periods={} family={} {} {}", i.index, i.nodes, i.periods, i.family, i.summary, status)
                .unwrap();
        }
        let failed = self.failures().count();
        writeln!(out, "seed = {}", self.config.seed).unwrap();
        writeln!(out, "instances = {}", self.instances.len()).unwrap();
        writeln!(out, "failed = {failed}").unwrap();
        out
    }
}

pub fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

const FAMILIES: [&str; 3] = ["functional", "discounted", "mixed"];

fn functional(rng: &mut ChaCha8Rng, t: usize, periods: usize) -> String {
    let a = rng.gen_range(0..=5);
    let c = rng.gen_range((t + 1).min(periods)..=periods);
    match rng.gen_range(0..9) {
        0..=3 => format!("{a} - |tau - {c}|"),
        4 => "tau".into(),
        5 => format!("{a} - tau"),
        6 => format!("|tau - {c}|"),
        7 => format!("{a}"),
        _ => format!("{}*tau - {a}", rng.gen_range(1..=2)),
    }
}

fn discounted(rng: &mut ChaCha8Rng, periods: usize) -> String {
    let curve = match rng.gen_range(0..3) {
        0 => format!("hyperbolic beta={}", rng.gen_range(1..=3)),
        1 => format!("exponential r=1/{}", rng.gen_range(1..=4)),
        _ => {
            let mut d = 1u32;
            let pts: Vec<String> = (1..=periods)
                .map(|t| {
                    d += rng.gen_range(0..=2);
                    format!("{t}:1/{d}")
                })
                .collect();
            format!("table points=0:1,{}", pts.join(","))
        }
    };
    let a = rng.gen_range(0..=4);
    let reward = match rng.gen_range(0..6) {
        0 => "x".to_string(),
        1 => "abs(x)".into(),
        2 => "max(x, 0)".into(),
        3 => format!("{a} - x"),
        4 => "x*x".into(),
        _ => format!("{a}"),
    };
    format!("discounted {curve} reward \"{reward}\"")
}

/// Model text for instance `index`; regenerated until the tree has at most
/// `max` stopping times.
pub fn generate(seed: u64, index: usize, max: u128) -> (String, ChaCha8Rng) {
    let mut rng = rng_for(seed, index);
    loop {
        let periods = rng.gen_range(1..=4);
        let family = FAMILIES[rng.gen_range(0..3)];
        let mut text = format!("# fuzz seed={seed} instance={index} family={family}\ntree explicit\nnode n0 time=0 state=0\n");
        let mut level = vec![(0usize, 0i64)];
        let mut next = 1;
        for t in 1..=periods {
            let mut new = Vec::new();
            for &(parent, x) in &level {
                let k = rng.gen_range(1..=3);
                let w: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=3)).collect();
                let total: i64 = w.iter().sum();
                for wi in w {
                    let y = x + rng.gen_range(-1..=2);
                    writeln!(text, "node n{next} parent=n{parent} prob={wi}/{total} time={t} state={y}").unwrap();
                    new.push((next, y));
                    next += 1;
                }
            }
            level = new;
        }
        for t in 0..=periods {
            let kind = match family {
                "functional" => format!("functional \"{}\"", functional(&mut rng, t, periods)),
                "discounted" => discounted(&mut rng, periods),
                _ if rng.gen_bool(0.5) => format!("functional \"{}\"", functional(&mut rng, t, periods)),
                _ => discounted(&mut rng, periods),
            };
            writeln!(text, "pref t={t} {kind}").unwrap();
        }
        let m = parse_model(&text).expect("generated model parses");
        if stopping::total_count(&m.tree, &StoppingTime::at_leaves(&m.tree)) <= max {
            return (text, rng);
        }
    }
}

struct Checker<'a> {
    m: &'a Model,
    cfg: EngineConfig,
    violations: Vec<String>,
}

impl Checker<'_> {
    fn flag(&mut self, property: &str, ok: bool) {
        if !ok {
            self.violations.push(property.to_string());
        }
    }
}

type Res<T> = Result<T, String>;

fn s<T, E: ToString>(r: Result<T, E>) -> Res<T> {
    r.map_err(|e| e.to_string())
}

fn check(c: &mut Checker, rng: &mut ChaCha8Rng, fc: &FuzzConfig) -> Res<String> {
    let (m, cfg) = (c.m, c.cfg);
    let tree = &m.tree;
    let flow: &dyn PreferenceFlow = &m.flow;

    let spec = s(parse_spec(&m.spec.to_string()))?;
    c.flag("round-trip", spec == m.spec);

    let b = s(engine::bis(tree, flow, &cfg))?;
    c.flag("bis-iterative", s(engine::bis_iterative(tree, flow, &cfg))? == b);

    let soph = s(engine::sophisticated(tree, flow, &cfg))?;
    let brute = s(engine::sophisticated_bruteforce(tree, flow, &cfg))?;
    let delim = s(engine::delimiting_chain(tree, flow, &cfg))?;
    c.flag("triple-agreement", brute == soph && delim.last() == Some(&soph));

    let ordered = s(stopping::le(tree, &b.root(tree), &soph))?;
    c.flag("bis-before-equilibrium", ordered != fc.invert);

    // Stage property of every backward induction solution.
    let mut stage = true;
    for v in tree.ids() {
        let tb = b.full(tree, v);
        for w in tree.subtree(v) {
            if tb.stops_before(tree, w) || tb.contains(w) {
                continue;
            }
            let cont = s(flow.evaluate(tree, &tb, w))?;
            let now = s(pref::immediate(flow, tree, w))?;
            stage &= cont.ge(&now);
        }
    }
    c.flag("stage", stage);

    // Map properties on a sample of stopping times.
    let all = s(stopping::enumerate_all(tree, &StoppingTime::at_leaves(tree), cfg.enum_cap))?;
    let mut sample: Vec<&StoppingTime> = all.choose_multiple(rng, fc.samples.min(all.len())).collect();
    sample.sort_by_key(|t| t.stops().to_vec());
    let images = sample.iter().map(|r| s(engine::f_map(tree, flow, r, &cfg))).collect::<Res<Vec<_>>>()?;
    let mut decreasing = true;
    let mut monotone = true;
    for (i, (r, fr)) in sample.iter().zip(&images).enumerate() {
        decreasing &= s(stopping::le(tree, fr, r))?;
        for (q, fq) in sample.iter().zip(&images).skip(i + 1) {
            if s(stopping::le(tree, q, r))? {
                monotone &= s(stopping::le(tree, fq, fr))?;
            }
            if s(stopping::le(tree, r, q))? {
                monotone &= s(stopping::le(tree, fr, fq))?;
            }
        }
    }
    c.flag("f-decreasing", decreasing);
    c.flag("f-monotone", monotone);

    // Approachable times: closed under join, below every delimiting time,
    // and the increasing chain of partial joins ends at the equilibrium.
    let mut approachable = Vec::new();
    for t in &all {
        if s(engine::f_map(tree, flow, t, &cfg))? == *t {
            approachable.push(t.clone());
        }
    }
    let mut closed = true;
    for (i, x) in approachable.iter().enumerate().take(40) {
        for y in approachable.iter().skip(i + 1).take(40) {
            closed &= approachable.contains(&s(stopping::join(tree, x, y))?);
        }
    }
    c.flag("join-closure", closed);
    let mut below = true;
    for t in &approachable {
        for d in &delim {
            below &= s(stopping::le(tree, t, d))?;
        }
    }
    c.flag("approachable-below-delimiting", below);
    let mut acc = StoppingTime::at_root(tree);
    let mut limit_ok = true;
    for t in &approachable {
        acc = s(stopping::join(tree, &acc, t))?;
        limit_ok &= approachable.contains(&acc);
    }
    c.flag("limit-closure", limit_ok && acc == soph);

    // Forward monotonicity under truncation.
    let levels = tree.level_times().ok_or("generated tree is not leveled")?;
    let mut prev: Option<StoppingTime> = None;
    let mut forward = true;
    for t in levels {
        let (small, map) = s(engine::truncate_horizon(tree, t))?;
        let st = s(engine::sophisticated(&small, flow, &cfg))?;
        let lifted = s(st.lift(tree, &map))?;
        if let Some(p) = &prev {
            forward &= s(stopping::le(tree, p, &lifted))?;
        }
        prev = Some(lifted);
    }
    c.flag("forward-monotone", forward && prev.as_ref() == Some(&soph));

    // Backward recursion against enumeration on a few bands.
    let mut agree = true;
    for rho in sample.iter().take(4) {
        for v in tree.ids() {
            if rho.stops_before(tree, v) || rho.contains(v) {
                continue;
            }
            let dp = s(pref::sup_band(flow, tree, v, rho, cfg.enum_cap, SupMethod::Auto))?;
            let en = s(pref::sup_band(flow, tree, v, rho, cfg.enum_cap, SupMethod::Enumerate))?;
            agree &= (dp.value.to_f64() - en.value.to_f64()).abs() <= 1e-12
                && dp.strictly_dominated == en.strictly_dominated;
        }
    }
    c.flag("dp-enumeration", agree);

    Ok(format!(
        "tau_b_root={} tau_star={} approachable={}",
        b.root(tree).describe(tree),
        soph.describe(tree),
        approachable.len()
    ))
}

pub fn run_instance(fc: &FuzzConfig, index: usize) -> Instance {
    let (text, mut rng) = generate(fc.seed, index, fc.max_stopping_times);
    let m = parse_model(&text).expect("generated model parses");
    let family = FAMILIES.iter().find(|f| text.lines().next().is_some_and(|l| l.ends_with(*f))).copied().unwrap_or("?");
    let periods = m.tree.level_times().map_or(0, |l| l.len() - 1);
    let mut c = Checker { m: &m, cfg: EngineConfig::default(), violations: Vec::new() };
    let summary = match check(&mut c, &mut rng, fc) {
        Ok(s) => s,
        Err(e) => {
            c.violations.push(format!("error({e})"));
            String::new()
        }
    };
    Instance { index, nodes: m.tree.len(), periods, family, summary, violations: c.violations, text }
}

pub fn run(fc: &FuzzConfig) -> FuzzReport {
    let instances = (0..fc.instances).into_par_iter().map(|i| run_instance(fc, i)).collect();
    FuzzReport { config: *fc, instances }
}

/// Node ids of the stops, for compact diagnostics.
pub fn stops(tau: &StoppingTime) -> Vec<usize> {
    tau.stops().iter().map(|n: &NodeId| n.0).collect()
}
