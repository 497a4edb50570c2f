//! Line-oriented model files.
//!
//! ```text
//! # comment
//! tree line 0..5 [step=1]
//! tree binomial depth=4 [p=0.5 up=1 down=-1 x0=0 dt=1]
//! tree walk depth=2 moves=1,0,-1 probs=1/4,1/2,1/4 [x0=0 dt=1]
//! tree explicit
//! node r time=0 [state=0]
//! node a parent=r prob=1/2 time=1 [state=1,2]
//! pref t=4 functional "5 - |tau - 4|"
//! pref t=0..3 discounted hyperbolic beta=1 reward "abs(x)"
//! pref default discounted exponential r=0.1 reward "x"
//! pref t=1 discounted table points=0:1,1:0.5 reward "x"
//! principle later
//! ```

use std::fmt::{self, Write as _};

use thiserror::Error;

use crate::engine::Principle;
use crate::expr::Expr;
use crate::pref::{DiscountCurve, FlowError, ModelFlow, PrefEntry, PrefKind, Selector};
use crate::scalar::Scalar;
use crate::tree::{self, NodeSpec, ScenarioTree};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{line}:{column}: {message}")]
pub struct ModelError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

fn err<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError { line, column, message: message.into() })
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeSpec {
    Line { from: Scalar, to: Scalar, step: Scalar },
    Binomial { depth: usize, p: Scalar, up: Scalar, down: Scalar, x0: Scalar, dt: Scalar },
    Walk { depth: usize, moves: Vec<Scalar>, probs: Vec<Scalar>, x0: Scalar, dt: Scalar },
    Explicit(Vec<NodeSpec>),
}

impl TreeSpec {
    pub fn build(&self) -> Result<ScenarioTree, String> {
        match self {
            TreeSpec::Line { from, to, step } => {
                if !step.gt(&Scalar::ZERO) {
                    return Err("line step must be positive".into());
                }
                if to.cmp_tol(from) == std::cmp::Ordering::Less {
                    return Err("line range is empty".into());
                }
                let mut times = vec![*from];
                loop {
                    let next = *times.last().unwrap() + *step;
                    if next.gt(to) {
                        break;
                    }
                    times.push(next);
                }
                tree::line(&times).map_err(|e| e.to_string())
            }
            TreeSpec::Binomial { depth, p, up, down, x0, dt } => {
                tree::binomial(*depth, *p, *up, *down, *x0, *dt).map_err(|e| e.to_string())
            }
            TreeSpec::Walk { depth, moves, probs, x0, dt } => {
                if moves.len() != probs.len() || moves.is_empty() {
                    return Err("moves and probs need the same nonzero length".into());
                }
                tree::walk(*depth, moves, probs, *x0, *dt).map_err(|e| e.to_string())
            }
            TreeSpec::Explicit(nodes) => ScenarioTree::from_specs(nodes).map_err(|e| e.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub tree: TreeSpec,
    pub prefs: Vec<PrefEntry>,
    pub principle: Option<Principle>,
}

/// A parsed and validated model.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub tree: ScenarioTree,
    pub flow: ModelFlow,
}

impl Model {
    pub fn principle(&self) -> Principle {
        self.spec.principle.unwrap_or_default()
    }
}

struct Token {
    text: String,
    column: usize,
    quoted: bool,
}

fn tokenize(line: &str, lineno: usize) -> Result<Vec<Token>, ModelError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let mut text = String::new();
        // A token is a run of non-space characters, possibly ending in (or
        // consisting of) a quoted string.
        let mut quoted = false;
        while i < chars.len() && !chars[i].is_whitespace() {
            if chars[i] == '"' {
                i += 1;
                while i < chars.len() && chars[i] != '"' {
                    text.push(chars[i]);
                    i += 1;
                }
                if i == chars.len() {
                    return err(lineno, start + 1, "unterminated string");
                }
                i += 1;
                quoted = true;
                break;
            }
            text.push(chars[i]);
            i += 1;
        }
        out.push(Token { text, column: start + 1, quoted });
    }
    Ok(out)
}

struct Statement {
    line: usize,
    tokens: Vec<Token>,
}

impl Statement {
    fn end_column(&self) -> usize {
        self.tokens.last().map_or(1, |t| t.column + t.text.chars().count() + 2 * usize::from(t.quoted))
    }

    fn word(&self, i: usize, what: &str) -> Result<&Token, ModelError> {
        match self.tokens.get(i) {
            Some(t) => Ok(t),
            None => err(self.line, self.end_column() + 1, format!("expected {what}")),
        }
    }
}

/// `key=value` pairs from `tokens`, with their columns.
fn pairs<'a>(st: &'a Statement, from: usize, allowed: &[&str]) -> Result<Vec<(&'a str, &'a str, usize)>, ModelError> {
    let mut out: Vec<(&str, &str, usize)> = Vec::new();
    for t in &st.tokens[from..] {
        let Some((k, v)) = t.text.split_once('=') else {
            return err(st.line, t.column, format!("expected key=value, found '{}'", t.text));
        };
        if !allowed.contains(&k) {
            return err(st.line, t.column, format!("unknown key '{k}'"));
        }
        if out.iter().any(|(o, _, _)| *o == k) {
            return err(st.line, t.column, format!("repeated key '{k}'"));
        }
        out.push((k, v, t.column + k.len() + 1));
    }
    Ok(out)
}

fn lookup<'a>(kv: &[(&str, &'a str, usize)], key: &str) -> Option<(&'a str, usize)> {
    kv.iter().find(|(k, _, _)| *k == key).map(|(_, v, c)| (*v, *c))
}

fn scalar(text: &str, line: usize, column: usize) -> Result<Scalar, ModelError> {
    match Scalar::parse(text) {
        Some(s) => Ok(s),
        None => err(line, column, format!("expected a number, found '{text}'")),
    }
}

fn scalar_list(text: &str, line: usize, column: usize) -> Result<Vec<Scalar>, ModelError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut col = column;
    for part in text.split(',') {
        out.push(scalar(part, line, col)?);
        col += part.len() + 1;
    }
    Ok(out)
}

fn required<'a>(st: &Statement, kv: &[(&str, &'a str, usize)], key: &str) -> Result<(&'a str, usize), ModelError> {
    match lookup(kv, key) {
        Some(x) => Ok(x),
        None => err(st.line, st.end_column(), format!("missing {key}=")),
    }
}

fn opt_scalar(st: &Statement, kv: &[(&str, &str, usize)], key: &str, default: Scalar) -> Result<Scalar, ModelError> {
    match lookup(kv, key) {
        Some((v, c)) => scalar(v, st.line, c),
        None => Ok(default),
    }
}

fn depth(st: &Statement, kv: &[(&str, &str, usize)]) -> Result<usize, ModelError> {
    let (v, c) = required(st, kv, "depth")?;
    match v.parse::<usize>() {
        Ok(d) => Ok(d),
        Err(_) => err(st.line, c, format!("depth must be a nonnegative integer, found '{v}'")),
    }
}

fn range(text: &str, line: usize, column: usize) -> Result<(Scalar, Scalar), ModelError> {
    match text.split_once("..") {
        Some((a, b)) => Ok((scalar(a, line, column)?, scalar(b, line, column + a.len() + 2)?)),
        None => err(line, column, format!("expected a range A..B, found '{text}'")),
    }
}

fn parse_tree(st: &Statement) -> Result<TreeSpec, ModelError> {
    let kind = st.word(1, "tree kind")?;
    match kind.text.as_str() {
        "line" => {
            let r = st.word(2, "time range")?;
            let (from, to) = range(&r.text, st.line, r.column)?;
            let kv = pairs(st, 3, &["step"])?;
            Ok(TreeSpec::Line { from, to, step: opt_scalar(st, &kv, "step", Scalar::ONE)? })
        }
        "binomial" => {
            let kv = pairs(st, 2, &["depth", "p", "up", "down", "x0", "dt"])?;
            Ok(TreeSpec::Binomial {
                depth: depth(st, &kv)?,
                p: opt_scalar(st, &kv, "p", Scalar::ratio(1, 2))?,
                up: opt_scalar(st, &kv, "up", Scalar::ONE)?,
                down: opt_scalar(st, &kv, "down", Scalar::int(-1))?,
                x0: opt_scalar(st, &kv, "x0", Scalar::ZERO)?,
                dt: opt_scalar(st, &kv, "dt", Scalar::ONE)?,
            })
        }
        "walk" => {
            let kv = pairs(st, 2, &["depth", "moves", "probs", "x0", "dt"])?;
            let (m, mc) = required(st, &kv, "moves")?;
            let (p, pc) = required(st, &kv, "probs")?;
            let moves = scalar_list(m, st.line, mc)?;
            let probs = scalar_list(p, st.line, pc)?;
            if moves.len() != probs.len() || moves.is_empty() {
                return err(st.line, pc, "moves and probs need the same nonzero length");
            }
            Ok(TreeSpec::Walk {
                depth: depth(st, &kv)?,
                moves,
                probs,
                x0: opt_scalar(st, &kv, "x0", Scalar::ZERO)?,
                dt: opt_scalar(st, &kv, "dt", Scalar::ONE)?,
            })
        }
        "explicit" => {
            if let Some(t) = st.tokens.get(2) {
                return err(st.line, t.column, "unexpected argument");
            }
            Ok(TreeSpec::Explicit(Vec::new()))
        }
        other => err(st.line, kind.column, format!("unknown tree kind '{other}'")),
    }
}

fn parse_node(st: &Statement) -> Result<NodeSpec, ModelError> {
    let label = st.word(1, "node label")?;
    if label.text.contains('=') || label.quoted {
        return err(st.line, label.column, "expected a node label");
    }
    let kv = pairs(st, 2, &["parent", "prob", "time", "state"])?;
    let (t, tc) = required(st, &kv, "time")?;
    let parent = lookup(&kv, "parent").map(|(p, _)| p.to_string());
    if parent.is_none() {
        if let Some((_, c)) = lookup(&kv, "prob") {
            return err(st.line, c, "the root takes no prob=");
        }
    }
    Ok(NodeSpec {
        label: label.text.clone(),
        parent,
        prob: opt_scalar(st, &kv, "prob", Scalar::ONE)?,
        time: scalar(t, st.line, tc)?,
        state: match lookup(&kv, "state") {
            Some((s, c)) => scalar_list(s, st.line, c)?,
            None => Vec::new(),
        },
    })
}

fn parse_expr(tok: &Token, line: usize) -> Result<Expr, ModelError> {
    if !tok.quoted {
        return err(line, tok.column, "expected a quoted expression");
    }
    Expr::parse(&tok.text).map_err(|e| ModelError { line, column: tok.column + e.column, message: e.message })
}

fn parse_pref(st: &Statement) -> Result<PrefEntry, ModelError> {
    let sel = st.word(1, "t=... or default")?;
    let selector = if sel.text == "default" {
        Selector::Default
    } else if let Some(v) = sel.text.strip_prefix("t=") {
        if v.contains("..") {
            let (a, b) = range(v, st.line, sel.column + 2)?;
            Selector::Range(a, b)
        } else {
            Selector::At(scalar(v, st.line, sel.column + 2)?)
        }
    } else {
        return err(st.line, sel.column, format!("expected t=... or default, found '{}'", sel.text));
    };
    let family = st.word(2, "preference family")?;
    let kind = match family.text.as_str() {
        "functional" => {
            let e = st.word(3, "quoted functional")?;
            if let Some(t) = st.tokens.get(4) {
                return err(st.line, t.column, "unexpected argument");
            }
            PrefKind::Functional(parse_expr(e, st.line)?)
        }
        "discounted" => {
            let curve_tok = st.word(3, "discount curve")?;
            let mut i = 4;
            let mut params: Vec<&Token> = Vec::new();
            while let Some(t) = st.tokens.get(i) {
                if t.text == "reward" && !t.quoted {
                    break;
                }
                params.push(t);
                i += 1;
            }
            let param = |key: &str| -> Result<(&str, usize), ModelError> {
                let Some(t) = params.first() else {
                    return err(st.line, curve_tok.column + curve_tok.text.len() + 1, format!("missing {key}="));
                };
                match t.text.split_once('=') {
                    Some((k, v)) if k == key => Ok((v, t.column + k.len() + 1)),
                    Some((k, _)) => err(st.line, t.column, format!("unknown key '{k}'")),
                    None => err(st.line, t.column, format!("expected {key}=")),
                }
            };
            if params.len() > 1 {
                return err(st.line, params[1].column, "unexpected argument");
            }
            let curve = match curve_tok.text.as_str() {
                "hyperbolic" => {
                    let (v, c) = param("beta")?;
                    DiscountCurve::Hyperbolic { beta: scalar(v, st.line, c)? }
                }
                "exponential" => {
                    let (v, c) = param("r")?;
                    DiscountCurve::Exponential { rate: scalar(v, st.line, c)? }
                }
                "table" => {
                    let (v, c) = param("points")?;
                    let mut points = Vec::new();
                    let mut col = c;
                    for part in v.split(',') {
                        let Some((a, b)) = part.split_once(':') else {
                            return err(st.line, col, "expected t:D pairs");
                        };
                        points.push((scalar(a, st.line, col)?, scalar(b, st.line, col + a.len() + 1)?));
                        col += part.len() + 1;
                    }
                    DiscountCurve::Tabulated { points }
                }
                other => return err(st.line, curve_tok.column, format!("unknown discount curve '{other}'")),
            };
            if let Err(m) = curve.validate() {
                return err(st.line, curve_tok.column, m);
            }
            st.word(i, "reward")?;
            let e = st.word(i + 1, "quoted reward")?;
            if let Some(t) = st.tokens.get(i + 2) {
                return err(st.line, t.column, "unexpected argument");
            }
            PrefKind::Discounted { curve, reward: parse_expr(e, st.line)? }
        }
        other => return err(st.line, family.column, format!("unknown preference family '{other}'")),
    };
    Ok(PrefEntry { selector, kind })
}

/// Parses and validates a model document.
pub fn parse_model(text: &str) -> Result<Model, ModelError> {
    let spec = parse_spec(text)?;
    let (tree, flow) = validate(&spec, text)?;
    Ok(Model { spec, tree, flow })
}

/// Syntax only; no tree is built.
pub fn parse_spec(text: &str) -> Result<ModelSpec, ModelError> {
    let mut statements = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line, i + 1)?;
        if !tokens.is_empty() {
            statements.push(Statement { line: i + 1, tokens });
        }
    }
    if statements.is_empty() {
        return err(1, 1, "empty model: expected a tree statement");
    }
    let mut tree: Option<TreeSpec> = None;
    let mut prefs = Vec::new();
    let mut principle = None;
    for st in &statements {
        let head = &st.tokens[0];
        match head.text.as_str() {
            "tree" => {
                if tree.is_some() {
                    return err(st.line, head.column, "second tree statement");
                }
                tree = Some(parse_tree(st)?);
            }
            "node" => match &mut tree {
                Some(TreeSpec::Explicit(nodes)) => nodes.push(parse_node(st)?),
                _ => return err(st.line, head.column, "node statements need a preceding 'tree explicit'"),
            },
            "pref" => prefs.push(parse_pref(st)?),
            "principle" => {
                let w = st.word(1, "later or earlier")?;
                if principle.is_some() {
                    return err(st.line, head.column, "second principle statement");
                }
                principle = Some(w.text.parse::<Principle>().or_else(|m| err(st.line, w.column, m))?);
                if let Some(t) = st.tokens.get(2) {
                    return err(st.line, t.column, "unexpected argument");
                }
            }
            other => return err(st.line, head.column, format!("unknown statement '{other}'")),
        }
    }
    let Some(tree) = tree else {
        return err(statements[0].line, 1, "missing tree statement");
    };
    if prefs.is_empty() {
        return err(statements.last().unwrap().line + 1, 1, "missing pref statement");
    }
    Ok(ModelSpec { tree, prefs, principle })
}

fn line_of(text: &str, keyword: &str, nth: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.split_whitespace().next() == Some(keyword))
        .nth(nth)
        .map_or(1, |(i, _)| i + 1)
}

fn validate(spec: &ModelSpec, text: &str) -> Result<(ScenarioTree, ModelFlow), ModelError> {
    let tree = spec.tree.build().or_else(|m| err(line_of(text, "tree", 0), 1, m))?;
    let pref_err = |i: usize, e: FlowError| ModelError { line: line_of(text, "pref", i), column: 1, message: e.to_string() };
    for i in 0..spec.prefs.len() {
        ModelFlow::new(spec.prefs[..=i].to_vec()).map_err(|e| pref_err(i, e))?;
    }
    let flow = ModelFlow::new(spec.prefs.clone()).map_err(|e| pref_err(0, e))?;
    let times = tree.distinct_times();
    for (i, e) in spec.prefs.iter().enumerate() {
        if e.selector != Selector::Default && !times.iter().any(|&t| e.selector.matches(t)) {
            return Err(pref_err(i, FlowError::Dangling(e.selector.to_string())));
        }
    }
    flow.check_against(&tree)
        .map_err(|e| ModelError { line: line_of(text, "tree", 0), column: 1, message: e.to_string() })?;
    Ok((tree, flow))
}

fn list(xs: &[Scalar]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Prints a spec so that [`parse_spec`] returns it unchanged.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        match &self.tree {
            TreeSpec::Line { from, to, step } => writeln!(out, "tree line {from}..{to} step={step}")?,
            TreeSpec::Binomial { depth, p, up, down, x0, dt } => {
                writeln!(out, "tree binomial depth={depth} p={p} up={up} down={down} x0={x0} dt={dt}")?
            }
            TreeSpec::Walk { depth, moves, probs, x0, dt } => writeln!(
                out,
                "tree walk depth={depth} moves={} probs={} x0={x0} dt={dt}",
                list(moves),
                list(probs)
            )?,
            TreeSpec::Explicit(nodes) => {
                out.push_str("tree explicit\n");
                for n in nodes {
                    write!(out, "node {}", n.label)?;
                    if let Some(p) = &n.parent {
                        write!(out, " parent={p} prob={}", n.prob)?;
                    }
                    write!(out, " time={}", n.time)?;
                    if !n.state.is_empty() {
                        write!(out, " state={}", list(&n.state))?;
                    }
                    out.push('\n');
                }
            }
        }
        for e in &self.prefs {
            write!(out, "pref {} ", e.selector)?;
            match &e.kind {
                PrefKind::Functional(x) => writeln!(out, "functional \"{x}\"")?,
                PrefKind::Discounted { curve, reward } => writeln!(out, "discounted {curve} reward \"{reward}\"")?,
            }
        }
        if let Some(p) = self.principle {
            writeln!(out, "principle {p}")?;
        }
        f.write_str(&out)
    }
}
