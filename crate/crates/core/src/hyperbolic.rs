//! Stopping `|B|` under hyperbolic discounting: `J(τ; t) = E_t[|B_τ| / (1 + β(τ - t))]`.
//!
//! For a threshold `a` and a start `|x| <= a`, `η(x, a)` is the value of
//! waiting until `|B|` first reaches `a`. Using
//! `1/(1 + βτ) = ∫₀^∞ e^{-s} e^{-sβτ} ds` and the two-sided exit transform,
//!
//! ```text
//! η(x, a) = a ∫₀^∞ e^{-s} cosh(x √(2βs)) / cosh(a √(2βs)) ds,
//! ```
//!
//! which is evaluated with composite Gauss–Legendre after the substitution
//! `s = u²`. The equilibrium threshold `a*` separates the thresholds for
//! which `η(·, a) - x` stays nonnegative on `(0, a)` from those where it
//! dips below zero.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use rand::SeedableRng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HyperbolicError {
    #[error("|x| = {x} exceeds the threshold a = {a}")]
    OutsideThreshold { x: f64, a: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no sign change of min(eta - x) in (0, {hi}); the model violates the threshold structure")]
    NoBracket { hi: f64 },
    #[error("a = {a} is not above the critical threshold {a_star}")]
    Domain { a: f64, a_star: f64 },
    #[error("check failed: {0}")]
    Check(String),
}

/// Numerically stable `cosh(kx) / cosh(ka)` with `k = √(2λ)`: the value of
/// `E_x[e^{-λ τ_a}]` for the first exit of Brownian motion from `(-a, a)`.
pub fn exit_laplace(x: f64, a: f64, lambda: f64) -> Result<f64, HyperbolicError> {
    if !(a > 0.0) || lambda < 0.0 || !lambda.is_finite() {
        return Err(HyperbolicError::Parameter(format!("need a > 0 and lambda >= 0, got a={a}, lambda={lambda}")));
    }
    let ax = x.abs();
    if ax > a {
        return Err(HyperbolicError::OutsideThreshold { x, a });
    }
    Ok(laplace_unchecked(ax, a, (2.0 * lambda).sqrt()))
}

fn laplace_unchecked(ax: f64, a: f64, k: f64) -> f64 {
    if k == 0.0 || ax == a {
        return 1.0;
    }
    (k * (ax - a)).exp() * (1.0 + (-2.0 * k * ax).exp()) / (1.0 + (-2.0 * k * a).exp())
}

/// Quadrature for the outer integral.
#[derive(Clone, Debug)]
pub struct Quadrature {
    rule: GaussLegendre,
    pub panels: usize,
    /// Upper limit of the `s` integral; the discarded tail is `e^{-s_max}`.
    pub s_max: f64,
}

impl Quadrature {
    pub fn new(nodes: usize, panels: usize, s_max: f64) -> Result<Self, HyperbolicError> {
        let n = NonZeroUsize::new(nodes).ok_or_else(|| HyperbolicError::Parameter("quadrature needs nodes".into()))?;
        if panels == 0 || !(s_max > 0.0) {
            return Err(HyperbolicError::Parameter("quadrature needs panels and a positive range".into()));
        }
        Ok(Quadrature { rule: GaussLegendre::new(n), panels, s_max })
    }

    /// `∫₀^{s_max} e^{-s} h(s) ds` with `s = u²`.
    pub fn laplace_weighted(&self, h: impl Fn(f64) -> f64) -> f64 {
        let top = self.s_max.sqrt();
        let width = top / self.panels as f64;
        (0..self.panels)
            .map(|i| {
                let (lo, hi) = (i as f64 * width, (i + 1) as f64 * width);
                self.rule.integrate(lo, hi, |u| {
                    let s = u * u;
                    2.0 * u * (-s).exp() * h(s)
                })
            })
            .sum()
    }
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::new(24, 16, 40.0).expect("valid defaults")
    }
}

/// Brownian motion `B` with reward `|B_τ|` discounted by `1/(1 + βt)`.
#[derive(Clone, Debug)]
pub struct HyperbolicModel {
    pub beta: f64,
    pub quad: Quadrature,
}

/// A policy that stops when `|B|` first reaches `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPolicy {
    pub b: f64,
}

/// Threshold below which `min(η - x)` counts as negative.
const DIP: f64 = 1e-12;

impl HyperbolicModel {
    pub fn new(beta: f64) -> Result<Self, HyperbolicError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(HyperbolicError::Parameter(format!("beta must be positive, got {beta}")));
        }
        Ok(HyperbolicModel { beta, quad: Quadrature::default() })
    }

    /// `D(t) = 1/(1 + βt)`
    pub fn discount(&self, t: f64) -> f64 {
        1.0 / (1.0 + self.beta * t)
    }

    /// Expected discounted reward of waiting until `|B|`, started at `x`,
    /// hits `a`.
    pub fn eta(&self, x: f64, a: f64) -> Result<f64, HyperbolicError> {
        exit_laplace(x, a, 0.0)?;
        let ax = x.abs();
        if ax == a {
            return Ok(a);
        }
        let two_beta = 2.0 * self.beta;
        Ok(a * self.quad.laplace_weighted(|s| laplace_unchecked(ax, a, (two_beta * s).sqrt())))
    }

    /// `min` of `η(x, a) - x` over `x ∈ [0, a]`, and where it is attained.
    /// The function is convex in `x` and vanishes at `x = a`.
    pub fn min_gap(&self, a: f64) -> Result<(f64, f64), HyperbolicError> {
        let g = |x: f64| self.eta(x, a).map(|e| e - x);
        const COARSE: usize = 64;
        let mut best = (g(a)?, a, COARSE);
        for i in 0..COARSE {
            let x = a * i as f64 / COARSE as f64;
            let v = g(x)?;
            if v < best.0 {
                best = (v, x, i);
            }
        }
        // Golden-section search in the cell around the coarse minimum.
        let i = best.2;
        let (mut lo, mut hi) = (a * i.saturating_sub(1) as f64 / COARSE as f64, a * ((i + 1).min(COARSE)) as f64 / COARSE as f64);
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (hi - r * (hi - lo), lo + r * (hi - lo));
        let (mut gc, mut gd) = (g(c)?, g(d)?);
        while hi - lo > 1e-12 * a.max(1.0) {
            if gc < gd {
                hi = d;
                d = c;
                gd = gc;
                c = hi - r * (hi - lo);
                gc = g(c)?;
            } else {
                lo = c;
                c = d;
                gc = gd;
                d = lo + r * (hi - lo);
                gd = g(d)?;
            }
        }
        let (v, x) = if gc < gd { (gc, c) } else { (gd, d) };
        Ok(if v < best.0 { (v, x) } else { (best.0, best.1) })
    }

    fn dips(&self, a: f64) -> Result<bool, HyperbolicError> {
        Ok(self.min_gap(a)?.0 < -DIP)
    }

    /// Critical threshold, by bisection on whether `η(·, a) - x` dips
    /// below zero.
    pub fn a_star(&self, tol: f64) -> Result<f64, HyperbolicError> {
        if !(tol > 0.0) {
            return Err(HyperbolicError::Parameter(format!("tol must be positive, got {tol}")));
        }
        let scale = self.beta.sqrt().recip();
        let hi0 = scale * (1.0 + 10.0 * tol);
        let lo0 = scale * 1e-3;
        if !self.dips(hi0)? || self.dips(lo0)? {
            return Err(HyperbolicError::NoBracket { hi: hi0 });
        }
        let (mut lo, mut hi) = (lo0, hi0);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.dips(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let a = 0.5 * (lo + hi);
        if !(a > 0.0 && a < scale) {
            return Err(HyperbolicError::Check(format!("a* = {a} outside (0, {scale})")));
        }
        Ok(a)
    }

    /// The root of `η(x, a) = x` in `(0, a)` for `a` above `a*`.
    pub fn x_star(&self, a: f64, a_star: f64) -> Result<f64, HyperbolicError> {
        if a <= a_star {
            return Err(HyperbolicError::Domain { a, a_star });
        }
        let (v, xmin) = self.min_gap(a)?;
        if v >= -DIP {
            return Err(HyperbolicError::Domain { a, a_star });
        }
        let (mut lo, mut hi) = (0.0, xmin);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if self.eta(mid, a)? > mid {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let x = 0.5 * (lo + hi);
        // Sign structure around the root.
        for i in 1..50 {
            let y = a * i as f64 / 50.0;
            let gap = self.eta(y, a)? - y;
            if (y < x - 1e-9 && gap <= 0.0) || (y > x + 1e-9 && gap >= 0.0) {
                return Err(HyperbolicError::Check(format!("eta(x, {a}) - x has the wrong sign at x = {y}")));
            }
        }
        Ok(x)
    }

    /// Threshold policy at `a*`, spot-checked to be approachable:
    /// `η(x, a*) >= |x|` for `|x| < a*`.
    pub fn equilibrium_threshold(&self, tol: f64) -> Result<ThresholdPolicy, HyperbolicError> {
        let b = self.a_star(tol)?;
        for i in 0..100 {
            let x = b * i as f64 / 100.0;
            if self.eta(x, b)? < x {
                return Err(HyperbolicError::Check(format!("eta({x}, a*) < {x}")));
            }
        }
        Ok(ThresholdPolicy { b })
    }
}

/// Monte Carlo settings. Paths are split over a fixed number of logical
/// workers, each with its own ChaCha stream, so results depend on
/// `(seed, workers)` only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McSettings {
    pub paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub workers: usize,
    /// Paths still inside at this time are stopped there.
    pub max_time: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings { paths: 100_000, dt: 1e-4, seed: 42, workers: 8, max_time: 1_000.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct McStats {
    pub mean: f64,
    pub se: f64,
    pub paths: usize,
    /// Paths cut off at `max_time`.
    pub truncated: usize,
    pub samples: Option<Vec<f64>>,
}

fn exit_time(rng: &mut ChaCha8Rng, x: f64, a: f64, dt: f64, max_time: f64) -> (f64, bool) {
    if x.abs() >= a {
        return (0.0, false);
    }
    let sd = dt.sqrt();
    let (mut b, mut t) = (x, 0.0);
    // Bridge crossing probabilities below e^{-20} are skipped.
    let cutoff = 20.0 * dt;
    while t < max_time {
        let z: f64 = rng.sample(StandardNormal);
        let next = b + sd * z;
        t += dt;
        if next.abs() >= a {
            return (t, false);
        }
        let (up, down) = ((a - b) * (a - next), (a + b) * (a + next));
        if up < cutoff || down < cutoff {
            let p = (-2.0 * up / dt).exp() + (-2.0 * down / dt).exp();
            if rng.gen::<f64>() < p {
                return (t, false);
            }
        }
        b = next;
    }
    (max_time, true)
}

/// Mean and standard error of `f(τ)` for `τ` the first time `|B|`, started
/// at `x`, reaches `a`. Euler steps with a Brownian-bridge crossing test.
pub fn mc_exit_functional(
    x: f64,
    a: f64,
    settings: &McSettings,
    keep_samples: bool,
    f: impl Fn(f64) -> f64 + Sync,
) -> Result<McStats, HyperbolicError> {
    exit_laplace(x, a, 0.0)?;
    if settings.paths < 100 || !(settings.dt > 0.0) || settings.workers == 0 {
        return Err(HyperbolicError::Parameter("need at least 100 paths, dt > 0 and a worker".into()));
    }
    let w = settings.workers;
    let per = |i: usize| settings.paths / w + usize::from(i < settings.paths % w);
    let parts: Vec<(f64, f64, usize, Vec<f64>)> = (0..w)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            rng.set_stream(i as u64);
            let (mut s1, mut s2, mut cut) = (0.0, 0.0, 0);
            let mut taus = Vec::new();
            for _ in 0..per(i) {
                let (tau, hit_cap) = exit_time(&mut rng, x, a, settings.dt, settings.max_time);
                let v = f(tau);
                s1 += v;
                s2 += v * v;
                cut += usize::from(hit_cap);
                if keep_samples {
                    taus.push(tau);
                }
            }
            (s1, s2, cut, taus)
        })
        .collect();
    let n = settings.paths as f64;
    let (mut s1, mut s2, mut truncated) = (0.0, 0.0, 0);
    let mut samples = keep_samples.then(Vec::new);
    for (a1, a2, c, taus) in parts {
        s1 += a1;
        s2 += a2;
        truncated += c;
        if let Some(s) = samples.as_mut() {
            s.extend(taus);
        }
    }
    let mean = s1 / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok(McStats { mean, se: (var / n).sqrt(), paths: settings.paths, truncated, samples })
}

impl HyperbolicModel {
    /// Monte Carlo estimate of `η(x, a)`.
    pub fn mc_eta(&self, x: f64, a: f64, settings: &McSettings) -> Result<McStats, HyperbolicError> {
        let beta = self.beta;
        mc_exit_functional(x, a, settings, false, |tau| a / (1.0 + beta * tau))
    }

    /// Mean of `1/(1 + βτ)`, optionally with the raw exit times.
    pub fn mc_exit_time(&self, x: f64, a: f64, settings: &McSettings, keep: bool) -> Result<McStats, HyperbolicError> {
        let beta = self.beta;
        mc_exit_functional(x, a, settings, keep, |tau| 1.0 / (1.0 + beta * tau))
    }

    /// Checks `E[Y²_{τ_b}] <= 1/β` for `Y_t = |B_t| / (1 + βt)` started at 0.
    pub fn class_d_bound_check(&self, policy: ThresholdPolicy, settings: &McSettings) -> Result<ClassDReport, HyperbolicError> {
        let bound = 1.0 / self.beta;
        if policy.b == 0.0 {
            return Ok(ClassDReport { estimate: 0.0, se: 0.0, bound, holds: true });
        }
        let (b, beta) = (policy.b, self.beta);
        let s = mc_exit_functional(0.0, b, settings, false, |tau| (b / (1.0 + beta * tau)).powi(2))?;
        Ok(ClassDReport { estimate: s.mean, se: s.se, bound, holds: s.mean <= bound + 3.0 * s.se })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassDReport {
    pub estimate: f64,
    pub se: f64,
    pub bound: f64,
    pub holds: bool,
}
