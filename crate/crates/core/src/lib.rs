//! Equilibrium stopping times for time-inconsistent optimal stopping.
//!
//! Finite scenario trees ([`tree`]) carry stopping times ([`stopping`]) and
//! preference flows ([`pref`], usually read from a model file via
//! [`model`]). [`engine`] builds backward induction solutions, the naive
//! chain and the equilibrium. [`line`] works on a continuum of times and
//! [`hyperbolic`] handles Brownian motion under hyperbolic discounting.

pub mod engine;
pub mod examples;
pub mod expr;
pub mod fuzz;
pub mod hyperbolic;
pub mod line;
pub mod model;
pub mod pref;
pub mod scalar;
pub mod stopping;
pub mod tree;
