//! Conservative solutions of the variational wave equation
//! `u_tt - c(u) (c(u) u_x)_x = 0` computed in characteristic coordinates.
//!
//! Cauchy data is mapped onto a curve γ in the (X, Y) plane
//! ([`initial_data`]), a semilinear system is integrated on a γ-aligned
//! lattice ([`goursat`]), and physical quantities are read back on level
//! sets of t ([`reconstruct`], [`characteristics`]). [`oracles`] holds the
//! independent reference solutions used for validation.
//!
//! [`config`], [`run`] and [`output`] drive the `varwave` command line tool:
//! a TOML config is solved once and its artifacts (snapshots, energies, the
//! interaction bound, characteristic curves, the lattice) are written to a
//! run directory as CSV and JSON.

// `!(v > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod config;
pub mod goursat;
pub mod initial_data;
pub mod numerics;
pub mod oracles;
pub mod output;
pub mod reconstruct;
pub mod run;
pub mod wavespeed;
