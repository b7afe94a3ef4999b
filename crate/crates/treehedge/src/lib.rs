//! Robust super- and subhedging price bounds on finite scenario trees.
//!
//! The library prices contingent claims written on a finite event tree of
//! asset prices. A claim's upper price is the least initial capital `m` such
//! that `m - X` plus some attainable trading gain is an acceptable position;
//! the lower price is the mirror image. Markets may carry convex transaction
//! costs, short-sale bans and semi-static instrument books; acceptability is
//! either strict (no shortfall on any path) or controlled by a family of
//! optimized-certainty-equivalent risk measures (average value at risk,
//! entropic, piecewise-linear losses).
//!
//! Every price is computed twice: once as a hedging program over strategies
//! ([`primal`]) and once as an expectation maximization over penalized
//! generalized martingale measures ([`dual`]). The two routes are built from
//! separate formulas, so a vanishing gap certifies the answer. The same
//! machinery decides absence of arbitrage with an explicit certificate
//! ([`dual::ftap_check`]).
//!
//! Entry points:
//! - [`tree::build_tree`] constructs the event tree.
//! - [`primal::price_bounds`] returns the hedging interval with witnesses.
//! - [`dual::dual_superhedge`] / [`dual::dual_subhedge`] return the measure
//!   side, [`dual::ftap_check`] the arbitrage verdict.
//! - [`scenario`] reads and writes the on-disk scenario format used by the
//!   `treehedge` binary; [`cli::run`] drives the whole pipeline.
//!
//! The `examples/` directory contains one runnable program per capability;
//! `cargo run --example binomial_call` is a good starting point.

pub mod acceptance;
pub mod cli;
pub mod dual;
pub mod error;
pub mod market;
pub mod oracle;
pub mod primal;
pub mod report;
pub mod scenario;
pub mod solver;
pub mod tree;

pub use acceptance::{AcceptanceSpec, LossFunction, OceEntry};
pub use dual::{FtapVerdict, GeneralizedMartingaleMeasure, QMode};
pub use error::EngineError;
pub use market::{Friction, MarketSpec, StaticInstrument, Strategy};
pub use primal::{price_bounds, subhedge, superhedge, HedgeResult};
pub use tree::{build_tree, NodeSpec, PathVector, ScenarioTree, TreeSpec};
