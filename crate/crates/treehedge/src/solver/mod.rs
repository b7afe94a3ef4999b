//! In-repo optimization engine: a deterministic two-phase simplex for linear
//! programs and a cutting-plane loop for smooth convex constraints layered
//! on top of it.

mod convex;
mod lp;

pub use convex::{solve_convex, ConvexConstraint, ConvexProgram, Cut};
pub use lp::{
    solve_lp, LinearProgram, Relation, Row, Sense, SolveError, SolveOutcome, SolveStatus,
};

/// Default tolerance for linear programs.
pub const DEFAULT_LP_TOL: f64 = 1e-9;
/// Default tolerance for the cutting-plane loop.
pub const DEFAULT_CONVEX_TOL: f64 = 1e-7;
/// Default iteration budget for the cutting-plane loop.
pub const DEFAULT_CONVEX_ITERS: usize = 4000;
