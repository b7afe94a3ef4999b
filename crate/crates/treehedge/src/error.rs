//! Top-level error type shared by the pricing entry points.

use thiserror::Error;

use crate::acceptance::AcceptanceError;
use crate::market::MarketError;
use crate::solver::SolveError;
use crate::tree::TreeError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Acceptance(#[from] AcceptanceError),
    #[error(transparent)]
    Solver(#[from] SolveError),
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("internal inconsistency: {0}")]
    Internal(String),
}
