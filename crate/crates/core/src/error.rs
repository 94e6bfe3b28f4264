use std::io;

use thiserror::Error;

use crate::chain::Regime;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("percentile {0} is outside the quantile domain of this distribution")]
    QuantileOutOfRange(f64),

    /// λ ≤ μ: every bidder eventually wins for free, there is no price threshold.
    #[error("threshold undefined for lambda={lambda} <= mu={mu}: the auction is trivial")]
    ThresholdUndefined { lambda: f64, mu: u32 },

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("no stationary distribution: chain is {regime} (lambda*={lambda_star}, delta={delta}, mu={mu})")]
    NonErgodic {
        regime: Regime,
        lambda_star: f64,
        delta: f64,
        mu: u32,
    },

    #[error("stationary solve did not converge after {iterations} iterations (residual {residual:e}, n_max {n_max})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        n_max: usize,
    },

    #[error("grid has {points} points, at least {required} uniform points are required")]
    GridTooCoarse { points: usize, required: usize },

    #[error("no closed form: {0}")]
    NoClosedForm(String),

    #[error("bidder pool reached {size} bidders, above the configured cap of {cap}")]
    MemoryBudget { size: usize, cap: usize },

    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors raised by a numerical procedure rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonErgodic { .. }
                | Error::NoConvergence { .. }
                | Error::MemoryBudget { .. }
                | Error::NoClosedForm(_)
        )
    }
}
