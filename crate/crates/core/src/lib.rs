//! Pricing and replication of European claims in a market where a large
//! investor's demand moves prices.
//!
//! The market maker with mixture-of-exponentials utility `U` quotes prices
//! under the measure with density proportional to `U'(x + p − g)`; the claim
//! `g = G(B_T)` is priced by solving for `p`, and its replicating strategy is
//! read off the volatility matrix of the induced price process.

pub mod config;
pub mod dynamics;
pub mod error;
pub mod gauss;
pub mod hedging;
pub mod model;
pub mod pricing;
pub mod rng;
pub mod simulator;
mod tilt;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{EngineError, Result};
pub use model::{
    claim_eval, utility_eval, validate_scenario, ClaimSpec, NumericsConfig, PiecewiseLinear, Scenario,
    SeparableClaim, SmoothClaim, State, TradedAsset, UtilitySpec, UtilityTerm, ValidatedScenario,
};
pub use pricing::{solve_price, TiltedMeasure};
