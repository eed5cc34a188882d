//! Optimal frequency-regulation bids for lossy electricity storage.
//!
//! A storage operator sells regulation power `xr` and buys a constant
//! baseline `xb` on the market. Expected charging losses tie `xb` to `xr`
//! through an implicit function `g`; robust capacity constraints over a
//! budgeted set of deviation signals bound `xr` to a segment `[0, xr_max]`.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dist;
pub mod econ;
pub mod error;
pub mod feasible;
pub mod implicit;
pub mod ingest;
pub mod numeric;
pub mod simulate;
pub mod solve;

pub use config::ProblemConfig;
pub use dist::{DeviationDistribution, DistributionKind, DistributionSpec};
pub use econ::InvestmentSpec;
pub use error::{Error, Result};
pub use feasible::{max_feasible_bid, BatterySpec, FeasibleInterval, RegulationContract};
pub use implicit::{asymptotic_slope, slope_bounds, EfficiencyPair, ImplicitContext};
pub use simulate::Trajectory;
pub use solve::{solve, solve_elastic, solve_inelastic, BidSolution, Candidate, MarketPrices};
