//! Equilibrium analysis and Monte Carlo simulation of forking incentives in repeated
//! English auctions for governance tokens that carry a redeemable treasury claim.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the `*F64` aliases fix
//! double precision.

pub mod equilibrium;
pub mod error;
pub mod format;
pub mod mechanisms;
pub mod model;
pub mod numeric;
pub mod scalar;
pub mod simulator;
pub mod sweep;
pub mod valuation;

pub use equilibrium::{
    classify, critical_spending_frontier, g_ratio, redemption_value, solve_bid_path, stationary_treasury,
    BidPath, Diagnostics, EqType, EquilibriumSolution, FrontierPoint, SolverConfig,
};
pub use error::{Error, Result};
pub use mechanisms::{ExtensionSpec, MechanismSpec, SpendingPolicy};
pub use model::{MarketParams, MarketState};
pub use scalar::Scalar;
pub use simulator::{
    atomic_long_run, run_auction, simulate, step, AuctionOutcome, BidPolicy, LongRunConfig, LongRunStats, RestartMode,
    SimState, SimStats, SimTrace, Simulation, StepRecord, Winner,
};
pub use sweep::{emit_figure_series, run_sweep, FigureSeries, SweepCell, SweepConfig, SweepResult};
pub use valuation::{OrderStatProbs, ValuationFamily, ValuationModel};

pub type MarketParamsF64 = MarketParams<f64>;
pub type MarketStateF64 = MarketState<f64>;
pub type MechanismSpecF64 = MechanismSpec<f64>;
pub type ExtensionSpecF64 = ExtensionSpec<f64>;
pub type ValuationModelF64 = ValuationModel<f64>;
pub type EquilibriumSolutionF64 = EquilibriumSolution<f64>;
pub type SolverConfigF64 = SolverConfig<f64>;
pub type SimStatsF64 = SimStats<f64>;
pub type SweepConfigF64 = SweepConfig<f64>;
