//! Equilibrium classification of the repeated auction.
//!
//! For each candidate fork period the arbitrageur's bid path is solved as a joint fixed point,
//! the earliest period at which expected wins reach the forking threshold is selected, and the
//! solution is labelled by its first-period bid:
//!
//! * `TypeI`: the bid is at the top of the nouner support, a fork is certain;
//! * `TypeII`: the bid is interior and a fork is expected;
//! * `TypeIII`: no fork period is reachable, the arbitrageur stays out.
//!
//! The solver reaches one symmetric equilibrium from a fixed initialization; others may exist.

mod atomic;
mod path;
mod solver;
mod spending;

use serde::{Deserialize, Serialize};

pub use atomic::{atomic_classify, stationary_treasury, StationaryTreasury};
pub use path::{redemption_slope, redemption_value, PathProblem, PathValues};
pub use solver::{
    fork_reachable, forking_horizon, fixed_point_residual, solve_bid_path, BidPath, SolverConfig,
};
pub use spending::{critical_spending_frontier, FrontierPoint};

use crate::error::Result;
use crate::mechanisms::{ExtensionSpec, MechanismSpec};
use crate::model::{MarketParams, MarketState};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EqType {
    TypeI,
    TypeII,
    TypeIII,
}

impl EqType {
    pub fn as_str(&self) -> &'static str {
        match self {
            EqType::TypeI => "TypeI",
            EqType::TypeII => "TypeII",
            EqType::TypeIII => "TypeIII",
        }
    }

    /// Type I or II: a fork happens (for sure or in expectation).
    pub fn forks(&self) -> bool {
        !matches!(self, EqType::TypeIII)
    }
}

/// Closed-form sufficient conditions for a certain fork, reported next to the solved type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TypeIConditions<T> {
    /// `T >= kappa N / (1 - kappa)`.
    pub horizon_ok: bool,
    /// `v_bar / (delta^(T - t + Delta) alpha_T)`; pro-rata rules only.
    pub treasury_threshold: Option<T>,
    pub treasury_ok: bool,
}

impl<T> TypeIConditions<T> {
    pub fn holds(&self) -> bool {
        self.horizon_ok && self.treasury_ok
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics<T> {
    /// Candidate fork periods whose bid path was solved.
    pub horizons_tried: usize,
    pub iterations: usize,
    pub residual: T,
    pub fallback_used: bool,
    /// First period with a positive bid when the arbitrageur waits before entering.
    pub deferred_entry: Option<usize>,
    pub type1_conditions: TypeIConditions<T>,
    /// Expected wins at bids `V^e_t g(tau)` cover `kappa (N + T) - A` for some fork period.
    pub type2_sufficient: bool,
    /// Atomic exit only: `F(V) > F(E[v_(n)])`.
    pub fork_in_expectation: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution<T> {
    pub eq_type: EqType,
    pub bid_path: Option<BidPath<T>>,
    /// `V^e_t` at the start of the path; zero when no fork is reachable.
    pub redemption_value: T,
    pub t_star: Option<usize>,
    pub expected_fork_time: Option<T>,
    pub diagnostics: Diagnostics<T>,
}

impl<T: Scalar> EquilibriumSolution<T> {
    pub fn first_bid(&self) -> T {
        self.bid_path.as_ref().map_or(T::zero(), BidPath::first)
    }

    /// Bid for period `tau` of the plan; zero outside the solved path.
    pub fn bid_at(&self, tau: usize) -> T {
        self.bid_path
            .as_ref()
            .and_then(|p| p.bid_at(tau))
            .unwrap_or_else(T::zero)
    }
}

/// Closed-form Type I conditions at `state` (vesting raises the treasury threshold).
pub fn type1_conditions<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
) -> TypeIConditions<T> {
    let kappa = params.effective_kappa(ext);
    let n0 = T::from_count(params.initial_nouns);
    let horizon = T::from_count(params.horizon);
    let horizon_ok = horizon * (T::one() - kappa) >= kappa * n0 - T::epsilon() * T::lit(64.0) * n0;
    let treasury_threshold = mech.pro_rata_scale().map(|c| {
        let alpha = c / params.nouns_at(params.horizon);
        let periods = params.horizon - state.t + ext.vesting_delta;
        params.valuation.v_bar / (params.delta.powi(periods as i32) * alpha)
    });
    TypeIConditions {
        horizon_ok,
        treasury_threshold,
        treasury_ok: treasury_threshold.is_some_and(|s| state.treasury >= s),
    }
}

/// `g(tau)` with `E[b_tau] = b_t g(tau)` on an interior path, computed from the bracketed
/// treasury-plus-hazard terms of the first-order condition at `t` and `tau`.
///
/// Contribution rules have all-or-nothing bids; the ratio reduces to the discount growth.
pub fn g_ratio<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    bid_path: &BidPath<T>,
    tau: usize,
) -> Result<T> {
    let problem = PathProblem {
        params,
        mech,
        ext,
        state,
        t_star: bid_path.t_star,
    };
    let t = state.t;
    if tau < t || tau > bid_path.t_star {
        return Err(crate::error::invalid("tau", format!("{tau} outside the path {t}..={}", bid_path.t_star)));
    }
    let growth = params.delta.powi((tau - t) as i32).recip();
    if mech.is_contribution() {
        return Ok(growth);
    }
    let values = problem.evaluate(&bid_path.bids)?;
    let n = T::from_count(params.bidders);
    let bracket = |i: usize| {
        let b = bid_path.bids[i];
        let hazard_term = if values.value_factor[i] > T::zero() {
            params.valuation.hazard_ratio(b) / n * values.slope[i] / values.value_factor[i]
        } else {
            T::zero()
        };
        values.treasury_at_fork + hazard_term
    };
    Ok(growth * bracket(tau - t) / bracket(0))
}

/// Solves and classifies the equilibrium starting at `state`.
pub fn classify<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    cfg: &SolverConfig<T>,
) -> Result<EquilibriumSolution<T>> {
    params.validate(ext)?;
    mech.validate()?;
    state.validate(params)?;
    if ext.atomic {
        return atomic_classify(params, mech, ext, state, cfg);
    }

    let v_bar = params.valuation.v_bar;
    let n = params.bidders;
    let kappa = params.kappa;
    let required_by_t = kappa * params.nouns_at(params.horizon) - T::from_count(state.arb_holdings);

    let base = PathProblem {
        params,
        mech,
        ext,
        state,
        t_star: state.t,
    };
    let mut horizons_tried = 0usize;
    let mut iterations = 0usize;
    let covers = |problem: &PathProblem<'_, T>, path: &BidPath<T>| -> Result<bool> {
        let values = problem.evaluate(&path.bids)?;
        let v_t = values.redemption[0];
        let mut wins = T::zero();
        for tau in problem.state.t..=path.t_star {
            let g = g_ratio(params, mech, ext, state, path, tau)?;
            wins = wins + params.valuation.win_probability(v_t * g, n);
        }
        Ok(wins > T::zero() && wins >= required_by_t)
    };

    let mut type2_sufficient = false;
    let mut inspect_err = None;
    let found = forking_horizon(
        &base,
        |p| solve_bid_path(p, cfg),
        |p, path| {
            horizons_tried += 1;
            iterations += path.iterations;
            if !type2_sufficient && inspect_err.is_none() {
                match covers(p, path) {
                    Ok(hit) => type2_sufficient = hit,
                    Err(e) => inspect_err = Some(e),
                }
            }
        },
    )?;
    if let Some(e) = inspect_err {
        return Err(e);
    }
    // The sufficient condition ranges over every fork period up to T.
    if let Some(path) = found.as_ref().filter(|_| !type2_sufficient) {
        for t_star in path.t_star + 1..=params.horizon {
            let problem = PathProblem { t_star, ..base };
            if covers(&problem, &solve_bid_path(&problem, cfg)?)? {
                type2_sufficient = true;
                break;
            }
        }
    }

    let type1 = type1_conditions(params, mech, ext, state);
    let mut diagnostics = Diagnostics {
        horizons_tried,
        iterations,
        residual: T::zero(),
        fallback_used: false,
        deferred_entry: None,
        type1_conditions: type1,
        type2_sufficient,
        fork_in_expectation: None,
    };

    let Some(path) = found else {
        return Ok(EquilibriumSolution {
            eq_type: EqType::TypeIII,
            bid_path: None,
            redemption_value: T::zero(),
            t_star: None,
            expected_fork_time: None,
            diagnostics,
        });
    };

    diagnostics.residual = path.residual;
    diagnostics.fallback_used = path.fallback_used;
    let first = path.first();
    let eq_type = if first >= v_bar {
        EqType::TypeI
    } else if first > T::zero() {
        EqType::TypeII
    } else {
        // Waiting to enter: certain once the arbitrageur starts bidding at the top.
        let entry = path.bids.iter().position(|&b| b > T::zero()).unwrap_or(0);
        diagnostics.deferred_entry = Some(path.start + entry);
        if path.bids[entry..].iter().all(|&b| b >= v_bar) {
            EqType::TypeI
        } else {
            EqType::TypeII
        }
    };
    let redemption_value = redemption_value(params, mech, ext, state, &path.bids, path.t_star)?;
    let t_star = path.t_star;
    Ok(EquilibriumSolution {
        eq_type,
        bid_path: Some(path),
        redemption_value,
        t_star: Some(t_star),
        expected_fork_time: Some(T::from_count(t_star)),
        diagnostics,
    })
}
