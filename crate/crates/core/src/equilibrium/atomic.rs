//! Atomic exit: every arbitrageur win is redeemed immediately, so the bid solves a
//! single-period fixed point and the treasury mean-reverts.

use serde::{Deserialize, Serialize};

use super::path::PathProblem;
use super::solver::{solve_bid_path, BidPath, SolverConfig};
use super::{type1_conditions, Diagnostics, EqType, EquilibriumSolution};
use crate::error::{invalid, Result};
use crate::mechanisms::{ExtensionSpec, MechanismSpec, SpendingPolicy};
use crate::model::{MarketParams, MarketState};
use crate::numeric::bisect;
use crate::scalar::Scalar;

/// Solves `b = V + (F/f) V' / n` with `V = alpha_t (S_{t-1} + E[p_t])` at `state`.
pub fn atomic_classify<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    cfg: &SolverConfig<T>,
) -> Result<EquilibriumSolution<T>> {
    if !ext.atomic {
        return Err(invalid("atomic", "atomic classification needs the atomic-exit extension"));
    }
    state.validate(params)?;
    let problem = PathProblem {
        params,
        mech,
        ext,
        state,
        t_star: state.t,
    };
    let path = solve_bid_path(&problem, cfg)?;
    let values = problem.evaluate(&path.bids)?;
    let model = &params.valuation;
    let value = values.redemption[0];
    let (e_max, _) = model.expected_order_stats(params.bidders)?;
    let fork_in_expectation = model.cdf(value) > model.cdf(e_max);

    let bid = path.first();
    let eq_type = if bid >= model.v_bar {
        EqType::TypeI
    } else if bid > T::zero() {
        EqType::TypeII
    } else {
        EqType::TypeIII
    };
    let diagnostics = Diagnostics {
        horizons_tried: 1,
        iterations: path.iterations,
        residual: path.residual,
        fallback_used: path.fallback_used,
        deferred_entry: None,
        type1_conditions: type1_conditions(params, mech, ext, state),
        type2_sufficient: false,
        fork_in_expectation: Some(fork_in_expectation),
    };
    let forks = eq_type.forks();
    Ok(EquilibriumSolution {
        eq_type,
        bid_path: Some(path),
        redemption_value: value,
        t_star: forks.then_some(state.t),
        expected_fork_time: forks.then(|| T::from_count(state.t)),
        diagnostics,
    })
}

/// Treasury level at which expected auction revenue equals expected redemptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationaryTreasury<T> {
    pub treasury: T,
    pub bid: T,
    pub win_probability: T,
    pub expected_price: T,
    /// Share redeemed per fork, `c / (N + 1)`.
    pub alpha: T,
    /// `v_bar / alpha`.
    pub upper_bound: T,
    /// `alpha F(b)^n (S + E[p]) - E[p]` at the returned treasury.
    pub balance_residual: T,
}

/// Atomic state used by the long-run analysis: every period is priced as the opening period
/// of a continuation game, so the share is `c / (N + 1)`.
pub(crate) fn long_run_state<T: Scalar>(treasury: T, price_sum: T) -> MarketState<T> {
    MarketState {
        t: 1,
        treasury,
        arb_holdings: 0,
        price_sum,
    }
}

pub(crate) fn atomic_ext<T: Scalar>() -> ExtensionSpec<T> {
    ExtensionSpec {
        vesting_delta: 0,
        spending: SpendingPolicy::NoSpending,
        atomic: true,
    }
}

fn atomic_bid<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    treasury: T,
    cfg: &SolverConfig<T>,
) -> Result<BidPath<T>> {
    let ext = atomic_ext();
    let state = long_run_state(treasury, T::zero());
    solve_bid_path(
        &PathProblem {
            params,
            mech,
            ext: &ext,
            state: &state,
            t_star: 1,
        },
        cfg,
    )
}

/// Bisection on `S` in `(0, v_bar / alpha)` for `alpha F(b*(S))^n (S + E[p]) = E[p]`.
pub fn stationary_treasury<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    cfg: &SolverConfig<T>,
) -> Result<StationaryTreasury<T>> {
    let Some(c) = mech.pro_rata_scale() else {
        return Err(invalid("mechanism", "stationary treasury needs a pro-rata share"));
    };
    params.valuation.validate()?;
    let model = &params.valuation;
    let n = params.bidders;
    let alpha = c / params.nouns_at(1);
    let upper = model.v_bar / alpha;

    let balance = |s: T| -> Result<(T, T, T, T)> {
        let bid = atomic_bid(params, mech, s, cfg)?.first();
        let win = model.win_probability(bid, n);
        let price = model.expected_price(bid, n)?;
        Ok((alpha * win * (s + price) - price, bid, win, price))
    };
    let tiny = upper * T::lit(1e-12);
    let treasury = bisect(tiny, upper, upper * T::epsilon() * T::lit(16.0), 400, |s| {
        balance(s).map(|r| r.0)
    })?;
    let (residual, bid, win, price) = balance(treasury)?;
    Ok(StationaryTreasury {
        treasury,
        bid,
        win_probability: win,
        expected_price: price,
        alpha,
        upper_bound: upper,
        balance_residual: residual,
    })
}
