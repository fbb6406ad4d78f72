//! Expected-value bookkeeping along a candidate bid path `b_t, ..., b_{t*}`.
//!
//! Everything here is deterministic: prices, spending and the treasury are replaced by their
//! expectations given the arbitrageur cutoffs on the path. Spending is linear in the
//! start-of-period treasury, so propagating expectations through it is exact.

use crate::error::{invalid, Result};
use crate::mechanisms::{ExtensionSpec, MechanismSpec};
use crate::model::{MarketParams, MarketState};
use crate::scalar::Scalar;

/// One game instance with a fixed fork period.
#[derive(Debug, Clone, Copy)]
pub struct PathProblem<'a, T> {
    pub params: &'a MarketParams<T>,
    pub mech: &'a MechanismSpec<T>,
    pub ext: &'a ExtensionSpec<T>,
    pub state: &'a MarketState<T>,
    pub t_star: usize,
}

/// Expectations implied by a bid path; vectors are indexed by `tau - state.t`.
#[derive(Debug, Clone)]
pub struct PathValues<T> {
    pub expected_prices: Vec<T>,
    /// Expected treasury at the fork, after that period's price and spending.
    pub treasury_at_fork: T,
    /// Expected price sum at the fork, including the opening `P_{t-1}`.
    pub price_sum_at_fork: T,
    /// Redemption value `V^e_tau` seen from each period of the path.
    pub redemption: Vec<T>,
    /// Discount and share multiplying the treasury in `V^e_tau`; for contribution rules the
    /// multiplier applies to the price paid instead.
    pub value_factor: Vec<T>,
    /// `dV^e_tau / db` for a common shift of the bids from `tau` onward (pro-rata rules only).
    pub slope: Vec<T>,
}

impl<'a, T: Scalar> PathProblem<'a, T> {
    pub fn len(&self) -> usize {
        self.t_star + 1 - self.state.t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn check(&self) -> Result<()> {
        if self.t_star < self.state.t {
            return Err(invalid("t_star", format!("fork period {} precedes t = {}", self.t_star, self.state.t)));
        }
        if self.t_star > self.params.horizon {
            return Err(crate::Error::HorizonExceeded {
                period: self.t_star,
                horizon: self.params.horizon,
            });
        }
        Ok(())
    }

    /// Discount from period `tau` to the (vested) receipt of redeemed funds.
    pub fn discount(&self, tau: usize) -> T {
        let periods = self.t_star - tau + self.ext.vesting_delta;
        self.params.delta.powi(periods as i32)
    }

    pub fn evaluate(&self, bids: &[T]) -> Result<PathValues<T>> {
        self.check()?;
        if bids.len() != self.len() {
            return Err(invalid(
                "bids",
                format!("path covers {} periods, got {} bids", self.len(), bids.len()),
            ));
        }
        let model = &self.params.valuation;
        let n = self.params.bidders;
        let t0 = self.state.t;

        let mut expected_prices = Vec::with_capacity(bids.len());
        let mut retention = Vec::with_capacity(bids.len());
        let mut treasury = self.state.treasury;
        let mut price_sum = self.state.price_sum;
        for (i, &b) in bids.iter().enumerate() {
            let tau = t0 + i;
            let price = model.expected_price(b.max(T::zero()), n)?;
            let keep = T::one() - self.ext.spending.rate(tau);
            treasury = treasury * keep + price;
            price_sum = price_sum + price;
            expected_prices.push(price);
            retention.push(keep);
        }

        let len = bids.len();
        let mut redemption = Vec::with_capacity(len);
        let mut value_factor = Vec::with_capacity(len);
        let mut slope = vec![T::zero(); len];

        if let Some(c) = self.mech.pro_rata_scale() {
            let share = c / self.params.nouns_at(self.t_star);
            // Price marginal effects, each weighted by the spending it survives until t*.
            let mut tail = T::zero();
            let mut survive = T::one();
            let mut tails = vec![T::zero(); len];
            for i in (0..len).rev() {
                tail = tail + survive * model.expected_price_derivative(bids[i].max(T::zero()), n)?;
                tails[i] = tail;
                survive = survive * retention[i];
            }
            for i in 0..len {
                let factor = self.discount(t0 + i) * share;
                value_factor.push(factor);
                redemption.push(factor * treasury);
                slope[i] = factor * tails[i];
            }
        } else {
            let per_unit = self
                .mech
                .value_per_unit_price(treasury, price_sum)
                .unwrap_or_else(T::zero);
            for (i, &b) in bids.iter().enumerate() {
                let factor = self.discount(t0 + i) * per_unit;
                let paid = model.max_below_conditional(b.max(T::zero()), n)?.unwrap_or_else(T::zero);
                value_factor.push(factor);
                redemption.push(factor * paid);
            }
        }

        Ok(PathValues {
            expected_prices,
            treasury_at_fork: treasury,
            price_sum_at_fork: price_sum,
            redemption,
            value_factor,
            slope,
        })
    }
}

/// Redemption value `V^e_t` at the first period of `bid_path` for a fork at `t_star`.
///
/// Pro-rata rules pay `delta^(t*-t+Delta) alpha_{t*}` times the expected treasury at the fork.
/// Contribution rules pay in proportion to the arbitrageur's expected purchase price.
pub fn redemption_value<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    bid_path: &[T],
    t_star: usize,
) -> Result<T> {
    let problem = PathProblem {
        params,
        mech,
        ext,
        state,
        t_star,
    };
    Ok(problem.evaluate(bid_path)?.redemption[0])
}

/// Analytic `dV^e_t / db` at the first period of `bid_path` (pro-rata rules).
pub fn redemption_slope<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    bid_path: &[T],
    t_star: usize,
) -> Result<T> {
    let problem = PathProblem {
        params,
        mech,
        ext,
        state,
        t_star,
    };
    Ok(problem.evaluate(bid_path)?.slope[0])
}
