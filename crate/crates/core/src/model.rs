//! Game primitives and the sufficient history carried between periods.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mechanisms::ExtensionSpec;
use crate::scalar::Scalar;
use crate::valuation::ValuationModel;

/// Primitives of the repeated auction game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams<T> {
    /// Last period of the game.
    pub horizon: usize,
    /// Nouns outstanding before the first auction.
    pub initial_nouns: usize,
    /// Nouners bidding in every auction.
    pub bidders: usize,
    pub delta: T,
    /// Fraction of nouns arbitrageurs must hold to force a fork.
    pub kappa: T,
    /// Treasury before the first auction.
    pub s0: T,
    pub valuation: ValuationModel<T>,
}

impl<T: Scalar> MarketParams<T> {
    /// T = 30, N = 10, n = 2, delta = 0.95 with Uniform(0, 1) valuations.
    pub fn baseline(s0: T, kappa: T) -> Self {
        Self {
            horizon: 30,
            initial_nouns: 10,
            bidders: 2,
            delta: T::lit(0.95),
            kappa,
            s0,
            valuation: ValuationModel {
                family: crate::valuation::ValuationFamily::Uniform,
                v_bar: T::one(),
            },
        }
    }

    pub fn validate(&self, ext: &ExtensionSpec<T>) -> Result<()> {
        if self.horizon < 2 {
            return Err(invalid("horizon", format!("T must exceed 1, got {}", self.horizon)));
        }
        if self.initial_nouns == 0 {
            return Err(invalid("initial_nouns", "N must be positive"));
        }
        if self.bidders < 2 {
            return Err(invalid("bidders", format!("need n >= 2, got {}", self.bidders)));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.kappa >= T::zero() && self.kappa < T::one()) {
            return Err(invalid("kappa", format!("must lie in [0, 1), got {}", self.kappa)));
        }
        if self.kappa == T::zero() && !ext.atomic {
            return Err(invalid("kappa", "kappa = 0 requires the atomic-exit extension"));
        }
        if !(self.s0 >= T::zero()) || !self.s0.is_finite() {
            return Err(invalid("s0", format!("must be a finite nonnegative value, got {}", self.s0)));
        }
        self.valuation.validate()?;
        ext.validate(self.horizon)
    }

    /// Forking threshold in effect: the atomic extension forces it to zero.
    pub fn effective_kappa(&self, ext: &ExtensionSpec<T>) -> T {
        if ext.atomic {
            T::zero()
        } else {
            self.kappa
        }
    }

    /// Number of nouns outstanding after the auction of period `t`.
    pub fn nouns_at(&self, t: usize) -> T {
        T::from_count(self.initial_nouns + t)
    }

    /// `holdings >= kappa (N + t)` with positive holdings, up to rounding in `kappa (N + t)`.
    pub fn fork_threshold_met(&self, ext: &ExtensionSpec<T>, holdings: T, t: usize) -> bool {
        let nouns = self.nouns_at(t);
        let slack = T::epsilon() * T::lit(64.0) * nouns;
        holdings > T::zero() && holdings >= self.effective_kappa(ext) * nouns - slack
    }

    /// Start-of-game history `h_1`.
    pub fn initial_state(&self) -> MarketState<T> {
        MarketState::initial(self.s0, T::zero())
    }
}

/// Sufficient history at the start of period `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketState<T> {
    pub t: usize,
    /// Treasury at the start of the period, `S_{t-1}`.
    pub treasury: T,
    /// Nouns held by arbitrageurs, `A_{t-1}`.
    pub arb_holdings: usize,
    /// Sum of past auction prices, `P_{t-1}`.
    pub price_sum: T,
}

impl<T: Scalar> MarketState<T> {
    pub fn initial(s0: T, p0: T) -> Self {
        Self {
            t: 1,
            treasury: s0,
            arb_holdings: 0,
            price_sum: p0,
        }
    }

    pub fn validate(&self, params: &MarketParams<T>) -> Result<()> {
        if self.t == 0 {
            return Err(invalid("t", "periods are numbered from 1"));
        }
        if self.t > params.horizon {
            return Err(crate::Error::HorizonExceeded {
                period: self.t,
                horizon: params.horizon,
            });
        }
        if !(self.treasury >= T::zero()) {
            return Err(invalid("treasury", "must be nonnegative"));
        }
        if !(self.price_sum >= T::zero()) {
            return Err(invalid("price_sum", "must be nonnegative"));
        }
        if self.arb_holdings + 1 > params.initial_nouns + self.t {
            return Err(invalid("arb_holdings", "more nouns than have been auctioned"));
        }
        Ok(())
    }
}
