//! Redemption-share rules and treasury spending policies.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::MarketState;
use crate::scalar::Scalar;

/// Share of the treasury a redeemed noun receives at a fork.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum MechanismSpec<T> {
    /// `1 / (N + t)`.
    #[serde(rename = "pro-rata")]
    ProRata,
    /// `c / (N + t)`; the withheld part stays in the treasury or is burned.
    #[serde(rename = "pro-rata-tax")]
    ProRataTax { c: T, burn: bool },
    /// `p_j / P_t`.
    #[serde(rename = "contribution-1")]
    Contribution1,
    /// `min(p_j / S_t, p_j / P_t)`.
    #[serde(rename = "contribution-2")]
    Contribution2,
}

impl<T: Scalar> MechanismSpec<T> {
    pub fn validate(&self) -> Result<()> {
        if let MechanismSpec::ProRataTax { c, .. } = *self {
            if !(c > T::zero() && c <= T::one()) {
                return Err(invalid("c", format!("tax share must lie in (0, 1], got {c}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            MechanismSpec::ProRata => "pro-rata",
            MechanismSpec::ProRataTax { .. } => "pro-rata-tax",
            MechanismSpec::Contribution1 => "contribution-1",
            MechanismSpec::Contribution2 => "contribution-2",
        }
    }

    /// Scale `c` of a pro-rata share, `None` for contribution-based rules.
    pub fn pro_rata_scale(&self) -> Option<T> {
        match *self {
            MechanismSpec::ProRata => Some(T::one()),
            MechanismSpec::ProRataTax { c, .. } => Some(c),
            MechanismSpec::Contribution1 | MechanismSpec::Contribution2 => None,
        }
    }

    pub fn is_contribution(&self) -> bool {
        self.pro_rata_scale().is_none()
    }

    /// Redemption value per unit of purchase price under a contribution rule, given the
    /// treasury and cumulative price sum at redemption. `None` for pro-rata rules.
    pub fn value_per_unit_price(&self, treasury: T, price_sum: T) -> Option<T> {
        let ratio = if price_sum > T::zero() {
            treasury / price_sum
        } else {
            T::zero()
        };
        match self {
            MechanismSpec::Contribution1 => Some(ratio),
            MechanismSpec::Contribution2 => Some(ratio.min(T::one())),
            _ => None,
        }
    }

    /// Redemption share at period `now` of a noun bought in `purchase_period` for `purchase_price`.
    ///
    /// `state.treasury` and `state.price_sum` are read as the treasury `S` and the price sum `P`
    /// at `now`, including the purchase itself.
    pub fn alpha(
        &self,
        initial_nouns: usize,
        state: &MarketState<T>,
        purchase_period: usize,
        purchase_price: T,
        now: usize,
    ) -> Result<T> {
        if purchase_period == 0 || now < purchase_period {
            return Err(invalid(
                "now",
                format!("need now >= purchase_period >= 1, got {now} < {purchase_period}"),
            ));
        }
        if let Some(c) = self.pro_rata_scale() {
            return Ok(c / T::from_count(initial_nouns + now));
        }
        let (s, p) = (state.treasury, state.price_sum);
        if p <= T::zero() {
            return Err(Error::ShareUndefined);
        }
        let by_price = purchase_price / p;
        let share = match self {
            MechanismSpec::Contribution2 if s > T::zero() => by_price.min(purchase_price / s),
            _ => by_price,
        };
        Ok(share.max(T::zero()).min(T::one()))
    }
}

impl<T> fmt::Display for MechanismSpec<T>
where
    T: Scalar,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a CLI mechanism name. `pro-rata-tax` defaults to `c = 0.75`, withheld funds kept.
impl<T: Scalar> FromStr for MechanismSpec<T> {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pro-rata" => Ok(MechanismSpec::ProRata),
            "pro-rata-tax" => Ok(MechanismSpec::ProRataTax {
                c: T::lit(0.75),
                burn: false,
            }),
            "contribution-1" => Ok(MechanismSpec::Contribution1),
            "contribution-2" => Ok(MechanismSpec::Contribution2),
            other => Err(Error::UnknownName {
                kind: "mechanism",
                name: other.to_owned(),
            }),
        }
    }
}

/// Treasury outflow rule, evaluated on the treasury at the start of the period.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SpendingPolicy<T> {
    #[default]
    #[serde(rename = "none")]
    NoSpending,
    /// `z_t(S) = k S exp(-lambda (t - 1))`.
    #[serde(rename = "exp-decay")]
    ExpDecay { k: T, lambda: T },
}

impl<T: Scalar> SpendingPolicy<T> {
    pub fn validate(&self) -> Result<()> {
        if let SpendingPolicy::ExpDecay { k, lambda } = *self {
            if !(k > T::zero() && k < T::one()) {
                return Err(invalid("k", format!("must lie in (0, 1), got {k}")));
            }
            if !(lambda > T::zero()) || !lambda.is_finite() {
                return Err(invalid("lambda", format!("must be positive, got {lambda}")));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SpendingPolicy::NoSpending => "none",
            SpendingPolicy::ExpDecay { .. } => "exp-decay",
        }
    }

    /// Fraction of the start-of-period treasury spent in period `t`.
    pub fn rate(&self, t: usize) -> T {
        match *self {
            SpendingPolicy::NoSpending => T::zero(),
            SpendingPolicy::ExpDecay { k, lambda } => {
                let elapsed = T::from_count(t.saturating_sub(1));
                (k * (-lambda * elapsed).exp()).max(T::zero()).min(T::one())
            }
        }
    }

    /// Amount spent in period `t` out of a start-of-period treasury `s`; always in `[0, s]`.
    pub fn spend(&self, s: T, t: usize) -> T {
        let s = s.max(T::zero());
        (self.rate(t) * s).min(s)
    }
}

/// Optional model extensions layered on the baseline game.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionSpec<T> {
    /// Periods redeemed funds stay locked; 0 disables vesting.
    #[serde(default)]
    pub vesting_delta: usize,
    #[serde(default)]
    pub spending: SpendingPolicy<T>,
    /// Individual exit on every arbitrageur win (forces kappa = 0).
    #[serde(default)]
    pub atomic: bool,
}

impl<T: Scalar> ExtensionSpec<T> {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.vesting_delta >= horizon {
            return Err(invalid(
                "vesting_delta",
                format!("must be below T = {horizon}, got {}", self.vesting_delta),
            ));
        }
        self.spending.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(s: f64, p: f64) -> MarketState<f64> {
        MarketState {
            t: 5,
            treasury: s,
            arb_holdings: 0,
            price_sum: p,
        }
    }

    #[test]
    fn pro_rata_shares() {
        let st = state(0.0, 0.0);
        let a = MechanismSpec::ProRata.alpha(10, &st, 1, 0.3, 5).unwrap();
        assert!((a - 1.0 / 15.0).abs() < 1e-15);
        let tax = MechanismSpec::ProRataTax { c: 0.5, burn: false };
        assert!((tax.alpha(10, &st, 1, 0.3, 5).unwrap() - 1.0 / 30.0).abs() < 1e-15);
        let full = MechanismSpec::ProRataTax { c: 1.0, burn: true };
        assert_eq!(
            full.alpha(10, &st, 2, 0.1, 7).unwrap(),
            MechanismSpec::ProRata.alpha(10, &st, 2, 0.1, 7).unwrap()
        );
    }

    #[test]
    fn contribution_shares() {
        let st = state(10.0, 4.0);
        let a = MechanismSpec::Contribution2.alpha(10, &st, 1, 2.0, 5).unwrap();
        assert!((a - 0.2).abs() < 1e-15);
        let a = MechanismSpec::Contribution1.alpha(10, &st, 1, 2.0, 5).unwrap();
        assert!((a - 0.5).abs() < 1e-15);
    }

    #[test]
    fn contribution_at_empty_treasury() {
        let empty = state(0.0, 0.0);
        for mech in [MechanismSpec::Contribution1, MechanismSpec::Contribution2] {
            assert_eq!(mech.alpha(10, &empty, 1, 0.0, 1), Err(Error::ShareUndefined));
        }
        let only_treasury = state(3.0, 0.0);
        assert_eq!(
            MechanismSpec::Contribution1.alpha(10, &only_treasury, 1, 0.0, 1),
            Err(Error::ShareUndefined)
        );
    }

    #[test]
    fn alpha_rejects_redemption_before_purchase() {
        assert!(MechanismSpec::<f64>::ProRata.alpha(10, &state(1.0, 1.0), 4, 0.1, 3).is_err());
    }

    #[test]
    fn spending_examples() {
        assert_eq!(SpendingPolicy::NoSpending.spend(100.0, 5), 0.0);
        let tiny = SpendingPolicy::ExpDecay { k: 0.5, lambda: 1e-12 };
        assert!((tiny.spend(100.0, 1) - 50.0f64).abs() < 1e-12);
        let halving = SpendingPolicy::ExpDecay {
            k: 0.5,
            lambda: std::f64::consts::LN_2,
        };
        assert!((halving.spend(100.0, 2) - 25.0).abs() < 1e-12);
    }

    #[test]
    fn names_round_trip() {
        for name in ["pro-rata", "pro-rata-tax", "contribution-1", "contribution-2"] {
            let m: MechanismSpec<f64> = name.parse().unwrap();
            assert_eq!(m.to_string(), name);
        }
        assert!("pro_rata".parse::<MechanismSpec<f64>>().is_err());
        let json = serde_json::to_string(&MechanismSpec::ProRataTax { c: 0.5, burn: true }).unwrap();
        assert_eq!(json, r#"{"kind":"pro-rata-tax","c":0.5,"burn":true}"#);
    }

    #[test]
    fn policy_validation() {
        assert!(SpendingPolicy::ExpDecay { k: 1.0, lambda: 0.1 }.validate().is_err());
        assert!(SpendingPolicy::ExpDecay { k: 0.3, lambda: 0.0 }.validate().is_err());
        assert!(MechanismSpec::ProRataTax { c: 0.0, burn: false }.validate().is_err());
    }

    proptest! {
        #[test]
        fn pro_rata_decreasing(n in 1usize..50, now in 1usize..60) {
            let st = state(1.0, 1.0);
            let m = MechanismSpec::ProRata;
            let a = m.alpha(n, &st, 1, 0.2, now).unwrap();
            prop_assert!(m.alpha(n, &st, 1, 0.2, now + 1).unwrap() < a);
            prop_assert!(m.alpha(n + 1, &st, 1, 0.2, now).unwrap() < a);
        }

        #[test]
        fn capped_share_never_exceeds_uncapped(p in 0.0f64..2.0, s in 0.0f64..50.0, extra in 0.0f64..50.0) {
            let st = state(s, p + extra);
            let m3 = MechanismSpec::Contribution1.alpha(10, &st, 1, p, 3);
            let m4 = MechanismSpec::Contribution2.alpha(10, &st, 1, p, 3);
            if let (Ok(a3), Ok(a4)) = (m3, m4) {
                prop_assert!(a4 <= a3 + 1e-15);
            }
        }

        #[test]
        fn tax_is_linear_in_c(c1 in 0.01f64..1.0, c2 in 0.01f64..1.0, now in 1usize..30) {
            let st = state(1.0, 1.0);
            let a1 = MechanismSpec::ProRataTax { c: c1, burn: false }.alpha(10, &st, 1, 0.1, now).unwrap();
            let a2 = MechanismSpec::ProRataTax { c: c2, burn: false }.alpha(10, &st, 1, 0.1, now).unwrap();
            prop_assert!((a1 * c2 - a2 * c1).abs() < 1e-15);
            if c1 < c2 { prop_assert!(a1 < a2); }
        }

        #[test]
        fn exp_decay_bounds_and_monotonicity(
            k in 0.01f64..0.99, dk in 0.0f64..0.5, lambda in 0.001f64..3.0, s in 0.0f64..1e3, t in 1usize..40
        ) {
            let p = SpendingPolicy::ExpDecay { k, lambda };
            let z = p.spend(s, t);
            prop_assert!(z >= 0.0 && z <= s);
            prop_assert!(p.spend(s, t + 1) <= z);
            let k2 = (k + dk).min(0.999);
            let bigger = SpendingPolicy::ExpDecay { k: k2, lambda };
            prop_assert!(bigger.spend(s, t) >= z);
        }
    }
}
