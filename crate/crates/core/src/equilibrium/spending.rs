//! Smallest exponential-decay spending rate that rules out any fork.

use serde::{Deserialize, Serialize};

use super::solver::SolverConfig;
use super::{classify, EqType};
use crate::error::{invalid, Result};
use crate::mechanisms::{ExtensionSpec, MechanismSpec, SpendingPolicy};
use crate::model::{MarketParams, MarketState};
use crate::scalar::Scalar;

const K_TOL: f64 = 1e-4;
const K_MAX: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint<T> {
    pub lambda: T,
    /// Smallest `k` giving Type III; `None` when no `k < 1` suffices.
    pub k_hat: Option<T>,
}

/// For every decay rate, bisects the spending fraction `k` for the Type III boundary.
///
/// Classification is assumed monotone in `k`: more spending lowers the redemption value.
pub fn critical_spending_frontier<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    lambdas: &[T],
    cfg: &SolverConfig<T>,
) -> Result<Vec<FrontierPoint<T>>> {
    if mech.is_contribution() {
        return Err(invalid("mechanism", "spending frontier needs a pro-rata share"));
    }
    let with_spending = |spending: SpendingPolicy<T>| ExtensionSpec { spending, ..*ext };
    let type_at = |spending: SpendingPolicy<T>| -> Result<EqType> {
        Ok(classify(params, mech, &with_spending(spending), state, cfg)?.eq_type)
    };

    if type_at(SpendingPolicy::NoSpending)? == EqType::TypeIII {
        return Ok(lambdas
            .iter()
            .map(|&lambda| FrontierPoint {
                lambda,
                k_hat: Some(T::zero()),
            })
            .collect());
    }

    let mut frontier = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let policy = |k: T| SpendingPolicy::ExpDecay { k, lambda };
        policy(T::lit(0.5)).validate()?;
        let k_max = T::lit(K_MAX);
        if type_at(policy(k_max))? != EqType::TypeIII {
            log::info!("no spending fraction below one prevents a fork at lambda = {lambda}");
            frontier.push(FrontierPoint { lambda, k_hat: None });
            continue;
        }
        let (mut lo, mut hi) = (T::zero(), k_max);
        while hi - lo > T::lit(K_TOL) {
            let mid = T::lit(0.5) * (lo + hi);
            if type_at(policy(mid))? == EqType::TypeIII {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        frontier.push(FrontierPoint {
            lambda,
            k_hat: Some(hi),
        });
    }
    Ok(frontier)
}
