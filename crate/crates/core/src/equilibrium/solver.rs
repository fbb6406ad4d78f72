//! Joint fixed point of the arbitrageur's first-order condition over a bid path, and the
//! search for the earliest feasible fork period.

use serde::{Deserialize, Serialize};

use super::path::{PathProblem, PathValues};
use crate::error::{Error, Result};
use crate::numeric::bisect;
use crate::scalar::Scalar;

/// Knobs of the damped fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig<T> {
    /// Weight on the new iterate: `b <- (1 - w) b + w rhs`.
    pub damping: T,
    pub max_iterations: usize,
    /// Convergence threshold on the largest per-period residual.
    pub tolerance: T,
    /// Residual must shrink by 10% over this many iterations, otherwise the solver switches
    /// to bisection on the first-period bid.
    pub stall_window: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            damping: T::lit(0.5),
            max_iterations: 10_000,
            tolerance: T::default_tol(),
            stall_window: 50,
        }
    }
}

/// Arbitrageur cutoffs for periods `start ..= t_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidPath<T> {
    pub start: usize,
    pub t_star: usize,
    pub bids: Vec<T>,
    /// Largest first-order-condition residual over the path.
    pub residual: T,
    pub iterations: usize,
    pub fallback_used: bool,
}

impl<T: Scalar> BidPath<T> {
    pub fn first(&self) -> T {
        self.bids[0]
    }

    pub fn bid_at(&self, tau: usize) -> Option<T> {
        tau.checked_sub(self.start).and_then(|i| self.bids.get(i).copied())
    }

    /// Expected arbitrageur wins over the path, `sum F(b_tau)^n`.
    pub fn expected_wins(&self, model: &crate::ValuationModel<T>, n: usize) -> T {
        self.bids
            .iter()
            .fold(T::zero(), |acc, &b| acc + model.win_probability(b, n))
    }
}

/// Right-hand side of the first-order condition, clamped to the support.
fn best_response<T: Scalar>(problem: &PathProblem<'_, T>, values: &PathValues<T>, bids: &[T], i: usize) -> T {
    let model = &problem.params.valuation;
    let n = T::from_count(problem.params.bidders);
    let rhs = values.redemption[i] + model.hazard_ratio(bids[i]) / n * values.slope[i];
    rhs.max(T::zero()).min(model.v_bar)
}

/// Bids whose clamped best response is a corner of the support take that corner exactly; the
/// damped iteration only approaches it geometrically.
fn snap_to_corners<T: Scalar>(bids: &mut [T], rhs: &[T], v_bar: T) {
    for (b, &r) in bids.iter_mut().zip(rhs) {
        if r == v_bar || r == T::zero() {
            *b = r;
        }
    }
}

fn max_residual<T: Scalar>(problem: &PathProblem<'_, T>, values: &PathValues<T>, bids: &[T]) -> T {
    (0..bids.len()).fold(T::zero(), |acc, i| {
        acc.max((best_response(problem, values, bids, i) - bids[i]).abs())
    })
}

/// Largest violation of the clamped first-order condition on a pro-rata path.
pub fn fixed_point_residual<T: Scalar>(problem: &PathProblem<'_, T>, bids: &[T]) -> Result<T> {
    let values = problem.evaluate(bids)?;
    Ok(max_residual(problem, &values, bids))
}

/// Solves the bid path for a fixed fork period.
///
/// Pro-rata rules iterate the first-order condition `b = V + (F/f) V' / n` jointly over every
/// period, starting from the redemption values of the zero-bid path. Contribution rules pay
/// in proportion to the price paid, so the per-period payoff is `(rho - 1) E[v_(n); v_(n) < b]`
/// and the best response is all-or-nothing.
pub fn solve_bid_path<T: Scalar>(problem: &PathProblem<'_, T>, cfg: &SolverConfig<T>) -> Result<BidPath<T>> {
    problem.check()?;
    if problem.mech.is_contribution() {
        return solve_contribution(problem);
    }
    let v_bar = problem.params.valuation.v_bar;
    let len = problem.len();
    let zero = vec![T::zero(); len];
    let mut bids: Vec<T> = problem
        .evaluate(&zero)?
        .redemption
        .into_iter()
        .map(|v| v.min(v_bar))
        .collect();

    let omega = cfg.damping;
    let mut history: Vec<T> = Vec::new();
    for iteration in 0..cfg.max_iterations {
        let values = problem.evaluate(&bids)?;
        let rhs: Vec<T> = (0..len).map(|i| best_response(problem, &values, &bids, i)).collect();
        let residual = rhs
            .iter()
            .zip(&bids)
            .fold(T::zero(), |acc, (r, b)| acc.max((*r - *b).abs()));
        if residual < cfg.tolerance {
            snap_to_corners(&mut bids, &rhs, v_bar);
            return Ok(BidPath {
                start: problem.state.t,
                t_star: problem.t_star,
                bids,
                residual,
                iterations: iteration + 1,
                fallback_used: false,
            });
        }
        history.push(residual);
        let w = cfg.stall_window;
        if w > 0 && history.len() > w && history.len() % w == 0 {
            let before = history[history.len() - 1 - w];
            if residual > T::lit(0.9) * before {
                log::debug!("damped iteration stalled at residual {residual}; bisecting first bid");
                return solve_by_first_bid(problem, cfg, iteration + 1);
            }
        }
        for (b, r) in bids.iter_mut().zip(&rhs) {
            *b = (T::one() - omega) * *b + omega * *r;
        }
    }
    solve_by_first_bid(problem, cfg, cfg.max_iterations)
}

/// Fallback: bisection on the first-period bid, re-solving the remaining periods with heavy
/// damping for each trial value.
pub(crate) fn solve_by_first_bid<T: Scalar>(
    problem: &PathProblem<'_, T>,
    cfg: &SolverConfig<T>,
    spent: usize,
) -> Result<BidPath<T>> {
    let v_bar = problem.params.valuation.v_bar;
    let len = problem.len();
    let mut inner_iterations = 0usize;
    let mut tail_for = |first: T| -> Result<Vec<T>> {
        let mut bids = vec![first; len];
        let omega = T::lit(0.2);
        for _ in 0..cfg.max_iterations {
            inner_iterations += 1;
            let values = problem.evaluate(&bids)?;
            let mut worst = T::zero();
            let mut next = bids.clone();
            for i in 1..len {
                let r = best_response(problem, &values, &bids, i);
                worst = worst.max((r - bids[i]).abs());
                next[i] = (T::one() - omega) * bids[i] + omega * r;
            }
            if worst < cfg.tolerance {
                return Ok(bids);
            }
            bids = next;
        }
        Err(Error::NonConvergence {
            iterations: cfg.max_iterations,
            residual: f64::NAN,
        })
    };
    let mut gap = |first: T| -> Result<T> {
        let bids = tail_for(first)?;
        let values = problem.evaluate(&bids)?;
        Ok(best_response(problem, &values, &bids, 0) - first)
    };

    let first = if gap(v_bar)? >= T::zero() {
        v_bar
    } else {
        bisect(T::zero(), v_bar, cfg.tolerance * T::lit(0.01), 400, &mut gap)?
    };
    let mut bids = tail_for(first)?;
    let values = problem.evaluate(&bids)?;
    let rhs: Vec<T> = (0..len).map(|i| best_response(problem, &values, &bids, i)).collect();
    snap_to_corners(&mut bids, &rhs, v_bar);
    let residual = fixed_point_residual(problem, &bids)?;
    if residual > cfg.tolerance * T::lit(100.0) {
        return Err(Error::NonConvergence {
            iterations: spent + inner_iterations,
            residual: residual.as_f64(),
        });
    }
    Ok(BidPath {
        start: problem.state.t,
        t_star: problem.t_star,
        bids,
        residual,
        iterations: spent + inner_iterations,
        fallback_used: true,
    })
}

/// Contribution rules: zero bids before an entry period, bids at `v_bar` from it on. The
/// per-unit return `rho_tau` grows by `1/delta` each period, so the earliest entry period
/// that is consistent with the signs of `rho_tau - 1` along its own path is selected.
///
/// Entering lowers the return itself, so entering at `e` can leave `rho_e <= 1` while waiting
/// leaves `rho_e > 1`. The arbitrageur is then indifferent at `e` and bids the interior cutoff
/// that sets `rho_e = 1`.
fn solve_contribution<T: Scalar>(problem: &PathProblem<'_, T>) -> Result<BidPath<T>> {
    let v_bar = problem.params.valuation.v_bar;
    let len = problem.len();
    let path = |entry: usize, marginal: T| -> Vec<T> {
        (0..len)
            .map(|i| match i.cmp(&entry) {
                std::cmp::Ordering::Less => T::zero(),
                std::cmp::Ordering::Equal => marginal,
                std::cmp::Ordering::Greater => v_bar,
            })
            .collect()
    };
    let done = |bids: Vec<T>, entry: usize, residual: T| BidPath {
        start: problem.state.t,
        t_star: problem.t_star,
        bids,
        residual,
        iterations: entry + 1,
        fallback_used: false,
    };
    for entry in 0..=len {
        let bids = path(entry, v_bar);
        let values = problem.evaluate(&bids)?;
        let consistent = values
            .value_factor
            .iter()
            .enumerate()
            .all(|(i, &rho)| (rho > T::one()) == (i >= entry));
        if consistent {
            return Ok(done(bids, entry, T::zero()));
        }
        if entry == len {
            break;
        }
        let excess = |b: T| -> Result<T> { Ok(problem.evaluate(&path(entry, b))?.value_factor[entry] - T::one()) };
        if excess(v_bar)? <= T::zero() && excess(T::zero())? > T::zero() {
            let b = bisect(T::zero(), v_bar, T::default_tol() * T::lit(0.01), 400, excess)?;
            let bids = path(entry, b);
            let residual = (problem.evaluate(&bids)?.value_factor[entry] - T::one()).abs();
            return Ok(done(bids, entry, residual));
        }
    }
    Err(Error::NonConvergence {
        iterations: len + 1,
        residual: f64::NAN,
    })
}

/// Accumulation condition for a fork at the end of `path`:
/// `A + sum F(b_tau)^n >= kappa (N + t*)`, with at least some chance of an arbitrageur win.
pub fn fork_reachable<T: Scalar>(problem: &PathProblem<'_, T>, path: &BidPath<T>) -> bool {
    let params = problem.params;
    let wins = path.expected_wins(&params.valuation, params.bidders);
    wins > T::zero()
        && params.fork_threshold_met(problem.ext, T::from_count(problem.state.arb_holdings) + wins, path.t_star)
}

/// Earliest fork period whose solved bid path satisfies the accumulation condition.
///
/// `solve` is called with successive candidate periods `t, t+1, ..., T`; every solved path is
/// also passed to `inspect`, so callers can evaluate side conditions without re-solving.
pub fn forking_horizon<T: Scalar>(
    base: &PathProblem<'_, T>,
    mut solve: impl FnMut(&PathProblem<'_, T>) -> Result<BidPath<T>>,
    mut inspect: impl FnMut(&PathProblem<'_, T>, &BidPath<T>),
) -> Result<Option<BidPath<T>>> {
    for t_star in base.state.t..=base.params.horizon {
        let problem = PathProblem { t_star, ..*base };
        let path = solve(&problem)?;
        inspect(&problem, &path);
        if fork_reachable(&problem, &path) {
            return Ok(Some(path));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{ExtensionSpec, MechanismSpec};
    use crate::model::MarketParams;

    fn solve(s0: f64, kappa: f64, mech: MechanismSpec<f64>, t_star: usize) -> BidPath<f64> {
        let params = MarketParams::baseline(s0, kappa);
        let ext = ExtensionSpec::default();
        let state = params.initial_state();
        let problem = PathProblem {
            params: &params,
            mech: &mech,
            ext: &ext,
            state: &state,
            t_star,
        };
        solve_bid_path(&problem, &SolverConfig::default()).unwrap()
    }

    #[test]
    fn capped_contribution_never_bids() {
        for (s0, t_star) in [(0.0, 1), (5.0, 10), (200.0, 30)] {
            let path = solve(s0, 0.2, MechanismSpec::Contribution2, t_star);
            assert!(path.bids.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn uncapped_contribution_mixes_at_indifference() {
        let path = solve(5.0, 0.3, MechanismSpec::Contribution1, 10);
        let interior: Vec<f64> = path.bids.iter().copied().filter(|&b| b > 0.0 && b < 1.0).collect();
        assert!(interior.len() <= 1);
        assert!(path.bids.windows(2).all(|w| w[1] >= w[0]));
        assert!(path.residual < 1e-8);
    }

    #[test]
    fn huge_treasury_hits_upper_corner() {
        let path = solve(200.0, 0.3, MechanismSpec::ProRata, 30);
        assert!(path.bids.iter().all(|&b| b >= 1.0));
    }

    #[test]
    fn interior_path_converges_tightly() {
        let path = solve(2.0, 0.02, MechanismSpec::ProRata, 6);
        assert!(path.residual < 1e-10);
        assert!(path.bids.iter().all(|&b| b > 0.0 && b < 1.0));
        // bids rise roughly at rate 1/delta toward the fork
        assert!(path.bids.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn fallback_agrees_with_damped_iteration() {
        let params = MarketParams::<f64>::baseline(4.0, 0.05);
        let mech = MechanismSpec::ProRata;
        let ext = ExtensionSpec::default();
        let state = params.initial_state();
        let problem = PathProblem {
            params: &params,
            mech: &mech,
            ext: &ext,
            state: &state,
            t_star: 8,
        };
        let cfg = SolverConfig::default();
        let damped = solve_bid_path(&problem, &cfg).unwrap();
        let fallback = solve_by_first_bid(&problem, &cfg, 0).unwrap();
        assert!(fallback.fallback_used);
        for (a, b) in damped.bids.iter().zip(&fallback.bids) {
            assert!((a - b).abs() < 1e-8_f64, "{a} vs {b}");
        }
    }

    #[test]
    fn non_convergence_is_reported() {
        let params = MarketParams::baseline(4.0, 0.05);
        let mech = MechanismSpec::ProRata;
        let ext = ExtensionSpec::default();
        let state = params.initial_state();
        let problem = PathProblem {
            params: &params,
            mech: &mech,
            ext: &ext,
            state: &state,
            t_star: 8,
        };
        let cfg = SolverConfig {
            max_iterations: 3,
            stall_window: 0,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve_bid_path(&problem, &cfg),
            Err(Error::NonConvergence { .. })
        ));
    }

    #[test]
    fn zero_path_never_forks() {
        let params = MarketParams::baseline(0.0, 0.2);
        let mech = MechanismSpec::ProRata;
        let ext = ExtensionSpec::default();
        let state = params.initial_state();
        let base = PathProblem {
            params: &params,
            mech: &mech,
            ext: &ext,
            state: &state,
            t_star: 1,
        };
        let zero = |p: &PathProblem<'_, f64>| {
            Ok(BidPath {
                start: 1,
                t_star: p.t_star,
                bids: vec![0.0; p.len()],
                residual: 0.0,
                iterations: 0,
                fallback_used: false,
            })
        };
        assert_eq!(forking_horizon(&base, zero, |_, _| {}).unwrap(), None);
    }

    #[test]
    fn atomic_forks_immediately_with_positive_bid() {
        let mut params = MarketParams::baseline(3.0, 0.0);
        params.kappa = 0.0;
        let mech = MechanismSpec::ProRata;
        let ext = ExtensionSpec {
            atomic: true,
            ..Default::default()
        };
        let state = crate::MarketState {
            t: 4,
            treasury: 3.0,
            arb_holdings: 0,
            price_sum: 0.0,
        };
        let base = PathProblem {
            params: &params,
            mech: &mech,
            ext: &ext,
            state: &state,
            t_star: 4,
        };
        let cfg = SolverConfig::default();
        let path = forking_horizon(&base, |p| solve_bid_path(p, &cfg), |_, _| {})
            .unwrap()
            .unwrap();
        assert_eq!(path.t_star, 4);
    }
}
