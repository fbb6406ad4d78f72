//! Forward Monte Carlo of the repeated auction.
//!
//! Every replication draws from its own ChaCha stream selected by `(seed, rep index)`, so the
//! statistics do not depend on how replications are scheduled across threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{atomic_classify, classify, EqType, EquilibriumSolution, SolverConfig};
use crate::error::{invalid, Error, Result};
use crate::format::fmt_num;
use crate::mechanisms::{ExtensionSpec, MechanismSpec, SpendingPolicy};
use crate::model::{MarketParams, MarketState};
use crate::numeric::pairwise_sum;
use crate::scalar::Scalar;
use crate::valuation::ValuationModel;

/// Quantile levels reported for treasury samples.
pub const QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    Nouner,
    Arbitrageur,
}

impl Winner {
    pub fn as_str(&self) -> &'static str {
        match self {
            Winner::Nouner => "nouner",
            Winner::Arbitrageur => "arbitrageur",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome<T> {
    pub winner: Winner,
    pub price: T,
    pub top_valuation: T,
    pub second_valuation: T,
}

/// English auction among `n` nouners bidding their valuations and one arbitrageur bidding up
/// to `cutoff`. The arbitrageur wins only by strictly exceeding every nouner.
pub fn run_auction<T: Scalar, R: Rng + ?Sized>(
    model: &ValuationModel<T>,
    n: usize,
    cutoff: T,
    rng: &mut R,
) -> Result<AuctionOutcome<T>> {
    if n < 2 {
        return Err(Error::TooFewBidders(n));
    }
    let (mut top, mut second) = (T::neg_infinity(), T::neg_infinity());
    for _ in 0..n {
        let v = model.sample(rng);
        if v > top {
            second = top;
            top = v;
        } else if v > second {
            second = v;
        }
    }
    // Which nouner wins a tie does not affect the price or any tracked quantity.
    let cutoff = cutoff.max(T::zero());
    let (winner, price) = if cutoff > top {
        (Winner::Arbitrageur, top)
    } else {
        (Winner::Nouner, second.max(cutoff))
    };
    Ok(AuctionOutcome {
        winner,
        price,
        top_valuation: top,
        second_valuation: second,
    })
}

/// Market history plus the total the arbitrageur has paid for its current holdings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState<T> {
    pub market: MarketState<T>,
    pub arb_paid: T,
}

impl<T: Scalar> SimState<T> {
    pub fn new(market: MarketState<T>) -> Self {
        Self {
            market,
            arb_paid: T::zero(),
        }
    }
}

/// One simulated period. Treasury, holdings and price sum are end-of-period values before any
/// redemption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord<T> {
    pub t: usize,
    pub price: T,
    pub winner: Winner,
    pub treasury: T,
    pub arb_holdings: usize,
    pub price_sum: T,
    pub spent: T,
    pub forked: bool,
    /// Amount transferred to the forking arbitrageurs.
    pub redeemed: Option<T>,
}

/// Plays period `state.market.t` at the given arbitrageur cutoff.
///
/// Order within the period: auction, price into the treasury, spending on the opening
/// treasury, holdings update, fork check, redemption.
pub fn step<T: Scalar, R: Rng + ?Sized>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &SimState<T>,
    bid: T,
    rng: &mut R,
) -> Result<(SimState<T>, StepRecord<T>)> {
    step_with_share(params, mech, ext, state, bid, state.market.t, rng)
}

/// [`step`] with the pro-rata share taken at `share_period` rather than the current period.
fn step_with_share<T: Scalar, R: Rng + ?Sized>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &SimState<T>,
    bid: T,
    share_period: usize,
    rng: &mut R,
) -> Result<(SimState<T>, StepRecord<T>)> {
    let m = state.market;
    if m.t == 0 || m.t > params.horizon {
        return Err(Error::HorizonExceeded {
            period: m.t,
            horizon: params.horizon,
        });
    }
    let out = run_auction(&params.valuation, params.bidders, bid, rng)?;
    let spent = ext.spending.spend(m.treasury, m.t);
    let treasury = (m.treasury + out.price - spent).max(T::zero());
    let price_sum = m.price_sum + out.price;
    let arb_win = out.winner == Winner::Arbitrageur;
    let holdings = m.arb_holdings + usize::from(arb_win);
    let arb_paid = state.arb_paid + if arb_win { out.price } else { T::zero() };
    let forked = params.fork_threshold_met(ext, T::from_count(holdings), m.t);

    let mut next = SimState {
        market: MarketState {
            t: m.t + 1,
            treasury,
            arb_holdings: holdings,
            price_sum,
        },
        arb_paid,
    };
    let mut redeemed = None;
    if forked {
        let count = T::from_count(holdings);
        let (paid_out, removed) = match *mech {
            MechanismSpec::ProRata => {
                let r = count * treasury / params.nouns_at(share_period);
                (r, r)
            }
            MechanismSpec::ProRataTax { c, burn } => {
                let full = count * treasury / params.nouns_at(share_period);
                (c * full, if burn { full } else { c * full })
            }
            MechanismSpec::Contribution1 | MechanismSpec::Contribution2 => {
                let unit = mech.value_per_unit_price(treasury, price_sum).unwrap_or_else(T::zero);
                let r = (arb_paid * unit).min(treasury);
                // Redeemed nouns take their contributions out of the price sum.
                next.market.price_sum = (price_sum - arb_paid).max(T::zero());
                (r, r)
            }
        };
        next.market.treasury = (treasury - removed).max(T::zero());
        next.market.arb_holdings = 0;
        next.arb_paid = T::zero();
        redeemed = Some(paid_out);
    }
    let record = StepRecord {
        t: m.t,
        price: out.price,
        winner: out.winner,
        treasury,
        arb_holdings: holdings,
        price_sum,
        spent,
        forked,
        redeemed,
    };
    Ok((next, record))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace<T> {
    pub records: Vec<StepRecord<T>>,
    pub fork_time: Option<usize>,
    pub redeemed_amount: Option<T>,
    /// Redeemed amount discounted by the vesting delay.
    pub redeemed_value: Option<T>,
}

impl<T: Scalar> SimTrace<T> {
    /// CSV with header `t,price,winner,S,A,P,spent,forked`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(["t", "price", "winner", "S", "A", "P", "spent", "forked"])?;
        for r in &self.records {
            out.write_record([
                r.t.to_string(),
                fmt_num(r.price.as_f64()),
                r.winner.as_str().to_owned(),
                fmt_num(r.treasury.as_f64()),
                r.arb_holdings.to_string(),
                fmt_num(r.price_sum.as_f64()),
                fmt_num(r.spent.as_f64()),
                r.forked.to_string(),
            ])?;
        }
        out.flush()
    }
}

/// Source of arbitrageur cutoffs during a simulation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BidPolicy<T> {
    /// Cutoffs for periods `1, 2, ...`; zero beyond the end of the list.
    Fixed { cutoffs: Vec<T> },
    /// Replays the equilibrium path solved at the opening state, re-solving once it runs out;
    /// a plan without a fork bids zero to the end.
    OpenLoop,
    /// Re-solves the equilibrium at every realized history.
    #[default]
    ClosedLoop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint<T> {
    pub level: T,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats<T> {
    pub fork_frequency: T,
    pub fork_frequency_se: T,
    /// Mean fork period over replications that forked.
    pub mean_fork_time: Option<T>,
    pub mean_fork_time_se: Option<T>,
    /// Treasury in the last period played, before any redemption.
    pub treasury_mean: T,
    pub treasury_se: T,
    pub treasury_quantiles: Vec<QuantilePoint<T>>,
    pub mean_redeemed: Option<T>,
    pub mean_redeemed_value: Option<T>,
    /// Mean cumulative arbitrageur wins after each period `1..=T`, held constant after a fork.
    pub arb_wins_mean: Vec<T>,
    pub arb_wins_se: Vec<T>,
    pub rep_count: usize,
    pub seed: u64,
}

pub(crate) fn mean_se<T: Scalar>(xs: &[T]) -> (T, T) {
    if xs.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::from_count(xs.len());
    let mean = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let dev: Vec<T> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&dev) / (n - T::one());
    (mean, (var / n).sqrt())
}

/// Linear-interpolation sample quantiles.
pub(crate) fn quantiles<T: Scalar>(xs: &[T]) -> Vec<QuantilePoint<T>> {
    let mut sorted: Vec<T> = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    QUANTILE_LEVELS
        .iter()
        .map(|&level| {
            let value = if sorted.is_empty() {
                T::nan()
            } else {
                let pos = level * (sorted.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                let w = T::lit(pos - lo as f64);
                sorted[lo] + (sorted[hi] - sorted[lo]) * w
            };
            QuantilePoint {
                level: T::lit(level),
                value,
            }
        })
        .collect()
}

struct RepResult<T> {
    fork_time: Option<usize>,
    final_treasury: T,
    redeemed: Option<T>,
    redeemed_value: Option<T>,
    cum_wins: Vec<u32>,
    trace: Option<SimTrace<T>>,
}

/// A configured simulation; `run` and `run_traced` draw replications.
#[derive(Debug, Clone)]
pub struct Simulation<'a, T> {
    pub params: &'a MarketParams<T>,
    pub mech: &'a MechanismSpec<T>,
    pub ext: &'a ExtensionSpec<T>,
    pub start: MarketState<T>,
    pub policy: BidPolicy<T>,
    pub solver: SolverConfig<T>,
}

impl<'a, T: Scalar> Simulation<'a, T> {
    pub fn new(
        params: &'a MarketParams<T>,
        mech: &'a MechanismSpec<T>,
        ext: &'a ExtensionSpec<T>,
        policy: BidPolicy<T>,
    ) -> Self {
        Self {
            params,
            mech,
            ext,
            start: params.initial_state(),
            policy,
            solver: SolverConfig::default(),
        }
    }

    pub fn run(&self, reps: usize, seed: u64) -> Result<SimStats<T>> {
        Ok(self.run_traced(reps, seed, 0)?.0)
    }

    /// Runs `reps` replications, keeping the traces of the first `keep`.
    pub fn run_traced(&self, reps: usize, seed: u64, keep: usize) -> Result<(SimStats<T>, Vec<SimTrace<T>>)> {
        if reps == 0 {
            return Err(invalid("reps", "need at least one replication"));
        }
        self.params.validate(self.ext)?;
        self.mech.validate()?;
        self.start.validate(self.params)?;
        let plan = match self.policy {
            BidPolicy::OpenLoop => Some(self.solve(&self.start)?),
            _ => None,
        };
        let results: Vec<RepResult<T>> = (0..reps)
            .into_par_iter()
            .map(|rep| self.run_rep(plan.as_ref(), rep, seed, rep < keep))
            .collect::<Result<_>>()?;
        let traces = results.iter().filter_map(|r| r.trace.clone()).collect();
        Ok((self.aggregate(&results, seed), traces))
    }

    fn solve(&self, state: &MarketState<T>) -> Result<EquilibriumSolution<T>> {
        classify(self.params, self.mech, self.ext, state, &self.solver)
    }

    fn run_rep(
        &self,
        plan: Option<&EquilibriumSolution<T>>,
        rep: usize,
        seed: u64,
        keep_trace: bool,
    ) -> Result<RepResult<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let horizon = self.params.horizon;
        let mut state = SimState::new(self.start);
        let mut plan = plan.cloned();
        let mut records = Vec::new();
        let mut cum_wins = vec![0u32; horizon];
        let mut wins = 0u32;
        let mut last_treasury = state.market.treasury;
        let mut fork = None;

        while state.market.t <= horizon {
            let t = state.market.t;
            let bid = match &self.policy {
                BidPolicy::Fixed { cutoffs } => cutoffs.get(t - 1).copied().unwrap_or_else(T::zero),
                BidPolicy::OpenLoop => {
                    // A plan without a fork bids zero through T.
                    let covered = plan.as_ref().is_some_and(|p| match &p.bid_path {
                        Some(path) => path.bid_at(t).is_some(),
                        None => p.eq_type == EqType::TypeIII,
                    });
                    if !covered {
                        plan = Some(self.solve(&state.market)?);
                    }
                    plan.as_ref().map_or(T::zero(), |p| p.bid_at(t))
                }
                BidPolicy::ClosedLoop => self.solve(&state.market)?.bid_at(t),
            };
            let (next, record) = step(self.params, self.mech, self.ext, &state, bid, &mut rng)?;
            if record.winner == Winner::Arbitrageur {
                wins += 1;
            }
            cum_wins[t - 1] = wins;
            last_treasury = record.treasury;
            if keep_trace {
                records.push(record);
            }
            state = next;
            if record.forked {
                fork = Some((t, record.redeemed.unwrap_or_else(T::zero)));
                for slot in &mut cum_wins[t..] {
                    *slot = wins;
                }
                break;
            }
        }

        let vest = self.params.delta.powi(self.ext.vesting_delta as i32);
        let redeemed = fork.map(|(_, r)| r);
        let redeemed_value = redeemed.map(|r| vest * r);
        let trace = keep_trace.then(|| SimTrace {
            records,
            fork_time: fork.map(|(t, _)| t),
            redeemed_amount: redeemed,
            redeemed_value,
        });
        Ok(RepResult {
            fork_time: fork.map(|(t, _)| t),
            final_treasury: last_treasury,
            redeemed,
            redeemed_value,
            cum_wins,
            trace,
        })
    }

    fn aggregate(&self, results: &[RepResult<T>], seed: u64) -> SimStats<T> {
        let reps = results.len();
        let indicator: Vec<T> = results
            .iter()
            .map(|r| if r.fork_time.is_some() { T::one() } else { T::zero() })
            .collect();
        let (fork_frequency, fork_frequency_se) = mean_se(&indicator);
        let fork_times: Vec<T> = results.iter().filter_map(|r| r.fork_time.map(T::from_count)).collect();
        let (ft_mean, ft_se) = mean_se(&fork_times);
        let treasury: Vec<T> = results.iter().map(|r| r.final_treasury).collect();
        let (treasury_mean, treasury_se) = mean_se(&treasury);
        let redeemed: Vec<T> = results.iter().filter_map(|r| r.redeemed).collect();
        let redeemed_value: Vec<T> = results.iter().filter_map(|r| r.redeemed_value).collect();
        let nonempty = |xs: &[T]| (!xs.is_empty()).then(|| mean_se(xs).0);

        let horizon = self.params.horizon;
        let mut arb_wins_mean = Vec::with_capacity(horizon);
        let mut arb_wins_se = Vec::with_capacity(horizon);
        for i in 0..horizon {
            let column: Vec<T> = results.iter().map(|r| T::lit(f64::from(r.cum_wins[i]))).collect();
            let (m, se) = mean_se(&column);
            arb_wins_mean.push(m);
            arb_wins_se.push(se);
        }

        SimStats {
            fork_frequency,
            fork_frequency_se,
            mean_fork_time: (!fork_times.is_empty()).then_some(ft_mean),
            mean_fork_time_se: (!fork_times.is_empty()).then_some(ft_se),
            treasury_mean,
            treasury_se,
            treasury_quantiles: quantiles(&treasury),
            mean_redeemed: nonempty(&redeemed),
            mean_redeemed_value: nonempty(&redeemed_value),
            arb_wins_mean,
            arb_wins_se,
            rep_count: reps,
            seed,
        }
    }
}

/// Simulates `reps` games from the opening state of `params`.
pub fn simulate<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    policy: BidPolicy<T>,
    reps: usize,
    seed: u64,
) -> Result<SimStats<T>> {
    Simulation::new(params, mech, ext, policy).run(reps, seed)
}

/// How the atomic game continues after a fork.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartMode {
    /// Same `N` throughout: every period is priced as the opening period of a new game, so the
    /// share stays `c / (N + 1)`; the treasury carries over.
    #[default]
    CarriedOver,
    /// The period count, and with it the share `c / (N + t)`, keeps growing between forks and
    /// resets after each fork.
    ResetN,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LongRunConfig {
    pub periods: usize,
    /// Leading periods excluded from the statistics.
    pub burn_in: usize,
    /// Number of batches for the batch-means standard error.
    pub batches: usize,
    #[serde(default)]
    pub restart: RestartMode,
    pub seed: u64,
}

impl Default for LongRunConfig {
    fn default() -> Self {
        Self {
            periods: 100_000,
            burn_in: 1_000,
            batches: 100,
            restart: RestartMode::CarriedOver,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunStats<T> {
    pub treasury_mean: T,
    /// Batch-means standard error of the treasury mean.
    pub treasury_se: T,
    pub treasury_quantiles: Vec<QuantilePoint<T>>,
    pub treasury_min: T,
    pub treasury_max: T,
    /// `v_bar / alpha` with `alpha = c / (N + 1)`; pro-rata rules only.
    pub upper_bound: Option<T>,
    /// End-of-period treasury samples outside `(0, upper_bound)`.
    pub support_violations: usize,
    pub forks: usize,
    pub fork_frequency: T,
    /// Periods in which a redemption lowered the treasury.
    pub redemption_drops: usize,
    pub periods: usize,
    pub burn_in: usize,
    pub seed: u64,
}

/// Long atomic-exit run with bids re-solved every period; the game restarts after each fork
/// with the post-redemption treasury.
pub fn atomic_long_run<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    start: &MarketState<T>,
    cfg: &LongRunConfig,
    solver: &SolverConfig<T>,
) -> Result<LongRunStats<T>> {
    if cfg.periods <= cfg.burn_in {
        return Err(invalid("periods", "must exceed the burn-in"));
    }
    if cfg.batches < 2 || cfg.periods - cfg.burn_in < cfg.batches {
        return Err(invalid("batches", "need at least two batches of one period"));
    }
    mech.validate()?;
    let ext = ExtensionSpec {
        vesting_delta: 0,
        spending: SpendingPolicy::NoSpending,
        atomic: true,
    };
    let mut run_params = *params;
    run_params.kappa = T::zero();
    run_params.horizon = cfg.periods + 1;
    run_params.validate(&ext)?;

    let upper_bound = mech
        .pro_rata_scale()
        .map(|c| params.valuation.v_bar / (c / params.nouns_at(1)));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = SimState::new(MarketState { t: 1, ..*start });
    let kept = cfg.periods - cfg.burn_in;
    let mut samples = Vec::with_capacity(kept);
    let mut forks = 0usize;
    let mut redemption_drops = 0usize;
    let mut violations = 0usize;

    for period in 0..cfg.periods {
        let t = state.market.t;
        let bid = atomic_classify(&run_params, mech, &ext, &state.market, solver)?.first_bid();
        let (mut next, record) = step_with_share(&run_params, mech, &ext, &state, bid, t, &mut rng)?;
        let restart = match cfg.restart {
            RestartMode::CarriedOver => true,
            RestartMode::ResetN => record.forked,
        };
        next.market.t = if restart { 1 } else { t + 1 };
        if period >= cfg.burn_in {
            let s = next.market.treasury;
            if record.forked {
                forks += 1;
            }
            if next.market.treasury < record.treasury {
                redemption_drops += 1;
            }
            if !(s > T::zero()) || upper_bound.is_some_and(|u| s >= u) {
                violations += 1;
            }
            samples.push(s);
        }
        state = next;
    }

    let (treasury_mean, _) = mean_se(&samples);
    let batch = kept / cfg.batches;
    let batch_means: Vec<T> = samples
        .chunks_exact(batch)
        .take(cfg.batches)
        .map(|c| pairwise_sum(c) / T::from_count(c.len()))
        .collect();
    let (_, treasury_se) = mean_se(&batch_means);
    let treasury_min = samples.iter().copied().fold(T::infinity(), T::min);
    let treasury_max = samples.iter().copied().fold(T::neg_infinity(), T::max);
    Ok(LongRunStats {
        treasury_mean,
        treasury_se,
        treasury_quantiles: quantiles(&samples),
        treasury_min,
        treasury_max,
        upper_bound,
        support_violations: violations,
        forks,
        fork_frequency: T::from_count(forks) / T::from_count(kept),
        redemption_drops,
        periods: cfg.periods,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
    })
}
