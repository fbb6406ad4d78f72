//! Classification (and optionally simulation) over an `(S0, kappa)` grid, plus the series
//! behind the bid-path, win-accumulation and contribution-share figures.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{classify, EqType, EquilibriumSolution, SolverConfig};
use crate::error::{invalid, Result};
use crate::format::{fmt_num, fmt_opt};
use crate::mechanisms::{ExtensionSpec, MechanismSpec};
use crate::model::{MarketParams, MarketState};
use crate::scalar::Scalar;
use crate::simulator::{BidPolicy, Simulation};

/// Golden-ratio increment separating per-cell seeds.
const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

pub const CSV_HEADER: [&str; 7] = ["s0", "kappa", "eq_type", "t_star", "V_e", "fork_freq", "mean_fork_time"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SweepConfig<T> {
    /// Everything except `s0` and `kappa`, which come from the axes.
    pub base: MarketParams<T>,
    pub mech: MechanismSpec<T>,
    #[serde(default)]
    pub ext: ExtensionSpec<T>,
    pub s0_values: Vec<T>,
    pub kappa_values: Vec<T>,
    /// Replications per cell; zero skips simulation.
    #[serde(default)]
    pub sim_reps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Opening price sum `P_0`.
    #[serde(default)]
    pub p0: T,
    #[serde(default)]
    pub policy: BidPolicy<T>,
    #[serde(default)]
    pub solver: SolverConfig<T>,
}

impl<T: Scalar> SweepConfig<T> {
    pub fn new(base: MarketParams<T>, mech: MechanismSpec<T>, s0_values: Vec<T>, kappa_values: Vec<T>) -> Self {
        Self {
            base,
            mech,
            ext: ExtensionSpec::default(),
            s0_values,
            kappa_values,
            sim_reps: 0,
            seed: 0,
            p0: T::zero(),
            policy: BidPolicy::default(),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s0_values.is_empty() || self.kappa_values.is_empty() {
            return Err(invalid("axes", "S0 and kappa axes must be non-empty"));
        }
        if let Some(k) = self.kappa_values.iter().find(|&&k| !(k >= T::zero() && k < T::one())) {
            return Err(invalid("kappa_values", format!("kappa must lie in [0, 1), got {k}")));
        }
        if let Some(s) = self.s0_values.iter().find(|&&s| !(s >= T::zero()) || !s.is_finite()) {
            return Err(invalid("s0_values", format!("S0 must be finite and nonnegative, got {s}")));
        }
        if !(self.p0 >= T::zero()) {
            return Err(invalid("p0", "must be nonnegative"));
        }
        self.mech.validate()?;
        self.ext.validate(self.base.horizon)
    }

    /// Seed of the cell at flat index `idx`.
    pub fn cell_seed(&self, idx: usize) -> u64 {
        self.seed.wrapping_add((idx as u64).wrapping_mul(SEED_STRIDE))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell<T> {
    pub s0: T,
    pub kappa: T,
    /// `None` when the cell failed; see `error`.
    pub eq_type: Option<EqType>,
    pub t_star: Option<usize>,
    pub v_e: Option<T>,
    pub fork_freq: Option<T>,
    pub mean_fork_time: Option<T>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct SweepResult<T> {
    pub config: SweepConfig<T>,
    /// Row per `S0`, column per `kappa`.
    pub cells: Vec<Vec<SweepCell<T>>>,
    pub elapsed_seconds: f64,
    pub threads: usize,
}

impl<T: Scalar> SweepResult<T> {
    pub fn iter_cells(&self) -> impl Iterator<Item = &SweepCell<T>> {
        self.cells.iter().flatten()
    }

    /// `(row, column)` of every Type I or II cell.
    pub fn forking_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.cells.iter().enumerate() {
            for (j, cell) in row.iter().enumerate() {
                if cell.eq_type.is_some_and(|e| e.forks()) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn count(&self, eq_type: EqType) -> usize {
        self.iter_cells().filter(|c| c.eq_type == Some(eq_type)).count()
    }

    /// One row per cell in `s0`-major order, numbers with 12 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(CSV_HEADER)?;
        for c in self.iter_cells() {
            out.write_record([
                fmt_num(c.s0.as_f64()),
                fmt_num(c.kappa.as_f64()),
                c.eq_type.map_or("Failed", |e| e.as_str()).to_owned(),
                c.t_star.map(|t| t.to_string()).unwrap_or_default(),
                fmt_opt(c.v_e.map(Scalar::as_f64)),
                fmt_opt(c.fork_freq.map(Scalar::as_f64)),
                fmt_opt(c.mean_fork_time.map(Scalar::as_f64)),
            ])?;
        }
        out.flush()
    }
}

fn run_cell<T: Scalar>(cfg: &SweepConfig<T>, s0: T, kappa: T, seed: u64) -> Result<SweepCell<T>> {
    let params = MarketParams { s0, kappa, ..cfg.base };
    params.validate(&cfg.ext)?;
    let start = MarketState::initial(s0, cfg.p0);
    let sol = classify(&params, &cfg.mech, &cfg.ext, &start, &cfg.solver)?;
    let (mut fork_freq, mut mean_fork_time) = (None, None);
    if cfg.sim_reps > 0 {
        let sim = Simulation {
            params: &params,
            mech: &cfg.mech,
            ext: &cfg.ext,
            start,
            policy: cfg.policy.clone(),
            solver: cfg.solver,
        };
        let stats = sim.run(cfg.sim_reps, seed)?;
        fork_freq = Some(stats.fork_frequency);
        mean_fork_time = stats.mean_fork_time;
    }
    Ok(SweepCell {
        s0,
        kappa,
        eq_type: Some(sol.eq_type),
        t_star: sol.t_star,
        v_e: Some(sol.redemption_value),
        fork_freq,
        mean_fork_time,
        error: None,
    })
}

/// Runs every cell in parallel; a failing cell is recorded, never aborting the sweep.
pub fn run_sweep<T: Scalar>(cfg: &SweepConfig<T>) -> Result<SweepResult<T>> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let nk = cfg.kappa_values.len();
    let total = cfg.s0_values.len() * nk;
    let flat: Vec<SweepCell<T>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let (s0, kappa) = (cfg.s0_values[idx / nk], cfg.kappa_values[idx % nk]);
            run_cell(cfg, s0, kappa, cfg.cell_seed(idx)).unwrap_or_else(|e| {
                log::warn!("sweep cell S0={s0} kappa={kappa} failed: {e}");
                SweepCell {
                    s0,
                    kappa,
                    eq_type: None,
                    t_star: None,
                    v_e: None,
                    fork_freq: None,
                    mean_fork_time: None,
                    error: Some(e.to_string()),
                }
            })
        })
        .collect();
    let cells = flat.chunks(nk).map(<[SweepCell<T>]>::to_vec).collect();
    Ok(SweepResult {
        config: cfg.clone(),
        cells,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint<T> {
    pub tau: usize,
    pub value: T,
}

/// Redemption value of a noun bought at the expected top valuation, as a function of the
/// treasury, under the uncapped and capped contribution rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionCurves<T> {
    pub purchase_price: T,
    pub price_sum: T,
    pub treasury: Vec<T>,
    pub uncapped: Vec<T>,
    pub cap: Vec<T>,
    pub capped: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSeries<T> {
    pub eq_type: EqType,
    pub t_star: Option<usize>,
    /// Expected equilibrium bids `E[b*_tau]` seen from the opening period.
    pub bids: Vec<SeriesPoint<T>>,
    pub win_probability: Vec<SeriesPoint<T>>,
    /// `A + sum_{s <= tau} F(b_s)^n`.
    pub cumulative_wins: Vec<SeriesPoint<T>>,
    /// `kappa (N + tau)`.
    pub required_wins: Vec<SeriesPoint<T>>,
    pub contribution: ContributionCurves<T>,
}

/// Series over the solved path (or over `t..=T` with zero bids when no fork is reachable).
pub fn emit_figure_series<T: Scalar>(
    params: &MarketParams<T>,
    mech: &MechanismSpec<T>,
    ext: &ExtensionSpec<T>,
    state: &MarketState<T>,
    solver: &SolverConfig<T>,
    treasury_grid: &[T],
) -> Result<FigureSeries<T>> {
    let sol: EquilibriumSolution<T> = classify(params, mech, ext, state, solver)?;
    let model = &params.valuation;
    let n = params.bidders;
    let last = sol.t_star.unwrap_or(params.horizon);
    let kappa = params.effective_kappa(ext);

    let mut bids = Vec::new();
    let mut win_probability = Vec::new();
    let mut cumulative_wins = Vec::new();
    let mut required_wins = Vec::new();
    let mut acc = T::from_count(state.arb_holdings);
    for tau in state.t..=last {
        let b = sol.bid_at(tau);
        let w = model.win_probability(b, n);
        acc = acc + w;
        bids.push(SeriesPoint { tau, value: b });
        win_probability.push(SeriesPoint { tau, value: w });
        cumulative_wins.push(SeriesPoint { tau, value: acc });
        required_wins.push(SeriesPoint {
            tau,
            value: kappa * params.nouns_at(tau),
        });
    }

    let (top, _) = model.expected_order_stats(n)?;
    let price_sum = state.price_sum + top;
    let uncapped: Vec<T> = treasury_grid.iter().map(|&s| top * s / price_sum).collect();
    let cap = vec![top; treasury_grid.len()];
    let capped = uncapped.iter().map(|&v| v.min(top)).collect();
    Ok(FigureSeries {
        eq_type: sol.eq_type,
        t_star: sol.t_star,
        bids,
        win_probability,
        cumulative_wins,
        required_wins,
        contribution: ContributionCurves {
            purchase_price: top,
            price_sum,
            treasury: treasury_grid.to_vec(),
            uncapped,
            cap,
            capped,
        },
    })
}
