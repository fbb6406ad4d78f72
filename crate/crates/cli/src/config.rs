//! Run configuration: a JSON document whose omitted keys take the baseline market
//! (T = 30, N = 10, delta = 0.95, n = 2, Uniform(0, 1) valuations).

use std::path::Path;

use forksim::simulator::LongRunConfig;
use forksim::{
    BidPolicy, ExtensionSpec, MarketParams, MarketState, MechanismSpec, SolverConfig, SpendingPolicy, SweepConfig,
    ValuationModel,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub horizon: usize,
    pub initial_nouns: usize,
    pub bidders: usize,
    pub delta: f64,
    pub kappa: f64,
    pub s0: f64,
    /// Opening price sum `P_0`.
    pub p0: f64,
    pub valuation: ValuationModel<f64>,
    pub mechanism: MechanismSpec<f64>,
    pub vesting_delta: usize,
    pub spending: SpendingPolicy<f64>,
    pub atomic: bool,
    pub seed: u64,
    /// Replications for `simulate`, per cell for `sweep` (zero: classify only).
    pub reps: usize,
    pub sweep_reps: usize,
    pub policy: BidPolicy<f64>,
    pub s0_values: Vec<f64>,
    pub kappa_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub long_run: LongRunConfig,
    pub treasury_grid: Vec<f64>,
    pub solver: SolverConfig<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            initial_nouns: 10,
            bidders: 2,
            delta: 0.95,
            kappa: 0.1,
            s0: 10.0,
            p0: 0.0,
            valuation: ValuationModel {
                family: forksim::ValuationFamily::Uniform,
                v_bar: 1.0,
            },
            mechanism: MechanismSpec::ProRata,
            vesting_delta: 0,
            spending: SpendingPolicy::NoSpending,
            atomic: false,
            seed: 0,
            reps: 10_000,
            sweep_reps: 0,
            policy: BidPolicy::ClosedLoop,
            s0_values: vec![0.0, 5.0, 10.0, 15.0, 20.0, 50.0],
            kappa_values: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.5],
            lambdas: vec![0.05, 0.1, 0.2, 0.5, 1.0],
            long_run: LongRunConfig::default(),
            treasury_grid: (0..=80).map(|i| f64::from(i) * 0.25).collect(),
            solver: SolverConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn params(&self) -> MarketParams<f64> {
        MarketParams {
            horizon: self.horizon,
            initial_nouns: self.initial_nouns,
            bidders: self.bidders,
            delta: self.delta,
            kappa: self.kappa,
            s0: self.s0,
            valuation: self.valuation,
        }
    }

    pub fn ext(&self) -> ExtensionSpec<f64> {
        ExtensionSpec {
            vesting_delta: self.vesting_delta,
            spending: self.spending,
            atomic: self.atomic,
        }
    }

    pub fn start(&self) -> MarketState<f64> {
        MarketState::initial(self.s0, self.p0)
    }

    pub fn sweep(&self) -> SweepConfig<f64> {
        SweepConfig {
            base: self.params(),
            mech: self.mechanism,
            ext: self.ext(),
            s0_values: self.s0_values.clone(),
            kappa_values: self.kappa_values.clone(),
            sim_reps: self.sweep_reps,
            seed: self.seed,
            p0: self.p0,
            policy: self.policy.clone(),
            solver: self.solver,
        }
    }

    /// Checks everything that does not depend on the subcommand.
    pub fn validate(&self) -> Result<(), CliError> {
        self.params().validate(&self.ext()).map_err(CliError::from_core_config)?;
        self.mechanism.validate().map_err(CliError::from_core_config)?;
        self.start().validate(&self.params()).map_err(CliError::from_core_config)?;
        let s = &self.solver;
        if !(s.damping > 0.0 && s.damping <= 1.0) || !(s.tolerance > 0.0) || s.max_iterations == 0 || s.stall_window == 0 {
            return Err(CliError::Config("solver: damping in (0, 1], positive tolerance and counts".into()));
        }
        if let BidPolicy::Fixed { cutoffs } = &self.policy {
            if cutoffs.iter().any(|c| !c.is_finite()) {
                return Err(CliError::Config("policy: cutoffs must be finite".into()));
            }
        }
        Ok(())
    }
}
