//! Scenario configuration: defaults, then a JSON file, then flags.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use steady_auction::chain::SolverOptions;
use steady_auction::montecarlo::{BidSource, LambdaSwitch, Probe, DEFAULT_POOL_CAP};
use steady_auction::values::ValueDistribution;
use steady_auction::winner::DEFAULT_GRID_POINTS;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dist: ValueDistribution,
    /// Arrival rate; for `stationary` and `regime` this is the chain's `λ*`.
    pub lambda: f64,
    pub delta: f64,
    pub mu: u32,
    pub g_points: usize,
    /// Bid grid size; by default the bid grid follows the winner grid.
    pub x_points: Option<usize>,
    pub solver: SolverOptions,
    pub simulation: SimulationSettings,
    /// Allow the unverified bid route for several winners with `δ > 0`.
    pub experimental_mu: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dist: ValueDistribution::unit_uniform(),
            lambda: 2.0,
            delta: 0.01,
            mu: 1,
            g_points: DEFAULT_GRID_POINTS,
            x_points: None,
            solver: SolverOptions::default(),
            simulation: SimulationSettings::default(),
            experimental_mu: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSettings {
    pub seed: u64,
    /// Rounds after warmup.
    pub rounds: u64,
    /// Defaults to `max(10⁴, 20/δ)`.
    pub warmup: Option<u64>,
    pub bid_source: BidSource,
    pub probes: Vec<Probe>,
    pub lambda_switch: Option<LambdaSwitch>,
    pub autocorr_lags: usize,
    pub pool_cap: usize,
    pub prune_floor: Option<f64>,
    pub trace: bool,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            seed: 1,
            rounds: 1_000_000,
            warmup: None,
            bid_source: BidSource::ValuesOnly,
            probes: Vec::new(),
            lambda_switch: None,
            autocorr_lags: 0,
            pool_cap: DEFAULT_POOL_CAP,
            prune_floor: None,
            trace: false,
        }
    }
}

/// Flags shared by every command. Flags override the config file, which
/// overrides the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Scenario JSON, or the JSON metadata written by an earlier run.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub mu: Option<u32>,
    /// uniform, powerlaw or table:PATH (CSV of percentile, value knots).
    #[arg(long, global = true, value_name = "SPEC")]
    pub dist: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Post-warmup simulation rounds.
    #[arg(long, global = true)]
    pub rounds: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub experimental_mu: bool,
    /// Also write per-round simulation rows.
    #[arg(long, global = true)]
    pub trace: bool,
}

pub fn parse_dist(spec: &str) -> CliResult<ValueDistribution> {
    match spec {
        "uniform" => Ok(ValueDistribution::unit_uniform()),
        "powerlaw" => Ok(ValueDistribution::PowerLaw),
        _ => match spec.strip_prefix("table:") {
            Some(path) => Ok(ValueDistribution::tabulated_from_csv(path)?),
            None => Err(CliError::Config(format!("unknown distribution `{spec}`; use uniform, powerlaw or table:PATH"))),
        },
    }
}

impl Overrides {
    pub fn resolve(&self) -> CliResult<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(CliError::io(path))?;
                let mut doc: Value = serde_json::from_str(&text)?;
                // Metadata files carry the scenario under `config`.
                if doc.get("command").is_some() {
                    doc = doc["config"].take();
                }
                serde_json::from_value(doc)?
            }
            None => ScenarioConfig::default(),
        };
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.delta {
            cfg.delta = v;
        }
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(spec) = &self.dist {
            cfg.dist = parse_dist(spec)?;
        }
        if let Some(v) = self.seed {
            cfg.simulation.seed = v;
        }
        if let Some(v) = self.rounds {
            cfg.simulation.rounds = v;
        }
        cfg.experimental_mu |= self.experimental_mu;
        cfg.simulation.trace |= self.trace;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1], got {}", self.delta));
        }
        if self.mu == 0 {
            return bad("mu must be at least 1".into());
        }
        if self.g_points < 2 || self.x_points.is_some_and(|n| n < 2) {
            return bad("grids need at least 2 points".into());
        }
        if !(self.solver.tol > 0.0 && self.solver.tail_tol > 0.0 && self.solver.max_iterations > 0) {
            return bad("solver tolerances and iteration budget must be positive".into());
        }
        if self.simulation.rounds == 0 {
            return bad("rounds must be positive".into());
        }
        self.dist.validate()?;
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(&Sha256::digest(&bytes)[..6])
    }
}
