//! End-to-end benchmark experiments: configuration, the sequential
//! optimization loop, gap scoring, aggregation over replicates, and
//! persistence.
//!
//! A run starts from a space-filling design on the truth source, fits the
//! multi-source surrogate, and then repeats: check the budget, pick a
//! lookahead length for the stage, pick a (source, point) query by rollout,
//! evaluate it, charge its cost, refit. Every stage appends one trace row;
//! the run is scored by the gap
//!
//! ```text
//! G = (f_init − f_final) / (f_init − f_star)
//! ```
//!
//! the fraction of the possible improvement over the best initial
//! observation that the run actually achieved.
//!
//! Everything downstream of a `(config fingerprint, seed)` pair is
//! deterministic: per-stage randomness is derived from the seed by purpose
//! and stage index, and auxiliary-source bias draws are keyed by the config
//! so all replicates of a run optimize the same problem instance.

use crate::acquisition::{self, GridCache, SourceCost};
use crate::design;
use crate::error::{Error, Result};
use crate::gp::{Dataset, GpModel, SourceModelSpec};
use crate::horizon::{self, ErrorBoundParams, HorizonDecision, PhiMode};
use crate::kernel::KernelSpec;
use crate::quadrature::{gauss_hermite, QuadratureRule, MAX_NODES};
use crate::rollout::{self, RolloutConfig};
use crate::seeding::{self, Purpose};
use crate::sources::{BiasKind, BiasedSourceSpec, ObjectiveKind, ObjectiveSpec, SourcePool};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

/// How the per-stage lookahead length is chosen.
///
/// Serializes to/from the strings `"adaptive"`, `"fixed:<h>"`, and
/// `"greedy"`, matching the CLI flag grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum HorizonMode {
    /// Stagewise choice from the model-trust bound.
    Adaptive,
    /// The same lookahead at every stage (truncated near the end of the
    /// run).
    Fixed(usize),
    /// One-step lookahead everywhere; equivalent to `Adaptive` with the
    /// model-trust bound forced infinite.
    Greedy,
}

impl Default for HorizonMode {
    fn default() -> Self {
        HorizonMode::Adaptive
    }
}

impl fmt::Display for HorizonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HorizonMode::Adaptive => write!(f, "adaptive"),
            HorizonMode::Fixed(h) => write!(f, "fixed:{h}"),
            HorizonMode::Greedy => write!(f, "greedy"),
        }
    }
}

impl FromStr for HorizonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(HorizonMode::Adaptive),
            "greedy" => Ok(HorizonMode::Greedy),
            _ => {
                if let Some(rest) = s.strip_prefix("fixed:") {
                    let h: usize = rest.parse().map_err(|_| {
                        Error::invalid(format!("bad fixed lookahead length {rest:?}"))
                    })?;
                    if h == 0 {
                        return Err(Error::invalid("fixed lookahead must be at least 1"));
                    }
                    Ok(HorizonMode::Fixed(h))
                } else {
                    Err(Error::invalid(format!(
                        "unknown mode {s:?}; expected \"adaptive\", \"fixed:<h>\", or \"greedy\""
                    )))
                }
            }
        }
    }
}

impl TryFrom<String> for HorizonMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<HorizonMode> for String {
    fn from(mode: HorizonMode) -> String {
        mode.to_string()
    }
}

/// One auxiliary information source in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    /// Bias family added on top of the truth objective.
    pub kind: BiasKind,
    /// Query cost; defaults to the problem dimension.
    #[serde(default)]
    pub cost: Option<f64>,
    /// Explicit seed for randomized bias draws; defaults to a value
    /// derived from the base seed and the source index, so every
    /// replicate of a run sees the same auxiliary source.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_alpha() -> f64 {
    0.9
}
fn default_h_bar() -> usize {
    5
}
fn default_n_nodes() -> usize {
    10
}
fn default_n_initial() -> usize {
    9
}
fn default_error_k() -> f64 {
    1.0
}
fn default_noise_sd() -> f64 {
    crate::sources::DEFAULT_NOISE_SD
}
fn default_replicates() -> usize {
    10
}
fn default_fit_restarts() -> usize {
    8
}

/// Complete description of a benchmark run. Optional fields default to
/// the standard budget rule for the objective's dimension `d`:
/// `n_evals = 10d`, `budget = 10d²`, `truth_cost = 5d`,
/// `source_cost = d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Benchmark objective (the truth source).
    pub objective: ObjectiveKind,
    /// Auxiliary biased sources; empty for single-source runs.
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
    /// Discount factor for future stage rewards.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Upper bound on the per-stage lookahead.
    #[serde(default = "default_h_bar")]
    pub h_bar: usize,
    /// Gauss–Hermite nodes per outcome expectation.
    #[serde(default = "default_n_nodes")]
    pub n_nodes: usize,
    /// Points in the initial space-filling design.
    #[serde(default = "default_n_initial")]
    pub n_initial: usize,
    /// Sequential evaluations after the initial design.
    #[serde(default)]
    pub n_evals: Option<usize>,
    /// Total query budget in cost units.
    #[serde(default)]
    pub budget: Option<f64>,
    /// Cost of one truth-source query.
    #[serde(default)]
    pub truth_cost: Option<f64>,
    /// Default cost of one auxiliary-source query.
    #[serde(default)]
    pub source_cost: Option<f64>,
    /// Lookahead selection mode.
    #[serde(default)]
    pub mode: HorizonMode,
    /// Per-step benefit used by the adaptive lookahead decision.
    #[serde(default)]
    pub phi_mode: PhiMode,
    /// Multiplicative constant of the model-trust bound.
    #[serde(default = "default_error_k")]
    pub error_k: f64,
    /// Additive constant of the model-trust bound.
    #[serde(default)]
    pub error_u: f64,
    /// Process-variance constant of the model-trust bound; defaults to
    /// the fitted truth signal variance (standardized-target units, so
    /// it is commensurate with the cost-normalized stage rewards).
    #[serde(default)]
    pub error_sigma2: Option<f64>,
    /// Observation noise of the truth source.
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Independent repeats of the run.
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Seed from which all replicate seeds are derived.
    #[serde(default)]
    pub base_seed: u64,
    /// Extra multistart restarts per surrogate refit.
    #[serde(default = "default_fit_restarts")]
    pub fit_restarts: usize,
    /// Restrict query selection to the stage grid instead of running the
    /// continuous search. Slower per stage but exactly reproducible by a
    /// grid scan, which is what the replay oracles need.
    #[serde(default)]
    pub select_on_grid: bool,
}

/// The same config with every default materialized; this is what gets
/// fingerprinted and persisted, so two spellings of the same run hash
/// identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub objective: ObjectiveKind,
    pub sources: Vec<ResolvedSource>,
    pub alpha: f64,
    pub h_bar: usize,
    pub n_nodes: usize,
    pub n_initial: usize,
    pub n_evals: usize,
    pub budget: f64,
    pub truth_cost: f64,
    pub mode: HorizonMode,
    pub phi_mode: PhiMode,
    pub error_k: f64,
    pub error_u: f64,
    pub error_sigma2: Option<f64>,
    pub noise_sd: f64,
    pub replicates: usize,
    pub base_seed: u64,
    pub fit_restarts: usize,
    pub select_on_grid: bool,
}

/// An auxiliary source with cost and bias seed materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSource {
    pub kind: BiasKind,
    pub cost: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Minimal config for an objective: single source, all defaults.
    pub fn new(objective: ObjectiveKind) -> Self {
        Self {
            objective,
            sources: Vec::new(),
            alpha: default_alpha(),
            h_bar: default_h_bar(),
            n_nodes: default_n_nodes(),
            n_initial: default_n_initial(),
            n_evals: None,
            budget: None,
            truth_cost: None,
            source_cost: None,
            mode: HorizonMode::default(),
            phi_mode: PhiMode::default(),
            error_k: default_error_k(),
            error_u: 0.0,
            error_sigma2: None,
            noise_sd: default_noise_sd(),
            replicates: default_replicates(),
            base_seed: 0,
            fit_restarts: default_fit_restarts(),
            select_on_grid: false,
        }
    }

    /// Parses a TOML config file.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads and parses a TOML config file from disk.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    /// Sequential evaluations after the initial design (`N`).
    pub fn total_evaluations(&self) -> usize {
        self.n_evals.unwrap_or(10 * self.dim())
    }

    /// Total budget in cost units (`B`).
    pub fn initial_budget(&self) -> f64 {
        self.budget.unwrap_or((10 * self.dim() * self.dim()) as f64)
    }

    /// Cost of one truth query (`c`).
    pub fn truth_query_cost(&self) -> f64 {
        self.truth_cost.unwrap_or((5 * self.dim()) as f64)
    }

    fn aux_query_cost(&self, source: &SourceConfig) -> f64 {
        source
            .cost
            .or(self.source_cost)
            .unwrap_or(self.dim() as f64)
    }

    fn aux_seed(&self, index: usize, source: &SourceConfig) -> u64 {
        source
            .seed
            .unwrap_or_else(|| seeding::derive(self.base_seed, Purpose::BiasDraw, index as u64))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "discount must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.h_bar == 0 {
            return Err(Error::invalid("lookahead cap must be at least 1"));
        }
        if let HorizonMode::Fixed(h) = self.mode {
            if h == 0 || h > self.h_bar {
                return Err(Error::invalid(format!(
                    "fixed lookahead {h} must lie in 1..={}",
                    self.h_bar
                )));
            }
        }
        if self.n_nodes == 0 || self.n_nodes > MAX_NODES {
            return Err(Error::invalid(format!(
                "node count must lie in 1..={MAX_NODES}, got {}",
                self.n_nodes
            )));
        }
        if self.n_initial == 0 {
            return Err(Error::invalid(
                "at least one initial design point is required to define the gap",
            ));
        }
        if !(self.initial_budget() > 0.0) || !self.initial_budget().is_finite() {
            return Err(Error::invalid(format!(
                "budget must be positive and finite, got {}",
                self.initial_budget()
            )));
        }
        if !(self.truth_query_cost() > 0.0) || !self.truth_query_cost().is_finite() {
            return Err(Error::invalid(format!(
                "truth query cost must be positive and finite, got {}",
                self.truth_query_cost()
            )));
        }
        for source in &self.sources {
            let cost = self.aux_query_cost(source);
            if !(cost > 0.0) || !cost.is_finite() {
                return Err(Error::invalid(format!(
                    "auxiliary query cost must be positive and finite, got {cost}"
                )));
            }
        }
        if !(self.error_k > 0.0) || !self.error_k.is_finite() {
            return Err(Error::invalid(format!(
                "model-trust multiplier must be positive and finite, got {}",
                self.error_k
            )));
        }
        if !(self.error_u >= 0.0) || !self.error_u.is_finite() {
            return Err(Error::invalid(format!(
                "model-trust offset must be non-negative and finite, got {}",
                self.error_u
            )));
        }
        if let Some(s2) = self.error_sigma2 {
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::invalid(format!(
                    "model-trust process variance must be positive and finite, got {s2}"
                )));
            }
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::invalid(format!(
                "noise level must be non-negative and finite, got {}",
                self.noise_sd
            )));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("at least one replicate is required"));
        }
        if let PhiMode::Constant(c) = self.phi_mode {
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::invalid(format!(
                    "per-step benefit constant must be non-negative and finite, got {c}"
                )));
            }
        }
        Ok(())
    }

    /// Materializes every default.
    pub fn resolved(&self) -> Result<ResolvedConfig> {
        self.validate()?;
        Ok(ResolvedConfig {
            objective: self.objective,
            sources: self
                .sources
                .iter()
                .enumerate()
                .map(|(i, s)| ResolvedSource {
                    kind: s.kind,
                    cost: self.aux_query_cost(s),
                    seed: self.aux_seed(i, s),
                })
                .collect(),
            alpha: self.alpha,
            h_bar: self.h_bar,
            n_nodes: self.n_nodes,
            n_initial: self.n_initial,
            n_evals: self.total_evaluations(),
            budget: self.initial_budget(),
            truth_cost: self.truth_query_cost(),
            mode: self.mode,
            phi_mode: self.phi_mode,
            error_k: self.error_k,
            error_u: self.error_u,
            error_sigma2: self.error_sigma2,
            noise_sd: self.noise_sd,
            replicates: self.replicates,
            base_seed: self.base_seed,
            fit_restarts: self.fit_restarts,
            select_on_grid: self.select_on_grid,
        })
    }

    /// Hash of the resolved config; two configs that resolve to the same
    /// run share a fingerprint regardless of which defaults were spelled
    /// out.
    pub fn fingerprint(&self) -> Result<String> {
        let canonical = serde_json::to_string(&self.resolved()?)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            hex.push_str(&format!("{byte:02x}"));
        }
        Ok(hex)
    }

    /// Builds the evaluable source pool described by the config.
    pub fn source_pool(&self) -> Result<SourcePool> {
        let objective = ObjectiveSpec::new(self.objective).with_noise_sd(self.noise_sd)?;
        let aux = self
            .sources
            .iter()
            .enumerate()
            .map(|(i, s)| BiasedSourceSpec::new(s.kind, self.aux_query_cost(s), self.aux_seed(i, s)))
            .collect::<Result<Vec<_>>>()?;
        SourcePool::new(objective, self.truth_query_cost(), aux)
    }

    /// Starting point for every surrogate refit: a Matérn-5/2 truth
    /// kernel and one RBF kernel per bias, with lengthscales at a fifth
    /// of each axis width and unit signal variance (targets are
    /// standardized before fitting).
    pub fn initial_model_spec(&self) -> Result<SourceModelSpec> {
        let bounds = self.objective.bounds();
        let lengthscales: Vec<f64> = (0..bounds.dim()).map(|a| 0.2 * bounds.width(a)).collect();
        let truth = KernelSpec::new(
            crate::kernel::KernelFamily::MaternHalfInteger { p: 2 },
            lengthscales.clone(),
            1.0,
            1e-2,
        )?;
        let biases = self
            .sources
            .iter()
            .map(|_| KernelSpec::new(crate::kernel::KernelFamily::Rbf, lengthscales.clone(), 1.0, 1e-2))
            .collect::<Result<Vec<_>>>()?;
        SourceModelSpec::new(truth, biases)
    }
}

/// One row of a run's per-stage trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// Stage index, starting at 1.
    pub k: usize,
    /// Lookahead length chosen for the stage.
    pub h: usize,
    /// Queried source (0 is the truth source).
    pub source: usize,
    /// Queried point.
    pub x: Vec<f64>,
    /// Observed value.
    pub y: f64,
    /// One-step stage reward of the chosen query.
    pub kg: f64,
    /// Model-trust bound at the stage; infinite under `Greedy`, NaN under
    /// `Fixed` (not computed).
    pub e_bar: f64,
    /// Budget remaining after the query was charged.
    pub budget: f64,
    /// Best truth-source observation so far.
    pub incumbent: f64,
}

/// Everything a single replicate produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    /// Fraction of the possible improvement achieved, clamped to [0, 1].
    pub gap: f64,
    /// One row per sequential stage.
    pub trace: Vec<StageTrace>,
    /// Count of stages per chosen lookahead length.
    pub horizon_histogram: BTreeMap<usize, u64>,
    /// Replicate seed.
    pub seed: u64,
    /// Fingerprint of the resolved config.
    pub fingerprint: String,
    /// Wall-clock runtime in seconds. The only non-reproducible field.
    pub runtime_s: f64,
    /// Best truth observation in the initial design.
    pub f_initial: f64,
    /// Best truth observation at the end of the run.
    pub f_final: f64,
    /// Known optimum of the objective.
    pub f_star: f64,
    /// Point the final surrogate recommends (posterior-mean maximizer).
    pub reported_x: Vec<f64>,
    /// Posterior mean at the recommended point.
    pub reported_mean: f64,
    /// Budget at the start of the run.
    pub initial_budget: f64,
    /// Budget left when the run stopped.
    pub remaining_budget: f64,
}

/// Fraction of the possible improvement over `f_init` that the run
/// achieved: `(f_init − f_final) / (f_init − f_star)`. By convention a
/// run that starts optimal (`f_init == f_star`) scores 1. `f_star` must
/// not lie below `f_init`.
pub fn gap(f_init: f64, f_final: f64, f_star: f64) -> Result<f64> {
    if !f_init.is_finite() || !f_final.is_finite() || !f_star.is_finite() {
        return Err(Error::invalid("gap inputs must be finite"));
    }
    if f_star < f_init {
        return Err(Error::invalid(format!(
            "optimum {f_star} lies below the initial value {f_init}"
        )));
    }
    let denom = f_init - f_star;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((f_init - f_final) / denom)
}

/// Picks the stage's lookahead length according to the configured mode.
/// `Greedy` runs the adaptive decision with the model-trust bound forced
/// infinite, which makes the fallback `h = 1` fire at every stage;
/// `e_bar_override` exposes the same forcing for adaptive-mode runs so
/// the equivalence is testable end to end.
fn decide_horizon(
    config: &ExperimentConfig,
    model: &GpModel,
    cache: &GridCache,
    costs: &[SourceCost],
    budget: f64,
    n_remaining: usize,
    rule: &QuadratureRule,
    e_bar_override: Option<f64>,
) -> Result<HorizonDecision> {
    if let HorizonMode::Fixed(h) = config.mode {
        return Ok(HorizonDecision {
            h: h.min(n_remaining),
            e_bar: f64::NAN,
            feasible_set_nonempty: false,
        });
    }
    let e_bar = if config.mode == HorizonMode::Greedy {
        f64::INFINITY
    } else if let Some(forced) = e_bar_override {
        forced
    } else {
        // The fitted signal variance is taken as-is (the surrogate fits
        // standardized targets, so this is O(1) regardless of the
        // objective's range); `error_k`/`error_sigma2` rescale the bound
        // when a caller wants different units.
        let sigma2 = config
            .error_sigma2
            .unwrap_or_else(|| model.spec().truth().signal_variance);
        let params = ErrorBoundParams::new(config.error_k, config.error_u, sigma2)?;
        horizon::error_bound(&params, model, cache.points())?
    };
    let h_cap = config.h_bar.min(n_remaining);
    if h_cap < 2 {
        return Ok(HorizonDecision {
            h: 1,
            e_bar,
            feasible_set_nonempty: false,
        });
    }
    let profit = horizon::profit(config.phi_mode, model, cache, costs, budget, rule)?;
    Ok(horizon::feasible_horizon(
        |j| profit.phi(j),
        e_bar,
        config.alpha,
        n_remaining - 1,
        h_cap,
    ))
}

/// Runs one replicate.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentResult> {
    run_experiment_forced(config, seed, None)
}

/// `run_experiment` with an optional forced model-trust bound, used to
/// check that `Greedy` and "adaptive with the bound forced infinite"
/// produce identical traces.
pub(crate) fn run_experiment_forced(
    config: &ExperimentConfig,
    seed: u64,
    e_bar_override: Option<f64>,
) -> Result<ExperimentResult> {
    config.validate()?;
    let started = Instant::now();
    let fingerprint = config.fingerprint()?;
    let objective = ObjectiveSpec::new(config.objective).with_noise_sd(config.noise_sd)?;
    let bounds = objective.bounds().clone();
    let dim = objective.dim();
    let f_star = objective.known_max();
    let pool = config.source_pool()?;
    let costs = pool.source_costs();
    let min_cost = costs.iter().map(|c| c.cost).fold(f64::INFINITY, f64::min);
    let n_evals = config.total_evaluations();
    let initial_budget = config.initial_budget();

    // A budget that cannot cover even one query is a configuration
    // mistake, not a finished run: fail before evaluating anything.
    if n_evals > 0 && initial_budget < min_cost {
        return Err(Error::BudgetExhausted {
            remaining: initial_budget,
        });
    }

    let design_points = design::minimax_design(
        config.n_initial,
        &bounds,
        seeding::derive(seed, Purpose::Design, 0),
    )?;
    let mut data = Dataset::new(dim);
    {
        let mut rng = seeding::rng(seed, Purpose::Noise, 0);
        for x in design_points {
            let y = pool.evaluate(0, &x, &mut rng)?;
            data.push(0, x, y)?;
        }
    }
    let mut model = GpModel::fit_mle(
        config.initial_model_spec()?,
        data.clone(),
        config.fit_restarts,
        seeding::derive(seed, Purpose::Fit, 0),
    )?;

    let f_initial = data
        .best_truth_observation()
        .expect("the initial design observes the truth source")
        .y;
    let mut incumbent = f_initial;
    let mut remaining = initial_budget;
    let mut trace: Vec<StageTrace> = Vec::new();
    let mut horizon_histogram: BTreeMap<usize, u64> = BTreeMap::new();
    let rule = gauss_hermite(config.n_nodes)?;

    for k in 1..=n_evals {
        if remaining < min_cost {
            break;
        }
        let stage_seed = seeding::derive(seed, Purpose::Stage, k as u64);
        let grid = acquisition::build_stage_grid(&model, &bounds, stage_seed);
        let cache = GridCache::build(&model, grid)?;
        let n_remaining = n_evals - k + 1;

        let decision = decide_horizon(
            config,
            &model,
            &cache,
            &costs,
            remaining,
            n_remaining,
            &rule,
            e_bar_override,
        )?;
        *horizon_histogram.entry(decision.h).or_insert(0) += 1;

        let rollout_config =
            RolloutConfig::new(config.alpha, config.h_bar, config.n_nodes, n_remaining, remaining)?;
        let (candidate, _) = if config.select_on_grid {
            rollout::select_next_on_grid(&model, &cache, &costs, decision.h, &rollout_config, stage_seed)?
        } else {
            rollout::select_next(
                &model,
                &cache,
                &costs,
                &bounds,
                decision.h,
                &rollout_config,
                stage_seed,
            )?
        };
        let kg = acquisition::kg_stage_reward(&model, &cache, &candidate, &rule)?.value;

        let mut noise_rng = seeding::rng(seed, Purpose::Noise, k as u64);
        let y = pool.evaluate(candidate.source, &candidate.x, &mut noise_rng)?;
        remaining -= candidate.cost;
        data.push(candidate.source, candidate.x.clone(), y)?;
        model = GpModel::fit_mle(
            model.spec().clone(),
            data.clone(),
            config.fit_restarts,
            seeding::derive(seed, Purpose::Fit, k as u64),
        )?;
        if candidate.source == 0 && y > incumbent {
            incumbent = y;
        }
        trace.push(StageTrace {
            k,
            h: decision.h,
            source: candidate.source,
            x: candidate.x,
            y,
            kg,
            e_bar: decision.e_bar,
            budget: remaining,
            incumbent,
        });
    }

    let reported_x = rollout::end_stage_report(&model, &bounds);
    let reported_mean = model.posterior(0, &reported_x).0;
    let f_final = incumbent;
    // Observation noise can push the best initial draw above the true
    // optimum; such a run already starts as good as it can get.
    let gap_value = if f_initial >= f_star {
        1.0
    } else {
        gap(f_initial, f_final, f_star)?.clamp(0.0, 1.0)
    };

    Ok(ExperimentResult {
        gap: gap_value,
        trace,
        horizon_histogram,
        seed,
        fingerprint,
        runtime_s: started.elapsed().as_secs_f64(),
        f_initial,
        f_final,
        f_star,
        reported_x,
        reported_mean,
        initial_budget,
        remaining_budget: remaining,
    })
}

/// Seed of the `i`-th replicate of a run.
pub fn replicate_seed(base_seed: u64, replicate: usize) -> u64 {
    seeding::derive(base_seed, Purpose::Replicate, replicate as u64)
}

/// Runs all replicates of a config in parallel (each replicate's own
/// stage loop stays sequential) and aggregates them. Results are ordered
/// by replicate index regardless of completion order.
pub fn run_replicates(config: &ExperimentConfig) -> Result<(Vec<ExperimentResult>, RunSummary)> {
    config.validate()?;
    let results = (0..config.replicates)
        .into_par_iter()
        .map(|i| run_experiment(config, replicate_seed(config.base_seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let summary = aggregate(&results)?;
    Ok((results, summary))
}

/// Per-replicate line of a run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub seed: u64,
    pub gap: f64,
    pub evaluations: usize,
    pub spent: f64,
    pub remaining: f64,
}

/// Aggregate view of one run (all replicates of one config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub fingerprint: String,
    pub replicates: usize,
    pub mean_gap: f64,
    pub median_gap: f64,
    /// Stage counts per lookahead length, merged over replicates.
    pub horizon_histogram: BTreeMap<usize, u64>,
    pub rows: Vec<ReplicateRow>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Aggregates replicate results into a run summary. All results must come
/// from the same config (equal fingerprints).
pub fn aggregate(results: &[ExperimentResult]) -> Result<RunSummary> {
    if results.is_empty() {
        return Err(Error::invalid("cannot aggregate zero replicates"));
    }
    let fingerprint = results[0].fingerprint.clone();
    if results.iter().any(|r| r.fingerprint != fingerprint) {
        return Err(Error::invalid(
            "cannot aggregate replicates of different configs",
        ));
    }
    let mut gaps: Vec<f64> = results.iter().map(|r| r.gap).collect();
    gaps.sort_by(|a, b| a.total_cmp(b));
    let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let mut horizon_histogram: BTreeMap<usize, u64> = BTreeMap::new();
    for result in results {
        for (&h, &count) in &result.horizon_histogram {
            *horizon_histogram.entry(h).or_insert(0) += count;
        }
    }
    let rows = results
        .iter()
        .enumerate()
        .map(|(i, r)| ReplicateRow {
            replicate: i,
            seed: r.seed,
            gap: r.gap,
            evaluations: r.trace.len(),
            spent: r.initial_budget - r.remaining_budget,
            remaining: r.remaining_budget,
        })
        .collect();
    Ok(RunSummary {
        fingerprint,
        replicates: results.len(),
        mean_gap,
        median_gap: median(&gaps),
        horizon_histogram,
        rows,
    })
}

fn format_value(v: f64) -> String {
    // `Display` for f64 prints the shortest digits that round-trip, and
    // spells non-finite values "inf"/"NaN", which `from_str` parses back.
    format!("{v}")
}

/// Writes one replicate's trace as CSV with columns
/// `k,h,source,x1..xd,y,kg,e_bar,budget,incumbent`.
pub fn write_trace_csv(path: &Path, dim: usize, trace: &[StageTrace]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header: Vec<String> = vec!["k".into(), "h".into(), "source".into()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.extend(["y", "kg", "e_bar", "budget", "incumbent"].map(String::from));
    writer.write_record(&header).map_err(csv_error)?;
    for row in trace {
        if row.x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.x.len(),
            });
        }
        let mut record: Vec<String> =
            vec![row.k.to_string(), row.h.to_string(), row.source.to_string()];
        record.extend(row.x.iter().map(|&v| format_value(v)));
        record.extend(
            [row.y, row.kg, row.e_bar, row.budget, row.incumbent]
                .map(format_value),
        );
        writer.write_record(&record).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn parse_field<T: FromStr>(record: &csv::StringRecord, index: usize, name: &str) -> Result<T> {
    let raw = record
        .get(index)
        .ok_or_else(|| Error::Serialization(format!("trace row is missing column {name}")))?;
    raw.parse()
        .map_err(|_| Error::Serialization(format!("bad {name} value {raw:?} in trace row")))
}

/// Reads a trace written by [`write_trace_csv`]; the dimension is
/// inferred from the header.
pub fn read_trace_csv(path: &Path) -> Result<Vec<StageTrace>> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_error)?;
    let header = reader.headers().map_err(csv_error)?.clone();
    let dim = header.iter().filter(|name| {
        name.starts_with('x') && name[1..].chars().all(|c| c.is_ascii_digit()) && name.len() > 1
    }).count();
    let expected_len = dim + 8;
    if header.len() != expected_len {
        return Err(Error::Serialization(format!(
            "trace header has {} columns, expected {expected_len}",
            header.len()
        )));
    }
    let mut trace = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let mut x = Vec::with_capacity(dim);
        for axis in 0..dim {
            x.push(parse_field(&record, 3 + axis, "x")?);
        }
        trace.push(StageTrace {
            k: parse_field(&record, 0, "k")?,
            h: parse_field(&record, 1, "h")?,
            source: parse_field(&record, 2, "source")?,
            x,
            y: parse_field(&record, 3 + dim, "y")?,
            kg: parse_field(&record, 4 + dim, "kg")?,
            e_bar: parse_field(&record, 5 + dim, "e_bar")?,
            budget: parse_field(&record, 6 + dim, "budget")?,
            incumbent: parse_field(&record, 7 + dim, "incumbent")?,
        });
    }
    Ok(trace)
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Serialization(e.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_error)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON file written by [`persist_run`].
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(json_error)
}

/// Writes a run to `dir`: the resolved config, one CSV trace and one JSON
/// record per replicate, and the aggregate summary.
///
/// ```text
/// dir/config.json
/// dir/replicate_<i>.csv
/// dir/replicate_<i>.json
/// dir/summary.json
/// ```
pub fn persist_run(
    dir: &Path,
    config: &ExperimentConfig,
    results: &[ExperimentResult],
    summary: &RunSummary,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("config.json"), &config.resolved()?)?;
    for (i, result) in results.iter().enumerate() {
        write_trace_csv(&dir.join(format!("replicate_{i}.csv")), config.dim(), &result.trace)?;
        write_json(&dir.join(format!("replicate_{i}.json")), &ReplicateRecord::from(result))?;
    }
    write_json(&dir.join("summary.json"), summary)?;
    Ok(())
}

/// Per-replicate JSON record: everything in [`ExperimentResult`] except
/// the trace, which lives in the CSV next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub gap: f64,
    pub seed: u64,
    pub fingerprint: String,
    pub horizon_histogram: BTreeMap<usize, u64>,
    pub runtime_s: f64,
    pub f_initial: f64,
    pub f_final: f64,
    pub f_star: f64,
    pub reported_x: Vec<f64>,
    pub reported_mean: f64,
    pub initial_budget: f64,
    pub remaining_budget: f64,
    pub evaluations: usize,
}

impl From<&ExperimentResult> for ReplicateRecord {
    fn from(result: &ExperimentResult) -> Self {
        Self {
            gap: result.gap,
            seed: result.seed,
            fingerprint: result.fingerprint.clone(),
            horizon_histogram: result.horizon_histogram.clone(),
            runtime_s: result.runtime_s,
            f_initial: result.f_initial,
            f_final: result.f_final,
            f_star: result.f_star,
            reported_x: result.reported_x.clone(),
            reported_mean: result.reported_mean,
            initial_budget: result.initial_budget,
            remaining_budget: result.remaining_budget,
            evaluations: result.trace.len(),
        }
    }
}

/// One labelled run in a report.
#[derive(Debug, Clone)]
pub struct ReportEntry {
    pub label: String,
    pub summary: RunSummary,
}

/// Renders gap and lookahead-frequency tables for a set of runs as
/// Markdown.
pub fn render_report(entries: &[ReportEntry]) -> String {
    let mut out = String::new();
    out.push_str("# Benchmark report\n\n");
    out.push_str("## Gap by run\n\n");
    out.push_str("| run | replicates | mean gap | median gap |\n");
    out.push_str("|---|---:|---:|---:|\n");
    for entry in entries {
        out.push_str(&format!(
            "| {} | {} | {:.3} | {:.3} |\n",
            entry.label,
            entry.summary.replicates,
            entry.summary.mean_gap,
            entry.summary.median_gap
        ));
    }
    out.push('\n');
    out.push_str("## Lookahead frequency by run\n\n");
    let max_h = entries
        .iter()
        .flat_map(|e| e.summary.horizon_histogram.keys().copied())
        .max()
        .unwrap_or(1);
    out.push_str("| run |");
    for h in 1..=max_h {
        out.push_str(&format!(" h={h} |"));
    }
    out.push('\n');
    out.push_str("|---|");
    for _ in 1..=max_h {
        out.push_str("---:|");
    }
    out.push('\n');
    for entry in entries {
        let total: u64 = entry.summary.horizon_histogram.values().sum();
        out.push_str(&format!("| {} |", entry.label));
        for h in 1..=max_h {
            let count = entry.summary.horizon_histogram.get(&h).copied().unwrap_or(0);
            if total == 0 {
                out.push_str(" – |");
            } else {
                out.push_str(&format!(" {:.2} |", count as f64 / total as f64));
            }
        }
        out.push('\n');
    }
    out
}
