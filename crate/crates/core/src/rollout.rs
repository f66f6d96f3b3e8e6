//! Lookahead acquisition values by policy rollout.
//!
//! The value of a candidate query is its immediate stage reward plus the
//! discounted reward the greedy base policy is expected to collect over
//! the next `h − 1` stages:
//!
//! ```text
//! Q(c) = r(c) + α·E[ H₁ ],    H_d = r(c_d) + α·E[ H_{d+1} ],
//! ```
//!
//! where `c_d` is the greedy knowledge-gradient choice in the simulated
//! posterior and the expectation over each query's outcome is taken at
//! Gauss–Hermite nodes, so the whole tree is deterministic. Branching is
//! all `n` nodes for the first step and a truncated high-weight subset
//! deeper in; hyperparameters stay frozen at the entry model and fantasy
//! observations enter through rank-one posterior updates. A selection with
//! lookahead `h = 1`, or discount `α = 0`, reduces exactly — bit for bit —
//! to the greedy policy.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use crate::acquisition::{self, Candidate, GridCache, SourceCost, StageReward};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::optim::BoxBounds;
use crate::quadrature::{gauss_hermite, QuadratureRule, MAX_NODES};
use crate::seeding::{self, Purpose};

/// Restarts and evaluation budget of the continuous lookahead search per
/// source. Kept small because every objective evaluation simulates a
/// fantasy tree; a grid-scan warm start supplies a good incumbent.
const LOOKAHEAD_STARTS: usize = 2;
const LOOKAHEAD_EVALS: usize = 24;

/// Seed for the deterministic end-of-run report search.
const REPORT_SEED: u64 = 0x5bd1_e995;

/// Parameters of the lookahead simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    /// Discount factor in `[0, 1]`; zero disables lookahead entirely.
    pub alpha: f64,
    /// Upper bound on the lookahead `h` passed to evaluations.
    pub h_bar: usize,
    /// Gauss–Hermite nodes for outcome expectations.
    pub n_nodes: usize,
    /// Evaluations remaining in the run, counting the one being chosen.
    pub n_remaining: usize,
    /// Budget remaining, in cost units.
    pub budget: f64,
    /// Outcome branches kept at the second simulated step.
    pub deep_node_cap: usize,
    /// Outcome branches kept at the third and later steps; `1` collapses
    /// the branch to a single certainty-equivalent (zero-noise) outcome.
    pub far_node_cap: usize,
    /// Grid points scanned per simulated greedy selection; larger grids
    /// are subsampled to this many (plus the current best-mean point).
    pub sim_scan_cap: usize,
}

impl RolloutConfig {
    pub fn new(
        alpha: f64,
        h_bar: usize,
        n_nodes: usize,
        n_remaining: usize,
        budget: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!("discount must lie in [0, 1], got {alpha}")));
        }
        if h_bar == 0 {
            return Err(Error::invalid("horizon cap must be at least 1"));
        }
        if n_nodes == 0 || n_nodes > MAX_NODES {
            return Err(Error::invalid(format!(
                "node count must lie in 1..={MAX_NODES}, got {n_nodes}"
            )));
        }
        if n_remaining == 0 {
            return Err(Error::invalid("at least one evaluation must remain"));
        }
        if !(budget > 0.0) || !budget.is_finite() {
            return Err(Error::invalid(format!("budget must be positive, got {budget}")));
        }
        Ok(Self {
            alpha,
            h_bar,
            n_nodes,
            n_remaining,
            budget,
            deep_node_cap: 3,
            far_node_cap: 1,
            sim_scan_cap: 64,
        })
    }

    /// Removes every branching and scanning shortcut: all `n_nodes`
    /// outcome branches at every depth and full grid scans in simulated
    /// selections. Exponential in `h`; intended for small test instances.
    pub fn exact_tree(mut self) -> Self {
        self.deep_node_cap = self.n_nodes;
        self.far_node_cap = self.n_nodes;
        self.sim_scan_cap = usize::MAX;
        self
    }
}

/// Result of one lookahead evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutValue {
    /// Estimated discounted reward of taking the candidate now.
    pub q_value: f64,
    /// Stages actually simulated: `min(h, n_remaining)`.
    pub horizon_used: usize,
    /// Leaves of the simulated outcome tree (0 when no lookahead ran).
    pub sim_paths: u64,
}

/// Outcome branches for one simulated query: `(z, weight)` pairs.
fn outcome_nodes(rule: &QuadratureRule, cap: usize) -> Vec<(f64, f64)> {
    if cap <= 1 {
        return vec![(0.0, 1.0)];
    }
    if cap >= rule.n() {
        return rule.nodes().iter().copied().zip(rule.weights().iter().copied()).collect();
    }
    let idx = rule.top_weight_indices(cap);
    let total: f64 = idx.iter().map(|&i| rule.weights()[i]).sum();
    idx.iter().map(|&i| (rule.nodes()[i], rule.weights()[i] / total)).collect()
}

/// When the grid is larger than `cap`, a seeded sorted subsample of `cap`
/// indices; otherwise `None` (scan everything).
fn subsample_indices(len: usize, cap: usize, seed: u64) -> Option<Vec<usize>> {
    if len <= cap {
        return None;
    }
    let mut rng = seeding::rng(seed, Purpose::Sim, 0);
    let mut pool: Vec<usize> = (0..len).collect();
    for i in 0..cap {
        let j = rng.gen_range(i..len);
        pool.swap(i, j);
    }
    pool.truncate(cap);
    pool.sort_unstable();
    Some(pool)
}

struct SimCtx<'a> {
    sources: &'a [SourceCost],
    rule: &'a QuadratureRule,
    config: &'a RolloutConfig,
    scan: Option<&'a [usize]>,
}

impl SimCtx<'_> {
    /// One simulated greedy selection, always including the current
    /// best-mean grid point in a restricted scan.
    fn select(
        &self,
        model: &GpModel,
        cache: &GridCache,
        budget: f64,
    ) -> Result<(Candidate, StageReward)> {
        match self.scan {
            None => acquisition::greedy_select_on_indices(
                model, cache, self.sources, budget, self.rule, None,
            ),
            Some(base) => {
                let anchor = cache.best_idx();
                if base.binary_search(&anchor).is_ok() {
                    acquisition::greedy_select_on_indices(
                        model, cache, self.sources, budget, self.rule, Some(base),
                    )
                } else {
                    let pos = base.partition_point(|&i| i < anchor);
                    let mut idx = Vec::with_capacity(base.len() + 1);
                    idx.extend_from_slice(&base[..pos]);
                    idx.push(anchor);
                    idx.extend_from_slice(&base[pos..]);
                    acquisition::greedy_select_on_indices(
                        model, cache, self.sources, budget, self.rule, Some(&idx),
                    )
                }
            }
        }
    }
}

/// Expected discounted reward collected by the greedy policy from stage
/// `depth` through stage `steps − 1`, starting from the given fantasy
/// posterior. Budget exhaustion stops the path with zero further reward.
fn simulate(
    ctx: &SimCtx<'_>,
    model: &GpModel,
    cache: &GridCache,
    budget: f64,
    depth: usize,
    steps: usize,
) -> Result<(f64, u64)> {
    let (cand, reward) = match ctx.select(model, cache, budget) {
        Err(Error::BudgetExhausted { .. }) => return Ok((0.0, 1)),
        other => other?,
    };
    let mut value = reward.value;
    if depth >= steps - 1 {
        return Ok((value, 1));
    }

    let cap = if depth + 1 == 2 { ctx.config.deep_node_cap } else { ctx.config.far_node_cap };
    let (pred_mean, pred_var) = model.predictive(cand.source, &cand.x);
    let pred_sd = pred_var.max(0.0).sqrt();
    let nodes = if pred_sd == 0.0 { vec![(0.0, 1.0)] } else { outcome_nodes(ctx.rule, cap) };
    let child_budget = budget - cand.cost;

    let mut acc = 0.0;
    let mut paths = 0u64;
    for &(z, w) in &nodes {
        let y = pred_mean + pred_sd * z;
        let aug = model.augmented(cand.source, cand.x.clone(), y)?;
        let child_cache = cache.extended(model, &aug, cand.source, &cand.x)?;
        let (tail, p) = simulate(ctx, &aug, &child_cache, child_budget, depth + 1, steps)?;
        acc += w * tail;
        paths += p;
    }
    value += ctx.config.alpha * acc;
    Ok((value, paths))
}

/// Lookahead value of one candidate: immediate stage reward plus the
/// discounted simulated reward of the greedy policy over the remaining
/// `min(h, n_remaining) − 1` stages. Deterministic given `rng_seed`,
/// which only steers the grid subsample used inside simulated selections.
pub fn rollout_value(
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    cand: &Candidate,
    h: usize,
    config: &RolloutConfig,
    rng_seed: u64,
) -> Result<RolloutValue> {
    if h == 0 {
        return Err(Error::invalid("lookahead must be at least 1"));
    }
    if h > config.h_bar {
        return Err(Error::invalid(format!(
            "lookahead {h} exceeds the configured cap {}",
            config.h_bar
        )));
    }
    if cand.cost > config.budget {
        return Err(Error::BudgetExhausted { remaining: config.budget });
    }
    let rule = gauss_hermite(config.n_nodes)?;
    let reward = acquisition::kg_stage_reward(model, cache, cand, &rule)?;
    let steps = h.min(config.n_remaining);
    if steps <= 1 || config.alpha == 0.0 {
        return Ok(RolloutValue { q_value: reward.value, horizon_used: steps, sim_paths: 0 });
    }

    let scan = subsample_indices(cache.len(), config.sim_scan_cap, rng_seed);
    let ctx = SimCtx { sources, rule: &rule, config, scan: scan.as_deref() };
    let (pred_mean, pred_var) = model.predictive(cand.source, &cand.x);
    let pred_sd = pred_var.max(0.0).sqrt();
    let nodes = if pred_sd == 0.0 { vec![(0.0, 1.0)] } else { outcome_nodes(&rule, rule.n()) };
    let child_budget = config.budget - cand.cost;

    // Branches are independent; evaluate them in parallel, then reduce in
    // fixed node order so the sum is reproducible.
    let branches: Result<Vec<(f64, u64)>> = nodes
        .par_iter()
        .map(|&(z, w)| {
            let y = pred_mean + pred_sd * z;
            let aug = model.augmented(cand.source, cand.x.clone(), y)?;
            let child_cache = cache.extended(model, &aug, cand.source, &cand.x)?;
            let (tail, p) = simulate(&ctx, &aug, &child_cache, child_budget, 1, steps)?;
            Ok((w * tail, p))
        })
        .collect();
    let mut acc = 0.0;
    let mut paths = 0u64;
    for (wt, p) in branches? {
        acc += wt;
        paths += p;
    }
    Ok(RolloutValue {
        q_value: reward.value + config.alpha * acc,
        horizon_used: steps,
        sim_paths: paths,
    })
}

fn cost_of(sources: &[SourceCost], source: usize) -> f64 {
    sources
        .iter()
        .find(|sc| sc.source == source)
        .map(|sc| sc.cost)
        .unwrap_or(f64::INFINITY)
}

/// Picks the affordable candidate with the greatest lookahead value,
/// searching continuously over the box per source. With `h = 1` or
/// `α = 0` this is exactly the greedy policy, same seeds and all; with
/// lookahead it warm-starts from the best grid point per source and
/// refines with a small multistart search.
pub fn select_next(
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    bounds: &BoxBounds,
    h: usize,
    config: &RolloutConfig,
    rng_seed: u64,
) -> Result<(Candidate, RolloutValue)> {
    if h == 0 {
        return Err(Error::invalid("lookahead must be at least 1"));
    }
    if h > config.h_bar {
        return Err(Error::invalid(format!(
            "lookahead {h} exceeds the configured cap {}",
            config.h_bar
        )));
    }
    let rule = gauss_hermite(config.n_nodes)?;
    let steps = h.min(config.n_remaining);
    if steps <= 1 || config.alpha == 0.0 {
        let (cand, reward) = acquisition::greedy_kg_select(
            model,
            cache,
            sources,
            config.budget,
            bounds,
            &rule,
            rng_seed,
        )?;
        return Ok((
            cand,
            RolloutValue { q_value: reward.value, horizon_used: 1, sim_paths: 0 },
        ));
    }

    let mut warm: HashMap<usize, Vec<f64>> = HashMap::new();
    for sc in acquisition::affordable(sources, config.budget)? {
        if let Ok((c, _)) = acquisition::greedy_select_on_indices(
            model,
            cache,
            &[sc],
            config.budget,
            &rule,
            None,
        ) {
            warm.insert(sc.source, c.x);
        }
    }

    let (cand, _) = acquisition::select_over_sources(
        |s, x| {
            let probe = Candidate { source: s, x: x.to_vec(), cost: cost_of(sources, s) };
            match rollout_value(model, cache, sources, &probe, h, config, rng_seed) {
                Ok(rv) => rv.q_value,
                Err(_) => f64::NEG_INFINITY,
            }
        },
        sources,
        config.budget,
        bounds,
        LOOKAHEAD_STARTS,
        LOOKAHEAD_EVALS,
        rng_seed,
        |s| warm.get(&s).cloned(),
    )?;
    let value = rollout_value(model, cache, sources, &cand, h, config, rng_seed)?;
    Ok((cand, value))
}

/// [`select_next`] restricted to the cached grid points: an exhaustive
/// scan over every affordable (source, point) pair. The reference policy
/// for discretized instances and trace replay.
pub fn select_next_on_grid(
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    h: usize,
    config: &RolloutConfig,
    rng_seed: u64,
) -> Result<(Candidate, RolloutValue)> {
    if h == 0 {
        return Err(Error::invalid("lookahead must be at least 1"));
    }
    if h > config.h_bar {
        return Err(Error::invalid(format!(
            "lookahead {h} exceeds the configured cap {}",
            config.h_bar
        )));
    }
    let rule = gauss_hermite(config.n_nodes)?;
    let steps = h.min(config.n_remaining);
    if steps <= 1 || config.alpha == 0.0 {
        let (cand, reward) =
            acquisition::greedy_select_on_grid(model, cache, sources, config.budget, &rule)?;
        return Ok((
            cand,
            RolloutValue { q_value: reward.value, horizon_used: 1, sim_paths: 0 },
        ));
    }

    let list = acquisition::affordable(sources, config.budget)?;
    let mut best: Option<(Candidate, RolloutValue, f64)> = None;
    for sc in &list {
        for x in cache.points() {
            let cand = Candidate { source: sc.source, x: x.clone(), cost: sc.cost };
            let rv = rollout_value(model, cache, sources, &cand, h, config, rng_seed)?;
            let replace = match &best {
                None => true,
                Some((bc, _, bv)) => acquisition::prefer(rv.q_value, &cand, *bv, bc),
            };
            if replace {
                best = Some((cand, rv, rv.q_value));
            }
        }
    }
    best.map(|(c, rv, _)| (c, rv))
        .ok_or(Error::BudgetExhausted { remaining: config.budget })
}

/// Final recommendation once the budget is spent: the maximizer of the
/// posterior truth mean over the box. Deterministic.
pub fn end_stage_report(model: &GpModel, bounds: &BoxBounds) -> Vec<f64> {
    acquisition::posterior_mean_argmax(model, bounds, REPORT_SEED).0
}
