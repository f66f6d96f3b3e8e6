//! Cost-normalized knowledge-gradient stage rewards and greedy selection.
//!
//! The stage reward of querying a candidate `(source, x)` is the expected
//! increase in the maximum posterior truth mean, per unit of query cost:
//!
//! ```text
//! r = E[ max_m (a_m + b_m Z) − max_m a_m ] / cost,   Z ~ N(0, 1)
//! ```
//!
//! where `a_m` are current posterior truth means over a finite evaluation
//! grid and `b_m` the per-grid-point sensitivities to the candidate's
//! outcome ([`GpModel::sigma_tilde`]). The greedy policy maximizes this
//! reward; it is also the base heuristic simulated inside the lookahead
//! rollout, so the grid bookkeeping here is built to extend cheaply when a
//! fantasy observation is appended to the model.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::optim::{self, BoxBounds};
use crate::quadrature::{expect_max_affine, QuadratureRule};
use crate::seeding::{self, Purpose};

/// Low-discrepancy points per input dimension in a stage grid.
pub const GRID_POINTS_PER_DIM: usize = 100;

/// Restart count and total evaluation budget of the continuous selection
/// search, shared by the greedy policy and the no-lookahead rollout path so
/// the two coincide exactly.
pub(crate) const SELECT_STARTS: usize = 12;
pub(crate) const SELECT_EVALS: usize = 360;

/// A query under consideration: which source, where, and what it costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub source: usize,
    pub x: Vec<f64>,
    pub cost: f64,
}

/// One selectable source with its per-query cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceCost {
    pub source: usize,
    pub cost: f64,
}

/// Expected knowledge gradient per unit cost. `degenerate` marks a
/// candidate that cannot move the posterior truth mean anywhere on the
/// grid (zero sensitivity), for which the value is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReward {
    pub value: f64,
    pub degenerate: bool,
}

/// Per-stage evaluation grid with cached posterior quantities: latent
/// cross-covariances `k`, whitened solves `w`, and de-standardized
/// posterior truth means `a` for every grid point.
#[derive(Debug, Clone)]
pub struct GridCache {
    points: Arc<Vec<Vec<f64>>>,
    k: Vec<DVector<f64>>,
    w: Vec<DVector<f64>>,
    a: Vec<f64>,
    best_mean: f64,
    best_idx: usize,
}

impl GridCache {
    pub fn build(model: &GpModel, points: Vec<Vec<f64>>) -> Result<Self> {
        Self::build_shared(model, Arc::new(points))
    }

    fn build_shared(model: &GpModel, points: Arc<Vec<Vec<f64>>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("evaluation grid must be non-empty"));
        }
        let mut k = Vec::with_capacity(points.len());
        let mut w = Vec::with_capacity(points.len());
        let mut a = Vec::with_capacity(points.len());
        for x in points.iter() {
            if x.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.dim(),
                    got: x.len(),
                });
            }
            let kv = model.kvec(0, x);
            let wv = model.whiten(&kv);
            a.push(model.y_mean() + model.y_scale() * kv.dot(model.alpha()));
            k.push(kv);
            w.push(wv);
        }
        let (best_idx, best_mean) = argmax(&a);
        Ok(Self { points, k, w, a, best_mean, best_idx })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    /// De-standardized posterior truth means over the grid.
    pub fn posterior_means(&self) -> &[f64] {
        &self.a
    }

    pub fn best_mean(&self) -> f64 {
        self.best_mean
    }

    pub(crate) fn best_idx(&self) -> usize {
        self.best_idx
    }

    /// Cache for `aug` = `base` plus one observation, reusing this cache's
    /// work. When `aug`'s Cholesky factor is a bordered extension of
    /// `base`'s (the common case), each grid vector extends in O(n);
    /// otherwise the cache is rebuilt from scratch.
    pub(crate) fn extended(
        &self,
        base: &GpModel,
        aug: &GpModel,
        cand_source: usize,
        cand_x: &[f64],
    ) -> Result<Self> {
        let n = base.n();
        let bordered =
            aug.n() == n + 1 && aug.jitter().to_bits() == base.jitter().to_bits();
        if !bordered {
            return Self::build_shared(aug, Arc::clone(&self.points));
        }

        let chol = aug.chol();
        let l_diag = chol[(n, n)];
        let spec = aug.spec();
        let mut k = Vec::with_capacity(self.len());
        let mut w = Vec::with_capacity(self.len());
        let mut a = Vec::with_capacity(self.len());
        for (m, x) in self.points.iter().enumerate() {
            let k_new = spec.latent_cov(0, x, cand_source, cand_x);
            let mut kv = DVector::zeros(n + 1);
            kv.rows_mut(0, n).copy_from(&self.k[m]);
            kv[n] = k_new;

            let mut cross = 0.0;
            for j in 0..n {
                cross += chol[(n, j)] * self.w[m][j];
            }
            let mut wv = DVector::zeros(n + 1);
            wv.rows_mut(0, n).copy_from(&self.w[m]);
            wv[n] = (k_new - cross) / l_diag;

            a.push(aug.y_mean() + aug.y_scale() * kv.dot(aug.alpha()));
            k.push(kv);
            w.push(wv);
        }
        let (best_idx, best_mean) = argmax(&a);
        Ok(Self {
            points: Arc::clone(&self.points),
            k,
            w,
            a,
            best_mean,
            best_idx,
        })
    }
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut idx = 0;
    let mut best = values[0];
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best {
            best = v;
            idx = i;
        }
    }
    (idx, best)
}

/// Expected knowledge gradient of one candidate query, normalized by its
/// cost and clamped at zero from below.
pub fn kg_stage_reward(
    model: &GpModel,
    cache: &GridCache,
    cand: &Candidate,
    rule: &QuadratureRule,
) -> Result<StageReward> {
    if !(cand.cost > 0.0) || !cand.cost.is_finite() {
        return Err(Error::invalid(format!("candidate cost must be positive, got {}", cand.cost)));
    }
    if cand.source >= model.spec().n_sources() {
        return Err(Error::invalid(format!(
            "candidate source {} out of range for {} sources",
            cand.source,
            model.spec().n_sources()
        )));
    }
    if cand.x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: cand.x.len(),
        });
    }

    let spec = model.spec();
    let k_c = model.kvec(cand.source, &cand.x);
    let w_c = model.whiten(&k_c);
    let prior_cc = spec.latent_cov(cand.source, &cand.x, cand.source, &cand.x);
    let noise_c = spec.noise_variance(cand.source);
    let post_cc = (prior_cc - w_c.norm_squared()).max(0.0);
    let pred_var = post_cc + noise_c;
    // Leftover variance at a noiseless observed point is on the order of
    // the stabilizing jitter (1e-10 of the prior), so anything below 1e-9
    // of the prior scale carries no real information.
    let floor = 1e-9 * (prior_cc + noise_c) + f64::MIN_POSITIVE;
    if pred_var <= floor {
        return Ok(StageReward { value: 0.0, degenerate: true });
    }
    let pred_sd = pred_var.sqrt();

    let scale = model.y_scale();
    let b: Vec<f64> = (0..cache.len())
        .map(|m| {
            let cross = spec.latent_cov(0, &cache.points[m], cand.source, &cand.x)
                - cache.w[m].dot(&w_c);
            scale * cross / pred_sd
        })
        .collect();

    if b.iter().all(|&v| v == 0.0) {
        return Ok(StageReward { value: 0.0, degenerate: true });
    }
    let gain = expect_max_affine(&cache.a, &b, rule)? - cache.best_mean;
    Ok(StageReward {
        value: (gain / cand.cost).max(0.0),
        degenerate: false,
    })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Deterministic selection order: higher value, then cheaper source, then
/// lower source index, then lexicographically smaller point. The strict
/// ordering makes every policy in this crate sequentially consistent:
/// replaying a stage from the same state reproduces the same choice.
pub(crate) fn prefer(new_value: f64, new: &Candidate, old_value: f64, old: &Candidate) -> bool {
    if new_value != old_value {
        return new_value > old_value;
    }
    if new.cost != old.cost {
        return new.cost < old.cost;
    }
    if new.source != old.source {
        return new.source < old.source;
    }
    lex_less(&new.x, &old.x)
}

pub(crate) fn affordable(sources: &[SourceCost], budget: f64) -> Result<Vec<SourceCost>> {
    for sc in sources {
        if !(sc.cost > 0.0) || !sc.cost.is_finite() {
            return Err(Error::invalid(format!(
                "source {} has non-positive cost {}",
                sc.source, sc.cost
            )));
        }
    }
    let list: Vec<SourceCost> = sources.iter().copied().filter(|sc| sc.cost <= budget).collect();
    if list.is_empty() {
        return Err(Error::BudgetExhausted { remaining: budget });
    }
    Ok(list)
}

/// Maximizes `score(source, x)` over the affordable sources and the box,
/// with a multistart search per source plus an optional warm start, merged
/// by [`prefer`]. This single code path backs both the greedy policy and
/// the lookahead selection so their no-lookahead cases coincide exactly.
pub(crate) fn select_over_sources<F, W>(
    mut score: F,
    sources: &[SourceCost],
    budget: f64,
    bounds: &BoxBounds,
    starts: usize,
    evals: usize,
    seed: u64,
    mut warm_start: W,
) -> Result<(Candidate, f64)>
where
    F: FnMut(usize, &[f64]) -> f64,
    W: FnMut(usize) -> Option<Vec<f64>>,
{
    let list = affordable(sources, budget)?;
    let mut best: Option<(Candidate, f64)> = None;
    for sc in &list {
        let s = sc.source;
        let mut runs: Vec<(Vec<f64>, f64)> = Vec::with_capacity(2);
        match optim::maximize(
            |x| score(s, x),
            bounds,
            starts,
            evals,
            seeding::derive(seed, Purpose::Select, s as u64),
        ) {
            Ok(r) => runs.push(r),
            Err(Error::AllStartsNonFinite) => {}
            Err(e) => return Err(e),
        }
        if let Some(x0) = warm_start(s) {
            match optim::maximize_from(|x| score(s, x), bounds, &x0, evals / starts.max(1)) {
                Ok(r) => runs.push(r),
                Err(Error::AllStartsNonFinite) => {}
                Err(e) => return Err(e),
            }
        }
        for (x, v) in runs {
            let cand = Candidate { source: s, x, cost: sc.cost };
            let replace = match &best {
                None => true,
                Some((bc, bv)) => prefer(v, &cand, *bv, bc),
            };
            if replace {
                best = Some((cand, v));
            }
        }
    }
    best.ok_or(Error::AllStartsNonFinite)
}

/// Greedy base policy: the affordable candidate maximizing the stage
/// reward, searched continuously over the box per source.
pub fn greedy_kg_select(
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    budget: f64,
    bounds: &BoxBounds,
    rule: &QuadratureRule,
    seed: u64,
) -> Result<(Candidate, StageReward)> {
    let (cand, _) = select_over_sources(
        |s, x| {
            let probe = Candidate { source: s, x: x.to_vec(), cost: 1.0 };
            match kg_stage_reward(model, cache, &probe, rule) {
                Ok(r) => r.value / cost_of(sources, s),
                Err(_) => f64::NEG_INFINITY,
            }
        },
        sources,
        budget,
        bounds,
        SELECT_STARTS,
        SELECT_EVALS,
        seed,
        |_| None,
    )?;
    let reward = kg_stage_reward(model, cache, &cand, rule)?;
    Ok((cand, reward))
}

fn cost_of(sources: &[SourceCost], source: usize) -> f64 {
    sources
        .iter()
        .find(|sc| sc.source == source)
        .map(|sc| sc.cost)
        .unwrap_or(1.0)
}

/// Greedy selection restricted to the cached grid points: exhaustive scan
/// over every affordable (source, grid point) pair. This is the inner
/// policy simulated by the lookahead and the reference for discretized
/// tests.
pub fn greedy_select_on_grid(
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    budget: f64,
    rule: &QuadratureRule,
) -> Result<(Candidate, StageReward)> {
    greedy_select_on_indices(model, cache, sources, budget, rule, None)
}

/// Like [`greedy_select_on_grid`] but restricted to the given grid
/// indices (`None` scans everything). Used inside lookahead simulations,
/// where the caller passes a subsample when a full scan at every fantasy
/// node is too expensive.
pub(crate) fn greedy_select_on_indices(
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    budget: f64,
    rule: &QuadratureRule,
    indices: Option<&[usize]>,
) -> Result<(Candidate, StageReward)> {
    let list = affordable(sources, budget)?;
    let all: Vec<usize>;
    let indices = match indices {
        Some(idx) => idx,
        None => {
            all = (0..cache.len()).collect();
            &all
        }
    };
    let mut best: Option<(Candidate, StageReward)> = None;
    for sc in &list {
        for &m in indices {
            let cand = Candidate {
                source: sc.source,
                x: cache.points[m].clone(),
                cost: sc.cost,
            };
            let reward = kg_stage_reward(model, cache, &cand, rule)?;
            let replace = match &best {
                None => true,
                Some((bc, br)) => prefer(reward.value, &cand, br.value, bc),
            };
            if replace {
                best = Some((cand, reward));
            }
        }
    }
    best.ok_or(Error::BudgetExhausted { remaining: budget })
}

/// Argmax of the posterior truth mean over the box: a multistart search
/// plus a warm start from the best-scoring observed input, if any.
pub(crate) fn posterior_mean_argmax(
    model: &GpModel,
    bounds: &BoxBounds,
    seed: u64,
) -> (Vec<f64>, f64) {
    let score = |x: &[f64]| model.posterior(0, x).0;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let consider = |run: Result<(Vec<f64>, f64)>, best: &mut Option<(Vec<f64>, f64)>| {
        if let Ok((x, v)) = run {
            let replace = match best {
                None => true,
                Some((bx, bv)) => v > *bv || (v == *bv && lex_less(&x, bx)),
            };
            if replace {
                *best = Some((x, v));
            }
        }
    };
    consider(optim::maximize(score, bounds, 8, 320, seed), &mut best);
    let mut warm: Option<(Vec<f64>, f64)> = None;
    for row in model.data().rows() {
        let v = score(&row.x);
        let replace = match &warm {
            None => true,
            Some((wx, wv)) => v > *wv || (v == *wv && lex_less(&row.x, wx)),
        };
        if replace {
            warm = Some((row.x.clone(), v));
        }
    }
    if let Some((x0, _)) = warm {
        consider(optim::maximize_from(score, bounds, &x0, 40), &mut best);
    }
    // The posterior mean is finite everywhere, so the search cannot fail.
    best.expect("posterior mean search always produces a point")
}

/// Builds the stage evaluation grid: `100·d` shifted-Halton points, every
/// observed input, and the current posterior-mean argmax, deduplicated.
pub fn build_stage_grid(model: &GpModel, bounds: &BoxBounds, seed: u64) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut points = optim::shifted_halton(
        GRID_POINTS_PER_DIM * d,
        bounds,
        seeding::derive(seed, Purpose::Grid, 0),
    );
    for row in model.data().rows() {
        points.push(row.x.clone());
    }
    let (argmax_x, _) =
        posterior_mean_argmax(model, bounds, seeding::derive(seed, Purpose::Grid, 1));
    points.push(argmax_x);

    let mut seen = std::collections::HashSet::new();
    points.retain(|x| {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        seen.insert(key)
    });
    points
}
