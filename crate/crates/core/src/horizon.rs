//! Stagewise choice of the lookahead length.
//!
//! Looking further ahead only pays when the surrogate model can be
//! trusted that far. This module turns a scattered-data interpolation
//! error bound into a per-stage model-trust number `ē` and picks the
//! smallest lookahead `h` whose accumulated per-step benefit exceeds the
//! discounted error the model could accrue over the remaining stages:
//!
//! ```text
//! h = min { j ∈ [2, h̄] : Σ_{i=2}^{j} α^{i−2} φ(i)  >  ē·(1−α^{N−k})/(1−α) }
//! ```
//!
//! falling back to `h = 1` (pure greedy) when no such `j` exists, i.e.
//! when the model is too unreliable for any lookahead to be worthwhile.

use crate::acquisition::{self, GridCache, SourceCost};
use crate::error::{Error, Result};
use crate::gp::{self, GpModel};
use crate::quadrature::QuadratureRule;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Constants of the interpolation error bound
/// `ē = max_x K·σ²·P(x)·√(log(e/P(x))) + u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBoundParams {
    /// Multiplicative constant `K`.
    pub k_const: f64,
    /// Additive constant `u`.
    pub u_const: f64,
    /// Process variance `σ²`.
    pub sigma2: f64,
}

impl ErrorBoundParams {
    pub fn new(k_const: f64, u_const: f64, sigma2: f64) -> Result<Self> {
        if !(k_const > 0.0) || !k_const.is_finite() {
            return Err(Error::invalid(format!(
                "error bound constant K must be positive and finite, got {k_const}"
            )));
        }
        if !(u_const >= 0.0) || !u_const.is_finite() {
            return Err(Error::invalid(format!(
                "error bound constant u must be non-negative and finite, got {u_const}"
            )));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!(
                "error bound variance must be positive and finite, got {sigma2}"
            )));
        }
        Ok(Self { k_const, u_const, sigma2 })
    }
}

/// Outcome of the per-stage lookahead decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonDecision {
    /// Chosen lookahead length, at least 1.
    pub h: usize,
    /// Model-trust bound the decision was based on.
    pub e_bar: f64,
    /// False when no lookahead in `[2, h̄]` was worthwhile and `h = 1` is
    /// the fallback.
    pub feasible_set_nonempty: bool,
}

/// Interpolation power of the observed design at a truth-source probe
/// `x`: `√(max(0, 1 − ρᵀR⁻¹ρ))`, with `R` the unit-normalized latent
/// correlation matrix of the observed (source, input) pairs and `ρ` the
/// correlation vector from `x` to them. 1 with no data (no conditioning),
/// 0 at an observed input.
pub fn power_function(model: &GpModel, x: &[f64]) -> f64 {
    let rows = model.data().rows();
    let n = rows.len();
    if n == 0 {
        return 1.0;
    }
    let spec = model.spec();
    let sd: Vec<f64> = rows
        .iter()
        .map(|r| spec.latent_cov(r.source, &r.x, r.source, &r.x).sqrt())
        .collect();
    let mut r_mat = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let c = spec.latent_cov(rows[i].source, &rows[i].x, rows[j].source, &rows[j].x)
                / (sd[i] * sd[j]);
            r_mat[(i, j)] = c;
            r_mat[(j, i)] = c;
        }
    }
    let probe_sd = spec.latent_cov(0, x, 0, x).sqrt();
    let rho = DVector::from_iterator(
        n,
        rows.iter()
            .enumerate()
            .map(|(i, r)| spec.latent_cov(0, x, r.source, &r.x) / (probe_sd * sd[i])),
    );
    let q = match gp::cholesky_with_jitter(&r_mat)
        .and_then(|(chol, _)| gp::solve_gram(&chol, &rho))
    {
        Ok(w) => rho.dot(&w),
        // A correlation matrix this degenerate means near-duplicate
        // observations; the design then has full power at any probe that
        // correlates with it, so fall back to the no-reduction answer.
        Err(_) => 0.0,
    };
    (1.0 - q).max(0.0).sqrt()
}

/// One probe's contribution to the error bound. The power term vanishes
/// as `P → 0` and is taken as exactly 0 there.
fn bound_term(params: &ErrorBoundParams, p: f64) -> f64 {
    if p <= 0.0 {
        return params.u_const;
    }
    let p = p.min(1.0);
    params.k_const * params.sigma2 * p * (1.0 - p.ln()).sqrt() + params.u_const
}

/// Model-trust bound `ē`: the worst probe-point value of
/// `K·σ²·P(x)·√(log(e/P(x))) + u`. Probes are typically the stage's
/// acquisition grid.
pub fn error_bound(
    params: &ErrorBoundParams,
    model: &GpModel,
    probe_points: &[Vec<f64>],
) -> Result<f64> {
    if probe_points.is_empty() {
        return Err(Error::invalid("error bound needs at least one probe point"));
    }
    let mut worst = f64::NEG_INFINITY;
    for x in probe_points {
        let term = bound_term(params, power_function(model, x));
        if term > worst {
            worst = term;
        }
    }
    Ok(worst)
}

/// Per-step benefit `φ` used by the lookahead decision.
///
/// Serializes to/from the strings `"constant:<c>"` and `"kg_proxy"` so
/// configs can spell the mode the same way the CLI does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PhiMode {
    /// `φ(j) = c` for a fixed `c ≥ 0`.
    Constant(f64),
    /// `φ(j)` = the best greedy stage reward currently available on the
    /// grid, constant in `j`.
    KgProxy,
}

impl Default for PhiMode {
    fn default() -> Self {
        PhiMode::KgProxy
    }
}

impl fmt::Display for PhiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiMode::Constant(c) => write!(f, "constant:{c}"),
            PhiMode::KgProxy => write!(f, "kg_proxy"),
        }
    }
}

impl FromStr for PhiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "kg_proxy" {
            return Ok(PhiMode::KgProxy);
        }
        if let Some(rest) = s.strip_prefix("constant:") {
            let c: f64 = rest
                .parse()
                .map_err(|_| Error::invalid(format!("bad per-step benefit constant {rest:?}")))?;
            if !(c >= 0.0) || !c.is_finite() {
                return Err(Error::invalid(format!(
                    "per-step benefit constant must be finite and non-negative, got {c}"
                )));
            }
            return Ok(PhiMode::Constant(c));
        }
        Err(Error::invalid(format!(
            "unknown benefit mode {s:?}; expected \"kg_proxy\" or \"constant:<c>\""
        )))
    }
}

impl TryFrom<String> for PhiMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PhiMode> for String {
    fn from(mode: PhiMode) -> String {
        mode.to_string()
    }
}

/// Evaluated per-step benefit; both modes are constant in the step index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profit {
    per_step: f64,
}

impl Profit {
    pub fn new(per_step: f64) -> Result<Self> {
        if !(per_step >= 0.0) {
            return Err(Error::invalid(format!(
                "per-step benefit must be non-negative, got {per_step}"
            )));
        }
        Ok(Self { per_step })
    }

    /// Benefit of the `j`-th lookahead step, `j ≥ 1`.
    pub fn phi(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.per_step
        }
    }

    /// Cumulative benefit of an `h`-step lookahead, `Σ_{j=1}^{h} φ(j)`.
    pub fn g(&self, h: usize) -> f64 {
        self.per_step * h as f64
    }
}

/// Evaluates the per-step benefit for the current stage. `KgProxy` scans
/// the cached grid for the best affordable stage reward; an exhausted
/// budget yields zero benefit.
pub fn profit(
    mode: PhiMode,
    model: &GpModel,
    cache: &GridCache,
    sources: &[SourceCost],
    budget: f64,
    rule: &QuadratureRule,
) -> Result<Profit> {
    match mode {
        PhiMode::Constant(c) => Profit::new(c),
        PhiMode::KgProxy => {
            match acquisition::greedy_select_on_grid(model, cache, sources, budget, rule) {
                Ok((_, reward)) => Profit::new(reward.value),
                Err(Error::BudgetExhausted { .. }) => Profit::new(0.0),
                Err(e) => Err(e),
            }
        }
    }
}

/// Smallest worthwhile lookahead in `[2, h_bar]`, or `h = 1` when none
/// qualifies. The benefit side is non-decreasing in `j` for `φ ≥ 0`, so
/// scanning for the minimal feasible `j` is exact.
///
/// # Panics
/// If `h_bar < 2`, `alpha` is outside `[0, 1]`, `n_minus_k == 0`, or
/// `e_bar` is negative or NaN. Callers decide `h = 1` directly when fewer
/// than two stages remain.
pub fn feasible_horizon<F>(
    phi: F,
    e_bar: f64,
    alpha: f64,
    n_minus_k: usize,
    h_bar: usize,
) -> HorizonDecision
where
    F: Fn(usize) -> f64,
{
    assert!(h_bar >= 2, "horizon cap must be at least 2, got {h_bar}");
    assert!(
        (0.0..=1.0).contains(&alpha),
        "discount must lie in [0, 1], got {alpha}"
    );
    assert!(n_minus_k >= 1, "at least one stage must remain");
    assert!(
        e_bar >= 0.0 && !e_bar.is_nan(),
        "model-trust bound must be non-negative, got {e_bar}"
    );
    let rhs = if alpha == 1.0 {
        e_bar * n_minus_k as f64
    } else {
        e_bar * (1.0 - alpha.powi(n_minus_k as i32)) / (1.0 - alpha)
    };
    let mut lhs = 0.0;
    for j in 2..=h_bar {
        lhs += alpha.powi(j as i32 - 2) * phi(j);
        if lhs > rhs {
            return HorizonDecision { h: j, e_bar, feasible_set_nonempty: true };
        }
    }
    HorizonDecision { h: 1, e_bar, feasible_set_nonempty: false }
}
