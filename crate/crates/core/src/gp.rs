//! Multi-source Gaussian-process regression.
//!
//! Observations come from a truth source (index 0) and optional cheaper
//! sources (1, 2, …) modeled as truth plus an independent GP discrepancy:
//!
//! ```text
//! cov((i, x), (i', x')) = k_0(x, x') + [i == i' and i >= 1] · k_i(x, x')
//! ```
//!
//! where every kernel contributes its noiseless part and each source adds
//! its own observation-noise variance on the Gram diagonal only (repeated
//! measurements are independent). Posterior queries return the *latent*
//! surface, i.e. without observation noise; [`GpModel::predictive`] adds
//! it back for simulating new measurements.
//!
//! Targets are standardized internally (by the truth-source mean and
//! spread at fit time) so kernel hyperparameters live on a well-scaled
//! axis; all public outputs are de-standardized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::optim::{self, BoxBounds};

/// One recorded measurement: which source produced it, where, and the value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub source: usize,
    pub x: Vec<f64>,
    pub y: f64,
}

/// Append-only store of `(source, x, y)` measurements of fixed input
/// dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    rows: Vec<Observation>,
}

impl Dataset {
    pub fn new(dim: usize) -> Self {
        Self { dim, rows: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn push(&mut self, source: usize, x: Vec<f64>, y: f64) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(Error::invalid("observations must be finite"));
        }
        self.rows.push(Observation { source, x, y });
        Ok(())
    }

    /// The highest-valued truth-source measurement, if any.
    pub fn best_truth_observation(&self) -> Option<&Observation> {
        self.rows
            .iter()
            .filter(|r| r.source == 0)
            .max_by(|a, b| a.y.partial_cmp(&b.y).unwrap())
    }

    /// Mean and spread of the truth-source targets, with a unit-spread
    /// fallback for degenerate (empty or constant) cases. Used to
    /// standardize targets before hyperparameter fitting.
    fn truth_standardization(&self) -> (f64, f64) {
        let ys: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.source == 0)
            .map(|r| r.y)
            .collect();
        let ys = if ys.is_empty() {
            self.rows.iter().map(|r| r.y).collect()
        } else {
            ys
        };
        if ys.is_empty() {
            return (0.0, 1.0);
        }
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
        let sd = var.sqrt();
        (mean, if sd > 1e-12 { sd } else { 1.0 })
    }
}

/// Kernel structure of a multi-source model: one kernel for the truth
/// surface and one per extra source for that source's discrepancy. Each
/// kernel's noise variance is its source's observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModelSpec {
    truth: KernelSpec,
    biases: Vec<KernelSpec>,
}

impl SourceModelSpec {
    pub fn new(truth: KernelSpec, biases: Vec<KernelSpec>) -> Result<Self> {
        for b in &biases {
            if b.dim() != truth.dim() {
                return Err(Error::DimensionMismatch {
                    expected: truth.dim(),
                    got: b.dim(),
                });
            }
        }
        Ok(Self { truth, biases })
    }

    /// A model with only the truth source.
    pub fn single(truth: KernelSpec) -> Self {
        Self { truth, biases: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.truth.dim()
    }

    pub fn n_sources(&self) -> usize {
        1 + self.biases.len()
    }

    pub fn truth(&self) -> &KernelSpec {
        &self.truth
    }

    pub fn biases(&self) -> &[KernelSpec] {
        &self.biases
    }

    /// Observation-noise variance of a source (standardized scale).
    pub fn noise_variance(&self, source: usize) -> f64 {
        if source == 0 {
            self.truth.noise_variance
        } else {
            self.biases[source - 1].noise_variance
        }
    }

    /// Noise-free covariance between latent values at `(i, x)` and
    /// `(i2, x2)`: the shared truth kernel plus, for repeated queries of
    /// the same extra source, that source's discrepancy kernel.
    pub fn latent_cov(&self, i: usize, x: &[f64], i2: usize, x2: &[f64]) -> f64 {
        let mut c = self.truth.covariance(x, x2);
        if i == i2 && i >= 1 {
            c += self.biases[i - 1].covariance(x, x2);
        }
        c
    }
}

/// A sensitivity coefficient: how much the posterior truth mean at some
/// point moves per standard unit of surprise in a candidate measurement.
/// `degenerate` flags a candidate whose predictive spread vanished, in
/// which case the value is pinned to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaTilde {
    pub value: f64,
    pub degenerate: bool,
}

/// Fitted multi-source GP: kernel spec, data, and the Cholesky factor of
/// the (jittered) Gram matrix, plus the standardization applied to
/// targets.
#[derive(Debug, Clone)]
pub struct GpModel {
    spec: SourceModelSpec,
    data: Dataset,
    y_mean: f64,
    y_scale: f64,
    y_std: DVector<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    /// Builds a model on raw targets (no standardization). Intended for
    /// tests and for models whose spec is already scaled to the data.
    pub fn new(spec: SourceModelSpec, data: Dataset) -> Result<Self> {
        Self::with_standardization(spec, data, 0.0, 1.0)
    }

    /// Builds a model with an explicit target standardization: internally
    /// the GP sees `(y - y_mean) / y_scale`.
    pub fn with_standardization(
        spec: SourceModelSpec,
        data: Dataset,
        y_mean: f64,
        y_scale: f64,
    ) -> Result<Self> {
        if data.dim() != spec.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.dim(),
                got: data.dim(),
            });
        }
        if y_scale <= 0.0 || !y_scale.is_finite() || !y_mean.is_finite() {
            return Err(Error::invalid("target standardization must be finite with positive scale"));
        }
        if let Some(row) = data.rows().iter().find(|r| r.source >= spec.n_sources()) {
            return Err(Error::invalid(format!(
                "observation references source {} but the model has {} sources",
                row.source,
                spec.n_sources()
            )));
        }

        let n = data.len();
        let y_std = DVector::from_iterator(
            n,
            data.rows().iter().map(|r| (r.y - y_mean) / y_scale),
        );
        let gram = DMatrix::from_fn(n, n, |r, c| {
            let a = &data.rows()[r];
            let b = &data.rows()[c];
            let mut v = spec.latent_cov(a.source, &a.x, b.source, &b.x);
            if r == c {
                v += spec.noise_variance(a.source);
            }
            v
        });
        let (chol, jitter) = cholesky_with_jitter(&gram)?;
        let alpha = solve_gram(&chol, &y_std)?;

        Ok(Self {
            spec,
            data,
            y_mean,
            y_scale,
            y_std,
            chol,
            alpha,
            jitter,
        })
    }

    /// Fits kernel hyperparameters by maximizing the log marginal
    /// likelihood on standardized targets, with multistart search in
    /// log-space. The initial spec is always included as one start, so the
    /// fitted likelihood never falls below the initial one. Kernels of
    /// sources with no observations are left at their initial values.
    pub fn fit_mle(
        spec_init: SourceModelSpec,
        data: Dataset,
        restarts: usize,
        seed: u64,
    ) -> Result<Self> {
        let (y_mean, y_scale) = data.truth_standardization();
        if data.is_empty() {
            return Self::with_standardization(spec_init, data, y_mean, y_scale);
        }

        let active: Vec<bool> = (0..spec_init.n_sources())
            .map(|s| data.rows().iter().any(|r| r.source == s))
            .collect();
        let layout = ParamLayout::new(&spec_init, &active);
        if layout.len() == 0 {
            return Self::with_standardization(spec_init, data, y_mean, y_scale);
        }

        let bounds = layout.bounds();
        let objective = |theta: &[f64]| {
            let spec = layout.apply(&spec_init, theta);
            match Self::with_standardization(spec, data.clone(), y_mean, y_scale) {
                Ok(model) => model.log_marginal_likelihood(),
                Err(_) => f64::NEG_INFINITY,
            }
        };

        let n_params = layout.len();
        let per_start = 30 * n_params;
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut theta_init = layout.encode(&spec_init);
        bounds.clamp(&mut theta_init);
        let consider = |cand: Result<(Vec<f64>, f64)>, best: &mut Option<(Vec<f64>, f64)>| {
            if let Ok((x, v)) = cand {
                let replace = match best {
                    None => true,
                    Some((_, bv)) => v > *bv,
                };
                if replace {
                    *best = Some((x, v));
                }
            }
        };
        consider(
            optim::maximize_from(objective, &bounds, &theta_init, per_start),
            &mut best,
        );
        if restarts > 0 {
            consider(
                optim::maximize(objective, &bounds, restarts, restarts * per_start, seed),
                &mut best,
            );
        }

        let (theta, _) = best.ok_or(Error::AllStartsNonFinite)?;
        let spec = layout.apply(&spec_init, &theta);
        Self::with_standardization(spec, data, y_mean, y_scale)
    }

    pub fn spec(&self) -> &SourceModelSpec {
        &self.spec
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    pub(crate) fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub(crate) fn jitter(&self) -> f64 {
        self.jitter
    }

    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    /// Latent cross-covariances between a query `(source, x)` and every
    /// observation, in Gram order (standardized scale).
    pub(crate) fn kvec(&self, source: usize, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.data
                .rows()
                .iter()
                .map(|r| self.spec.latent_cov(source, x, r.source, &r.x)),
        )
    }

    /// Forward-substitution whitening `L⁻¹ k`.
    pub(crate) fn whiten(&self, k: &DVector<f64>) -> DVector<f64> {
        if self.n() == 0 {
            return DVector::zeros(0);
        }
        self.chol
            .solve_lower_triangular(k)
            .expect("Cholesky factor has positive diagonal")
    }

    /// Posterior mean and variance of the latent value at `(source, x)`,
    /// observation noise excluded. Variance is clamped at zero.
    pub fn posterior(&self, source: usize, x: &[f64]) -> (f64, f64) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert!(source < self.spec.n_sources());
        let prior = self.spec.latent_cov(source, x, source, x);
        if self.n() == 0 {
            return (self.y_mean, self.y_scale * self.y_scale * prior);
        }
        let k = self.kvec(source, x);
        let w = self.whiten(&k);
        let mean_std = k.dot(&self.alpha);
        let var_std = (prior - w.norm_squared()).max(0.0);
        (
            self.y_mean + self.y_scale * mean_std,
            self.y_scale * self.y_scale * var_std,
        )
    }

    /// Like [`posterior`](Self::posterior) but for a fresh *measurement*
    /// from the source: observation-noise variance added back.
    pub fn predictive(&self, source: usize, x: &[f64]) -> (f64, f64) {
        let (mean, var) = self.posterior(source, x);
        (
            mean,
            var + self.y_scale * self.y_scale * self.spec.noise_variance(source),
        )
    }

    /// Sensitivity of the posterior truth mean at `target_x` to one new
    /// measurement from `(cand_source, cand_x)`: posterior covariance of
    /// the pair divided by the candidate's predictive standard deviation.
    /// After observing `y = predictive mean + predictive sd · z`, the
    /// truth mean at `target_x` moves by exactly `sigma_tilde · z`.
    pub fn sigma_tilde(
        &self,
        target_x: &[f64],
        cand_source: usize,
        cand_x: &[f64],
    ) -> SigmaTilde {
        debug_assert_eq!(target_x.len(), self.dim());
        debug_assert_eq!(cand_x.len(), self.dim());
        let k_t = self.kvec(0, target_x);
        let w_t = self.whiten(&k_t);
        let k_c = self.kvec(cand_source, cand_x);
        let w_c = self.whiten(&k_c);

        let cross = self.spec.latent_cov(0, target_x, cand_source, cand_x) - w_t.dot(&w_c);
        let prior_cc = self.spec.latent_cov(cand_source, cand_x, cand_source, cand_x);
        let post_cc = (prior_cc - w_c.norm_squared()).max(0.0);
        let pred_var = post_cc + self.spec.noise_variance(cand_source);

        let floor = 1e-13 * (prior_cc + self.spec.noise_variance(cand_source)) + f64::MIN_POSITIVE;
        if pred_var <= floor {
            return SigmaTilde { value: 0.0, degenerate: true };
        }
        SigmaTilde {
            value: self.y_scale * cross / pred_var.sqrt(),
            degenerate: false,
        }
    }

    /// The model extended by one observation, hyperparameters and
    /// standardization frozen. The Cholesky factor grows by a rank-one
    /// border; if cancellation makes the new pivot collapse, the Gram is
    /// refactored from scratch instead.
    pub fn augmented(&self, source: usize, x: Vec<f64>, y: f64) -> Result<Self> {
        if source >= self.spec.n_sources() {
            return Err(Error::invalid(format!(
                "source {} out of range for {} sources",
                source,
                self.spec.n_sources()
            )));
        }
        let mut data = self.data.clone();
        data.push(source, x.clone(), y)?;

        let n = self.n();
        let k = self.kvec(source, &x);
        let kappa =
            self.spec.latent_cov(source, &x, source, &x) + self.spec.noise_variance(source) + self.jitter;
        let l_new = self.whiten(&k);
        let delta = kappa - l_new.norm_squared();

        if delta <= 1e-12 * kappa {
            // Borderline pivot: rebuild with fresh jitter escalation.
            return Self::with_standardization(
                self.spec.clone(),
                data,
                self.y_mean,
                self.y_scale,
            );
        }

        let mut chol = DMatrix::zeros(n + 1, n + 1);
        chol.view_mut((0, 0), (n, n)).copy_from(&self.chol);
        for j in 0..n {
            chol[(n, j)] = l_new[j];
        }
        chol[(n, n)] = delta.sqrt();

        let y_std = DVector::from_iterator(
            n + 1,
            data.rows().iter().map(|r| (r.y - self.y_mean) / self.y_scale),
        );
        let alpha = solve_gram(&chol, &y_std)?;

        Ok(Self {
            spec: self.spec.clone(),
            data,
            y_mean: self.y_mean,
            y_scale: self.y_scale,
            y_std,
            chol,
            alpha,
            jitter: self.jitter,
        })
    }

    /// Log marginal likelihood of the standardized targets under the
    /// current kernels. Zero observations give zero by convention.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.n();
        if n == 0 {
            return 0.0;
        }
        let data_fit = -0.5 * self.y_std.dot(&self.alpha);
        let log_det_half: f64 = (0..n).map(|i| self.chol[(i, i)].ln()).sum();
        data_fit - log_det_half - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Cholesky factorization with escalating diagonal jitter, starting at
/// 1e-10 of the mean Gram diagonal and multiplying by 10 up to 1e-4.
pub(crate) fn cholesky_with_jitter(gram: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let n = gram.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    let scale = gram.diagonal().sum() / n as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut jitter = 1e-10 * scale;
    let max_jitter = 1e-4 * scale;
    loop {
        let mut m = gram.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(chol) = nalgebra::linalg::Cholesky::new(m) {
            return Ok((chol.unpack(), jitter));
        }
        jitter *= 10.0;
        if jitter > max_jitter {
            return Err(Error::Numerical(format!(
                "Gram matrix for {n} observations is not positive definite even with jitter {max_jitter:.1e}"
            )));
        }
    }
}

/// Solves `K a = y` given the lower Cholesky factor of `K`.
pub(crate) fn solve_gram(chol: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if chol.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let tmp = chol
        .solve_lower_triangular(y)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    chol.transpose()
        .solve_upper_triangular(&tmp)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))
}

/// Mapping between a flat log10-hyperparameter vector and a
/// [`SourceModelSpec`], covering only kernels of sources that have data.
struct ParamLayout {
    /// Per covered kernel: (source index, number of lengthscales).
    kernels: Vec<(usize, usize)>,
}

impl ParamLayout {
    const LOG_LENGTHSCALE: (f64, f64) = (-3.0, 3.0);
    const LOG_SIGNAL: (f64, f64) = (-3.0, 3.0);
    const LOG_NOISE: (f64, f64) = (-8.0, 1.0);

    fn new(spec: &SourceModelSpec, active: &[bool]) -> Self {
        let mut kernels = Vec::new();
        for (s, &is_active) in active.iter().enumerate() {
            if is_active {
                kernels.push((s, spec.dim()));
            }
        }
        Self { kernels }
    }

    fn len(&self) -> usize {
        self.kernels.iter().map(|&(_, d)| d + 2).sum()
    }

    fn bounds(&self) -> BoxBounds {
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for &(_, d) in &self.kernels {
            for _ in 0..d {
                lo.push(Self::LOG_LENGTHSCALE.0);
                hi.push(Self::LOG_LENGTHSCALE.1);
            }
            lo.push(Self::LOG_SIGNAL.0);
            hi.push(Self::LOG_SIGNAL.1);
            lo.push(Self::LOG_NOISE.0);
            hi.push(Self::LOG_NOISE.1);
        }
        BoxBounds::new(lo, hi).expect("hyperparameter bounds are fixed and valid")
    }

    fn kernel_of<'a>(spec: &'a SourceModelSpec, source: usize) -> &'a KernelSpec {
        if source == 0 {
            spec.truth()
        } else {
            &spec.biases()[source - 1]
        }
    }

    fn encode(&self, spec: &SourceModelSpec) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.len());
        for &(s, _) in &self.kernels {
            let k = Self::kernel_of(spec, s);
            for &l in &k.lengthscales {
                theta.push(l.log10());
            }
            theta.push(k.signal_variance.log10());
            theta.push(k.noise_variance.max(1e-12).log10());
        }
        theta
    }

    fn apply(&self, spec_init: &SourceModelSpec, theta: &[f64]) -> SourceModelSpec {
        let mut truth = spec_init.truth().clone();
        let mut biases = spec_init.biases().to_vec();
        let mut at = 0;
        for &(s, d) in &self.kernels {
            let init = Self::kernel_of(spec_init, s);
            let lengthscales: Vec<f64> =
                theta[at..at + d].iter().map(|t| 10f64.powf(*t)).collect();
            let signal = 10f64.powf(theta[at + d]);
            let noise = 10f64.powf(theta[at + d + 1]);
            at += d + 2;
            let k = KernelSpec::new(init.family, lengthscales, signal, noise)
                .expect("parameters from bounded log-space are valid");
            if s == 0 {
                truth = k;
            } else {
                biases[s - 1] = k;
            }
        }
        SourceModelSpec { truth, biases }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use approx::assert_abs_diff_eq;

    fn rbf_spec(dim: usize, l: f64, sf2: f64, sn2: f64) -> SourceModelSpec {
        SourceModelSpec::single(KernelSpec::rbf(dim, l, sf2, sn2).unwrap())
    }

    fn toy_data() -> Dataset {
        let mut d = Dataset::new(1);
        d.push(0, vec![0.0], 0.5).unwrap();
        d.push(0, vec![1.0], -0.2).unwrap();
        d.push(0, vec![2.5], 1.1).unwrap();
        d
    }

    #[test]
    fn dataset_validates_rows() {
        let mut d = Dataset::new(2);
        assert!(d.push(0, vec![0.0], 1.0).is_err());
        assert!(d.push(0, vec![0.0, f64::NAN], 1.0).is_err());
        assert!(d.push(0, vec![0.0, 1.0], f64::INFINITY).is_err());
        d.push(1, vec![0.0, 1.0], 3.0).unwrap();
        assert_eq!(d.len(), 1);
        assert!(d.best_truth_observation().is_none());
        d.push(0, vec![1.0, 1.0], 2.0).unwrap();
        assert_eq!(d.best_truth_observation().unwrap().y, 2.0);
    }

    #[test]
    fn empty_model_returns_the_prior() {
        let model = GpModel::new(rbf_spec(1, 1.0, 2.0, 0.1), Dataset::new(1)).unwrap();
        let (m, v) = model.posterior(0, &[0.3]);
        assert_eq!(m, 0.0);
        assert_eq!(v, 2.0);
        let (_, pv) = model.predictive(0, &[0.3]);
        assert_abs_diff_eq!(pv, 2.1, epsilon = 1e-15);
        assert_eq!(model.log_marginal_likelihood(), 0.0);
    }

    #[test]
    fn single_point_posterior_matches_scalar_formula() {
        // One observation: mean at the same x is k/(k+noise)·y, variance is
        // k − k²/(k+noise).
        let mut data = Dataset::new(1);
        data.push(0, vec![0.4], 2.0).unwrap();
        let model = GpModel::new(rbf_spec(1, 1.0, 1.0, 1.0), data).unwrap();
        let (m, v) = model.posterior(0, &[0.4]);
        assert_abs_diff_eq!(m, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn two_point_posterior_matches_dense_inverse() {
        let spec = rbf_spec(1, 0.8, 1.3, 0.05);
        let mut data = Dataset::new(1);
        data.push(0, vec![0.0], 1.0).unwrap();
        data.push(0, vec![1.0], -1.0).unwrap();
        let model = GpModel::new(spec.clone(), data).unwrap();

        // Independent 2×2 computation.
        let k = |a: f64, b: f64| spec.truth().covariance(&[a], &[b]);
        let xq = 0.3;
        let k11 = k(0.0, 0.0) + 0.05;
        let k22 = k(1.0, 1.0) + 0.05;
        let k12 = k(0.0, 1.0);
        let det = k11 * k22 - k12 * k12;
        let (y1, y2) = (1.0, -1.0);
        let (kq1, kq2) = (k(xq, 0.0), k(xq, 1.0));
        let mean = (kq1 * (k22 * y1 - k12 * y2) + kq2 * (-k12 * y1 + k11 * y2)) / det;
        let var = k(xq, xq)
            - (kq1 * (k22 * kq1 - k12 * kq2) + kq2 * (-k12 * kq1 + k11 * kq2)) / det;

        let (m, v) = model.posterior(0, &[xq]);
        assert_abs_diff_eq!(m, mean, epsilon = 1e-10);
        assert_abs_diff_eq!(v, var, epsilon = 1e-10);
    }

    #[test]
    fn noiseless_model_interpolates() {
        let model = GpModel::new(rbf_spec(1, 1.0, 1.0, 0.0), toy_data()).unwrap();
        for row in model.data().rows() {
            let (m, v) = model.posterior(0, &row.x);
            assert_abs_diff_eq!(m, row.y, epsilon = 1e-6);
            assert!(v < 1e-6, "v = {v}");
        }
    }

    #[test]
    fn standardization_shifts_the_prior_mean() {
        let model = GpModel::with_standardization(
            rbf_spec(1, 1.0, 1.0, 0.1),
            Dataset::new(1),
            10.0,
            2.0,
        )
        .unwrap();
        let (m, v) = model.posterior(0, &[0.0]);
        assert_eq!(m, 10.0);
        assert_eq!(v, 4.0);
    }

    #[test]
    fn extra_source_gets_discrepancy_variance_and_its_own_noise() {
        let truth = KernelSpec::rbf(1, 1.0, 2.0, 0.3).unwrap();
        let bias = KernelSpec::rbf(1, 0.5, 0.7, 0.05).unwrap();
        let spec = SourceModelSpec::new(truth, vec![bias]).unwrap();
        assert_eq!(spec.n_sources(), 2);
        let x = [0.2];
        assert_abs_diff_eq!(spec.latent_cov(0, &x, 0, &x), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.latent_cov(1, &x, 1, &x), 2.7, epsilon = 1e-15);
        assert_abs_diff_eq!(spec.latent_cov(0, &x, 1, &x), 2.0, epsilon = 1e-15);
        assert_eq!(spec.noise_variance(0), 0.3);
        assert_eq!(spec.noise_variance(1), 0.05);

        let model = GpModel::new(spec, Dataset::new(1)).unwrap();
        let (_, pv0) = model.predictive(0, &x);
        let (_, pv1) = model.predictive(1, &x);
        assert_abs_diff_eq!(pv0, 2.3, epsilon = 1e-15);
        assert_abs_diff_eq!(pv1, 2.75, epsilon = 1e-15);
    }

    #[test]
    fn cheap_source_observation_informs_the_truth_posterior() {
        let truth = KernelSpec::rbf(1, 1.0, 1.0, 0.0).unwrap();
        let bias = KernelSpec::rbf(1, 1.0, 0.5, 0.1).unwrap();
        let spec = SourceModelSpec::new(truth, vec![bias]).unwrap();
        let mut data = Dataset::new(1);
        data.push(1, vec![0.0], 1.2).unwrap();
        let model = GpModel::new(spec, data).unwrap();
        let (m, v) = model.posterior(0, &[0.0]);
        // mean = k_cross/(k_cc+noise)·y = 1/(1.5+0.1)·1.2
        assert_abs_diff_eq!(m, 1.2 / 1.6, epsilon = 1e-9);
        assert_abs_diff_eq!(v, 1.0 - 1.0 / 1.6, epsilon = 1e-9);
    }

    #[test]
    fn sigma_tilde_matches_posterior_mean_update() {
        // After observing y = pred_mean + pred_sd·z at the candidate, the
        // truth mean at the target must move by sigma_tilde·z exactly.
        let truth = KernelSpec::rbf(1, 0.9, 1.4, 0.2).unwrap();
        let bias = KernelSpec::rbf(1, 0.6, 0.4, 0.08).unwrap();
        let spec = SourceModelSpec::new(truth, vec![bias]).unwrap();
        let mut data = Dataset::new(1);
        data.push(0, vec![0.0], 0.3).unwrap();
        data.push(1, vec![0.7], -0.4).unwrap();
        data.push(0, vec![1.5], 0.9).unwrap();
        let model = GpModel::with_standardization(spec, data, 0.25, 1.7).unwrap();

        let target = [0.9];
        for (cand_source, cand_x, z) in [(0usize, [0.4], 1.3), (1, [1.1], -0.6)] {
            let st = model.sigma_tilde(&target, cand_source, &cand_x);
            assert!(!st.degenerate);
            let (pm, pv) = model.predictive(cand_source, &cand_x);
            let y = pm + pv.sqrt() * z;
            let aug = model.augmented(cand_source, cand_x.to_vec(), y).unwrap();
            let before = model.posterior(0, &target).0;
            let after = aug.posterior(0, &target).0;
            assert_abs_diff_eq!(after - before, st.value * z, epsilon = 1e-8);
        }
    }

    #[test]
    fn augmented_model_matches_fresh_rebuild() {
        let spec = rbf_spec(1, 1.0, 1.0, 0.1);
        let base = GpModel::with_standardization(spec.clone(), toy_data(), 0.4, 1.2).unwrap();
        let aug = base.augmented(0, vec![1.7], 0.8).unwrap();

        let mut data2 = toy_data();
        data2.push(0, vec![1.7], 0.8).unwrap();
        let fresh = GpModel::with_standardization(spec, data2, 0.4, 1.2).unwrap();

        for xq in [-0.5, 0.3, 1.1, 1.7, 2.9] {
            let (ma, va) = aug.posterior(0, &[xq]);
            let (mf, vf) = fresh.posterior(0, &[xq]);
            assert_abs_diff_eq!(ma, mf, epsilon = 1e-9);
            assert_abs_diff_eq!(va, vf, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(
            aug.log_marginal_likelihood(),
            fresh.log_marginal_likelihood(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn repeated_noiseless_augmentation_stays_finite() {
        // Duplicating a point under zero noise drives the new pivot to
        // zero; the rebuild fallback must keep the factorization sound.
        let spec = rbf_spec(1, 1.0, 1.0, 0.0);
        let mut model = GpModel::new(spec, Dataset::new(1)).unwrap();
        for _ in 0..3 {
            model = model.augmented(0, vec![0.5], 0.7).unwrap();
        }
        let (m, v) = model.posterior(0, &[0.5]);
        assert!(m.is_finite() && v.is_finite());
        assert_abs_diff_eq!(m, 0.7, epsilon = 1e-4);
    }

    #[test]
    fn log_marginal_likelihood_single_unit_observation() {
        // Unit prior, no noise, one observation: −y²/2 − log(2π)/2.
        let mut data = Dataset::new(1);
        data.push(0, vec![0.0], 0.7).unwrap();
        let model = GpModel::new(rbf_spec(1, 1.0, 1.0, 0.0), data).unwrap();
        let expected = -0.5 * 0.7f64.powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(model.log_marginal_likelihood(), expected, epsilon = 1e-8);
    }

    #[test]
    fn mle_fit_is_deterministic_and_never_worse_than_init() {
        let mut data = Dataset::new(1);
        for i in 0..12 {
            let x = i as f64 / 11.0 * 4.0;
            data.push(0, vec![x], (1.5 * x).sin() * 2.0 + 5.0).unwrap();
        }
        let init = rbf_spec(1, 1.0, 1.0, 0.01);

        let fit1 = GpModel::fit_mle(init.clone(), data.clone(), 4, 9).unwrap();
        let fit2 = GpModel::fit_mle(init.clone(), data.clone(), 4, 9).unwrap();
        assert_eq!(fit1.spec(), fit2.spec());

        let baseline =
            GpModel::with_standardization(init, data, fit1.y_mean(), fit1.y_scale()).unwrap();
        assert!(
            fit1.log_marginal_likelihood() >= baseline.log_marginal_likelihood() - 1e-9,
            "fit {} < baseline {}",
            fit1.log_marginal_likelihood(),
            baseline.log_marginal_likelihood()
        );
    }

    #[test]
    fn mle_fit_skips_sources_without_data() {
        let truth = KernelSpec::rbf(1, 1.0, 1.0, 0.01).unwrap();
        let bias = KernelSpec::rbf(1, 0.33, 0.44, 0.055).unwrap();
        let spec = SourceModelSpec::new(truth, vec![bias.clone()]).unwrap();
        let fit = GpModel::fit_mle(spec, toy_data(), 2, 3).unwrap();
        assert_eq!(fit.spec().biases()[0], bias);
    }

    #[test]
    fn model_rejects_out_of_range_sources_and_bad_dims() {
        let spec = rbf_spec(2, 1.0, 1.0, 0.1);
        let mut data = Dataset::new(2);
        data.push(3, vec![0.0, 0.0], 1.0).unwrap();
        assert!(GpModel::new(spec.clone(), data).is_err());
        assert!(GpModel::new(spec.clone(), Dataset::new(1)).is_err());
        let model = GpModel::new(spec, Dataset::new(2)).unwrap();
        assert!(model.augmented(5, vec![0.0, 0.0], 1.0).is_err());
        assert!(model.augmented(0, vec![0.0, 0.0], f64::NAN).is_err());
    }
}
