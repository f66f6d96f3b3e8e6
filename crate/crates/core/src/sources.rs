//! Benchmark objectives and auxiliary information sources.
//!
//! Objectives are classic minimization test functions served in
//! maximization orientation (negated), each with its standard domain, a
//! known optimal value for gap scoring, and Gaussian observation noise.
//! Auxiliary sources return the truth plus a deterministic bias: either a
//! fixed sinusoid or a seeded draw from a stationary Gaussian process.
//! Every bias is a fixed function of `x` once constructed, so queries are
//! reproducible and independent of evaluation order.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::acquisition::SourceCost;
use crate::error::{Error, Result};
use crate::optim::BoxBounds;
use crate::seeding::{self, Purpose};

/// Default observation noise on the truth source.
pub const DEFAULT_NOISE_SD: f64 = 0.1;

/// The benchmark objective functions, each on its standard domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    BraninHoo,
    SixHumpCamel,
    GoldsteinPrice,
    Bohachevsky,
    Griewank3,
}

impl ObjectiveKind {
    pub fn dim(self) -> usize {
        match self {
            ObjectiveKind::Griewank3 => 3,
            _ => 2,
        }
    }

    /// Standard domain of the function.
    pub fn bounds(self) -> BoxBounds {
        let (lower, upper) = match self {
            ObjectiveKind::BraninHoo => (vec![-5.0, 0.0], vec![10.0, 15.0]),
            ObjectiveKind::SixHumpCamel => (vec![-3.0, -2.0], vec![3.0, 2.0]),
            ObjectiveKind::GoldsteinPrice => (vec![-2.0, -2.0], vec![2.0, 2.0]),
            ObjectiveKind::Bohachevsky => (vec![-100.0, -100.0], vec![100.0, 100.0]),
            ObjectiveKind::Griewank3 => (vec![-600.0; 3], vec![600.0; 3]),
        };
        BoxBounds::new(lower, upper).expect("standard bounds are valid")
    }

    /// Maximum of the negated function, i.e. minus the standard minimum.
    pub fn known_max(self) -> f64 {
        match self {
            ObjectiveKind::BraninHoo => -0.397_887_357_729_738_16,
            ObjectiveKind::SixHumpCamel => 1.031_628_453_489_877_4,
            ObjectiveKind::GoldsteinPrice => -3.0,
            ObjectiveKind::Bohachevsky => 0.0,
            ObjectiveKind::Griewank3 => 0.0,
        }
    }

    /// Noiseless value in maximization orientation.
    fn value(self, x: &[f64]) -> f64 {
        match self {
            ObjectiveKind::BraninHoo => {
                let (x1, x2) = (x[0], x[1]);
                let b = 5.1 / (4.0 * std::f64::consts::PI.powi(2));
                let c = 5.0 / std::f64::consts::PI;
                let t = 1.0 / (8.0 * std::f64::consts::PI);
                let f = (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2)
                    + 10.0 * (1.0 - t) * x1.cos()
                    + 10.0;
                -f
            }
            ObjectiveKind::SixHumpCamel => {
                let (x1, x2) = (x[0], x[1]);
                let f = (4.0 - 2.1 * x1 * x1 + x1.powi(4) / 3.0) * x1 * x1
                    + x1 * x2
                    + (-4.0 + 4.0 * x2 * x2) * x2 * x2;
                -f
            }
            ObjectiveKind::GoldsteinPrice => {
                let (x1, x2) = (x[0], x[1]);
                let a = 1.0
                    + (x1 + x2 + 1.0).powi(2)
                        * (19.0 - 14.0 * x1 + 3.0 * x1 * x1 - 14.0 * x2
                            + 6.0 * x1 * x2
                            + 3.0 * x2 * x2);
                let b = 30.0
                    + (2.0 * x1 - 3.0 * x2).powi(2)
                        * (18.0 - 32.0 * x1 + 12.0 * x1 * x1 + 48.0 * x2
                            - 36.0 * x1 * x2
                            + 27.0 * x2 * x2);
                -(a * b)
            }
            ObjectiveKind::Bohachevsky => {
                let (x1, x2) = (x[0], x[1]);
                let f = x1 * x1 + 2.0 * x2 * x2
                    - 0.3 * (3.0 * std::f64::consts::PI * x1).cos()
                    - 0.4 * (4.0 * std::f64::consts::PI * x2).cos()
                    + 0.7;
                -f
            }
            ObjectiveKind::Griewank3 => {
                let sum: f64 = x.iter().map(|v| v * v / 4000.0).sum();
                let prod: f64 = x
                    .iter()
                    .enumerate()
                    .map(|(i, v)| (v / ((i + 1) as f64).sqrt()).cos())
                    .product();
                -(sum - prod + 1.0)
            }
        }
    }
}

/// A benchmark objective with observation noise: the truth source.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    kind: ObjectiveKind,
    bounds: BoxBounds,
    noise_sd: f64,
}

impl ObjectiveSpec {
    /// Objective on its standard domain with the default noise.
    pub fn new(kind: ObjectiveKind) -> Self {
        Self { kind, bounds: kind.bounds(), noise_sd: DEFAULT_NOISE_SD }
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
            return Err(Error::invalid(format!(
                "noise standard deviation must be non-negative, got {noise_sd}"
            )));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn bounds(&self) -> &BoxBounds {
        &self.bounds
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    pub fn known_max(&self) -> f64 {
        self.kind.known_max()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        if !self.bounds.contains(x) {
            return Err(Error::invalid(format!(
                "input {x:?} lies outside the objective domain"
            )));
        }
        Ok(())
    }

    /// Noiseless truth value (maximization orientation).
    pub fn truth_value(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.kind.value(x))
    }

    /// One noisy observation of the truth.
    pub fn evaluate_truth<R: Rng>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let f = self.truth_value(x)?;
        let z: f64 = rng.sample(StandardNormal);
        Ok(f + self.noise_sd * z)
    }
}

/// Number of random Fourier features approximating the process-draw bias.
const RFF_FEATURES: usize = 1024;
/// Kernel of the process-draw bias: unit-lengthscale, unit-variance
/// radial basis plus white noise of variance one half.
const GP_DRAW_LENGTHSCALE: f64 = 1.0;
const GP_DRAW_SIGNAL_VARIANCE: f64 = 1.0;
const GP_DRAW_NOISE_VARIANCE: f64 = 0.5;

/// The bias shapes available for auxiliary sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    /// `2·sin(10x₁ + 5x₂)`.
    #[serde(rename = "sinusoid_2d")]
    Sinusoid2D,
    /// `2·sin(10x₁ + 5x₂ + 3x₃)`.
    #[serde(rename = "sinusoid_3d")]
    Sinusoid3D,
    /// A seeded draw from a stationary Gaussian process.
    GpDraw,
}

impl BiasKind {
    fn min_dim(self) -> usize {
        match self {
            BiasKind::Sinusoid2D => 2,
            BiasKind::Sinusoid3D => 3,
            BiasKind::GpDraw => 1,
        }
    }
}

/// An auxiliary information source: the truth plus a fixed bias function.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasedSourceSpec {
    kind: BiasKind,
    cost: f64,
    rng_seed: u64,
}

impl BiasedSourceSpec {
    pub fn new(kind: BiasKind, cost: f64, rng_seed: u64) -> Result<Self> {
        if !(cost > 0.0) || !cost.is_finite() {
            return Err(Error::invalid(format!(
                "source cost must be positive and finite, got {cost}"
            )));
        }
        Ok(Self { kind, cost, rng_seed })
    }

    pub fn kind(&self) -> BiasKind {
        self.kind
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    /// The bias at `x`: a fixed deterministic function of `x` for the
    /// life of the spec, whatever the query order.
    pub fn bias_value(&self, x: &[f64]) -> Result<f64> {
        if x.len() < self.kind.min_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.kind.min_dim(),
                got: x.len(),
            });
        }
        Ok(match self.kind {
            BiasKind::Sinusoid2D => 2.0 * (10.0 * x[0] + 5.0 * x[1]).sin(),
            BiasKind::Sinusoid3D => 2.0 * (10.0 * x[0] + 5.0 * x[1] + 3.0 * x[2]).sin(),
            BiasKind::GpDraw => self.gp_draw_bias(x),
        })
    }

    /// A fixed sample path of a Gaussian process with a radial-basis plus
    /// white-noise kernel. The smooth part is a random Fourier feature
    /// expansion drawn from the spec seed; the white part is a standard
    /// normal keyed by the bits of `x`. Both are pure functions of
    /// `(seed, x)`, which is what makes the path query-order invariant.
    fn gp_draw_bias(&self, x: &[f64]) -> f64 {
        let d = x.len();
        let mut rng = seeding::rng(self.rng_seed, Purpose::BiasDraw, d as u64);
        let mut smooth = 0.0;
        for _ in 0..RFF_FEATURES {
            let amp: f64 = rng.sample(StandardNormal);
            let mut arg = 0.0;
            for &xi in x {
                let w: f64 = rng.sample(StandardNormal);
                arg += w / GP_DRAW_LENGTHSCALE * xi;
            }
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            smooth += amp * (arg + phase).cos();
        }
        smooth *= (2.0 * GP_DRAW_SIGNAL_VARIANCE / RFF_FEATURES as f64).sqrt();

        let mut key = seeding::derive(self.rng_seed, Purpose::BiasDraw, u64::MAX);
        for &xi in x {
            key = seeding::derive(key, Purpose::BiasDraw, xi.to_bits());
        }
        let mut white_rng = ChaCha8Rng::seed_from_u64(key);
        let white: f64 = white_rng.sample(StandardNormal);
        smooth + GP_DRAW_NOISE_VARIANCE.sqrt() * white
    }

    /// One noisy observation through this source: truth draw plus bias.
    pub fn evaluate<R: Rng>(
        &self,
        truth: &ObjectiveSpec,
        x: &[f64],
        rng: &mut R,
    ) -> Result<f64> {
        let y = truth.evaluate_truth(x, rng)?;
        Ok(y + self.bias_value(x)?)
    }
}

/// The queryable sources of one experiment: source 0 is the truth, the
/// rest are biased auxiliaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SourcePool {
    truth: ObjectiveSpec,
    truth_cost: f64,
    aux: Vec<BiasedSourceSpec>,
}

impl SourcePool {
    pub fn new(truth: ObjectiveSpec, truth_cost: f64, aux: Vec<BiasedSourceSpec>) -> Result<Self> {
        if !(truth_cost > 0.0) || !truth_cost.is_finite() {
            return Err(Error::invalid(format!(
                "truth query cost must be positive and finite, got {truth_cost}"
            )));
        }
        for spec in &aux {
            if spec.kind().min_dim() > truth.dim() {
                return Err(Error::invalid(format!(
                    "bias {:?} needs at least {} dimensions but the objective has {}",
                    spec.kind(),
                    spec.kind().min_dim(),
                    truth.dim()
                )));
            }
        }
        Ok(Self { truth, truth_cost, aux })
    }

    pub fn truth(&self) -> &ObjectiveSpec {
        &self.truth
    }

    pub fn n_sources(&self) -> usize {
        1 + self.aux.len()
    }

    /// Per-query costs in source order (truth first).
    pub fn source_costs(&self) -> Vec<SourceCost> {
        let mut costs = vec![SourceCost { source: 0, cost: self.truth_cost }];
        for (i, spec) in self.aux.iter().enumerate() {
            costs.push(SourceCost { source: i + 1, cost: spec.cost() });
        }
        costs
    }

    /// One noisy observation through the given source.
    pub fn evaluate<R: Rng>(&self, source: usize, x: &[f64], rng: &mut R) -> Result<f64> {
        if source == 0 {
            return self.truth.evaluate_truth(x, rng);
        }
        let spec = self.aux.get(source - 1).ok_or_else(|| {
            Error::invalid(format!(
                "unknown source index {source}; pool has {} sources",
                self.n_sources()
            ))
        })?;
        spec.evaluate(&self.truth, x, rng)
    }
}
