//! Stationary covariance kernels.
//!
//! Both families are anisotropic: the distance between inputs is scaled per
//! dimension by the lengthscales before the correlation profile is applied.
//! `noise_variance` is a white-noise component that contributes only at
//! exactly coincident inputs; see [`KernelSpec::eval`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Correlation family of a stationary kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelFamily {
    /// Matérn with half-integer smoothness ν = p + 1/2, which admits a
    /// closed-form correlation (p = 0 exponential, p = 2 the common ν = 5/2).
    MaternHalfInteger { p: u32 },
    /// Squared exponential.
    Rbf,
}

/// A stationary kernel: family, per-dimension lengthscales, signal variance
/// and white-noise variance, so that k(x, x) = σ_f² + σ_n².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelSpec {
    pub fn new(
        family: KernelFamily,
        lengthscales: Vec<f64>,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
            return Err(Error::invalid("lengthscales must be positive and finite"));
        }
        if !(signal_variance > 0.0) || !signal_variance.is_finite() {
            return Err(Error::invalid("signal variance must be positive"));
        }
        if !(noise_variance >= 0.0) || !noise_variance.is_finite() {
            return Err(Error::invalid("noise variance must be nonnegative"));
        }
        if let KernelFamily::MaternHalfInteger { p } = family {
            if p > 10 {
                return Err(Error::invalid("Matérn half-integer order p must be <= 10"));
            }
        }
        Ok(Self {
            family,
            lengthscales,
            signal_variance,
            noise_variance,
        })
    }

    /// Isotropic RBF shorthand used throughout the benchmarks.
    pub fn rbf(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        Self::new(KernelFamily::Rbf, vec![lengthscale; dim], signal_variance, noise_variance)
    }

    /// Isotropic Matérn ν = p + 1/2 shorthand.
    pub fn matern(
        dim: usize,
        p: u32,
        lengthscale: f64,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Result<Self> {
        Self::new(
            KernelFamily::MaternHalfInteger { p },
            vec![lengthscale; dim],
            signal_variance,
            noise_variance,
        )
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Lengthscale-weighted Euclidean distance.
    fn scaled_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((&a, &b), &l) in x.iter().zip(y).zip(&self.lengthscales) {
            let d = (a - b) / l;
            s += d * d;
        }
        s.sqrt()
    }

    /// Correlation ρ(x, x') ∈ [-1, 1] of the noiseless part.
    pub fn correlation(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = self.scaled_distance(x, y);
        match self.family {
            KernelFamily::Rbf => (-0.5 * r * r).exp(),
            KernelFamily::MaternHalfInteger { p } => matern_half_integer(p, r),
        }
    }

    /// Noiseless covariance σ_f²·ρ(x, x').
    pub fn covariance(&self, x: &[f64], y: &[f64]) -> f64 {
        self.signal_variance * self.correlation(x, y)
    }

    /// Full kernel σ_f²·ρ(x, x') + σ_n²·[x = x'], with a dimension check.
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: y.len(),
            });
        }
        let white = if x == y { self.noise_variance } else { 0.0 };
        Ok(self.covariance(x, y) + white)
    }
}

/// Matérn correlation for half-integer smoothness ν = p + 1/2 at scaled
/// distance r:
///
/// ρ(r) = exp(-√(2ν) r) · (p!/(2p)!) · Σ_{i=0}^{p} (p+i)!/(i!(p-i)!) · (2√(2ν) r)^{p-i}
fn matern_half_integer(p: u32, r: f64) -> f64 {
    let s = (2.0 * (p as f64 + 0.5)).sqrt() * r;
    let mut sum = 0.0;
    for i in 0..=p {
        let coeff = factorial(p + i) / (factorial(i) * factorial(p - i));
        sum += coeff * (2.0 * s).powi((p - i) as i32);
    }
    (factorial(p) / factorial(2 * p)) * sum * (-s).exp()
}

fn factorial(n: u32) -> f64 {
    (1..=n as u64).map(|k| k as f64).product()
}

/// Free-function form of [`KernelSpec::eval`].
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x_prime: &[f64]) -> Result<f64> {
    spec.eval(x, x_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rbf_at_zero_distance_includes_noise() {
        let k = KernelSpec::rbf(2, 1.0, 1.0, 0.5).unwrap();
        assert_abs_diff_eq!(k.eval(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 1.5, epsilon = 1e-15);
    }

    #[test]
    fn rbf_noiseless_at_zero_distance() {
        let k = KernelSpec::rbf(1, 1.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(k.eval(&[0.0], &[0.0]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn matern_five_halves_matches_closed_form_at_unit_distance() {
        // (1 + √5 r + 5r²/3)·exp(−√5 r) at r = 1, evaluated independently.
        let r: f64 = 1.0;
        let sqrt5 = 5.0_f64.sqrt();
        let expected = (1.0 + sqrt5 * r + 5.0 * r * r / 3.0) * (-sqrt5 * r).exp();
        let k = KernelSpec::matern(1, 2, 1.0, 1.0, 0.0).unwrap();
        assert_abs_diff_eq!(k.eval(&[0.0], &[1.0]).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn matern_low_orders_match_textbook_forms() {
        let r: f64 = 0.7;
        assert_abs_diff_eq!(matern_half_integer(0, r), (-r).exp(), epsilon = 1e-14);
        let s3 = 3.0_f64.sqrt() * r;
        assert_abs_diff_eq!(matern_half_integer(1, r), (1.0 + s3) * (-s3).exp(), epsilon = 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let k = KernelSpec::rbf(2, 1.0, 1.0, 0.0).unwrap();
        assert!(k.eval(&[0.0], &[0.0, 1.0]).is_err());
        assert!(k.eval(&[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn correlation_lies_in_unit_interval() {
        let specs = [
            KernelSpec::rbf(2, 0.3, 2.0, 0.1).unwrap(),
            KernelSpec::matern(2, 0, 0.5, 1.0, 0.0).unwrap(),
            KernelSpec::matern(2, 2, 1.5, 3.0, 0.0).unwrap(),
        ];
        for spec in &specs {
            for i in 0..20 {
                let t = i as f64 * 0.37;
                let rho = spec.correlation(&[0.0, 0.0], &[t, -t * 0.5]);
                assert!((-1.0..=1.0).contains(&rho), "rho = {rho}");
            }
        }
    }
}
