//! Gauss–Hermite quadrature against the standard normal density.
//!
//! Rules are built in probabilists' normalization: Σ w_j g(z_j) ≈ E[g(Z)]
//! for Z ~ N(0, 1), with weights summing to one and nodes symmetric about
//! zero. The symmetry is enforced exactly after the eigendecomposition so
//! that odd-moment cancellations and the Jensen lower bound of
//! [`expect_max_affine`] hold to machine precision.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 64;

/// Nodes and weights of a rule normalized against the standard normal.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature estimate of E[g(Z)].
    pub fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * g(z))
            .sum()
    }

    /// Indices of the `cap` highest-weight nodes, in node order. Used by the
    /// rollout to bound fantasy-tree growth at deeper levels.
    pub fn top_weight_indices(&self, cap: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n()).collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .partial_cmp(&self.weights[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.truncate(cap.max(1));
        idx.sort_unstable();
        idx
    }
}

/// Builds the n-node Gauss–Hermite rule (1 ≤ n ≤ 64) by eigendecomposition
/// of the Jacobi matrix of the probabilists' Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_NODES {
        return Err(Error::invalid(format!(
            "quadrature node count must be in 1..={MAX_NODES}, got {n}"
        )));
    }
    if n == 1 {
        return Ok(QuadratureRule {
            nodes: vec![0.0],
            weights: vec![1.0],
        });
    }

    // Jacobi matrix: zero diagonal, off-diagonal sqrt(k) for He_k.
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = jacobi.symmetric_eigen();

    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let node = eig.eigenvalues[j];
            let first = eig.eigenvectors[(0, j)];
            (node, first * first)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    // Enforce exact symmetry and unit mass.
    for j in 0..n / 2 {
        let k = n - 1 - j;
        let half = 0.5 * (nodes[j] - nodes[k]);
        nodes[j] = half;
        nodes[k] = -half;
        let w = 0.5 * (weights[j] + weights[k]);
        weights[j] = w;
        weights[k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }

    Ok(QuadratureRule { nodes, weights })
}

/// Quadrature estimate of E[max_m (a_m + b_m Z)] over a finite family of
/// affine functions of a standard normal.
pub fn expect_max_affine(a: &[f64], b: &[f64], rule: &QuadratureRule) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid("expect_max_affine: empty coefficient lists"));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(rule.expect(|z| {
        let mut best = f64::NEG_INFINITY;
        for (&am, &bm) in a.iter().zip(b) {
            let v = am + bm * z;
            if v > best {
                best = v;
            }
        }
        best
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn single_node_rule_sits_at_the_mean() {
        let rule = gauss_hermite(1).unwrap();
        assert_eq!(rule.nodes(), &[0.0]);
        assert_eq!(rule.weights(), &[1.0]);
    }

    #[test]
    fn two_node_rule_reproduces_second_moment() {
        let rule = gauss_hermite(2).unwrap();
        let m2 = rule.expect(|z| z * z);
        assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ten_node_rule_reproduces_eighth_moment() {
        // E[Z^8] = 7!! = 105; the 10-node rule is exact to degree 19.
        let rule = gauss_hermite(10).unwrap();
        let m8 = rule.expect(|z| z.powi(8));
        assert_abs_diff_eq!(m8, 105.0, epsilon = 1e-9);
    }

    #[test]
    fn weights_sum_to_one_and_nodes_are_symmetric() {
        for n in [1, 2, 3, 5, 10, 17, 32, 64] {
            let rule = gauss_hermite(n).unwrap();
            let total: f64 = rule.weights().iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
            for j in 0..n {
                let k = n - 1 - j;
                assert_eq!(rule.nodes()[j], -rule.nodes()[k], "n={n}, j={j}");
                assert_eq!(rule.weights()[j], rule.weights()[k]);
            }
        }
    }

    #[test]
    fn node_count_out_of_range_is_rejected() {
        assert!(gauss_hermite(0).is_err());
        assert!(gauss_hermite(65).is_err());
    }

    #[test]
    fn constant_family_returns_the_constant() {
        let rule = gauss_hermite(10).unwrap();
        let v = expect_max_affine(&[3.25], &[0.0], &rule).unwrap();
        assert_eq!(v, 3.25);
    }

    #[test]
    fn reflected_slopes_recover_expected_absolute_value() {
        // max(−Z, Z) = |Z|, and E|Z| = √(2/π). The kink at zero slows
        // convergence to O(1/n), so the tolerance is loose at n = 10.
        let rule = gauss_hermite(10).unwrap();
        let v = expect_max_affine(&[0.0, 0.0], &[-1.0, 1.0], &rule).unwrap();
        let exact = (2.0 / std::f64::consts::PI).sqrt();
        assert_abs_diff_eq!(v, exact, epsilon = 5e-2);
    }

    #[test]
    fn zero_slopes_degenerate_to_max_of_intercepts() {
        let rule = gauss_hermite(5).unwrap();
        let v = expect_max_affine(&[-1.0, 4.0, 2.0], &[0.0, 0.0, 0.0], &rule).unwrap();
        assert_eq!(v, 4.0);
    }

    #[test]
    fn empty_and_mismatched_inputs_are_errors() {
        let rule = gauss_hermite(3).unwrap();
        assert!(expect_max_affine(&[], &[], &rule).is_err());
        assert!(expect_max_affine(&[1.0], &[0.0, 1.0], &rule).is_err());
    }

    #[test]
    fn error_on_kinked_integrand_decreases_with_node_count() {
        // E|Z| = √(2/π) exactly. The error decays roughly like 1/n, so it
        // must shrink monotonically across doublings and end below 1%.
        let exact = (2.0 / std::f64::consts::PI).sqrt();
        let mut prev_err = f64::INFINITY;
        for n in [2, 4, 8, 16, 32, 64] {
            let rule = gauss_hermite(n).unwrap();
            let v = expect_max_affine(&[0.0, 0.0], &[-1.0, 1.0], &rule).unwrap();
            let err = (v - exact).abs();
            assert!(err < prev_err, "error did not shrink at n={n}: {err} vs {prev_err}");
            prev_err = err;
        }
        assert!(prev_err <= 0.01, "n=64 error too large: {prev_err}");
    }

    proptest! {
        // Jensen: the expected max dominates the max of the means whenever
        // each (a, b) pair appears with its slope reflection.
        #[test]
        fn expected_max_dominates_max_mean_on_symmetric_slope_sets(
            a in proptest::collection::vec(-10.0..10.0f64, 1..6),
            b in proptest::collection::vec(-5.0..5.0f64, 1..6),
            n in 2usize..20,
        ) {
            let m = a.len().min(b.len());
            let mut aa = Vec::new();
            let mut bb = Vec::new();
            for i in 0..m {
                aa.push(a[i]);
                bb.push(b[i]);
                aa.push(a[i]);
                bb.push(-b[i]);
            }
            let rule = gauss_hermite(n).unwrap();
            let v = expect_max_affine(&aa, &bb, &rule).unwrap();
            let max_a = aa.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= max_a - 1e-12);
        }

        // Adding a constant to every intercept shifts the estimate by that
        // constant (up to rounding in the weighted sum).
        #[test]
        fn intercept_shift_invariance(
            a in proptest::collection::vec(-10.0..10.0f64, 1..6),
            b in proptest::collection::vec(-5.0..5.0f64, 1..6),
            c in -50.0..50.0f64,
            n in 1usize..20,
        ) {
            let m = a.len().min(b.len());
            let rule = gauss_hermite(n).unwrap();
            let base = expect_max_affine(&a[..m], &b[..m], &rule).unwrap();
            let shifted_a: Vec<f64> = a[..m].iter().map(|v| v + c).collect();
            let shifted = expect_max_affine(&shifted_a, &b[..m], &rule).unwrap();
            prop_assert!((shifted - (base + c)).abs() <= 1e-9 * (1.0 + base.abs() + c.abs()));
        }
    }
}
