//! Derivative-free maximization over box domains.
//!
//! The acquisition surfaces this crate optimizes are cheap-to-evaluate,
//! mildly multimodal, and low-dimensional, so a projected Nelder–Mead
//! simplex restarted from a low-discrepancy set of start points is both
//! simple and adequate. Everything here is deterministic given the seed:
//! start points come from a randomly shifted Halton sequence and ties
//! between restarts are broken lexicographically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box domain with strictly positive widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBounds")]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl TryFrom<RawBounds> for BoxBounds {
    type Error = Error;

    fn try_from(raw: RawBounds) -> Result<Self> {
        BoxBounds::new(raw.lower, raw.upper)
    }
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::invalid("bounds must have at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (j, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(Error::invalid(format!(
                    "bounds axis {j} must satisfy finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The unit cube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&lo, &hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }

    /// Projects `x` onto the box, coordinate by coordinate.
    pub fn clamp(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Affine image of a unit-cube point.
    pub fn map_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&t, (&lo, &hi))| lo + t * (hi - lo))
            .collect()
    }
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut n: u64 = 2;
    while primes.len() < count {
        if primes.iter().all(|&p| n % p != 0) {
            primes.push(n);
        }
        n += 1;
    }
    primes
}

fn radical_inverse(mut n: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while n > 0 {
        denom *= base as f64;
        inv += (n % base) as f64 / denom;
        n /= base;
    }
    inv
}

/// First `count` points of a Halton sequence under a seeded random shift
/// (mod 1 per axis), mapped into `bounds`. The shift decorrelates the
/// deterministic sequence across seeds while keeping its low discrepancy.
pub fn shifted_halton(count: usize, bounds: &BoxBounds, seed: u64) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let bases = first_primes(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shifts: Vec<f64> = (0..d).map(|_| rng.gen::<f64>()).collect();
    (0..count)
        .map(|i| {
            let u: Vec<f64> = (0..d)
                .map(|j| {
                    let v = radical_inverse(i as u64 + 1, bases[j]) + shifts[j];
                    v - v.floor()
                })
                .collect();
            bounds.map_unit(&u)
        })
        .collect()
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

/// One projected Nelder–Mead run from `x0` (already evaluated to `f0`),
/// spending at most `max_evals` evaluations including the initial one.
fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    bounds: &BoxBounds,
    x0: &[f64],
    f0: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    const REFLECT: f64 = 1.0;
    const EXPAND: f64 = 2.0;
    const CONTRACT: f64 = 0.5;
    const SHRINK: f64 = 0.5;

    let d = bounds.dim();
    let mut evals = 1usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };

    // Initial simplex: x0 plus an axis step of 5% of each width, flipped
    // inward when the step would leave the box.
    let mut verts: Vec<Vec<f64>> = vec![x0.to_vec()];
    let mut vals: Vec<f64> = vec![f0];
    for j in 0..d {
        let mut v = x0.to_vec();
        let h = 0.05 * bounds.width(j);
        v[j] = if v[j] + h <= bounds.upper()[j] {
            v[j] + h
        } else {
            v[j] - h
        };
        if evals >= max_evals {
            break;
        }
        let fv = eval(&v, &mut evals);
        verts.push(v);
        vals.push(fv);
    }

    let m = verts.len();
    if m < 2 {
        return (verts.swap_remove(0), vals[0]);
    }

    loop {
        // Order best-first (maximization).
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
        let best = order[0];
        let worst = order[m - 1];
        let second_worst = order[m - 2];

        let spread = vals[best] - vals[worst];
        if spread.abs() <= 1e-14 * (1.0 + vals[best].abs()) || evals + 2 > max_evals {
            break;
        }

        // Centroid of all vertices except the worst.
        let mut centroid = vec![0.0; d];
        for (i, v) in verts.iter().enumerate() {
            if i != worst {
                for (c, &vj) in centroid.iter_mut().zip(v) {
                    *c += vj;
                }
            }
        }
        for c in &mut centroid {
            *c /= (m - 1) as f64;
        }

        let project_step = |scale: f64| {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&verts[worst])
                .map(|(&c, &w)| c + scale * (c - w))
                .collect();
            bounds.clamp(&mut x);
            x
        };

        let xr = project_step(REFLECT);
        let fr = eval(&xr, &mut evals);

        if fr > vals[best] {
            if evals < max_evals {
                let xe = project_step(REFLECT * EXPAND);
                let fe = eval(&xe, &mut evals);
                if fe > fr {
                    verts[worst] = xe;
                    vals[worst] = fe;
                    continue;
                }
            }
            verts[worst] = xr;
            vals[worst] = fr;
        } else if fr > vals[second_worst] {
            verts[worst] = xr;
            vals[worst] = fr;
        } else {
            let (xc, fc) = if fr > vals[worst] {
                let xc = project_step(CONTRACT);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = project_step(-CONTRACT);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc > vals[worst].max(fr) {
                verts[worst] = xc;
                vals[worst] = fc;
            } else {
                // Shrink toward the best vertex.
                if evals + (m - 1) > max_evals {
                    break;
                }
                let anchor = verts[best].clone();
                for i in 0..m {
                    if i == best {
                        continue;
                    }
                    for (vj, &aj) in verts[i].iter_mut().zip(&anchor) {
                        *vj = aj + SHRINK * (*vj - aj);
                    }
                    let snapshot = verts[i].clone();
                    vals[i] = eval(&snapshot, &mut evals);
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..m {
        if vals[i] > vals[best] {
            best = i;
        }
    }
    let value = vals[best];
    (verts.swap_remove(best), value)
}

/// One projected Nelder–Mead run from a caller-chosen start, spending at
/// most `max_evals` evaluations. Fails if the start evaluates non-finite.
pub fn maximize_from(
    mut f: impl FnMut(&[f64]) -> f64,
    bounds: &BoxBounds,
    x0: &[f64],
    max_evals: usize,
) -> Result<(Vec<f64>, f64)> {
    if x0.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            got: x0.len(),
        });
    }
    if max_evals == 0 {
        return Err(Error::invalid("maximize_from requires a positive eval budget"));
    }
    let mut start = x0.to_vec();
    bounds.clamp(&mut start);
    let f0 = f(&start);
    if !f0.is_finite() {
        return Err(Error::AllStartsNonFinite);
    }
    Ok(nelder_mead(&mut f, bounds, &start, f0, max_evals))
}

/// Maximizes `f` over `bounds` with `starts` Nelder–Mead restarts from a
/// seeded shifted-Halton start set, spending roughly `budget_evals`
/// evaluations in total. Restarts are merged deterministically: highest
/// value wins, lexicographically smallest point on an exact tie.
///
/// Starts whose initial evaluation is non-finite are skipped; if every
/// start is skipped the optimizer reports failure rather than inventing a
/// point.
pub fn maximize(
    mut f: impl FnMut(&[f64]) -> f64,
    bounds: &BoxBounds,
    starts: usize,
    budget_evals: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)> {
    if starts == 0 {
        return Err(Error::invalid("maximize requires at least one start"));
    }
    if budget_evals == 0 {
        return Err(Error::invalid("maximize requires a positive eval budget"));
    }
    let d = bounds.dim();
    let per_start = (budget_evals / starts).max(2 * (d + 1));
    let start_points = shifted_halton(starts, bounds, seed);

    let mut best: Option<(Vec<f64>, f64)> = None;
    for x0 in start_points {
        let f0 = f(&x0);
        if !f0.is_finite() {
            continue;
        }
        let (x, v) = nelder_mead(&mut f, bounds, &x0, f0, per_start);
        let replace = match &best {
            None => true,
            Some((bx, bv)) => v > *bv || (v == *bv && lex_less(&x, bx)),
        };
        if replace {
            best = Some((x, v));
        }
    }
    best.ok_or(Error::AllStartsNonFinite)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bounds_reject_bad_input() {
        assert!(BoxBounds::new(vec![], vec![]).is_err());
        assert!(BoxBounds::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(BoxBounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(BoxBounds::new(vec![2.0], vec![1.0]).is_err());
        assert!(BoxBounds::new(vec![f64::NAN], vec![1.0]).is_err());
        assert!(BoxBounds::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn clamp_projects_onto_the_box() {
        let b = BoxBounds::new(vec![-1.0, 0.0], vec![1.0, 2.0]).unwrap();
        let mut x = vec![-3.0, 5.0];
        b.clamp(&mut x);
        assert_eq!(x, vec![-1.0, 2.0]);
        assert!(b.contains(&x));
    }

    #[test]
    fn bounds_deserialize_with_validation() {
        let b: BoxBounds = serde_json::from_str(r#"{"lower":[0.0],"upper":[2.0]}"#).unwrap();
        assert_eq!(b.width(0), 2.0);
        let bad: std::result::Result<BoxBounds, _> =
            serde_json::from_str(r#"{"lower":[3.0],"upper":[2.0]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn halton_points_are_in_bounds_distinct_and_seeded() {
        let b = BoxBounds::new(vec![-5.0, 0.0], vec![10.0, 15.0]).unwrap();
        let pts = shifted_halton(64, &b, 7);
        assert_eq!(pts.len(), 64);
        for p in &pts {
            assert!(b.contains(p));
        }
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                assert_ne!(pts[i], pts[j]);
            }
        }
        assert_eq!(pts, shifted_halton(64, &b, 7));
        assert_ne!(pts, shifted_halton(64, &b, 8));
    }

    #[test]
    fn finds_interior_quadratic_maximum() {
        let b = BoxBounds::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let c = [1.2, -3.4];
        let (x, v) = maximize(
            |x| -(x[0] - c[0]).powi(2) - (x[1] - c[1]).powi(2),
            &b,
            8,
            800,
            1,
        )
        .unwrap();
        assert!((x[0] - c[0]).abs() < 1e-4, "x = {x:?}");
        assert!((x[1] - c[1]).abs() < 1e-4, "x = {x:?}");
        assert!(v > -1e-7);
    }

    #[test]
    fn boundary_maximum_is_reached_by_projection() {
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        let (x, v) = maximize(|x| x[0], &b, 4, 200, 3).unwrap();
        assert!(v >= 1.0 - 1e-8, "v = {v}");
        assert!(b.contains(&x));
    }

    #[test]
    fn multistart_escapes_local_maxima() {
        // sin(13x)·sin(27x) has several local maxima on [0, 1]; the global
        // one is ≈ 0.9512 at x ≈ 0.8675. A single simplex from a bad start
        // stalls on a local hill; sixteen Halton starts should not.
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        let f = |x: &[f64]| (13.0 * x[0]).sin() * (27.0 * x[0]).sin();
        let (x, v) = maximize(f, &b, 16, 640, 11).unwrap();
        assert!(v >= 0.945, "v = {v} at x = {x:?}");
    }

    #[test]
    fn same_seed_gives_bitwise_identical_results() {
        let b = BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
        let f = |x: &[f64]| -(x[0].powi(2) + 0.5 * x[1].powi(2)) + (3.0 * x[0]).cos();
        let (x1, v1) = maximize(f, &b, 6, 300, 42).unwrap();
        let (x2, v2) = maximize(f, &b, 6, 300, 42).unwrap();
        assert_eq!(v1.to_bits(), v2.to_bits());
        let bits = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&x1), bits(&x2));
    }

    #[test]
    fn all_non_finite_starts_is_an_error() {
        let b = BoxBounds::new(vec![0.0], vec![1.0]).unwrap();
        let err = maximize(|_| f64::NAN, &b, 4, 100, 0).unwrap_err();
        assert!(matches!(err, Error::AllStartsNonFinite));
    }

    #[test]
    fn single_start_run_improves_on_its_start() {
        let b = BoxBounds::new(vec![-2.0], vec![2.0]).unwrap();
        let f = |x: &[f64]| -(x[0] - 0.7).powi(2);
        let (x, v) = maximize_from(f, &b, &[-1.5], 80).unwrap();
        assert!(v >= f(&[-1.5]));
        assert!((x[0] - 0.7).abs() < 1e-4);
        // Out-of-bounds starts are projected first.
        let (x2, _) = maximize_from(f, &b, &[9.0], 80).unwrap();
        assert!(b.contains(&x2));
        assert!(matches!(
            maximize_from(|_| f64::NAN, &b, &[0.0], 80),
            Err(Error::AllStartsNonFinite)
        ));
    }

    proptest! {
        // With a fixed per-start budget, the first s starts of a larger run
        // are identical to the s-start run, so the merged value can only
        // improve as starts are added.
        #[test]
        fn value_is_monotone_in_restarts(
            cx in -1.5..1.5f64,
            cy in -1.5..1.5f64,
            seed in 0u64..1000,
            s in 1usize..6,
        ) {
            let b = BoxBounds::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
            let f = |x: &[f64]| -((x[0] - cx).powi(2) + (x[1] - cy).powi(2))
                + 0.3 * (5.0 * x[0]).sin();
            let (_, v_small) = maximize(f, &b, s, s * 40, seed).unwrap();
            let (_, v_large) = maximize(f, &b, s + 1, (s + 1) * 40, seed).unwrap();
            prop_assert!(v_large >= v_small);
        }

        #[test]
        fn returned_point_is_always_in_bounds(
            seed in 0u64..1000,
            lo in -10.0..0.0f64,
            hi in 1.0..10.0f64,
        ) {
            let b = BoxBounds::new(vec![lo, lo], vec![hi, hi]).unwrap();
            let (x, _) = maximize(|x| (x[0] + x[1]).sin(), &b, 3, 120, seed).unwrap();
            prop_assert!(b.contains(&x));
        }
    }
}
