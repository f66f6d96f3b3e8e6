//! Space-filling initial designs with (approximately) minimal fill
//! distance.
//!
//! The fill distance of a design D over a domain is
//! `max_g min_{x in D} ||g − x||`, with the max taken over a cell-centered
//! reference grid. Designs start from the best of several maximin Latin
//! hypercube draws and are refined by greedy point exchanges against the
//! grid; only strictly improving exchanges are accepted, so the fill
//! distance is non-increasing across the refinement.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::BoxBounds;

const LHS_DRAWS: usize = 20;
const MAX_SWEEPS: usize = 100;
const RANDOM_CANDIDATES_PER_SWEEP: usize = 64;
/// Below this grid size every grid point is tried as an exchange
/// candidate instead of a random subset.
const FULL_SCAN_GRID: usize = 512;

fn grid_resolution(dim: usize) -> usize {
    let mut res = match dim {
        0..=2 => 50,
        3 => 15,
        _ => 8,
    };
    while res > 2 && (res as f64).powi(dim as i32) > 60_000.0 {
        res -= 1;
    }
    res
}

/// Cell-centered reference grid used to measure coverage.
fn reference_grid(bounds: &BoxBounds) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let res = grid_resolution(d);
    let total = res.pow(d as u32);
    let mut grid = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    loop {
        let point: Vec<f64> = (0..d)
            .map(|j| {
                let t = (idx[j] as f64 + 0.5) / res as f64;
                bounds.lower()[j] + t * bounds.width(j)
            })
            .collect();
        grid.push(point);
        let mut j = 0;
        loop {
            idx[j] += 1;
            if idx[j] < res {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == d {
                return grid;
            }
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// One Latin hypercube draw: stratified per axis with in-cell jitter.
fn latin_hypercube(n: usize, bounds: &BoxBounds, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let d = bounds.dim();
    let mut coords: Vec<Vec<f64>> = Vec::with_capacity(d);
    for _ in 0..d {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        coords.push(
            perm.iter()
                .map(|&c| (c as f64 + rng.gen::<f64>()) / n as f64)
                .collect(),
        );
    }
    (0..n)
        .map(|i| {
            let u: Vec<f64> = (0..d).map(|j| coords[j][i]).collect();
            bounds.map_unit(&u)
        })
        .collect()
}

fn min_pairwise_dist2(design: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..design.len() {
        for j in i + 1..design.len() {
            best = best.min(dist2(&design[i], &design[j]));
        }
    }
    best
}

/// Per-grid-point nearest and second-nearest design distances (squared),
/// plus the index of the nearest design point. Lets an exchange be scored
/// in one grid pass.
struct CoverageCache {
    d1: Vec<f64>,
    d2: Vec<f64>,
    i1: Vec<usize>,
}

impl CoverageCache {
    fn build(grid: &[Vec<f64>], design: &[Vec<f64>]) -> Self {
        let mut d1 = vec![f64::INFINITY; grid.len()];
        let mut d2 = vec![f64::INFINITY; grid.len()];
        let mut i1 = vec![0usize; grid.len()];
        for (g, point) in grid.iter().enumerate() {
            for (i, x) in design.iter().enumerate() {
                let dd = dist2(point, x);
                if dd < d1[g] {
                    d2[g] = d1[g];
                    d1[g] = dd;
                    i1[g] = i;
                } else if dd < d2[g] {
                    d2[g] = dd;
                }
            }
        }
        Self { d1, d2, i1 }
    }

    /// Squared fill distance and the index of the attaining grid point.
    fn fill2(&self) -> (f64, usize) {
        let mut worst = 0.0;
        let mut at = 0;
        for (g, &dd) in self.d1.iter().enumerate() {
            if dd > worst {
                worst = dd;
                at = g;
            }
        }
        (worst, at)
    }

    /// Squared fill distance after replacing design point `i` with a
    /// candidate whose squared distances to the grid are `cand_d2`.
    fn fill2_after_exchange(&self, i: usize, cand_d2: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for g in 0..self.d1.len() {
            let without = if self.i1[g] == i { self.d2[g] } else { self.d1[g] };
            let after = without.min(cand_d2[g]);
            if after > worst {
                worst = after;
            }
        }
        worst
    }
}

/// Builds an `n`-point design minimizing fill distance over `bounds`,
/// deterministically for a given seed. Returns the design along with the
/// fill-distance history: the value after the Latin-hypercube start and
/// after every accepted exchange.
pub fn minimax_design_with_trace(
    n: usize,
    bounds: &BoxBounds,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::invalid("a design needs at least one point"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Best-of-k maximin Latin hypercube start.
    let mut design = latin_hypercube(n, bounds, &mut rng);
    if n >= 2 {
        let mut best_sep = min_pairwise_dist2(&design);
        for _ in 1..LHS_DRAWS {
            let cand = latin_hypercube(n, bounds, &mut rng);
            let sep = min_pairwise_dist2(&cand);
            if sep > best_sep {
                best_sep = sep;
                design = cand;
            }
        }
    }

    let grid = reference_grid(bounds);
    let mut cache = CoverageCache::build(&grid, &design);
    let (mut fill2, mut worst_g) = cache.fill2();
    let mut trace = vec![fill2.sqrt()];

    for _ in 0..MAX_SWEEPS {
        // Candidate replacement locations: the least-covered grid point
        // plus a random (or, for small grids, exhaustive) selection.
        let mut candidates: Vec<usize> = vec![worst_g];
        if grid.len() <= FULL_SCAN_GRID {
            candidates.extend(0..grid.len());
        } else {
            candidates
                .extend((0..RANDOM_CANDIDATES_PER_SWEEP).map(|_| rng.gen_range(0..grid.len())));
        }

        let mut best: Option<(f64, usize, usize)> = None; // (fill2, design idx, grid idx)
        for &c in &candidates {
            let cand_d2: Vec<f64> = grid.iter().map(|g| dist2(g, &grid[c])).collect();
            for i in 0..n {
                let after = cache.fill2_after_exchange(i, &cand_d2);
                if after < fill2 && best.map_or(true, |(b, _, _)| after < b) {
                    best = Some((after, i, c));
                }
            }
        }

        match best {
            Some((after, i, c)) if after < fill2 * (1.0 - 1e-12) => {
                design[i] = grid[c].clone();
                cache = CoverageCache::build(&grid, &design);
                let (f2, wg) = cache.fill2();
                fill2 = f2;
                worst_g = wg;
                trace.push(fill2.sqrt());
            }
            _ => break,
        }
    }

    Ok((design, trace))
}

/// [`minimax_design_with_trace`] without the history.
pub fn minimax_design(n: usize, bounds: &BoxBounds, seed: u64) -> Result<Vec<Vec<f64>>> {
    minimax_design_with_trace(n, bounds, seed).map(|(d, _)| d)
}

/// Fill distance of an arbitrary design over `bounds`, measured on the
/// same reference grid the construction uses.
pub fn fill_distance(design: &[Vec<f64>], bounds: &BoxBounds) -> Result<f64> {
    if design.is_empty() {
        return Err(Error::invalid("fill distance of an empty design is undefined"));
    }
    for x in design {
        if x.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                got: x.len(),
            });
        }
    }
    let grid = reference_grid(bounds);
    let cache = CoverageCache::build(&grid, design);
    Ok(cache.fill2().0.sqrt())
}
