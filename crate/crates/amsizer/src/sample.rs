//! Space-filling sampling: Latin hypercube designs, permutation-scrambled
//! Halton sequences for acquisition candidate clouds, and the hybrid
//! initial-sampling scheme that concentrates a configurable fraction of
//! points inside the advisor-pruned sub-box while keeping the rest in the
//! complement for global exploration.

use crate::eval::{DesignPoint, Provenance};
use crate::space::{DesignSpace, SpaceError};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// Classic Latin hypercube in the unit cube: one point per stratum per
/// dimension, uniform within strata, independently permuted across
/// dimensions.
pub fn latin_hypercube(rng: &mut ChaCha12Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    if n == 0 {
        return Vec::new();
    }
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(dims);
    for _ in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        let column: Vec<f64> = strata
            .into_iter()
            .map(|s| (s as f64 + rng.gen_range(0.0..1.0)) / n as f64)
            .collect();
        columns.push(column);
    }
    (0..n)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect()
}

const PRIMES: [u32; 64] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151, 157, 163, 167, 173, 179, 181, 191,
    193, 197, 199, 211, 223, 227, 229, 233, 239, 241, 251, 257, 263, 269, 271, 277, 281, 283, 293,
    307, 311,
];

/// Halton low-discrepancy sequence with per-dimension random digit
/// permutations (scrambling) drawn from `rng`.
pub fn scrambled_halton(rng: &mut ChaCha12Rng, n: usize, dims: usize) -> Vec<Vec<f64>> {
    assert!(dims <= PRIMES.len(), "halton supports up to 64 dimensions");
    let perms: Vec<Vec<u32>> = PRIMES[..dims]
        .iter()
        .map(|&base| {
            // permutation fixing 0 so the sequence stays in [0,1)
            let mut digits: Vec<u32> = (1..base).collect();
            digits.shuffle(rng);
            let mut perm = Vec::with_capacity(base as usize);
            perm.push(0);
            perm.extend(digits);
            perm
        })
        .collect();
    (0..n)
        .map(|i| {
            (0..dims)
                .map(|d| {
                    let base = PRIMES[d] as u64;
                    let perm = &perms[d];
                    let mut value = 0.0;
                    let mut denom = 1.0;
                    let mut k = (i + 1) as u64;
                    while k > 0 {
                        denom *= base as f64;
                        value += perm[(k % base) as usize] as f64 / denom;
                        k /= base;
                    }
                    value
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct InitialSample {
    pub points: Vec<DesignPoint>,
    /// Unit coordinates aligned with `points`.
    pub unit: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

fn scale_into_box(point: &mut [f64], boxes: &[(f64, f64)]) {
    for (u, (lo, hi)) in point.iter_mut().zip(boxes) {
        *u = lo + *u * (hi - lo);
    }
}

/// Hybrid initial sampling: `ceil(alpha*n)` Latin hypercube points inside
/// the pruned sub-box, the rest Latin hypercube over the full box with
/// rejection of points falling inside the sub-box. After `100*n` rejections
/// the complement is treated as empty and plain full-box sampling fills the
/// remainder (with a warning). Pairwise ratio constraints are repaired by
/// resampling the offending coordinates, capped at 100 tries per point.
pub fn initial_sample(
    space: &DesignSpace,
    n: usize,
    alpha: f64,
    rng: &mut ChaCha12Rng,
) -> Result<InitialSample, SpaceError> {
    assert!(n >= 1, "initial sample size must be >= 1");
    assert!((0.0..=1.0).contains(&alpha), "alpha must be in [0,1]");
    let dims = space.free_dim();
    let mut warnings = Vec::new();

    let (n_pruned, n_complement) = match space.pruned_unit_box() {
        Some(_) => {
            let p = (alpha * n as f64).ceil() as usize;
            (p.min(n), n - p.min(n))
        }
        None => (n, 0),
    };

    let mut unit: Vec<Vec<f64>> = Vec::with_capacity(n);

    if let Some(boxes) = space.pruned_unit_box() {
        let boxes = boxes.to_vec();
        let mut inside = latin_hypercube(rng, n_pruned, dims);
        for point in &mut inside {
            scale_into_box(point, &boxes);
        }
        unit.extend(inside);

        // Complement: full-box LHS with rejection of in-box points.
        let mut rejected = 0usize;
        let cap = 100 * n;
        let mut exhausted = false;
        while unit.len() < n_pruned + n_complement {
            let need = n_pruned + n_complement - unit.len();
            let batch = latin_hypercube(rng, need.max(4), dims);
            for point in batch {
                if unit.len() == n_pruned + n_complement {
                    break;
                }
                if space.unit_in_pruned(&point) {
                    rejected += 1;
                    if rejected > cap {
                        exhausted = true;
                        break;
                    }
                } else {
                    unit.push(point);
                }
            }
            if exhausted {
                break;
            }
        }
        if exhausted {
            warnings.push(format!(
                "pruned box nearly covers the design space ({rejected} rejections); \
                 falling back to plain full-box sampling for the remainder"
            ));
            let remainder = n - unit.len();
            unit.extend(latin_hypercube(rng, remainder, dims));
        }
    } else {
        unit.extend(latin_hypercube(rng, n, dims));
    }

    // Ratio-constraint repair by coordinate resampling.
    if !space.ratio_constraints.is_empty() {
        let free = space.free_names();
        for point in &mut unit {
            let mut tries = 0;
            loop {
                let raw = space.expand(point);
                let violated: Vec<usize> = space
                    .ratio_constraints
                    .iter()
                    .enumerate()
                    .filter(|(_, rc)| !rc.satisfied(&raw))
                    .map(|(i, _)| i)
                    .collect();
                if violated.is_empty() || tries >= 100 {
                    if !violated.is_empty() {
                        warnings.push(
                            "a sample still violates a ratio constraint after 100 tries".into(),
                        );
                    }
                    break;
                }
                for vi in violated {
                    let rc = &space.ratio_constraints[vi];
                    for name in [&rc.num, &rc.den] {
                        if let Some(pos) = free.iter().position(|f| f == name) {
                            point[pos] = rng.gen_range(0.0..1.0);
                        }
                    }
                }
                tries += 1;
            }
        }
    }

    let points = unit
        .iter()
        .map(|u| DesignPoint {
            values: space.expand(u),
            provenance: Provenance::InitSample,
        })
        .collect();
    Ok(InitialSample {
        points,
        unit,
        warnings,
    })
}
