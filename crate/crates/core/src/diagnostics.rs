//! Exhaustive search over binary vectors and restricted-isometry estimates.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::convex::stack_channels;
use crate::linalg;
use crate::model::{self, MeasurementSet, ModelError};

/// Largest `N` accepted by the exhaustive search.
pub const ORACLE_MAX_N: usize = 20;

/// Exact isometry constants are computed when at most this many supports exist.
pub const EXACT_SUPPORT_LIMIT: u128 = 100_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("exhaustive search limited to N <= {max}, got {n}")]
    TooLarge { n: usize, max: usize },
    #[error("sparsity {s} exceeds N = {n}")]
    SparsityTooLarge { s: usize, n: usize },
    #[error("epsilon must be finite and nonnegative")]
    NegativeEpsilon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleOutcome {
    pub x: Vec<bool>,
    /// Number of feasible vectors sharing the minimal weight (1 means unique).
    pub ties: usize,
}

/// Feasible minimal-weight binary vector, lexicographically smallest among ties.
pub fn brute_force_oracle(ms: &MeasurementSet, epsilon: f64) -> Result<Option<Vec<bool>>, DiagnosticsError> {
    Ok(brute_force_oracle_detailed(ms, epsilon)?.map(|o| o.x))
}

/// As [`brute_force_oracle`] but also counts ties. Channels with a known precision
/// are scaled by its square root, the others enter unscaled.
pub fn brute_force_oracle_detailed(ms: &MeasurementSet, epsilon: f64) -> Result<Option<OracleOutcome>, DiagnosticsError> {
    model::validate(ms)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(DiagnosticsError::NegativeEpsilon);
    }
    let n = ms.n();
    if n > ORACLE_MAX_N {
        return Err(DiagnosticsError::TooLarge { n, max: ORACLE_MAX_N });
    }
    let beta: Vec<f64> = ms.channels().iter().map(|c| c.beta().map_or(1.0, |b| b.get())).collect();
    let (a, y) = stack_channels(ms, &beta);
    // Accept ‖Φx − y‖ ≤ ε with a small slack for rounding in the running residual.
    let slack = 1e-9 * (1.0 + linalg::norm2(&y));
    let limit = (epsilon + slack) * (epsilon + slack);

    let mut r: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut mask: u32 = 0;
    let mut best: Option<(u32, u32)> = None; // (mask, weight)
    let mut ties = 0usize;
    let mut consider = |mask: u32, r: &[f64]| {
        if linalg::dot(r, r) > limit {
            return;
        }
        let w = mask.count_ones();
        match best {
            Some((_, bw)) if w > bw => {}
            Some((bm, bw)) if w == bw => {
                ties += 1;
                if lex_less(mask, bm) {
                    best = Some((mask, w));
                }
            }
            _ => {
                best = Some((mask, w));
                ties = 1;
            }
        }
    };
    consider(mask, &r);
    for k in 1u64..(1u64 << n) {
        let j = k.trailing_zeros() as usize;
        let sign = if mask & (1 << j) == 0 { 1.0 } else { -1.0 };
        mask ^= 1 << j;
        for (ri, ci) in r.iter_mut().zip(linalg::column(&a, j)) {
            *ri += sign * ci;
        }
        consider(mask, &r);
    }
    Ok(best.map(|(m, _)| OracleOutcome { x: (0..n).map(|j| m & (1 << j) != 0).collect(), ties }))
}

/// Vectors are compared entry by entry from index 0; bit `j` holds entry `j`.
fn lex_less(a: u32, b: u32) -> bool {
    let diff = a ^ b;
    diff != 0 && b & (diff & diff.wrapping_neg()) != 0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RipEstimate {
    /// Standard isometry constant; exact when `delta_s_exact`, otherwise a lower
    /// bound from sampled supports.
    pub delta_s: f64,
    pub delta_s_exact: bool,
    /// Lower bound on the bounded isometry constant from sampled vectors with
    /// entries in [−1, 1].
    pub delta_s_b_lower: f64,
    /// `4√(1+δ) / (1 − (√2+1)δ)` at `delta_s_b_lower`; `None` when δ ≥ √2 − 1.
    pub c_bound: Option<f64>,
}

pub fn error_bound_constant(delta: f64) -> Option<f64> {
    let sqrt2 = 2.0f64.sqrt();
    if delta >= sqrt2 - 1.0 {
        return None;
    }
    Some(4.0 * (1.0 + delta).sqrt() / (1.0 - (sqrt2 + 1.0) * delta))
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > u64::MAX as u128 {
            return c;
        }
    }
    c
}

fn support_deviation(gram: &DMatrix<f64>, support: &[usize]) -> f64 {
    let k = support.len();
    let sub = DMatrix::from_fn(k, k, |a, b| gram[(support[a], support[b])]);
    let eig = SymmetricEigen::new(sub).eigenvalues;
    eig.iter().fold(0.0f64, |d, &l| d.max((l - 1.0).abs()))
}

/// Advances `idx` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for t in i + 1..k {
                idx[t] = idx[t - 1] + 1;
            }
            return true;
        }
    }
    false
}

pub fn estimate_rip_constants(phi: &DMatrix<f64>, s: usize, samples: usize, seed: u64) -> Result<RipEstimate, DiagnosticsError> {
    let n = phi.ncols();
    if s > n {
        return Err(DiagnosticsError::SparsityTooLarge { s, n });
    }
    if s == 0 {
        return Ok(RipEstimate { delta_s: 0.0, delta_s_exact: true, delta_s_b_lower: 0.0, c_bound: error_bound_constant(0.0) });
    }
    let gram = phi.transpose() * phi;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = binomial(n, s);
    let (delta_s, exact) = if count <= EXACT_SUPPORT_LIMIT {
        let mut idx: Vec<usize> = (0..s).collect();
        let mut d = support_deviation(&gram, &idx);
        while next_combination(&mut idx, n) {
            d = d.max(support_deviation(&gram, &idx));
        }
        (d, true)
    } else {
        let mut d = 0.0f64;
        for _ in 0..samples.max(1) {
            let mut sup = index::sample(&mut rng, n, s).into_vec();
            sup.sort_unstable();
            d = d.max(support_deviation(&gram, &sup));
        }
        (d, false)
    };

    let mut x = vec![0.0; n];
    let mut px = vec![0.0; phi.nrows()];
    let mut lower = 0.0f64;
    for _ in 0..samples {
        x.iter_mut().for_each(|v| *v = 0.0);
        for j in index::sample(&mut rng, n, s) {
            x[j] = rng.gen_range(-1.0..=1.0);
        }
        let nx = linalg::dot(&x, &x);
        if nx == 0.0 {
            continue;
        }
        linalg::mul_vec(phi, &x, &mut px);
        lower = lower.max((linalg::dot(&px, &px) / nx - 1.0).abs());
    }
    Ok(RipEstimate { delta_s, delta_s_exact: exact, delta_s_b_lower: lower, c_bound: error_bound_constant(lower) })
}
