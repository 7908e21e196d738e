//! Box-relaxed l1 recovery: `min 1ᵀx  s.t. ‖Ax − b‖₂ ≤ ε, 0 ≤ x ≤ 1`, and the
//! multi-channel EM loop that re-estimates each channel's noise precision.
//!
//! The inner solver is over-relaxed ADMM on the splitting `x = z` (box copy),
//! `A x = v` (ball copy). Both penalties share one `ρ`, so the x-step matrix
//! `I + AᵀA` does not depend on `ρ` and is factored once per call. With `ε = 0`
//! the ball becomes the affine set `{A x = b}` and the x-step is an exact
//! least-squares projection onto it.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, LinalgError, SpdFactor};
use crate::model::{self, MeasurementSet, ModelError, PriorConfig, RecoveryResult};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConvexError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("dimension mismatch: A is {rows}x{cols}, b has length {len}")]
    DimensionMismatch { rows: usize, cols: usize, len: usize },
    #[error("invalid solver setting: {0}")]
    InvalidConfig(&'static str),
    #[error("constraint set is empty: residual {residual:e} exceeds radius {epsilon:e}")]
    Infeasible { residual: f64, epsilon: f64 },
    #[error("every estimated channel has zero residual; noise precision is unbounded")]
    DegenerateResidual,
    #[error("linear algebra failure: {0}")]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexSolverConfig {
    /// Initial ADMM penalty.
    pub admm_rho: f64,
    pub over_relaxation: f64,
    /// Residual balancing of the penalty (the x-step factor is unaffected).
    pub adaptive_rho: bool,
    pub max_inner_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub max_outer_iters: usize,
    /// ℓ∞ change of x between outer iterations that ends the EM loop.
    pub outer_tol: f64,
    pub epsilon_override: Option<f64>,
    /// Precision assigned to a channel whose residual vanishes.
    pub beta_cap: f64,
}

impl Default for ConvexSolverConfig {
    fn default() -> Self {
        Self {
            admm_rho: 1.0,
            over_relaxation: 1.8,
            adaptive_rho: true,
            max_inner_iters: 20_000,
            primal_tol: 1e-7,
            dual_tol: 1e-7,
            max_outer_iters: 50,
            outer_tol: 1e-4,
            epsilon_override: None,
            beta_cap: 1e12,
        }
    }
}

impl ConvexSolverConfig {
    pub fn validate(&self) -> Result<(), ConvexError> {
        let ok = self.admm_rho > 0.0
            && self.over_relaxation > 0.0
            && self.over_relaxation < 2.0
            && self.primal_tol > 0.0
            && self.dual_tol > 0.0
            && self.outer_tol > 0.0
            && self.beta_cap > 0.0
            && self.max_inner_iters >= 1
            && self.max_outer_iters >= 1;
        if !ok {
            return Err(ConvexError::InvalidConfig("tolerances and penalties must be positive, caps at least 1"));
        }
        if let Some(e) = self.epsilon_override {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(ConvexError::InvalidConfig("epsilon override must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

/// Result of one inner solve. `x` lies in the box exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxL1Solution {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// ‖A x − b‖₂ at the returned point.
    pub constraint_residual: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
}

/// ADMM iterate carried between EM iterations.
#[derive(Debug, Clone, Default)]
struct WarmStart {
    z: Vec<f64>,
    u: Vec<f64>,
    rho: f64,
}

pub fn solve_box_l1(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    epsilon: f64,
    cfg: &ConvexSolverConfig,
) -> Result<BoxL1Solution, ConvexError> {
    solve_with_warm_start(a, b.as_slice(), epsilon, cfg, &mut WarmStart::default())
}

fn solve_with_warm_start(
    a: &DMatrix<f64>,
    b: &[f64],
    epsilon: f64,
    cfg: &ConvexSolverConfig,
    warm: &mut WarmStart,
) -> Result<BoxL1Solution, ConvexError> {
    cfg.validate()?;
    let (m, n) = a.shape();
    if b.len() != m {
        return Err(ConvexError::DimensionMismatch { rows: m, cols: n, len: b.len() });
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(ConvexError::InvalidConfig("epsilon must be finite and nonnegative"));
    }
    let b_norm = linalg::norm2(b);
    if b_norm <= epsilon {
        // The origin is feasible and minimises 1ᵀx over the box.
        return Ok(finish(a, b, vec![0.0; n], true, 0, 0.0, 0.0));
    }
    if warm.z.len() != n {
        warm.z = vec![0.0; n];
        warm.u = vec![0.0; n];
        warm.rho = cfg.admm_rho;
    }
    if epsilon == 0.0 {
        if m >= n {
            return solve_overdetermined_equality(a, b, cfg);
        }
        solve_affine(a, b, cfg, warm)
    } else {
        // The ball iteration is not invariant to the scale of A; work with unit
        // root-mean-square column norm.
        let scale = (a.norm_squared() / n as f64).sqrt();
        if scale > 0.0 && (scale - 1.0).abs() > 1e-12 {
            let inv = 1.0 / scale;
            let a_s = a * inv;
            let b_s: Vec<f64> = b.iter().map(|v| v * inv).collect();
            match solve_ball(&a_s, &b_s, epsilon * inv, cfg, warm) {
                Ok(sol) => Ok(finish(a, b, sol.x, sol.converged, sol.iterations, sol.primal_residual, sol.dual_residual)),
                Err(ConvexError::Infeasible { residual, .. }) => {
                    Err(ConvexError::Infeasible { residual: residual * scale, epsilon })
                }
                Err(e) => Err(e),
            }
        } else {
            solve_ball(a, b, epsilon, cfg, warm)
        }
    }
}

fn finish(
    a: &DMatrix<f64>,
    b: &[f64],
    x: Vec<f64>,
    converged: bool,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
) -> BoxL1Solution {
    let constraint_residual = residual_norm(a, b, &x);
    let objective = x.iter().sum();
    BoxL1Solution { x, converged, iterations, constraint_residual, primal_residual, dual_residual, objective }
}

fn residual_norm(a: &DMatrix<f64>, b: &[f64], x: &[f64]) -> f64 {
    let mut r = vec![0.0; a.nrows()];
    linalg::mul_vec(a, x, &mut r);
    r.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn clamp_box(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Rows ≥ columns with `ε = 0`: the affine set is at most one point.
fn solve_overdetermined_equality(
    a: &DMatrix<f64>,
    b: &[f64],
    cfg: &ConvexSolverConfig,
) -> Result<BoxL1Solution, ConvexError> {
    let n = a.ncols();
    let tol = cfg.primal_tol * (1.0 + linalg::norm2(b));
    let normal = a.transpose() * a;
    let factor = SpdFactor::new(normal)?;
    let mut x = vec![0.0; n];
    linalg::mul_t_vec(a, b, &mut x);
    factor.solve_in_place(&mut x);
    let boxed: Vec<f64> = x.iter().map(|&v| clamp_box(v)).collect();
    let res = residual_norm(a, b, &boxed);
    if res > tol {
        return Err(ConvexError::Infeasible { residual: res, epsilon: 0.0 });
    }
    Ok(finish(a, b, boxed, true, 1, 0.0, 0.0))
}

/// Residual balancing shared by both ADMM variants. Returns the factor by which
/// the scaled duals must be multiplied.
fn rebalance(rho: &mut f64, primal: f64, dual: f64) -> f64 {
    const MU: f64 = 10.0;
    const TAU: f64 = 2.0;
    if primal > MU * dual && *rho < 1e8 {
        *rho *= TAU;
        1.0 / TAU
    } else if dual > MU * primal && *rho > 1e-8 {
        *rho /= TAU;
        TAU
    } else {
        1.0
    }
}

const CHECK_EVERY: usize = 10;
const REBALANCE_EVERY: usize = 50;

fn solve_affine(
    a: &DMatrix<f64>,
    b: &[f64],
    cfg: &ConvexSolverConfig,
    warm: &mut WarmStart,
) -> Result<BoxL1Solution, ConvexError> {
    let (m, n) = a.shape();
    let gram = linalg::outer_gram(a, 0.0);
    let factor = match SpdFactor::new(gram.clone()) {
        Ok(f) => f,
        Err(_) => {
            // Rank-deficient rows: a tiny ridge keeps the projection well defined.
            let scale = (0..m).map(|i| gram[(i, i)]).sum::<f64>() / m as f64;
            SpdFactor::new(linalg::outer_gram(a, 1e-12 * scale.max(1e-300)))?
        }
    };
    let alpha = cfg.over_relaxation;
    let b_norm = linalg::norm2(b);
    let mut rho = warm.rho;
    let z = &mut warm.z;
    let u = &mut warm.u;
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut t = vec![0.0; m];
    let mut z_prev = z.clone();
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    let mut polisher = Polisher::new(a, b, 0.0, cfg);

    while iterations < cfg.max_inner_iters {
        iterations += 1;
        let inv_rho = 1.0 / rho;
        for j in 0..n {
            v[j] = z[j] - u[j] - inv_rho;
        }
        // x = v − Aᵀ (A Aᵀ)⁻¹ (A v − b)
        linalg::mul_vec(a, &v, &mut t);
        for (ti, bi) in t.iter_mut().zip(b) {
            *ti -= bi;
        }
        factor.solve_in_place(&mut t);
        linalg::mul_t_vec(a, &t, &mut x);
        for j in 0..n {
            x[j] = v[j] - x[j];
        }
        z_prev.copy_from_slice(z);
        for j in 0..n {
            let xr = alpha * x[j] + (1.0 - alpha) * z_prev[j];
            z[j] = clamp_box(xr + u[j]);
            u[j] += xr - z[j];
        }
        if iterations % CHECK_EVERY == 0 {
            let r2: f64 = x.iter().zip(z.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let s = rho * z.iter().zip(&z_prev).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
            let scale_p = 1.0 + linalg::norm2(&x).max(linalg::norm2(z));
            let scale_d = 1.0 + rho * linalg::norm2(u);
            primal = r2 / scale_p;
            dual = s / scale_d;
            if primal <= cfg.primal_tol && dual <= cfg.dual_tol {
                let res = residual_norm(a, b, z);
                if res <= cfg.primal_tol * (1.0 + b_norm) {
                    converged = true;
                    break;
                }
            }
            if iterations % POLISH_EVERY == 0 {
                let y: Vec<f64> = t.iter().map(|v| -rho * v).collect();
                if let Some(p) = polisher.attempt(z, &y) {
                    z.copy_from_slice(&p);
                    converged = true;
                    break;
                }
            }
            if cfg.adaptive_rho && iterations % REBALANCE_EVERY == 0 {
                let f = rebalance(&mut rho, primal, dual);
                u.iter_mut().for_each(|w| *w *= f);
            }
        }
    }
    warm.rho = rho;
    let out = z.clone();
    let sol = finish(a, b, out, converged, iterations, primal, dual);
    if !converged && sol.constraint_residual > cfg.primal_tol.sqrt() * (1.0 + b_norm) {
        return Err(ConvexError::Infeasible { residual: sol.constraint_residual, epsilon: 0.0 });
    }
    Ok(sol)
}

const POLISH_EVERY: usize = 50;

/// Exact vertex recovery for the equality-constrained problem.
///
/// Entries of the ADMM iterate are split into those at 0, at 1 and free; the free
/// block is solved by least squares and accepted only if the result is feasible
/// and the duality gap against the (corrected) ADMM multiplier is below tolerance.
struct Polisher<'a> {
    a: &'a DMatrix<f64>,
    b: &'a [f64],
    epsilon: f64,
    primal_tol: f64,
    gap_tol: f64,
    last: Vec<u8>,
}

impl<'a> Polisher<'a> {
    fn new(a: &'a DMatrix<f64>, b: &'a [f64], epsilon: f64, cfg: &ConvexSolverConfig) -> Self {
        let primal_tol = cfg.primal_tol * (1.0 + linalg::norm2(b));
        Self { a, b, epsilon, primal_tol, gap_tol: cfg.dual_tol, last: Vec::new() }
    }

    fn attempt(&mut self, z: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        for delta in [1e-3, 1e-6] {
            let class: Vec<u8> = z
                .iter()
                .map(|&v| if v <= delta { 0 } else if v >= 1.0 - delta { 2 } else { 1 })
                .collect();
            if class == self.last {
                continue;
            }
            let found = if self.epsilon == 0.0 { self.try_split(&class, y) } else { self.try_ball(&class) };
            self.last = class;
            if found.is_some() {
                return found;
            }
        }
        None
    }

    fn try_split(&self, class: &[u8], y: &[f64]) -> Option<Vec<f64>> {
        let (m, n) = self.a.shape();
        let free: Vec<usize> = (0..n).filter(|&j| class[j] == 1).collect();
        let k = free.len();
        if k > m {
            return None;
        }
        let mut x: Vec<f64> = class.iter().map(|&c| if c == 2 { 1.0 } else { 0.0 }).collect();
        let mut y = y.to_vec();
        if k > 0 {
            let af = DMatrix::from_fn(m, k, |i, c| self.a[(i, free[c])]);
            let g = SpdFactor::new(af.transpose() * &af).ok()?;
            let mut r = self.b.to_vec();
            for j in (0..n).filter(|&j| class[j] == 2) {
                for (ri, ci) in r.iter_mut().zip(linalg::column(self.a, j)) {
                    *ri -= ci;
                }
            }
            let mut xf = vec![0.0; k];
            linalg::mul_t_vec(&af, &r, &mut xf);
            g.solve_in_place(&mut xf);
            for (c, &j) in free.iter().enumerate() {
                if !(-1e-9..=1.0 + 1e-9).contains(&xf[c]) {
                    return None;
                }
                x[j] = clamp_box(xf[c]);
            }
            // Make the free reduced costs vanish: y += A_F (A_FᵀA_F)⁻¹ (1 − A_Fᵀ y).
            let mut e = vec![0.0; k];
            linalg::mul_t_vec(&af, &y, &mut e);
            e.iter_mut().for_each(|v| *v = 1.0 - *v);
            g.solve_in_place(&mut e);
            let mut dy = vec![0.0; m];
            linalg::mul_vec(&af, &e, &mut dy);
            for (yi, d) in y.iter_mut().zip(dy) {
                *yi += d;
            }
        }
        if residual_norm(self.a, self.b, &x) > self.primal_tol {
            return None;
        }
        let mut aty = vec![0.0; n];
        linalg::mul_t_vec(self.a, &y, &mut aty);
        let dual_obj = linalg::dot(self.b, &y) - aty.iter().map(|&v| (v - 1.0).max(0.0)).sum::<f64>();
        let primal_obj: f64 = x.iter().sum();
        let gap = primal_obj - dual_obj;
        (gap <= self.gap_tol * (1.0 + primal_obj.abs())).then_some(x)
    }
}

impl Polisher<'_> {
    /// Ball case. On the free block the optimum is `x_F = x_ls − t G⁻¹1` with
    /// `G = A_FᵀA_F`, `x_ls` the least-squares point and `t` chosen so that the
    /// residual lies on the sphere; the bound entries must then satisfy the sign
    /// conditions of the KKT system.
    fn try_ball(&self, class: &[u8]) -> Option<Vec<f64>> {
        let (m, n) = self.a.shape();
        let free: Vec<usize> = (0..n).filter(|&j| class[j] == 1).collect();
        let k = free.len();
        if k == 0 || k > m {
            return None;
        }
        let mut r = self.b.to_vec();
        for j in (0..n).filter(|&j| class[j] == 2) {
            for (ri, ci) in r.iter_mut().zip(linalg::column(self.a, j)) {
                *ri -= ci;
            }
        }
        let af = DMatrix::from_fn(m, k, |i, c| self.a[(i, free[c])]);
        let g = SpdFactor::new(af.transpose() * &af).ok()?;
        let mut x_ls = vec![0.0; k];
        linalg::mul_t_vec(&af, &r, &mut x_ls);
        g.solve_in_place(&mut x_ls);
        let mut fit = vec![0.0; m];
        linalg::mul_vec(&af, &x_ls, &mut fit);
        let ls_res2: f64 = fit.iter().zip(&r).map(|(p, q)| (p - q) * (p - q)).sum();
        let mut w = vec![1.0; k];
        g.solve_in_place(&mut w);
        let curv: f64 = w.iter().sum();
        let slack = self.epsilon * self.epsilon - ls_res2;
        if !(slack > 0.0 && curv > 0.0) {
            return None;
        }
        let t = (slack / curv).sqrt();
        let mut x: Vec<f64> = class.iter().map(|&c| if c == 2 { 1.0 } else { 0.0 }).collect();
        for (c, &j) in free.iter().enumerate() {
            let v = x_ls[c] - t * w[c];
            if !(-1e-9..=1.0 + 1e-9).contains(&v) {
                return None;
            }
            x[j] = clamp_box(v);
        }
        let mut res = vec![0.0; m];
        linalg::mul_vec(self.a, &x, &mut res);
        for (ri, bi) in res.iter_mut().zip(self.b) {
            *ri -= bi;
        }
        if linalg::norm2(&res) > self.epsilon + self.primal_tol {
            return None;
        }
        // Stationarity 1 + λ Aᵀres = 0 on the free block, with λ = 1/t.
        let lambda = 1.0 / t;
        let mut g_all = vec![0.0; n];
        linalg::mul_t_vec(self.a, &res, &mut g_all);
        let ok = (0..n).all(|j| {
            let gj = 1.0 + lambda * g_all[j];
            match class[j] {
                0 => gj >= -self.gap_tol,
                2 => gj <= self.gap_tol,
                _ => gj.abs() <= self.gap_tol.sqrt(),
            }
        });
        ok.then_some(x)
    }
}

/// The x-step `(I + AᵀA) x = r`, returning `x` and `A x`.
enum XStep {
    /// Woodbury form through the `M×M` factor of `I + A Aᵀ`.
    Rows(SpdFactor),
    /// Direct `N×N` factor of `I + AᵀA`.
    Cols(SpdFactor),
}

impl XStep {
    fn new(a: &DMatrix<f64>) -> Result<Self, ConvexError> {
        let (m, n) = a.shape();
        if m <= n {
            Ok(Self::Rows(SpdFactor::new(linalg::outer_gram(a, 1.0))?))
        } else {
            let mut g = a.transpose() * a;
            for i in 0..n {
                g[(i, i)] += 1.0;
            }
            Ok(Self::Cols(SpdFactor::new(g)?))
        }
    }

    fn apply(&self, a: &DMatrix<f64>, r: &[f64], x: &mut [f64], ax: &mut [f64]) {
        match self {
            Self::Rows(f) => {
                // (I + AᵀA)⁻¹ r = r − Aᵀ (I + AAᵀ)⁻¹ A r, and A x = (I + AAᵀ)⁻¹ A r.
                linalg::mul_vec(a, r, ax);
                f.solve_in_place(ax);
                linalg::mul_t_vec(a, ax, x);
                for (xi, ri) in x.iter_mut().zip(r) {
                    *xi = ri - *xi;
                }
            }
            Self::Cols(f) => {
                x.copy_from_slice(r);
                f.solve_in_place(x);
                linalg::mul_vec(a, x, ax);
            }
        }
    }
}

fn project_ball(p: &mut [f64], center: &[f64], radius: f64) {
    let d: f64 = p.iter().zip(center).map(|(x, c)| (x - c) * (x - c)).sum::<f64>().sqrt();
    if d > radius {
        let s = radius / d;
        for (x, c) in p.iter_mut().zip(center) {
            *x = c + (*x - c) * s;
        }
    }
}

fn solve_ball(
    a: &DMatrix<f64>,
    b: &[f64],
    epsilon: f64,
    cfg: &ConvexSolverConfig,
    warm: &mut WarmStart,
) -> Result<BoxL1Solution, ConvexError> {
    let (m, n) = a.shape();
    let step = XStep::new(a)?;
    let alpha = cfg.over_relaxation;
    let b_norm = linalg::norm2(b);
    let mut rho = warm.rho;
    let z = &mut warm.z;
    let u = &mut warm.u;
    let mut v = vec![0.0; m];
    linalg::mul_vec(a, z, &mut v);
    project_ball(&mut v, b, epsilon);
    let mut w = vec![0.0; m];
    let mut r = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut ax = vec![0.0; m];
    let mut z_prev = z.clone();
    let mut v_prev = v.clone();
    let mut tmp_n = vec![0.0; n];
    let mut dv = vec![0.0; m];
    let (mut primal, mut dual) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut converged = false;
    let mut polisher = Polisher::new(a, b, epsilon, cfg);

    while iterations < cfg.max_inner_iters {
        iterations += 1;
        let inv_rho = 1.0 / rho;
        // r = (z − u) + Aᵀ (v − w) − 1/ρ
        for i in 0..m {
            dv[i] = v[i] - w[i];
        }
        linalg::mul_t_vec(a, &dv, &mut r);
        for j in 0..n {
            r[j] += z[j] - u[j] - inv_rho;
        }
        step.apply(a, &r, &mut x, &mut ax);
        z_prev.copy_from_slice(z);
        v_prev.copy_from_slice(&v);
        for j in 0..n {
            let xr = alpha * x[j] + (1.0 - alpha) * z_prev[j];
            z[j] = clamp_box(xr + u[j]);
            u[j] += xr - z[j];
        }
        for i in 0..m {
            let axr = alpha * ax[i] + (1.0 - alpha) * v_prev[i];
            v[i] = axr + w[i];
        }
        project_ball(&mut v, b, epsilon);
        for i in 0..m {
            let axr = alpha * ax[i] + (1.0 - alpha) * v_prev[i];
            w[i] += axr - v[i];
        }
        if iterations % CHECK_EVERY == 0 {
            let rp = x.iter().zip(z.iter()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
                + ax.iter().zip(&v).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
            for i in 0..m {
                dv[i] = v[i] - v_prev[i];
            }
            linalg::mul_t_vec(a, &dv, &mut tmp_n);
            let sd = tmp_n
                .iter()
                .zip(z.iter().zip(&z_prev))
                .map(|(t, (p, q))| {
                    let e = t + p - q;
                    e * e
                })
                .sum::<f64>()
                .sqrt()
                * rho;
            linalg::mul_t_vec(a, &w, &mut tmp_n);
            let dual_scale = tmp_n.iter().zip(u.iter()).map(|(t, q)| (t + q) * (t + q)).sum::<f64>().sqrt();
            let scale_p = 1.0
                + (linalg::dot(&x, &x) + linalg::dot(&ax, &ax))
                    .sqrt()
                    .max((linalg::dot(z, z) + linalg::dot(&v, &v)).sqrt());
            primal = rp.sqrt() / scale_p;
            dual = sd / (1.0 + rho * dual_scale);
            if primal <= cfg.primal_tol && dual <= cfg.dual_tol {
                let res = residual_norm(a, b, z);
                if res <= epsilon + cfg.primal_tol * (1.0 + b_norm) {
                    converged = true;
                    break;
                }
            }
            if iterations % POLISH_EVERY == 0 {
                if let Some(p) = polisher.attempt(z, &[]) {
                    z.copy_from_slice(&p);
                    converged = true;
                    break;
                }
            }
            if cfg.adaptive_rho && iterations % REBALANCE_EVERY == 0 {
                let f = rebalance(&mut rho, primal, dual);
                u.iter_mut().for_each(|q| *q *= f);
                w.iter_mut().for_each(|q| *q *= f);
            }
        }
    }
    warm.rho = rho;
    let sol = finish(a, b, z.clone(), converged, iterations, primal, dual);
    if !converged && sol.constraint_residual > epsilon + cfg.primal_tol.sqrt() * (1.0 + b_norm) {
        return Err(ConvexError::Infeasible { residual: sol.constraint_residual, epsilon });
    }
    Ok(sol)
}

/// State reported after each outer iteration of [`recover_convex_em_observed`].
#[derive(Debug, Clone, Copy)]
pub struct OuterIterate<'a> {
    pub iteration: usize,
    pub x_star: &'a [f64],
    pub beta: &'a [f64],
    pub epsilon: f64,
    pub inner: &'a BoxL1Solution,
}

pub fn recover_convex_em(
    ms: &MeasurementSet,
    priors: &PriorConfig,
    cfg: &ConvexSolverConfig,
) -> Result<RecoveryResult, ConvexError> {
    recover_convex_em_observed(ms, priors, cfg, |_| {})
}

/// Stacks `√β_l Φ_l` and `√β_l y_l` over channels.
pub fn stack_channels(ms: &MeasurementSet, beta: &[f64]) -> (DMatrix<f64>, Vec<f64>) {
    let (m, n, l) = (ms.m(), ms.n(), ms.l());
    let mut a = DMatrix::zeros(m * l, n);
    let mut b = vec![0.0; m * l];
    for (k, ch) in ms.channels().iter().enumerate() {
        let s = beta[k].sqrt();
        for j in 0..n {
            for i in 0..m {
                a[(k * m + i, j)] = s * ch.phi()[(i, j)];
            }
        }
        for i in 0..m {
            b[k * m + i] = s * ch.y()[i];
        }
    }
    (a, b)
}

/// Squared residual ‖y_l − Φ_l x‖² per channel.
pub fn channel_residuals(ms: &MeasurementSet, x: &[f64]) -> Vec<f64> {
    let mut buf = vec![0.0; ms.m()];
    ms.channels()
        .iter()
        .map(|ch| {
            linalg::mul_vec(ch.phi(), x, &mut buf);
            buf.iter().zip(ch.y().iter()).map(|(p, q)| (q - p) * (q - p)).sum()
        })
        .collect()
}

pub fn recover_convex_em_observed<F>(
    ms: &MeasurementSet,
    priors: &PriorConfig,
    cfg: &ConvexSolverConfig,
    mut observe: F,
) -> Result<RecoveryResult, ConvexError>
where
    F: FnMut(&OuterIterate<'_>),
{
    model::validate(ms)?;
    priors.validate()?;
    cfg.validate()?;
    let (m, l) = (ms.m(), ms.l());
    let mut beta: Vec<f64> = ms
        .channels()
        .iter()
        .map(|ch| ch.beta().map_or_else(|| priors.beta0.for_channel(ch), |b| b.get()))
        .collect();
    let estimated: Vec<bool> = ms.channels().iter().map(|ch| ch.beta().is_none()).collect();
    let epsilon = cfg
        .epsilon_override
        .unwrap_or(priors.epsilon_c * ((m * l) as f64).sqrt());
    let mut warm = WarmStart::default();
    let mut x_prev: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut x_last = vec![0.0; ms.n()];

    for it in 1..=cfg.max_outer_iters {
        iterations = it;
        let (a, b) = stack_channels(ms, &beta);
        let sol = match solve_with_warm_start(&a, &b, epsilon, cfg, &mut warm) {
            Ok(sol) if sol.converged || x_prev.is_none() => sol,
            // The previous iterate is feasible for the reweighted ball, so a stalled
            // inner solve means the stacked system has become ill-scaled (one
            // precision running away). Keep the last solution.
            Ok(_) | Err(ConvexError::Infeasible { .. }) if x_prev.is_some() => break,
            Ok(sol) => sol,
            Err(e) => return Err(e),
        };
        let res = channel_residuals(ms, &sol.x);
        if epsilon > 0.0 && estimated.iter().any(|&e| e) {
            let all_zero = res.iter().zip(&estimated).filter(|(_, &e)| e).all(|(&r, _)| r == 0.0);
            if all_zero {
                return Err(ConvexError::DegenerateResidual);
            }
        }
        for k in 0..l {
            if estimated[k] {
                beta[k] = if res[k] > 0.0 { (m as f64 / res[k]).min(cfg.beta_cap) } else { cfg.beta_cap };
            }
        }
        trace.push(sol.objective);
        observe(&OuterIterate { iteration: it, x_star: &sol.x, beta: &beta, epsilon, inner: &sol });
        let done = match &x_prev {
            Some(p) => linalg::max_abs_diff(p, &sol.x) < cfg.outer_tol,
            // With ε = 0 the feasible set does not depend on the precisions.
            None => epsilon == 0.0 || !estimated.iter().any(|&e| e),
        };
        x_last.copy_from_slice(&sol.x);
        x_prev = Some(sol.x);
        if done {
            converged = true;
            break;
        }
    }
    Ok(RecoveryResult::build(x_last, priors.threshold, beta, iterations, trace, converged))
}
