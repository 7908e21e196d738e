//! Single-channel sparse-recovery baselines: split Bregman for the l1-regularised
//! least-squares problem and sparse Bayesian learning with per-entry variances.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use core::f64::consts::PI;
use nalgebra::{DMatrix, DVector};

use crate::linalg::{self, LinalgError, SpdFactor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("dimension mismatch: Φ is {rows}x{cols}, y has length {len}")]
    DimensionMismatch { rows: usize, cols: usize, len: usize },
    #[error("invalid baseline setting: {0}")]
    InvalidConfig(&'static str),
    #[error("no convergence after {iterations} iterations")]
    MaxItersExceeded { iterations: usize, x: Vec<f64> },
    #[error("posterior covariance solve failed")]
    IllConditioned,
}

impl From<LinalgError> for BaselineError {
    fn from(_: LinalgError) -> Self {
        Self::IllConditioned
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineConfig {
    /// l1 weight; `None` uses `0.1‖Φᵀy‖∞`.
    pub lambda_reg: Option<f64>,
    /// Split Bregman penalty; `None` uses `√(λ · mean ‖φ_j‖²)`.
    pub bregman_mu: Option<f64>,
    /// Entries whose prior variance falls below this are pruned.
    pub sbl_prune_tol: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { lambda_reg: None, bregman_mu: None, sbl_prune_tol: 1e-6, max_iters: 5000, tol: 1e-8 }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<(), BaselineError> {
        let pos = |v: Option<f64>| v.is_none_or(|x| x > 0.0 && x.is_finite());
        if !(pos(self.lambda_reg) && pos(self.bregman_mu) && self.sbl_prune_tol > 0.0 && self.tol > 0.0 && self.max_iters >= 1) {
            return Err(BaselineError::InvalidConfig("weights and tolerances must be positive, caps at least 1"));
        }
        Ok(())
    }
}

fn check_dims(phi: &DMatrix<f64>, y: &DVector<f64>) -> Result<(), BaselineError> {
    if phi.nrows() != y.len() || phi.ncols() == 0 {
        return Err(BaselineError::DimensionMismatch { rows: phi.nrows(), cols: phi.ncols(), len: y.len() });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Split Bregman: objective per iteration. SBL: log evidence per update.
    pub trace: Vec<f64>,
}

/// Default l1 weight used by the benchmark harness.
pub fn default_lambda(phi: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let mut g = vec![0.0; phi.ncols()];
    linalg::mul_t_vec(phi, y.as_slice(), &mut g);
    0.1 * linalg::norm_inf(&g)
}

/// `λ‖x‖₁ + ½‖Φx − y‖²`.
pub fn lasso_objective(phi: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, x: &[f64]) -> f64 {
    let mut r = vec![0.0; phi.nrows()];
    linalg::mul_vec(phi, x, &mut r);
    let fit: f64 = r.iter().zip(y.iter()).map(|(p, q)| (p - q) * (p - q)).sum();
    lambda * x.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * fit
}

fn shrink(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Split Bregman iterations on `min λ‖d‖₁ + ½‖Φx − y‖²  s.t.  d = x`.
pub fn split_bregman(phi: &DMatrix<f64>, y: &DVector<f64>, cfg: &BaselineConfig) -> Result<BaselineResult, BaselineError> {
    cfg.validate()?;
    check_dims(phi, y)?;
    let (m, n) = phi.shape();
    let lambda = cfg.lambda_reg.unwrap_or_else(|| default_lambda(phi, y));
    if lambda == 0.0 {
        // Φᵀy = 0: the origin satisfies the optimality condition.
        return Ok(BaselineResult { x: vec![0.0; n], iterations: 0, converged: true, trace: vec![lasso_objective(phi, y, 0.0, &vec![0.0; n])] });
    }
    let col = linalg::column_norms_sq(phi);
    let mu = cfg.bregman_mu.unwrap_or_else(|| (lambda * col.iter().sum::<f64>() / n as f64).sqrt().max(1e-300));
    // (ΦᵀΦ + μI)⁻¹ q = (q − Φᵀ (μI + ΦΦᵀ)⁻¹ Φ q) / μ
    let factor = SpdFactor::new(linalg::outer_gram(phi, mu))?;
    let mut phit_y = vec![0.0; n];
    linalg::mul_t_vec(phi, y.as_slice(), &mut phit_y);
    let mut x = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut bvec = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut t = vec![0.0; m];
    let mut tn = vec![0.0; n];
    let mut trace = Vec::new();
    let thr = lambda / mu;
    for it in 1..=cfg.max_iters {
        for j in 0..n {
            q[j] = phit_y[j] + mu * (d[j] - bvec[j]);
        }
        linalg::mul_vec(phi, &q, &mut t);
        factor.solve_in_place(&mut t);
        linalg::mul_t_vec(phi, &t, &mut tn);
        for j in 0..n {
            x[j] = (q[j] - tn[j]) / mu;
        }
        let mut change = 0.0f64;
        let mut gap = 0.0f64;
        for j in 0..n {
            let dn = shrink(x[j] + bvec[j], thr);
            change = change.max((dn - d[j]).abs());
            d[j] = dn;
            bvec[j] += x[j] - dn;
            gap = gap.max((x[j] - dn).abs());
        }
        trace.push(lasso_objective(phi, y, lambda, &d));
        if change < cfg.tol && gap < cfg.tol {
            return Ok(BaselineResult { x: d, iterations: it, converged: true, trace });
        }
    }
    Err(BaselineError::MaxItersExceeded { iterations: cfg.max_iters, x: d })
}

/// Posterior quantities for one hyperparameter setting over an active set.
struct Posterior {
    mu: Vec<f64>,
    diag: Vec<f64>,
    log_evidence: f64,
    residual_sq: f64,
}

struct SblProblem<'a> {
    phi: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    gram: DMatrix<f64>,
    phit_y: Vec<f64>,
    y_sq: f64,
}

impl<'a> SblProblem<'a> {
    fn new(phi: &'a DMatrix<f64>, y: &'a DVector<f64>) -> Self {
        let gram = phi.transpose() * phi;
        let mut phit_y = vec![0.0; phi.ncols()];
        linalg::mul_t_vec(phi, y.as_slice(), &mut phit_y);
        Self { phi, y, gram, phit_y, y_sq: y.norm_squared() }
    }

    fn posterior(&self, active: &[usize], gamma: &[f64], sigma2: f64) -> Result<Posterior, BaselineError> {
        let m = self.phi.nrows();
        let k = active.len();
        if k == 0 {
            let log_evidence = -0.5 * (m as f64 * (2.0 * PI * sigma2).ln() + self.y_sq / sigma2);
            return Ok(Posterior { mu: vec![], diag: vec![], log_evidence, residual_sq: self.y_sq });
        }
        let (mu, diag, ln_det_c, quad) = if k <= m {
            // Σ⁻¹ = ΦᵀΦ/σ² + Γ⁻¹ on the active set.
            let mut p = DMatrix::zeros(k, k);
            for (a, &i) in active.iter().enumerate() {
                for (b, &j) in active.iter().enumerate() {
                    p[(a, b)] = self.gram[(i, j)] / sigma2;
                }
                p[(a, a)] += 1.0 / gamma[i];
            }
            let f = SpdFactor::new(p)?;
            let mut mu: Vec<f64> = active.iter().map(|&i| self.phit_y[i] / sigma2).collect();
            f.solve_in_place(&mut mu);
            let eye = DMatrix::<f64>::identity(k, k);
            let diag = f.inv_quad_columns(&eye);
            let ln_det_c = m as f64 * sigma2.ln() + active.iter().map(|&i| gamma[i].ln()).sum::<f64>() + f.ln_det();
            let mut fit = 0.0;
            let mut r = self.y.as_slice().to_vec();
            for (a, &i) in active.iter().enumerate() {
                let c = linalg::column(self.phi, i);
                for (ri, ci) in r.iter_mut().zip(c) {
                    *ri -= mu[a] * ci;
                }
                fit += mu[a] * mu[a] / gamma[i];
            }
            let res = linalg::dot(&r, &r);
            (mu, diag, ln_det_c, res / sigma2 + fit)
        } else {
            // C = σ²I + Φ_A Γ Φ_Aᵀ.
            let mut scaled = DMatrix::zeros(m, k);
            let mut plain = DMatrix::zeros(m, k);
            for (a, &i) in active.iter().enumerate() {
                let c = linalg::column(self.phi, i);
                let s = gamma[i].sqrt();
                for r in 0..m {
                    scaled[(r, a)] = c[r] * s;
                    plain[(r, a)] = c[r];
                }
            }
            let f = SpdFactor::new(linalg::outer_gram(&scaled, sigma2))?;
            let mut ciy = self.y.as_slice().to_vec();
            f.solve_in_place(&mut ciy);
            let quad = linalg::dot(self.y.as_slice(), &ciy);
            let mut mu = vec![0.0; k];
            linalg::mul_t_vec(&plain, &ciy, &mut mu);
            for (a, &i) in active.iter().enumerate() {
                mu[a] *= gamma[i];
            }
            let qf = f.inv_quad_columns(&plain);
            let diag = active.iter().enumerate().map(|(a, &i)| gamma[i] - gamma[i] * gamma[i] * qf[a]).collect();
            (mu, diag, f.ln_det(), quad)
        };
        let mut r = self.y.as_slice().to_vec();
        for (a, &i) in active.iter().enumerate() {
            let c = linalg::column(self.phi, i);
            for (ri, ci) in r.iter_mut().zip(c) {
                *ri -= mu[a] * ci;
            }
        }
        let residual_sq = linalg::dot(&r, &r);
        let log_evidence = -0.5 * (m as f64 * (2.0 * PI).ln() + ln_det_c + quad);
        Ok(Posterior { mu, diag, log_evidence, residual_sq })
    }
}

/// Sparse Bayesian learning with independent zero-mean Gaussian priors.
///
/// Each step proposes the fast fixed-point update of the prior variances and noise
/// variance followed by pruning; when that proposal lowers the evidence the
/// expectation-maximisation update, which cannot lower it, is taken instead.
pub fn sbl(phi: &DMatrix<f64>, y: &DVector<f64>, cfg: &BaselineConfig) -> Result<BaselineResult, BaselineError> {
    cfg.validate()?;
    check_dims(phi, y)?;
    let (m, n) = phi.shape();
    let prob = SblProblem::new(phi, y);
    if prob.y_sq == 0.0 {
        return Ok(BaselineResult { x: vec![0.0; n], iterations: 0, converged: true, trace: vec![] });
    }
    let sigma_floor = 1e-14 * prob.y_sq / m as f64;
    let mut gamma = vec![1.0; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut sigma2 = 0.1 * prob.y_sq / m as f64;
    let mut post = prob.posterior(&active, &gamma, sigma2)?;
    let mut trace = vec![post.log_evidence];
    let slack = |l: f64| 1e-12 * (1.0 + l.abs());

    for it in 1..=cfg.max_iters {
        let g_sum: f64 = active.iter().enumerate().map(|(a, &i)| 1.0 - post.diag[a] / gamma[i]).sum();
        // Fast fixed point with pruning.
        let mut fast_gamma = gamma.clone();
        let mut fast_active = Vec::with_capacity(active.len());
        for (a, &i) in active.iter().enumerate() {
            let g = (1.0 - post.diag[a] / gamma[i]).max(1e-300);
            let v = post.mu[a] * post.mu[a] / g;
            fast_gamma[i] = v;
            if v >= cfg.sbl_prune_tol {
                fast_active.push(i);
            }
        }
        let dof = m as f64 - g_sum;
        let fast_sigma = if dof > 0.0 { (post.residual_sq / dof).max(sigma_floor) } else { sigma_floor };
        let mut next = None;
        if let Ok(p) = prob.posterior(&fast_active, &fast_gamma, fast_sigma) {
            if p.log_evidence >= post.log_evidence - slack(post.log_evidence) {
                next = Some((p, fast_active, fast_gamma, fast_sigma));
            }
        }
        let (p, new_active, new_gamma, new_sigma) = match next {
            Some(v) => v,
            None => {
                let mut em_gamma = gamma.clone();
                for (a, &i) in active.iter().enumerate() {
                    em_gamma[i] = (post.mu[a] * post.mu[a] + post.diag[a]).max(1e-300);
                }
                let em_sigma = ((post.residual_sq + sigma2 * g_sum) / m as f64).max(sigma_floor);
                let p = prob.posterior(&active, &em_gamma, em_sigma)?;
                (p, active.clone(), em_gamma, em_sigma)
            }
        };
        let mut change = (new_sigma - sigma2).abs() / sigma2;
        for &i in &active {
            let old = gamma[i];
            let new = if new_active.contains(&i) { new_gamma[i] } else { 0.0 };
            change = change.max((new - old).abs() / old.max(1.0));
        }
        trace.push(p.log_evidence);
        let fewer = new_active.len() != active.len();
        gamma = new_gamma;
        active = new_active;
        sigma2 = new_sigma;
        post = p;
        if !fewer && change < cfg.tol {
            return Ok(BaselineResult { x: scatter(n, &active, &post.mu), iterations: it, converged: true, trace });
        }
    }
    let x = scatter(n, &active, &post.mu);
    Ok(BaselineResult { x, iterations: cfg.max_iters, converged: false, trace })
}

fn scatter(n: usize, active: &[usize], mu: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for (a, &i) in active.iter().enumerate() {
        x[i] = mu[a];
    }
    x
}
