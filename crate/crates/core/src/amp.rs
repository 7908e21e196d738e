//! Message passing between a prior cluster, a central cluster and a likelihood
//! cluster, with the likelihood belief projected onto independent Bernoullis.
//!
//! The prior cluster sends the constant natural parameter `ln(B(a+1,b)/B(a,b+1))`
//! to every entry. The projection of `exp(xᵀη) Π_l p(y_l|x)` is a mean-field fit with
//! the noise precisions held fixed; the outer loop re-estimates the precisions
//! from the projected belief.

use alloc::vec;
use alloc::vec::Vec;

use crate::kernel::Coordinates;
use crate::linalg;
use crate::model::{self, MeasurementSet, ModelError, PriorConfig, RecoveryResult};
use crate::special::{ln_beta, logit, sigmoid};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AmpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite logit at entry {entry}")]
    NonFiniteLogit { entry: usize },
    #[error("expected {expected} entries, got {got}")]
    LengthMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_tol: f64,
    pub outer_tol: f64,
    /// Start each projection from the previous belief instead of the prior.
    pub warm_start: bool,
    pub beta_cap: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self { max_outer: 50, max_inner: 200, inner_tol: 1e-6, outer_tol: 1e-6, warm_start: false, beta_cap: 1e12 }
    }
}

/// Natural parameters on the two edges of the central cluster, and the belief.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMessages {
    pub eta_c_to_r: Vec<f64>,
    pub eta_c_from_r: Vec<f64>,
    pub eta_r: Vec<f64>,
}

/// Prior-cluster message `ln(B(a+1,b) / B(a,b+1))`, equal to `ln(a/b)`.
pub fn prior_message(a: f64, b: f64) -> f64 {
    ln_beta(a + 1.0, b) - ln_beta(a, b + 1.0)
}

/// Outcome of one projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub x_hat: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// `E‖y_l − Φ_l x‖²` under the projected belief, per channel.
    pub expected_sq_residual: Vec<f64>,
}

/// Factorised projection of `exp(xᵀη) Π_l N(y_l | Φ_l x, β_l⁻¹ I)` by ascending
/// coordinate sweeps starting at `x0`.
pub fn project_likelihood(
    ms: &MeasurementSet,
    beta: &[f64],
    eta: &[f64],
    x0: Vec<f64>,
    max_sweeps: usize,
    tol: f64,
) -> Result<Projection, AmpError> {
    let n = ms.n();
    if eta.len() != n || x0.len() != n {
        return Err(AmpError::LengthMismatch { got: eta.len().min(x0.len()), expected: n });
    }
    if beta.len() != ms.l() {
        return Err(AmpError::LengthMismatch { got: beta.len(), expected: ms.l() });
    }
    let mut coords = Coordinates::new(ms, x0);
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let before = coords.x_hat.clone();
        for j in 0..n {
            coords.update(beta, j, eta[j]).ok_or(AmpError::NonFiniteLogit { entry: j })?;
        }
        if linalg::max_abs_diff(&before, &coords.x_hat) < tol {
            converged = true;
            break;
        }
    }
    coords.refresh_residuals();
    let expected_sq_residual = (0..ms.l()).map(|l| coords.expected_sq_residual(l)).collect();
    Ok(Projection { x_hat: coords.x_hat, sweeps, converged, expected_sq_residual })
}

/// Report made after each outer iteration.
#[derive(Debug, Clone, Copy)]
pub struct AmpIterate<'a> {
    pub iteration: usize,
    pub x_hat: &'a [f64],
    pub beta: &'a [f64],
    pub messages: &'a ClusterMessages,
    pub inner_sweeps: usize,
}

pub fn recover_amp(ms: &MeasurementSet, priors: &PriorConfig, cfg: &AmpConfig) -> Result<RecoveryResult, AmpError> {
    recover_amp_observed(ms, priors, cfg, |_| {})
}

pub fn recover_amp_observed<F>(
    ms: &MeasurementSet,
    priors: &PriorConfig,
    cfg: &AmpConfig,
    mut observe: F,
) -> Result<RecoveryResult, AmpError>
where
    F: FnMut(&AmpIterate<'_>),
{
    model::validate(ms)?;
    priors.validate()?;
    let (n, m) = (ms.n(), ms.m() as f64);
    let eta = vec![prior_message(priors.a, priors.b); n];
    let mut beta: Vec<f64> = ms
        .channels()
        .iter()
        .map(|ch| ch.beta().map_or_else(|| priors.beta0.for_channel(ch), |b| b.get()))
        .collect();
    let prior_mean = sigmoid(eta[0]);
    let mut x_prev: Option<Vec<f64>> = None;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    let mut x_last = vec![prior_mean; n];

    while outer < cfg.max_outer {
        outer += 1;
        let x0 = match (&x_prev, cfg.warm_start) {
            (Some(p), true) => p.clone(),
            _ => vec![prior_mean; n],
        };
        let proj = project_likelihood(ms, &beta, &eta, x0, cfg.max_inner, cfg.inner_tol)?;
        for (l, ch) in ms.channels().iter().enumerate() {
            if ch.beta().is_none() {
                let q = proj.expected_sq_residual[l];
                beta[l] = if q > 0.0 { (m / q).min(cfg.beta_cap) } else { cfg.beta_cap };
            }
        }
        trace.push(proj.expected_sq_residual.iter().sum());
        let eta_r: Vec<f64> = proj.x_hat.iter().map(|&x| logit(x.clamp(1e-300, 1.0 - 1e-16))).collect();
        let messages = ClusterMessages {
            eta_c_from_r: eta_r.iter().zip(&eta).map(|(r, c)| r - c).collect(),
            eta_c_to_r: eta.clone(),
            eta_r,
        };
        observe(&AmpIterate { iteration: outer, x_hat: &proj.x_hat, beta: &beta, messages: &messages, inner_sweeps: proj.sweeps });
        let done = x_prev.as_ref().is_some_and(|p| linalg::max_abs_diff(p, &proj.x_hat) < cfg.outer_tol);
        x_last.copy_from_slice(&proj.x_hat);
        x_prev = Some(proj.x_hat);
        if done {
            converged = true;
            break;
        }
    }
    Ok(RecoveryResult::build(x_last, priors.threshold, beta, outer, trace, converged))
}
