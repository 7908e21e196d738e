//! Mean-field variational recovery.
//!
//! The posterior over noise precisions `β_l`, binary entries `x_j` and inclusion
//! probabilities `π_j` is approximated by `Π q(β_l) Π q(x_j) Π q(π_j)` with Gamma,
//! Bernoulli and Beta factors. Every update below is the exact maximiser of the
//! ELBO over one factor, so the ELBO never decreases.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use core::f64::consts::PI;

use crate::kernel::Coordinates;
use crate::linalg;
use crate::model::{self, MeasurementSet, ModelError, PriorConfig, RecoveryResult};
use crate::special::{digamma, ln_beta, ln_gamma, xlogx};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MfError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite logit at entry {entry}")]
    NonFiniteLogit { entry: usize },
    #[error("state has {got} entries, expected {expected}")]
    StateMismatch { got: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldConfig {
    pub max_sweeps: usize,
    /// ℓ∞ change of x̂ over one sweep that counts as converged.
    pub tol: f64,
    pub beta_cap: f64,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        Self { max_sweeps: 500, tol: 1e-6, beta_cap: 1e12 }
    }
}

/// Parameters of the factorised posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub x_hat: Vec<f64>,
    /// Gamma means `c̃/d̃` (or the fixed value for channels with known precision).
    pub beta_hat: Vec<f64>,
    pub a_tilde: Vec<f64>,
    pub b_tilde: Vec<f64>,
    pub elbo: f64,
}

/// Coordinate-ascent engine. [`recover_mean_field`] drives it sweep by sweep;
/// the individual steps are public so the ELBO can be checked after each one.
pub struct MeanFieldSolver<'a> {
    ms: &'a MeasurementSet,
    priors: PriorConfig,
    coords: Coordinates<'a>,
    beta_hat: Vec<f64>,
    a_tilde: Vec<f64>,
    b_tilde: Vec<f64>,
    beta_cap: f64,
}

impl<'a> MeanFieldSolver<'a> {
    pub fn new(ms: &'a MeasurementSet, priors: &PriorConfig, cfg: &MeanFieldConfig) -> Result<Self, MfError> {
        Self::with_initial(ms, priors, cfg, vec![0.5; ms.n()])
    }

    pub fn with_initial(
        ms: &'a MeasurementSet,
        priors: &PriorConfig,
        cfg: &MeanFieldConfig,
        x0: Vec<f64>,
    ) -> Result<Self, MfError> {
        model::validate(ms)?;
        priors.validate()?;
        if x0.len() != ms.n() {
            return Err(MfError::StateMismatch { got: x0.len(), expected: ms.n() });
        }
        let a_tilde = x0.iter().map(|x| x + priors.a).collect();
        let b_tilde = x0.iter().map(|x| 1.0 - x + priors.b).collect();
        let beta_hat = ms
            .channels()
            .iter()
            .map(|ch| ch.beta().map_or_else(|| priors.beta0.for_channel(ch), |b| b.get()))
            .collect();
        Ok(Self {
            ms,
            priors: *priors,
            coords: Coordinates::new(ms, x0),
            beta_hat,
            a_tilde,
            b_tilde,
            beta_cap: cfg.beta_cap,
        })
    }

    pub fn x_hat(&self) -> &[f64] {
        &self.coords.x_hat
    }

    pub fn beta_hat(&self) -> &[f64] {
        &self.beta_hat
    }

    /// Gamma update of every channel whose precision is unknown.
    pub fn update_noise(&mut self) {
        let m = self.ms.m() as f64;
        for (l, ch) in self.ms.channels().iter().enumerate() {
            if ch.beta().is_some() {
                continue;
            }
            let q = self.coords.expected_sq_residual(l);
            let shape = self.priors.c + 0.5 * m;
            let rate = self.priors.d + 0.5 * q;
            let b = shape / rate;
            self.beta_hat[l] = if b.is_finite() { b.min(self.beta_cap) } else { self.beta_cap };
        }
    }

    /// Beta update of `q(π_j)` from the current `x̂_j`.
    pub fn update_inclusion(&mut self, j: usize) {
        let x = self.coords.x_hat[j];
        self.a_tilde[j] = x + self.priors.a;
        self.b_tilde[j] = 1.0 - x + self.priors.b;
    }

    /// Bernoulli update of `q(x_j)`.
    pub fn update_entry(&mut self, j: usize) -> Result<f64, MfError> {
        // E[ln π] − E[ln(1−π)]; the ψ(ã+b̃) terms cancel.
        let prior_logit = digamma(self.a_tilde[j]) - digamma(self.b_tilde[j]);
        self.coords.update(&self.beta_hat, j, prior_logit).ok_or(MfError::NonFiniteLogit { entry: j })
    }

    /// One pass of the algorithm: noise update, then ascending entries each with
    /// its inclusion update followed by its Bernoulli update. Returns the ℓ∞ change.
    pub fn sweep(&mut self) -> Result<f64, MfError> {
        self.coords.refresh_residuals();
        let before = self.coords.x_hat.clone();
        self.update_noise();
        for j in 0..self.ms.n() {
            self.update_inclusion(j);
            self.update_entry(j)?;
        }
        // Leaves q(π) consistent with the final x̂; the next sweep's first
        // inclusion update for each entry is then a no-op.
        for j in 0..self.ms.n() {
            self.update_inclusion(j);
        }
        Ok(linalg::max_abs_diff(&before, &self.coords.x_hat))
    }

    /// ELBO of the current factors, using the maintained residuals.
    pub fn elbo(&self) -> f64 {
        let eq: Vec<f64> = (0..self.ms.l()).map(|l| self.coords.expected_sq_residual(l)).collect();
        elbo_terms(self.ms, &self.priors, &self.coords.x_hat, &self.beta_hat, &self.a_tilde, &self.b_tilde, &eq)
    }

    pub fn state(&self) -> MeanFieldState {
        MeanFieldState {
            x_hat: self.coords.x_hat.clone(),
            beta_hat: self.beta_hat.clone(),
            a_tilde: self.a_tilde.clone(),
            b_tilde: self.b_tilde.clone(),
            elbo: self.elbo(),
        }
    }
}

pub fn recover_mean_field(
    ms: &MeasurementSet,
    priors: &PriorConfig,
    cfg: &MeanFieldConfig,
) -> Result<RecoveryResult, MfError> {
    let mut solver = MeanFieldSolver::new(ms, priors, cfg)?;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let change = solver.sweep()?;
        trace.push(solver.elbo());
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(RecoveryResult::build(
        solver.coords.x_hat.clone(),
        priors.threshold,
        solver.beta_hat.clone(),
        sweeps,
        trace,
        converged,
    ))
}

/// `E_q[ln p(Y,Θ)] − E_q[ln q(Θ)]` for an arbitrary state, recomputing residuals.
pub fn elbo(ms: &MeasurementSet, state: &MeanFieldState, priors: &PriorConfig) -> Result<f64, MfError> {
    let n = ms.n();
    for len in [state.x_hat.len(), state.a_tilde.len(), state.b_tilde.len()] {
        if len != n {
            return Err(MfError::StateMismatch { got: len, expected: n });
        }
    }
    if state.beta_hat.len() != ms.l() {
        return Err(MfError::StateMismatch { got: state.beta_hat.len(), expected: ms.l() });
    }
    let coords = Coordinates::new(ms, state.x_hat.clone());
    let eq: Vec<f64> = (0..ms.l()).map(|l| coords.expected_sq_residual(l)).collect();
    Ok(elbo_terms(ms, priors, &state.x_hat, &state.beta_hat, &state.a_tilde, &state.b_tilde, &eq))
}

fn elbo_terms(
    ms: &MeasurementSet,
    priors: &PriorConfig,
    x_hat: &[f64],
    beta_hat: &[f64],
    a_tilde: &[f64],
    b_tilde: &[f64],
    expected_sq: &[f64],
) -> f64 {
    let m = ms.m() as f64;
    let (c, d) = (priors.c, priors.d);
    let mut total = 0.0;
    for (l, ch) in ms.channels().iter().enumerate() {
        let beta = beta_hat[l];
        if ch.beta().is_some() {
            total += 0.5 * m * (beta.ln() - (2.0 * PI).ln()) - 0.5 * beta * expected_sq[l];
            continue;
        }
        let shape = c + 0.5 * m;
        let rate = shape / beta;
        let e_ln_beta = digamma(shape) - rate.ln();
        total += 0.5 * m * (e_ln_beta - (2.0 * PI).ln()) - 0.5 * beta * expected_sq[l];
        // Gamma prior; its normaliser is dropped when the prior is improper.
        if c > 0.0 && d > 0.0 {
            total += c * d.ln() - ln_gamma(c);
        }
        total += (c - 1.0) * e_ln_beta - d * beta;
        // Gamma entropy.
        total += shape - rate.ln() + ln_gamma(shape) + (1.0 - shape) * digamma(shape);
    }
    let (a, b) = (priors.a, priors.b);
    let ln_b_prior = ln_beta(a, b);
    for j in 0..x_hat.len() {
        let (at, bt, x) = (a_tilde[j], b_tilde[j], x_hat[j]);
        let psi_sum = digamma(at + bt);
        let e_ln_pi = digamma(at) - psi_sum;
        let e_ln_not = digamma(bt) - psi_sum;
        total += x * e_ln_pi + (1.0 - x) * e_ln_not;
        total += -ln_b_prior + (a - 1.0) * e_ln_pi + (b - 1.0) * e_ln_not;
        total += -xlogx(x) - xlogx(1.0 - x);
        total += ln_beta(at, bt) - (at - 1.0) * digamma(at) - (bt - 1.0) * digamma(bt)
            + (at + bt - 2.0) * psi_sum;
    }
    total
}
