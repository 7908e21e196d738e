//! Coordinate update shared by the mean-field and message-passing recoveries.
//!
//! Both maximise, one entry at a time, `prior_logit_j x_j + Σ_l −½β_l ‖y_l − Φ_l x‖²`
//! over a factorised Bernoulli family. Residuals `r_l = y_l − Φ_l x̂` are kept
//! current with rank-one updates, so one coordinate costs `O(M L)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg;
use crate::model::MeasurementSet;
use crate::special::sigmoid;

pub(crate) struct Coordinates<'a> {
    ms: &'a MeasurementSet,
    /// `‖φ_j^(l)‖²`, indexed `[l][j]`.
    pub col_norm2: Vec<Vec<f64>>,
    /// `y_l − Φ_l x̂`.
    pub residuals: Vec<Vec<f64>>,
    pub x_hat: Vec<f64>,
}

impl<'a> Coordinates<'a> {
    pub fn new(ms: &'a MeasurementSet, x_hat: Vec<f64>) -> Self {
        let col_norm2 = ms.channels().iter().map(|ch| linalg::column_norms_sq(ch.phi())).collect();
        let mut c = Self { ms, col_norm2, residuals: vec![vec![0.0; ms.m()]; ms.l()], x_hat };
        c.refresh_residuals();
        c
    }

    /// Recomputes residuals from scratch, discarding accumulated rounding.
    pub fn refresh_residuals(&mut self) {
        for (ch, r) in self.ms.channels().iter().zip(self.residuals.iter_mut()) {
            linalg::mul_vec(ch.phi(), &self.x_hat, r);
            for (ri, yi) in r.iter_mut().zip(ch.y().iter()) {
                *ri = yi - *ri;
            }
        }
    }

    /// `Σ_l β_l (φ_jᵀ y_∼j − ½‖φ_j‖²)` where `y_∼j = r_l + φ_j x̂_j`.
    pub fn data_logit(&self, beta: &[f64], j: usize) -> f64 {
        let xj = self.x_hat[j];
        self.ms
            .channels()
            .iter()
            .enumerate()
            .map(|(l, ch)| {
                let col = linalg::column(ch.phi(), j);
                let n2 = self.col_norm2[l][j];
                beta[l] * (linalg::dot(col, &self.residuals[l]) + n2 * xj - 0.5 * n2)
            })
            .sum()
    }

    /// Sets `x̂_j = sigmoid(prior_logit + data_logit)`; returns the new value or
    /// `None` when the logit is not finite.
    pub fn update(&mut self, beta: &[f64], j: usize, prior_logit: f64) -> Option<f64> {
        let logit = prior_logit + self.data_logit(beta, j);
        if !logit.is_finite() {
            return None;
        }
        let new = sigmoid(logit);
        let delta = new - self.x_hat[j];
        if delta != 0.0 {
            for (ch, r) in self.ms.channels().iter().zip(self.residuals.iter_mut()) {
                let col = linalg::column(ch.phi(), j);
                for (ri, c) in r.iter_mut().zip(col) {
                    *ri -= delta * c;
                }
            }
            self.x_hat[j] = new;
        }
        Some(new)
    }

    /// `E‖y_l − Φ_l x‖²` under the Bernoulli means: `‖r_l‖² + Σ_j x̂_j(1−x̂_j)‖φ_j‖²`.
    pub fn expected_sq_residual(&self, l: usize) -> f64 {
        let r = &self.residuals[l];
        let trace: f64 = self
            .x_hat
            .iter()
            .zip(&self.col_norm2[l])
            .map(|(&x, &n2)| x * (1.0 - x) * n2)
            .sum();
        linalg::dot(r, r) + trace
    }
}
