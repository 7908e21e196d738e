//! Measurement containers, prior settings, recovery results and the IoU score.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("measurement set has no channels")]
    Empty,
    #[error("dimension mismatch in channel {channel}: {what}")]
    DimensionMismatch { channel: usize, what: &'static str },
    #[error("non-finite entry in channel {channel}")]
    NonFinite { channel: usize },
    #[error("noise precision of channel {channel} must be positive, got {value}")]
    NonPositivePrecision { channel: usize, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid prior setting: {0}")]
    InvalidPrior(&'static str),
}

/// Noise precision (inverse variance) of one channel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Precision(f64);

impl Precision {
    pub fn new(value: f64) -> Option<Self> {
        (value.is_finite() && value > 0.0).then_some(Self(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// One measurement channel `y = Φ x + n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    phi: DMatrix<f64>,
    y: DVector<f64>,
    beta: Option<Precision>,
}

impl Channel {
    pub fn new(phi: DMatrix<f64>, y: DVector<f64>) -> Self {
        Self { phi, y, beta: None }
    }

    /// Channel whose noise precision is known and will not be estimated.
    pub fn with_precision(phi: DMatrix<f64>, y: DVector<f64>, beta: Precision) -> Self {
        Self { phi, y, beta: Some(beta) }
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn beta(&self) -> Option<Precision> {
        self.beta
    }
}

/// `L` channels sharing one unknown vector of length `N`; every channel has `M` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    channels: Vec<Channel>,
}

impl MeasurementSet {
    pub fn new(channels: Vec<Channel>) -> Result<Self, ModelError> {
        let ms = Self { channels };
        validate(&ms)?;
        Ok(ms)
    }

    pub fn single(phi: DMatrix<f64>, y: DVector<f64>) -> Result<Self, ModelError> {
        Self::new(alloc::vec![Channel::new(phi, y)])
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Channel> {
        self.channels
    }

    pub fn l(&self) -> usize {
        self.channels.len()
    }

    pub fn m(&self) -> usize {
        self.channels[0].phi.nrows()
    }

    pub fn n(&self) -> usize {
        self.channels[0].phi.ncols()
    }
}

/// Checks the invariants every recovery routine relies on.
pub fn validate(ms: &MeasurementSet) -> Result<(), ModelError> {
    let first = ms.channels.first().ok_or(ModelError::Empty)?;
    let (m, n) = first.phi.shape();
    for (l, ch) in ms.channels.iter().enumerate() {
        if ch.phi.ncols() != n {
            return Err(ModelError::DimensionMismatch { channel: l, what: "column count N differs" });
        }
        if ch.phi.nrows() != m {
            return Err(ModelError::DimensionMismatch { channel: l, what: "row count M differs" });
        }
        if ch.y.len() != m {
            return Err(ModelError::DimensionMismatch { channel: l, what: "y length differs from M" });
        }
        if ch.phi.iter().chain(ch.y.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { channel: l });
        }
        if let Some(b) = ch.beta {
            if !(b.0 > 0.0 && b.0.is_finite()) {
                return Err(ModelError::NonPositivePrecision { channel: l, value: b.0 });
            }
        }
    }
    if n == 0 || m == 0 {
        return Err(ModelError::DimensionMismatch { channel: 0, what: "empty matrix" });
    }
    Ok(())
}

/// How the noise precisions are initialised for channels without a known value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialPrecision {
    Fixed(f64),
    /// `M / ‖y‖²` per channel (falls back to 1 for an all-zero channel).
    FromData,
}

impl InitialPrecision {
    pub fn for_channel(self, ch: &Channel) -> f64 {
        match self {
            Self::Fixed(v) => v,
            Self::FromData => {
                let e = ch.y.norm_squared();
                if e > 0.0 {
                    ch.y.len() as f64 / e
                } else {
                    1.0
                }
            }
        }
    }
}

/// Hyperparameters shared by the three recovery algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    /// Beta prior on the per-entry inclusion probability.
    pub a: f64,
    pub b: f64,
    /// Gamma prior (shape, rate) on each channel's noise precision.
    pub c: f64,
    pub d: f64,
    pub beta0: InitialPrecision,
    /// Number of noise standard deviations allowed in the residual ball.
    pub epsilon_c: f64,
    pub threshold: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            b: 10.0,
            c: 1e-6,
            d: 1e-6,
            beta0: InitialPrecision::Fixed(1.0),
            epsilon_c: 1.0,
            threshold: 0.5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = [self.a, self.b, self.c, self.d, self.epsilon_c, self.threshold]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(ModelError::InvalidPrior("non-finite value"));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(ModelError::InvalidPrior("a and b must be positive"));
        }
        if !(self.c >= 0.0 && self.d >= 0.0) {
            return Err(ModelError::InvalidPrior("c and d must be nonnegative"));
        }
        if let InitialPrecision::Fixed(v) = self.beta0 {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidPrior("beta0 must be positive"));
            }
        }
        if !(self.epsilon_c > 0.0) {
            return Err(ModelError::InvalidPrior("epsilon multiplier must be positive"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(ModelError::InvalidPrior("threshold must lie in (0,1)"));
        }
        Ok(())
    }
}

/// Output of every recovery routine.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveryResult {
    pub x_hat: Vec<f64>,
    pub support: Vec<usize>,
    pub beta_hat: Vec<f64>,
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl RecoveryResult {
    pub(crate) fn build(
        mut x_hat: Vec<f64>,
        threshold: f64,
        beta_hat: Vec<f64>,
        iterations: usize,
        objective_trace: Vec<f64>,
        converged: bool,
    ) -> Self {
        for v in x_hat.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let support = support(&x_hat, threshold);
        Self { x_hat, support, beta_hat, iterations, objective_trace, converged }
    }

    pub fn binary(&self) -> Vec<bool> {
        let mut out = alloc::vec![false; self.x_hat.len()];
        for &j in &self.support {
            out[j] = true;
        }
        out
    }
}

/// Indices strictly above the threshold.
pub fn support(x: &[f64], threshold: f64) -> Vec<usize> {
    x.iter().enumerate().filter(|(_, &v)| v > threshold).map(|(j, _)| j).collect()
}

pub fn threshold_binary(x: &[f64], threshold: f64) -> Vec<bool> {
    x.iter().map(|&v| v > threshold).collect()
}

/// Intersection over union of two binary supports; two empty supports score 1.
pub fn iou(x: &[bool], x_true: &[bool]) -> Result<f64, ModelError> {
    if x.len() != x_true.len() {
        return Err(ModelError::LengthMismatch { left: x.len(), right: x_true.len() });
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&u, &v) in x.iter().zip(x_true) {
        inter += (u && v) as usize;
        union += (u || v) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}
