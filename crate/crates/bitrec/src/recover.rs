//! One entry point over every recovery algorithm, used by the harness, the
//! imaging pipeline and the CLI.

use std::fmt;
use std::str::FromStr;

use bitrec_core::amp::{self, AmpConfig, AmpError};
use bitrec_core::baselines::{self, BaselineConfig, BaselineError};
use bitrec_core::convex::{self, ConvexError, ConvexSolverConfig};
use bitrec_core::mf::{self, MeanFieldConfig, MfError};
use bitrec_core::model::{threshold_binary, MeasurementSet, PriorConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Convex,
    Mf,
    Amp,
    SplitBregman,
    Sbl,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [Self::Convex, Self::Mf, Self::Amp, Self::SplitBregman, Self::Sbl];

    pub fn name(self) -> &'static str {
        match self {
            Self::Convex => "convex",
            Self::Mf => "mf",
            Self::Amp => "amp",
            Self::SplitBregman => "split-bregman",
            Self::Sbl => "sbl",
        }
    }

    /// Whether the algorithm accepts more than one channel.
    pub fn multi_channel(self) -> bool {
        matches!(self, Self::Convex | Self::Mf | Self::Amp)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected convex, mf, amp, split-bregman or sbl)"))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecoverError {
    #[error(transparent)]
    Convex(#[from] ConvexError),
    #[error(transparent)]
    MeanField(#[from] MfError),
    #[error(transparent)]
    Amp(#[from] AmpError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("{0} supports a single channel only, got {1}")]
    SingleChannelOnly(Algorithm, usize),
}

/// Tuning knobs for every algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Settings {
    pub priors: PriorConfig,
    pub convex: ConvexSolverConfig,
    pub mf: MeanFieldConfig,
    pub amp: AmpConfig,
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Relaxed estimate, posterior mean, or unconstrained baseline output.
    pub x: Vec<f64>,
    pub binary: Vec<bool>,
    /// Empty for the baselines, which do not estimate per-channel precisions.
    pub beta_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

pub fn recover(ms: &MeasurementSet, algo: Algorithm, settings: &Settings) -> Result<Recovery, RecoverError> {
    let thr = settings.priors.threshold;
    let from = |r: bitrec_core::RecoveryResult| Recovery {
        binary: r.binary(),
        x: r.x_hat,
        beta_hat: r.beta_hat,
        iterations: r.iterations,
        converged: r.converged,
        objective_trace: r.objective_trace,
    };
    match algo {
        Algorithm::Convex => Ok(from(convex::recover_convex_em(ms, &settings.priors, &settings.convex)?)),
        Algorithm::Mf => Ok(from(mf::recover_mean_field(ms, &settings.priors, &settings.mf)?)),
        Algorithm::Amp => Ok(from(amp::recover_amp(ms, &settings.priors, &settings.amp)?)),
        Algorithm::SplitBregman | Algorithm::Sbl => {
            if ms.l() != 1 {
                return Err(RecoverError::SingleChannelOnly(algo, ms.l()));
            }
            let ch = &ms.channels()[0];
            let r = if algo == Algorithm::Sbl {
                baselines::sbl(ch.phi(), ch.y(), &settings.baseline)?
            } else {
                baselines::split_bregman(ch.phi(), ch.y(), &settings.baseline)?
            };
            Ok(Recovery {
                binary: threshold_binary(&r.x, thr),
                x: r.x,
                beta_hat: Vec::new(),
                iterations: r.iterations,
                converged: r.converged,
                objective_trace: r.trace,
            })
        }
    }
}
