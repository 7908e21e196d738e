//! Recovery of sparse binary vectors from underdetermined linear measurements.
//!
//! The crate is `no_std` (it needs `alloc`). Three recovery algorithms share one
//! measurement container ([`model::MeasurementSet`]):
//!
//! * [`convex`] box-relaxed l1 minimisation with EM updates of the noise precisions,
//! * [`mf`] mean-field variational inference,
//! * [`amp`] message passing with a factorised projection,
//!
//! with [`baselines`] (split Bregman, sparse Bayesian learning) for comparison,
//! [`diagnostics`] for exhaustive search and restricted-isometry estimates, and
//! [`eddy`] for the pipe eddy-current forward model that produces measurement
//! matrices for defect imaging.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod amp;
pub mod baselines;
pub mod convex;
pub mod diagnostics;
pub mod eddy;
mod kernel;
pub mod linalg;
pub mod mf;
pub mod model;
pub mod special;

pub use model::{Channel, MeasurementSet, ModelError, Precision, PriorConfig, RecoveryResult};
