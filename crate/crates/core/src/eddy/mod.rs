//! Semi-analytical eddy-current model of a conducting pipe excited from inside,
//! adjoint sensitivities, measurement-matrix assembly and log-odds image merging.
//!
//! Fields are expanded in modes `e^{jνφ + jκz}`; per mode a scalar pair
//! `(W_a, W_b)` in each region is fixed by the interface conditions at the two
//! wall radii. The coil and each sensor enter as a source coefficient
//! `D^(s)(ν, κ)`, and the unit-source responses of a model are cached in a
//! [`ModeTable`] so many sources can share one set of interface solves.

pub mod bessel;
pub mod fields;
pub mod interface;
pub mod model;
pub mod sensitivity;
pub mod source;

pub use bessel::{bessel_ik, BesselError, BesselIk};
pub use fields::{evaluate_fields, evaluate_fields_grid, FieldEvaluation, FieldValue};
pub use interface::{solve_interface_coefficients, ModeTable, SpectralCoefficients};
pub use model::{CoilLoop, CoilSpec, EddyError, PipeModel, SensorSpec, MU0};
pub use sensitivity::{
    assemble_phi, build_sensitivity, merge_logodds, Sensitivity, VoxelGrid, VoxelImage, LOGIT_LIMIT,
};
pub use source::{coil_spectrum, coil_spectrum_grid, sensor_spectrum, sensor_spectrum_grid, CoilQuadrature, SourceSpectrum};
