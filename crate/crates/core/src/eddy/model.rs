use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use core::f64::consts::PI;

use super::bessel::BesselError;

/// Vacuum permeability in H/m.
pub const MU0: f64 = 4.0e-7 * PI;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EddyError {
    #[error(transparent)]
    Bessel(#[from] BesselError),
    #[error("invalid model: {0}")]
    InvalidModel(&'static str),
    #[error("spectral node kappa = 0 is excluded")]
    KappaZero,
    #[error("source quadrature did not converge after {refinements} refinements (change {change:e})")]
    QuadratureNotConverged { refinements: usize, change: f64 },
    #[error("interface system singular at nu = {nu}, kappa = {kappa} (condition {condition:e})")]
    SingularLambda { nu: i32, kappa: f64, condition: f64 },
    #[error("point at rho = {rho} is not in region {region}")]
    RegionMismatch { region: u8, rho: f64 },
    #[error("voxel {voxel} is not inside the pipe wall")]
    VoxelOutsideRegion { voxel: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("voxel grids differ")]
    GridMismatch,
}

/// Infinitely long pipe, conducting between `rho1` and `rho2`, air elsewhere,
/// driven at angular frequency `omega`, with the spectral truncation used for
/// every field expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipeModel {
    pub rho1: f64,
    pub rho2: f64,
    pub sigma2: f64,
    pub mu_r2: f64,
    pub omega: f64,
    pub nu_max: usize,
    pub kappa_max: f64,
    /// Nodes on each side of zero; the grid is `±k·kappa_max/kappa_samples`, `k = 1..=kappa_samples`.
    pub kappa_samples: usize,
}

impl Default for PipeModel {
    fn default() -> Self {
        Self {
            rho1: 10.5e-3,
            rho2: 12.5e-3,
            sigma2: 3.5e7,
            mu_r2: 1.0,
            omega: 2.0 * PI * 1000.0,
            nu_max: 12,
            kappa_max: 3000.0,
            kappa_samples: 512,
        }
    }
}

impl PipeModel {
    pub fn with_frequency(self, hz: f64) -> Self {
        Self { omega: 2.0 * PI * hz, ..self }
    }

    pub fn validate(&self) -> Result<(), EddyError> {
        if !(self.rho1 > 0.0 && self.rho2 > self.rho1 && self.rho2.is_finite()) {
            return Err(EddyError::InvalidModel("radii must satisfy 0 < rho1 < rho2"));
        }
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(EddyError::InvalidModel("conductivity must be finite and nonnegative"));
        }
        if !(self.mu_r2 >= 1.0 && self.mu_r2.is_finite()) {
            return Err(EddyError::InvalidModel("relative permeability must be at least 1"));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(EddyError::InvalidModel("angular frequency must be positive"));
        }
        if !(self.kappa_max > 0.0 && self.kappa_samples >= 1) {
            return Err(EddyError::InvalidModel("kappa grid must be nonempty"));
        }
        // Keeps unscaled Bessel values and coefficients representable.
        if self.kappa_max * self.rho2 > 600.0 || self.lambda2(self.kappa_max).re * self.rho2 > 600.0 {
            return Err(EddyError::InvalidModel("kappa_max * rho2 too large"));
        }
        Ok(())
    }

    pub fn kappa_step(&self) -> f64 {
        self.kappa_max / self.kappa_samples as f64
    }

    /// Ascending nodes `−kappa_max, …, −step, step, …, kappa_max`.
    pub fn kappa_nodes(&self) -> Vec<f64> {
        let h = self.kappa_step();
        let k = self.kappa_samples as i64;
        (-k..=k).filter(|&i| i != 0).map(|i| i as f64 * h).collect()
    }

    /// Trapezoid weights matching [`kappa_nodes`](Self::kappa_nodes).
    pub fn kappa_weights(&self) -> Vec<f64> {
        let h = self.kappa_step();
        let n = 2 * self.kappa_samples;
        (0..n).map(|i| if i == 0 || i == n - 1 { 0.5 * h } else { h }).collect()
    }

    pub fn nu_range(&self) -> core::ops::RangeInclusive<i32> {
        -(self.nu_max as i32)..=self.nu_max as i32
    }

    pub fn mu2(&self) -> f64 {
        MU0 * self.mu_r2
    }

    /// `(k⁽²⁾)² = −jωμσ` in the wall.
    pub fn k2_wall(&self) -> num_complex::Complex64 {
        num_complex::Complex64::new(0.0, -self.omega * self.mu2() * self.sigma2)
    }

    /// `λ⁽²⁾ = sqrt(jωμσ + κ²)`, principal branch.
    pub fn lambda2(&self, kappa: f64) -> num_complex::Complex64 {
        num_complex::Complex64::new(kappa * kappa, self.omega * self.mu2() * self.sigma2).sqrt()
    }

    /// Region index (1 bore, 2 wall, 3 outside) containing radius `rho`; wall
    /// boundaries belong to the wall.
    pub fn region_of(&self, rho: f64) -> u8 {
        if rho < self.rho1 {
            1
        } else if rho <= self.rho2 {
            2
        } else {
            3
        }
    }
}

/// Point magnetic sensor inside the bore.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSpec {
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
    /// Sensing axis in local cylindrical components (ρ, φ, z).
    pub axis: [f64; 3],
}

impl SensorSpec {
    pub fn validate(&self, model: &PipeModel) -> Result<(), EddyError> {
        if !(self.rho > 0.0 && self.rho < model.rho1) {
            return Err(EddyError::InvalidModel("sensor must lie inside the bore"));
        }
        let n = self.axis.iter().map(|a| a * a).sum::<f64>().sqrt();
        if (n - 1.0).abs() > 1e-12 {
            return Err(EddyError::InvalidModel("sensor axis must be a unit vector"));
        }
        Ok(())
    }

    /// `count` sensors evenly spaced in φ starting at 0, all with the same axis.
    pub fn ring(count: usize, rho: f64, z: f64, axis: [f64; 3]) -> Vec<SensorSpec> {
        (0..count)
            .map(|i| SensorSpec { rho, phi: 2.0 * PI * i as f64 / count as f64, z, axis })
            .collect()
    }
}

/// Circular loop coaxial with the pipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilLoop {
    pub radius: f64,
    pub z: f64,
    pub ampere_turns: f64,
    /// +1 for current along +φ, −1 for −φ.
    pub sign: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoilSpec {
    pub loops: Vec<CoilLoop>,
}

impl CoilSpec {
    pub fn validate(&self, model: &PipeModel) -> Result<(), EddyError> {
        if self.loops.is_empty() {
            return Err(EddyError::InvalidModel("coil has no loops"));
        }
        for l in &self.loops {
            if !(l.radius > 0.0 && l.radius < model.rho1) {
                return Err(EddyError::InvalidModel("coil loops must lie inside the bore"));
            }
            if !(l.sign == 1.0 || l.sign == -1.0) || !l.ampere_turns.is_finite() || !l.z.is_finite() {
                return Err(EddyError::InvalidModel("coil loop sign must be ±1 and values finite"));
            }
        }
        Ok(())
    }

    pub fn outer_radius(&self) -> f64 {
        self.loops.iter().fold(0.0, |r, l| r.max(l.radius))
    }

    /// The same coil with every current multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> CoilSpec {
        CoilSpec { loops: self.loops.iter().map(|l| CoilLoop { ampere_turns: l.ampere_turns * factor, ..*l }).collect() }
    }
}
