//! Voxel sensitivities of sensor readings to wall conductivity and
//! permeability, measurement-matrix assembly and log-odds merging.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use core::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::fields::{fields_for_sources, RadialBasis};
use super::interface::ModeTable;
use super::model::{EddyError, PipeModel, MU0};
use super::source::SourceSpectrum;

/// Default clamp on merged log-odds.
pub const LOGIT_LIMIT: f64 = 13.8;

/// Cylindrical voxel grid: radial layers by edges, uniform angular bins
/// starting at `phi0`, axial bins by edges. Voxel index is `(r·n_phi + p)·n_z + q`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub rho_edges: Vec<f64>,
    pub n_phi: usize,
    pub phi0: f64,
    pub z_edges: Vec<f64>,
}

impl VoxelGrid {
    /// `layers` equal layers across the wall, `n_phi` angular bins and
    /// `n_z` axial bins of width `dz` starting at `z_start`.
    pub fn uniform(model: &PipeModel, layers: usize, n_phi: usize, z_start: f64, dz: f64, n_z: usize) -> Self {
        let t = model.rho2 - model.rho1;
        Self {
            rho_edges: (0..=layers).map(|i| model.rho1 + t * i as f64 / layers as f64).collect(),
            n_phi,
            phi0: 0.0,
            z_edges: (0..=n_z).map(|i| z_start + dz * i as f64).collect(),
        }
    }

    pub fn layers(&self) -> usize {
        self.rho_edges.len().saturating_sub(1)
    }

    pub fn n_z(&self) -> usize {
        self.z_edges.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.layers() * self.n_phi * self.n_z()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, r: usize, p: usize, q: usize) -> usize {
        (r * self.n_phi + p) * self.n_z() + q
    }

    /// `(layer, angular bin, axial bin)` of a voxel index.
    pub fn coords(&self, j: usize) -> (usize, usize, usize) {
        let nz = self.n_z();
        (j / (self.n_phi * nz), (j / nz) % self.n_phi, j % nz)
    }

    pub fn phi_step(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    /// Centre `(ρ, φ, z)` of a voxel.
    pub fn centre(&self, j: usize) -> [f64; 3] {
        let (r, p, q) = self.coords(j);
        [
            0.5 * (self.rho_edges[r] + self.rho_edges[r + 1]),
            self.phi0 + (p as f64 + 0.5) * self.phi_step(),
            0.5 * (self.z_edges[q] + self.z_edges[q + 1]),
        ]
    }

    pub fn validate(&self, model: &PipeModel) -> Result<(), EddyError> {
        if self.is_empty() {
            return Err(EddyError::DimensionMismatch("voxel grid is empty"));
        }
        let increasing = |e: &[f64]| e.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&self.rho_edges) || !increasing(&self.z_edges) {
            return Err(EddyError::DimensionMismatch("voxel edges must increase"));
        }
        let tol = 1e-12 * model.rho2;
        for r in 0..self.layers() {
            if self.rho_edges[r] < model.rho1 - tol || self.rho_edges[r + 1] > model.rho2 + tol {
                return Err(EddyError::VoxelOutsideRegion { voxel: self.index(r, 0, 0) });
            }
        }
        Ok(())
    }
}

/// Merged or per-position defect map on a voxel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelImage {
    pub grid: VoxelGrid,
    pub logodds: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
}

impl VoxelImage {
    /// Image holding `prior` everywhere with uniform nominal material.
    pub fn uniform(grid: VoxelGrid, prior: f64, sigma: f64, mu: f64) -> Self {
        let n = grid.len();
        Self { grid, logodds: vec![logit(prior); n], sigma: vec![sigma; n], mu: vec![mu; n] }
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.logodds.iter().map(|&l| sigmoid(l)).collect()
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(l: f64) -> f64 {
    1.0 / (1.0 + (-l).exp())
}

/// Log-odds of a continuous estimate, clamped to `[1e-6, 1 − 1e-6]` first.
pub fn estimate_logit(x: f64) -> f64 {
    logit(x.clamp(1e-6, 1.0 - 1e-6))
}

/// Complex sensitivities, row-major `M × N` (sensors by voxels).
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub m: usize,
    pub n: usize,
    pub s_sigma: Vec<Complex64>,
    pub s_mu: Vec<Complex64>,
    pub truncation_ratio: f64,
}

impl Sensitivity {
    pub fn scaled(&self, f: f64) -> Sensitivity {
        Sensitivity {
            s_sigma: self.s_sigma.iter().map(|v| v * f).collect(),
            s_mu: self.s_mu.iter().map(|v| v * f).collect(),
            ..self.clone()
        }
    }
}

fn dot(a: &[Complex64; 3], b: &[Complex64; 3]) -> Complex64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `S_σ[i, j] = ∫ E·É_i dV` and `S_μ[i, j] = ∫ (−jω) H·H́_i dV` over each voxel,
/// by the midpoint rule with `subdivision` points per axis.
pub fn build_sensitivity(
    table: &ModeTable,
    coil: &SourceSpectrum,
    sensors: &[SourceSpectrum],
    grid: &VoxelGrid,
    subdivision: usize,
) -> Result<Sensitivity, EddyError> {
    let model = &table.model;
    grid.validate(model)?;
    if sensors.is_empty() || subdivision == 0 {
        return Err(EddyError::DimensionMismatch("need at least one sensor and one sample per voxel axis"));
    }
    let s = subdivision;
    let (m, n) = (sensors.len(), grid.len());
    let (n_phi, n_z) = (grid.n_phi, grid.n_z());
    let dphi = grid.phi_step() / s as f64;
    let phis: Vec<f64> = (0..n_phi * s).map(|i| grid.phi0 + (i as f64 + 0.5) * dphi).collect();
    let mut zs = Vec::with_capacity(n_z * s);
    let mut dzs = Vec::with_capacity(n_z * s);
    for q in 0..n_z {
        let dz = (grid.z_edges[q + 1] - grid.z_edges[q]) / s as f64;
        for b in 0..s {
            zs.push(grid.z_edges[q] + (b as f64 + 0.5) * dz);
            dzs.push(dz);
        }
    }

    let mut sources: Vec<&SourceSpectrum> = vec![coil];
    sources.extend(sensors.iter());
    let mut s_sigma = vec![Complex64::new(0.0, 0.0); m * n];
    let mut s_mu = vec![Complex64::new(0.0, 0.0); m * n];
    let jw = Complex64::new(0.0, -model.omega);
    let mut worst = 0.0f64;

    for r in 0..grid.layers() {
        let drho = (grid.rho_edges[r + 1] - grid.rho_edges[r]) / s as f64;
        for a in 0..s {
            let rho = grid.rho_edges[r] + (a as f64 + 0.5) * drho;
            let basis = RadialBasis::new(table, 0.0, 2, rho)?;
            let (fields, ratio) = fields_for_sources(table, &basis, &sources, &phis, &zs)?;
            worst = worst.max(ratio);
            let (forward, adjoint) = fields.split_first().expect("coil source present");
            for (ip, _) in phis.iter().enumerate() {
                let p = ip / s;
                for (iq, dz) in dzs.iter().enumerate() {
                    let q = iq / s;
                    let w = rho * drho * dphi * dz;
                    let g = ip * zs.len() + iq;
                    let j = grid.index(r, p, q);
                    let f = &forward[g];
                    for (i, adj) in adjoint.iter().enumerate() {
                        s_sigma[i * n + j] += dot(&f.e, &adj[g].e) * w;
                        s_mu[i * n + j] += jw * dot(&f.h, &adj[g].h) * w;
                    }
                }
            }
        }
    }
    Ok(Sensitivity { m, n, s_sigma, s_mu, truncation_ratio: worst })
}

/// `Φ = S_σ·diag(−σ) + S_μ·diag(μ₀ − μ)`, row-major.
pub fn phi_complex(sens: &Sensitivity, sigma: &[f64], mu: &[f64]) -> Result<Vec<Complex64>, EddyError> {
    if sigma.len() != sens.n || mu.len() != sens.n || sens.s_sigma.len() != sens.m * sens.n {
        return Err(EddyError::DimensionMismatch("material vectors must have one entry per voxel"));
    }
    let mut out = Vec::with_capacity(sens.m * sens.n);
    for i in 0..sens.m {
        for j in 0..sens.n {
            let k = i * sens.n + j;
            let mut v = sens.s_sigma[k] * (-sigma[j]);
            let dmu = MU0 - mu[j];
            if dmu != 0.0 {
                v += sens.s_mu[k] * dmu;
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Real measurement matrices, two per frequency (real part then imaginary part)
/// in the order the sensitivities are given.
pub fn assemble_phi(sens: &[Sensitivity], sigma: &[f64], mu: &[f64]) -> Result<Vec<DMatrix<f64>>, EddyError> {
    let mut out = Vec::with_capacity(2 * sens.len());
    for s in sens {
        if s.n != sens[0].n {
            return Err(EddyError::DimensionMismatch("frequencies must share one voxel grid"));
        }
        let phi = phi_complex(s, sigma, mu)?;
        out.push(DMatrix::from_row_iterator(s.m, s.n, phi.iter().map(|v| v.re)));
        out.push(DMatrix::from_row_iterator(s.m, s.n, phi.iter().map(|v| v.im)));
    }
    Ok(out)
}

/// Binary Bayes filter: `clamp(Σ_k l_k − (K−1)·logit(prior), ±limit)` per voxel.
/// The per-voxel terms are summed in sorted order, so any permutation of the
/// inputs gives identical bits.
pub fn merge_logodds(images: &[VoxelImage], priors: &[f64], limit: f64) -> Result<VoxelImage, EddyError> {
    let first = images.first().ok_or(EddyError::DimensionMismatch("no images to merge"))?;
    let n = first.grid.len();
    if images.iter().any(|im| im.grid != first.grid || im.logodds.len() != n) {
        return Err(EddyError::GridMismatch);
    }
    if priors.len() != n {
        return Err(EddyError::DimensionMismatch("one prior per voxel"));
    }
    let k = images.len() as f64;
    let mut terms = vec![0.0; images.len()];
    let logodds = (0..n)
        .map(|j| {
            for (t, im) in terms.iter_mut().zip(images) {
                *t = im.logodds[j];
            }
            terms.sort_by(f64::total_cmp);
            let sum: f64 = terms.iter().sum();
            (sum - (k - 1.0) * logit(priors[j])).clamp(-limit, limit)
        })
        .collect();
    Ok(VoxelImage { grid: first.grid.clone(), logodds, sigma: first.sigma.clone(), mu: first.mu.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_index_round_trip() {
        let g = VoxelGrid::uniform(&PipeModel::default(), 4, 36, -6e-3, 2e-3, 6);
        for j in [0, 5, 215, g.len() - 1] {
            let (r, p, q) = g.coords(j);
            assert_eq!(g.index(r, p, q), j);
        }
    }

    #[test]
    fn merged_pair_matches_likelihood_product() {
        let g = VoxelGrid::uniform(&PipeModel::default(), 1, 2, 0.0, 1e-3, 1);
        let im = VoxelImage::uniform(g, 0.9, 1.0, MU0);
        let out = merge_logodds(&[im.clone(), im], &[0.5, 0.5], LOGIT_LIMIT).unwrap();
        let p = out.probabilities()[0];
        assert!((p - 0.81 / 0.82).abs() < 1e-12);
    }
}
