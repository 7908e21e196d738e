//! Field reconstruction: per-mode potentials from the scalar pair, then the
//! inverse transform over `κ` (trapezoid) and `ν` (finite sum).

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::bessel::{bessel_ik_orders, BesselIk};
use super::interface::ModeTable;
use super::model::{EddyError, MU0};
use super::source::SourceSpectrum;

/// Ring contributions above this fraction of the total raise the truncation flag.
pub const TRUNCATION_LIMIT: f64 = 1e-6;

/// Phasor fields in cylindrical components `(ρ, φ, z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldValue {
    pub e: [Complex64; 3],
    pub h: [Complex64; 3],
}

impl FieldValue {
    pub fn zero() -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self { e: [z; 3], h: [z; 3] }
    }

    /// Flux density `B = μH` for permeability `mu`.
    pub fn b(&self, mu: f64) -> [Complex64; 3] {
        self.h.map(|v| v * mu)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldEvaluation {
    pub values: Vec<FieldValue>,
    /// Largest relative contribution of the `|ν| = ν_max` ring over all points.
    pub truncation_ratio: f64,
    pub truncation_warning: bool,
}

/// Bessel values at one radius for every `|κ|` of a table.
#[derive(Debug, Clone)]
pub struct RadialBasis {
    pub region: u8,
    pub rho: f64,
    air: Vec<Vec<BesselIk>>,
    wall: Vec<Vec<BesselIk>>,
}

fn region_bounds(table: &ModeTable, source_radius: f64, region: u8) -> Result<(f64, f64), EddyError> {
    let m = &table.model;
    match region {
        1 => Ok((source_radius, m.rho1)),
        2 => Ok((m.rho1, m.rho2)),
        3 => Ok((m.rho2, f64::INFINITY)),
        _ => Err(EddyError::RegionMismatch { region, rho: f64::NAN }),
    }
}

impl RadialBasis {
    /// Region 1 starts just outside `source_radius`; interface radii belong to both neighbours.
    pub fn new(table: &ModeTable, source_radius: f64, region: u8, rho: f64) -> Result<Self, EddyError> {
        let (lo, hi) = region_bounds(table, source_radius, region)?;
        let inside = if region == 1 { rho > lo && rho <= hi } else { rho >= lo && rho <= hi };
        if !inside {
            return Err(EddyError::RegionMismatch { region, rho });
        }
        let m = &table.model;
        let half = m.kappa_samples;
        let mut air = Vec::with_capacity(half);
        let mut wall = Vec::new();
        for h in 0..half {
            let ka = table.kappas[half + h];
            air.push(bessel_ik_orders(m.nu_max, Complex64::new(ka * rho, 0.0))?);
            if region == 2 {
                wall.push(bessel_ik_orders(m.nu_max, m.lambda2(ka) * rho)?);
            }
        }
        Ok(Self { region, rho, air, wall })
    }

    fn half_index(&self, k: usize) -> usize {
        let half = self.air.len();
        if k < half {
            half - 1 - k
        } else {
            k - half
        }
    }
}

/// `(Ẽ, H̃)` of mode `(ν, κ_k)` for a unit source, as six components.
pub fn unit_mode_field(table: &ModeTable, basis: &RadialBasis, nu: i32, k: usize) -> [Complex64; 6] {
    let m = &table.model;
    let j = Complex64::new(0.0, 1.0);
    let zero = Complex64::new(0.0, 0.0);
    let c = table.unit(nu, k);
    let kappa = table.kappas[k];
    let ka = kappa.abs();
    let hk = basis.half_index(k);
    let order = nu.unsigned_abs() as usize;
    let rho = basis.rho;

    let (wa, dwa, wb, dwb, lambda, k2, mu) = match basis.region {
        1 => {
            let b = &basis.air[hk][order];
            let wa = c.c_ec * b.i + c.ds * b.k;
            let dwa = (c.c_ec * b.di + c.ds * b.dk) * ka;
            (wa, dwa, zero, zero, Complex64::new(ka, 0.0), zero, MU0)
        }
        2 => {
            let b = &basis.wall[hk][order];
            let lambda = m.lambda2(ka);
            let wa = c.c_a * b.i + c.d_a * b.k;
            let dwa = (c.c_a * b.di + c.d_a * b.dk) * lambda;
            let wb = c.c_b * b.i + c.d_b * b.k;
            let dwb = (c.c_b * b.di + c.d_b * b.dk) * lambda;
            (wa, dwa, wb, dwb, lambda, m.k2_wall(), m.mu2())
        }
        _ => {
            let b = &basis.air[hk][order];
            (c.d3 * b.k, c.d3 * b.dk * ka, zero, zero, Complex64::new(ka, 0.0), zero, MU0)
        }
    };
    let nuf = nu as f64;
    let lam2 = lambda * lambda;
    let a = [j * (nuf / rho) * wa - j * kappa * dwb, -dwa + wb * (kappa * nuf / rho), lam2 * wb];
    let bf = [-j * (nuf / rho) * k2 * wb + j * kappa * dwa, k2 * dwb - wa * (kappa * nuf / rho), -lam2 * wa];
    let ejw = Complex64::new(0.0, -m.omega);
    [a[0] * ejw, a[1] * ejw, a[2] * ejw, bf[0] / mu, bf[1] / mu, bf[2] / mu]
}

/// Unit-source mode fields over the whole grid at one radius, indexed like a [`SourceSpectrum`].
fn mode_fields(table: &ModeTable, basis: &RadialBasis) -> Vec<[Complex64; 6]> {
    let nm = table.model.nu_max as i32;
    let nk = table.n_kappa();
    let mut out = Vec::with_capacity((2 * nm as usize + 1) * nk);
    for nu in -nm..=nm {
        for k in 0..nk {
            out.push(unit_mode_field(table, basis, nu, k));
        }
    }
    out
}

fn check_source(table: &ModeTable, source: &SourceSpectrum) -> Result<(), EddyError> {
    if source.nu_max != table.model.nu_max || source.n_kappa != table.n_kappa() {
        return Err(EddyError::DimensionMismatch("source spectrum does not match the mode table"));
    }
    Ok(())
}

struct GridFields {
    values: Vec<FieldValue>,
    ring: Vec<[Complex64; 6]>,
}

/// Fields of each source on the `(φ, z)` tensor grid at the basis radius.
fn grid_at_radius(
    table: &ModeTable,
    basis: &RadialBasis,
    sources: &[&SourceSpectrum],
    phis: &[f64],
    zs: &[f64],
) -> Vec<GridFields> {
    let nm = table.model.nu_max as i32;
    let n_nu = 2 * nm as usize + 1;
    let nk = table.n_kappa();
    let modes = mode_fields(table, basis);
    let mut phase = vec![Complex64::new(0.0, 0.0); zs.len() * nk];
    for (q, &z) in zs.iter().enumerate() {
        for k in 0..nk {
            phase[q * nk + k] = Complex64::from_polar(table.weights[k] / (2.0 * PI), table.kappas[k] * z);
        }
    }
    let zero = Complex64::new(0.0, 0.0);
    sources
        .iter()
        .map(|src| {
            // g[ν][q] = Σ_κ (w/2π) D^(s) · mode · e^{jκz}
            let mut g = vec![[zero; 6]; n_nu * zs.len()];
            for iv in 0..n_nu {
                let row = iv * nk;
                for q in 0..zs.len() {
                    let mut acc = [zero; 6];
                    for k in 0..nk {
                        let f = src.values[row + k] * phase[q * nk + k];
                        let md = &modes[row + k];
                        for c in 0..6 {
                            acc[c] += f * md[c];
                        }
                    }
                    g[iv * zs.len() + q] = acc;
                }
            }
            let mut values = Vec::with_capacity(phis.len() * zs.len());
            let mut ring = Vec::with_capacity(phis.len() * zs.len());
            for &phi in phis {
                let rot: Vec<Complex64> = (-nm..=nm).map(|nu| Complex64::from_polar(1.0, nu as f64 * phi)).collect();
                for q in 0..zs.len() {
                    let mut tot = [zero; 6];
                    let mut edge = [zero; 6];
                    for iv in 0..n_nu {
                        let gv = &g[iv * zs.len() + q];
                        for c in 0..6 {
                            let t = gv[c] * rot[iv];
                            tot[c] += t;
                            if nm > 0 && (iv == 0 || iv == n_nu - 1) {
                                edge[c] += t;
                            }
                        }
                    }
                    values.push(FieldValue { e: [tot[0], tot[1], tot[2]], h: [tot[3], tot[4], tot[5]] });
                    ring.push(edge);
                }
            }
            GridFields { values, ring }
        })
        .collect()
}

fn ratio(total: &FieldValue, ring: &[Complex64; 6]) -> f64 {
    let n = |v: &[Complex64]| v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let re = n(&ring[..3]);
    let rh = n(&ring[3..]);
    let te = n(&total.e);
    let th = n(&total.h);
    let f = |r: f64, t: f64| if t > 0.0 { r / t } else if r > 0.0 { f64::INFINITY } else { 0.0 };
    f(re, te).max(f(rh, th))
}

/// Fields on a tensor grid of radii, angles and axial positions, indexed
/// `(r·n_φ + p)·n_z + q`.
pub fn evaluate_fields_grid(
    table: &ModeTable,
    source: &SourceSpectrum,
    region: u8,
    rhos: &[f64],
    phis: &[f64],
    zs: &[f64],
) -> Result<FieldEvaluation, EddyError> {
    check_source(table, source)?;
    let mut values = Vec::with_capacity(rhos.len() * phis.len() * zs.len());
    let mut worst = 0.0f64;
    for &rho in rhos {
        let basis = RadialBasis::new(table, source.radius, region, rho)?;
        let g = grid_at_radius(table, &basis, &[source], phis, zs).pop().expect("one source");
        for (v, r) in g.values.iter().zip(&g.ring) {
            worst = worst.max(ratio(v, r));
        }
        values.extend(g.values);
    }
    Ok(FieldEvaluation { values, truncation_ratio: worst, truncation_warning: worst > TRUNCATION_LIMIT })
}

/// Fields at arbitrary `(ρ, φ, z)` points of one region.
pub fn evaluate_fields(
    table: &ModeTable,
    source: &SourceSpectrum,
    region: u8,
    points: &[[f64; 3]],
) -> Result<FieldEvaluation, EddyError> {
    check_source(table, source)?;
    let mut values = Vec::with_capacity(points.len());
    let mut worst = 0.0f64;
    for p in points {
        let basis = RadialBasis::new(table, source.radius, region, p[0])?;
        let g = grid_at_radius(table, &basis, &[source], &[p[1]], &[p[2]]).pop().expect("one source");
        worst = worst.max(ratio(&g.values[0], &g.ring[0]));
        values.push(g.values[0]);
    }
    Ok(FieldEvaluation { values, truncation_ratio: worst, truncation_warning: worst > TRUNCATION_LIMIT })
}

/// Fields of several sources sharing one radial basis, used by the sensitivity builder.
pub(crate) fn fields_for_sources(
    table: &ModeTable,
    basis: &RadialBasis,
    sources: &[&SourceSpectrum],
    phis: &[f64],
    zs: &[f64],
) -> Result<(Vec<Vec<FieldValue>>, f64), EddyError> {
    for s in sources {
        check_source(table, s)?;
    }
    let grids = grid_at_radius(table, basis, sources, phis, zs);
    let mut worst = 0.0f64;
    for g in &grids {
        for (v, r) in g.values.iter().zip(&g.ring) {
            worst = worst.max(ratio(v, r));
        }
    }
    Ok((grids.into_iter().map(|g| g.values).collect(), worst))
}
