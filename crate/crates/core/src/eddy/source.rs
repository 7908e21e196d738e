//! Source spectra `D^(s)(ν, κ)` for coil excitation and for the unit sensor
//! (adjoint) excitation.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use core::f64::consts::PI;

use num_complex::Complex64;

use super::bessel::{bessel_ik, bessel_ik_orders};
use super::model::{CoilLoop, CoilSpec, EddyError, PipeModel, SensorSpec, MU0};

/// Source coefficients on the model's full `(ν, κ)` grid, indexed
/// `(ν + ν_max)·n_κ + k` with `k` running over [`PipeModel::kappa_nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpectrum {
    pub nu_max: usize,
    pub n_kappa: usize,
    pub values: Vec<Complex64>,
    /// Outermost radius of the source; region-1 fields are valid only beyond it.
    pub radius: f64,
}

impl SourceSpectrum {
    pub fn get(&self, nu: i32, k: usize) -> Complex64 {
        self.values[(nu + self.nu_max as i32) as usize * self.n_kappa + k]
    }

    pub fn scaled(&self, factor: Complex64) -> SourceSpectrum {
        SourceSpectrum { values: self.values.iter().map(|v| v * factor).collect(), ..self.clone() }
    }
}

/// Complete elliptic integrals `K(m)`, `E(m)` of parameter `m = k²` by the
/// arithmetic-geometric mean.
pub fn elliptic_ke(m: f64) -> (f64, f64) {
    let mut a = 1.0;
    let mut b = (1.0 - m).sqrt();
    let mut c = m.sqrt();
    let mut sum = 0.5 * c * c;
    let mut pow = 0.5;
    for _ in 0..64 {
        if c.abs() <= 1e-17 * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        // (a − b)/2 written without the cancellation.
        c = c * c / (4.0 * an);
        a = an;
        b = bn;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

/// Free-space flux density `(B_ρ, B_z)` of one loop at cylindrical `(ρ, z)`.
pub fn loop_field(lp: &CoilLoop, rho: f64, z: f64) -> (f64, f64) {
    let a = lp.radius;
    let current = lp.ampere_turns * lp.sign;
    let zeta = z - lp.z;
    let beta2 = (a + rho) * (a + rho) + zeta * zeta;
    let alpha2 = (a - rho) * (a - rho) + zeta * zeta;
    let beta = beta2.sqrt();
    let m = 4.0 * a * rho / beta2;
    let (k, e) = elliptic_ke(m);
    let pre = MU0 * current / (2.0 * PI);
    let bz = pre / beta * (k + (a * a - rho * rho - zeta * zeta) / alpha2 * e);
    let brho = if rho == 0.0 {
        0.0
    } else {
        pre * zeta / (rho * beta) * (-k + (a * a + rho * rho + zeta * zeta) / alpha2 * e)
    };
    (brho, bz)
}

pub fn coil_field(coil: &CoilSpec, rho: f64, z: f64) -> (f64, f64) {
    coil.loops.iter().fold((0.0, 0.0), |(br, bz), lp| {
        let (r, zz) = loop_field(lp, rho, z);
        (br + r, bz + zz)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoilQuadrature {
    /// Initial axial sample spacing; `None` picks one from the loop clearance and `kappa_max`.
    pub z_spacing: Option<f64>,
    /// Circumferential samples; `None` uses `2ν_max + 2`.
    pub phi_samples: Option<usize>,
    /// Relative change between successive halvings of the spacing that counts as converged.
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for CoilQuadrature {
    fn default() -> Self {
        Self { z_spacing: None, phi_samples: None, tol: 1e-10, max_refinements: 6 }
    }
}

/// `(1/2π)∫∫ B_ρ(ρ⁽¹⁾, φ, z) e^{−jνφ−jκz} dφ dz` by periodic trapezoid sums on a
/// window of length `2π/Δκ` centred on the coil, for every `(ν, κ)` requested.
/// Also returns `∫|B_ρ| dz`, which bounds every transform value.
fn rho_transform(
    model: &PipeModel,
    coil: &CoilSpec,
    nus: &[i32],
    kappas: &[f64],
    n_z: usize,
    n_phi: usize,
) -> (Vec<Complex64>, f64) {
    let window = 2.0 * PI / model.kappa_step();
    let centre = coil.loops.iter().map(|l| l.z).sum::<f64>() / coil.loops.len() as f64;
    let h = window / n_z as f64;
    // Midpoint samples: the periodised field jumps at the window edge.
    let z0 = centre - 0.5 * window + 0.5 * h;

    // φ transform first: one series in z per order.
    let mut series = vec![Complex64::new(0.0, 0.0); nus.len() * n_z];
    let mut column = vec![0.0; n_phi];
    let mut mass = 0.0;
    for n in 0..n_z {
        let z = z0 + n as f64 * h;
        // Loops are coaxial, so every circumferential sample takes the same value.
        column.fill(coil_field(coil, model.rho1, z).0);
        mass += column.iter().map(|c| c.abs()).sum::<f64>() * h / n_phi as f64;
        for (i, &nu) in nus.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, &c) in column.iter().enumerate() {
                let phi = 2.0 * PI * p as f64 / n_phi as f64;
                acc += Complex64::from_polar(c, -(nu as f64) * phi);
            }
            series[i * n_z + n] = acc / n_phi as f64;
        }
    }

    let mut out = vec![Complex64::new(0.0, 0.0); nus.len() * kappas.len()];
    let mut phase = vec![Complex64::new(0.0, 0.0); n_z];
    for (k, &kappa) in kappas.iter().enumerate() {
        for (n, ph) in phase.iter_mut().enumerate() {
            *ph = Complex64::from_polar(h, -kappa * (z0 + n as f64 * h));
        }
        for i in 0..nus.len() {
            let s = &series[i * n_z..(i + 1) * n_z];
            out[i * kappas.len() + k] = s.iter().zip(&phase).map(|(a, b)| a * b).sum();
        }
    }
    (out, mass)
}

fn coil_ds(
    model: &PipeModel,
    coil: &CoilSpec,
    nus: &[i32],
    kappas: &[f64],
    cfg: &CoilQuadrature,
) -> Result<Vec<Complex64>, EddyError> {
    model.validate()?;
    coil.validate(model)?;
    if kappas.iter().any(|&k| k == 0.0) {
        return Err(EddyError::KappaZero);
    }
    let n_phi = cfg.phi_samples.unwrap_or(2 * model.nu_max + 2).max(1);
    let clearance = model.rho1 - coil.outer_radius();
    let h0 = cfg.z_spacing.unwrap_or(2.0 * PI / (model.kappa_max + 40.0 / clearance));
    let window = 2.0 * PI / model.kappa_step();
    let mut n_z = ((window / h0).ceil() as usize).max(8);

    // Denominator jκ|κ| K'_ν(|κ|ρ⁽¹⁾).
    let mut denom = vec![Complex64::new(0.0, 0.0); nus.len() * kappas.len()];
    for (k, &kappa) in kappas.iter().enumerate() {
        let ka = kappa.abs();
        for (i, &nu) in nus.iter().enumerate() {
            let b = bessel_ik(nu, Complex64::new(ka * model.rho1, 0.0))?;
            denom[i * kappas.len() + k] = Complex64::new(0.0, kappa * ka) * b.dk;
        }
    }

    let (mut prev, _) = rho_transform(model, coil, nus, kappas, n_z, n_phi);
    let mut change = f64::INFINITY;
    for _ in 0..cfg.max_refinements {
        n_z *= 2;
        let (next, mass) = rho_transform(model, coil, nus, kappas, n_z, n_phi);
        // Converge on the transform itself against an absolute scale; dividing
        // by K' first would weight the high-κ nodes, where the transform is
        // rounding-limited.
        let diff = prev.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
        change = if mass > 0.0 { diff / mass } else { 0.0 };
        if change <= cfg.tol {
            return Ok(next.iter().zip(&denom).map(|(a, d)| a / d).collect());
        }
        prev = next;
    }
    Err(EddyError::QuadratureNotConverged { refinements: cfg.max_refinements, change })
}

/// Coil source coefficient from the on-cylinder radial flux density.
pub fn coil_spectrum(
    model: &PipeModel,
    coil: &CoilSpec,
    nu: i32,
    kappa: f64,
    cfg: &CoilQuadrature,
) -> Result<Complex64, EddyError> {
    Ok(coil_ds(model, coil, &[nu], &[kappa], cfg)?[0])
}

pub fn coil_spectrum_grid(model: &PipeModel, coil: &CoilSpec, cfg: &CoilQuadrature) -> Result<SourceSpectrum, EddyError> {
    let nus: Vec<i32> = model.nu_range().collect();
    let kappas = model.kappa_nodes();
    let values = coil_ds(model, coil, &nus, &kappas, cfg)?;
    Ok(SourceSpectrum { nu_max: model.nu_max, n_kappa: kappas.len(), values, radius: coil.outer_radius() })
}

fn sensor_term(model: &PipeModel, sensor: &SensorSpec, nu: i32, kappa: f64, i: Complex64, di: Complex64) -> Complex64 {
    let j = Complex64::new(0.0, 1.0);
    let ka = kappa.abs();
    let [n_rho, n_phi, n_z] = sensor.axis;
    let bracket = j * ka * di * n_rho + i * (nu as f64 / kappa / sensor.rho * n_phi) + i * n_z;
    let pre = j * (MU0 / (PI * PI * PI * model.omega));
    pre * bracket * Complex64::from_polar(1.0, -(nu as f64) * sensor.phi - kappa * sensor.z)
}

/// Unit-sensor source coefficient, evaluated from the closed form.
pub fn sensor_spectrum(model: &PipeModel, sensor: &SensorSpec, nu: i32, kappa: f64) -> Result<Complex64, EddyError> {
    if kappa == 0.0 {
        return Err(EddyError::KappaZero);
    }
    sensor.validate(model)?;
    let b = bessel_ik(nu, Complex64::new(kappa.abs() * sensor.rho, 0.0))?;
    Ok(sensor_term(model, sensor, nu, kappa, b.i, b.di))
}

pub fn sensor_spectrum_grid(model: &PipeModel, sensor: &SensorSpec) -> Result<SourceSpectrum, EddyError> {
    model.validate()?;
    sensor.validate(model)?;
    let kappas = model.kappa_nodes();
    let nk = kappas.len();
    let nm = model.nu_max as i32;
    let mut values = vec![Complex64::new(0.0, 0.0); (2 * model.nu_max + 1) * nk];
    for (k, &kappa) in kappas.iter().enumerate() {
        let b = bessel_ik_orders(model.nu_max, Complex64::new(kappa.abs() * sensor.rho, 0.0))?;
        for nu in -nm..=nm {
            let bn = &b[nu.unsigned_abs() as usize];
            values[(nu + nm) as usize * nk + k] = sensor_term(model, sensor, nu, kappa, bn.i, bn.di);
        }
    }
    Ok(SourceSpectrum { nu_max: model.nu_max, n_kappa: nk, values, radius: sensor.rho })
}
