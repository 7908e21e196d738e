//! The 6×6 interface system per mode `(ν, κ)` and the table of unit-source
//! responses over the spectral grid.

use alloc::vec;
use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;

use num_complex::Complex64;

use super::bessel::{bessel_ik_scaled_orders, ScaledIk};
use super::model::{EddyError, PipeModel};

/// Condition numbers above this mark a mode as singular.
pub const CONDITION_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCoefficients {
    pub c_ec: Complex64,
    pub c_a: Complex64,
    pub d_a: Complex64,
    pub c_b: Complex64,
    pub d_b: Complex64,
    pub d3: Complex64,
    pub ds: Complex64,
}

impl SpectralCoefficients {
    pub fn zero() -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self { c_ec: z, c_a: z, d_a: z, c_b: z, d_b: z, d3: z, ds: z }
    }

    /// Unknowns in system order `(C_ec, C_a, D_a, C_b, D_b, D3)`.
    pub fn unknowns(&self) -> [Complex64; 6] {
        [self.c_ec, self.c_a, self.d_a, self.c_b, self.d_b, self.d3]
    }

    fn from_unknowns(u: [Complex64; 6], ds: Complex64) -> Self {
        Self { c_ec: u[0], c_a: u[1], d_a: u[2], c_b: u[3], d_b: u[4], d3: u[5], ds }
    }

    pub fn scaled(&self, f: Complex64) -> Self {
        let u = self.unknowns().map(|v| v * f);
        Self::from_unknowns(u, self.ds * f)
    }
}

/// The interface system with exponentially scaled columns: the true unknown
/// `c` equals the solution entry times `e^{−exponents[c]}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceSystem {
    pub matrix: [[Complex64; 6]; 6],
    pub rhs: [Complex64; 6],
    pub exponents: [f64; 6],
}

/// Scaled Bessel values of order `|ν|` at `|κ|ρ⁽¹⁾`, `|κ|ρ⁽²⁾`, `λρ⁽¹⁾`, `λρ⁽²⁾`.
#[derive(Debug, Clone, Copy)]
struct ModeBessel {
    air1: ScaledIk,
    air2: ScaledIk,
    wall1: ScaledIk,
    wall2: ScaledIk,
}

fn mode_bessel_orders(model: &PipeModel, kappa_abs: f64) -> Result<Vec<ModeBessel>, EddyError> {
    let lambda = model.lambda2(kappa_abs);
    let n = model.nu_max;
    let air1 = bessel_ik_scaled_orders(n, Complex64::new(kappa_abs * model.rho1, 0.0))?;
    let air2 = bessel_ik_scaled_orders(n, Complex64::new(kappa_abs * model.rho2, 0.0))?;
    let wall1 = bessel_ik_scaled_orders(n, lambda * model.rho1)?;
    let wall2 = bessel_ik_scaled_orders(n, lambda * model.rho2)?;
    Ok((0..=n).map(|i| ModeBessel { air1: air1[i], air2: air2[i], wall1: wall1[i], wall2: wall2[i] }).collect())
}

fn build_system(model: &PipeModel, nu: i32, kappa: f64, ds: Complex64, b: &ModeBessel) -> InterfaceSystem {
    let j = Complex64::new(0.0, 1.0);
    let (r1, r2) = (model.rho1, model.rho2);
    let ka = kappa.abs();
    let lambda = model.lambda2(ka);
    let k2 = model.k2_wall();
    let mu_r = model.mu_r2;
    let nuf = nu as f64;
    let lr = lambda.re;

    let exponents = [ka * r1, lr * r2, -lr * r1, lr * r2, -lr * r1, -ka * r2];
    // Wall columns of the I type are scaled to ρ⁽²⁾, K type to ρ⁽¹⁾.
    let i_at1 = (lr * (r1 - r2)).exp();
    let k_at2 = (-lr * (r2 - r1)).exp();
    let (wi1, wdi1, wk1, wdk1) = (b.wall1.i * i_at1, b.wall1.di * i_at1, b.wall1.k, b.wall1.dk);
    let (wi2, wdi2, wk2, wdk2) = (b.wall2.i, b.wall2.di, b.wall2.k * k_at2, b.wall2.dk * k_at2);
    let lam2 = lambda * lambda;
    let kap2 = kappa * kappa;
    let z = Complex64::new(0.0, 0.0);

    let matrix = [
        [
            -j * (kappa * ka) * b.air1.di,
            j * kappa * lambda * wdi1,
            j * kappa * lambda * wdk1,
            -j * nuf * k2 / r1 * wi1,
            -j * nuf * k2 / r1 * wk1,
            z,
        ],
        [
            b.air1.i * (kappa * nuf / r1),
            -wi1 * (kappa * nuf / (mu_r * r1)),
            -wk1 * (kappa * nuf / (mu_r * r1)),
            k2 * lambda / mu_r * wdi1,
            k2 * lambda / mu_r * wdk1,
            z,
        ],
        [b.air1.i * kap2, -lam2 / mu_r * wi1, -lam2 / mu_r * wk1, z, z, z],
        [
            z,
            j * kappa * lambda * wdi2,
            j * kappa * lambda * wdk2,
            -j * nuf * k2 / r2 * wi2,
            -j * nuf * k2 / r2 * wk2,
            -j * (kappa * ka) * b.air2.dk,
        ],
        [
            z,
            -wi2 * (kappa * nuf / (mu_r * r2)),
            -wk2 * (kappa * nuf / (mu_r * r2)),
            k2 * lambda / mu_r * wdi2,
            k2 * lambda / mu_r * wdk2,
            b.air2.k * (kappa * nuf / r2),
        ],
        [z, -lam2 / mu_r * wi2, -lam2 / mu_r * wk2, z, z, b.air2.k * kap2],
    ];
    // The source column is not scaled, so its unscaled K values enter the rhs.
    let down = (-ka * r1).exp();
    let rhs = [
        j * (kappa * ka) * b.air1.dk * down * ds,
        -b.air1.k * (kappa * nuf / r1) * down * ds,
        -b.air1.k * kap2 * down * ds,
        z,
        z,
        z,
    ];
    InterfaceSystem { matrix, rhs, exponents }
}

/// The scaled interface system for one mode.
pub fn interface_system(model: &PipeModel, nu: i32, kappa: f64, ds: Complex64) -> Result<InterfaceSystem, EddyError> {
    if kappa == 0.0 {
        return Err(EddyError::KappaZero);
    }
    let order = nu.unsigned_abs() as usize;
    let m = PipeModel { nu_max: order, ..*model };
    let b = mode_bessel_orders(&m, kappa.abs())?;
    Ok(build_system(model, nu, kappa, ds, &b[order]))
}

type Mat6 = [[Complex64; 6]; 6];

/// LU with partial pivoting; `None` on an exactly zero pivot.
fn lu(mut a: Mat6) -> Option<(Mat6, [usize; 6])> {
    let mut perm = [0, 1, 2, 3, 4, 5];
    for c in 0..6 {
        let p = (c..6).max_by(|&x, &y| a[x][c].norm().total_cmp(&a[y][c].norm()))?;
        if a[p][c].norm() == 0.0 {
            return None;
        }
        a.swap(c, p);
        perm.swap(c, p);
        for r in c + 1..6 {
            let f = a[r][c] / a[c][c];
            a[r][c] = f;
            for k in c + 1..6 {
                let t = a[c][k];
                a[r][k] -= f * t;
            }
        }
    }
    Some((a, perm))
}

fn lu_solve(f: &Mat6, perm: &[usize; 6], b: &[Complex64; 6]) -> [Complex64; 6] {
    let mut x = [Complex64::new(0.0, 0.0); 6];
    for i in 0..6 {
        let mut s = b[perm[i]];
        for k in 0..i {
            s -= f[i][k] * x[k];
        }
        x[i] = s;
    }
    for i in (0..6).rev() {
        let mut s = x[i];
        for k in i + 1..6 {
            s -= f[i][k] * x[k];
        }
        x[i] = s / f[i][i];
    }
    x
}

fn norm1(a: &Mat6) -> f64 {
    (0..6).map(|c| (0..6).map(|r| a[r][c].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Solves an interface system; returns the unscaled unknowns and the 1-norm
/// condition number of the equilibrated matrix.
pub fn solve_system(sys: &InterfaceSystem) -> (Option<[Complex64; 6]>, f64) {
    let mut a = sys.matrix;
    let mut b = sys.rhs;
    for r in 0..6 {
        let m = a[r].iter().fold(0.0f64, |m, v| m.max(v.norm()));
        if m > 0.0 {
            for v in a[r].iter_mut() {
                *v /= m;
            }
            b[r] /= m;
        }
    }
    let mut col = [1.0; 6];
    for (c, cs) in col.iter_mut().enumerate() {
        let m = (0..6).fold(0.0f64, |m, r| m.max(a[r][c].norm()));
        if m > 0.0 {
            *cs = 1.0 / m;
            for row in a.iter_mut() {
                row[c] *= *cs;
            }
        }
    }
    let Some((f, perm)) = lu(a) else {
        return (None, f64::INFINITY);
    };
    let mut inv_norm = 0.0f64;
    for c in 0..6 {
        let mut e = [Complex64::new(0.0, 0.0); 6];
        e[c] = Complex64::new(1.0, 0.0);
        let x = lu_solve(&f, &perm, &e);
        inv_norm = inv_norm.max(x.iter().map(|v| v.norm()).sum());
    }
    let cond = norm1(&a) * inv_norm;
    let v = lu_solve(&f, &perm, &b);
    let mut u = [Complex64::new(0.0, 0.0); 6];
    for c in 0..6 {
        u[c] = v[c] * col[c] * (-sys.exponents[c]).exp();
    }
    let finite = u.iter().all(|x| x.re.is_finite() && x.im.is_finite());
    (finite.then_some(u), if cond.is_finite() { cond } else { f64::INFINITY })
}

pub fn solve_interface_coefficients(
    model: &PipeModel,
    nu: i32,
    kappa: f64,
    ds: Complex64,
) -> Result<SpectralCoefficients, EddyError> {
    let sys = interface_system(model, nu, kappa, ds)?;
    match solve_system(&sys) {
        (Some(u), cond) if cond <= CONDITION_LIMIT => Ok(SpectralCoefficients::from_unknowns(u, ds)),
        (_, condition) => Err(EddyError::SingularLambda { nu, kappa, condition }),
    }
}

/// Unit-source (`D^(s) = 1`) responses for every mode of a model. Coefficients
/// for any source follow by multiplying with its `D^(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTable {
    pub model: PipeModel,
    pub kappas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Indexed `(ν + ν_max)·n_κ + k`; skipped modes hold zeros.
    pub unit: Vec<SpectralCoefficients>,
    /// `(ν, κ, condition)` of every mode dropped as singular.
    pub skipped: Vec<(i32, f64, f64)>,
}

impl ModeTable {
    pub fn new(model: &PipeModel) -> Result<Self, EddyError> {
        model.validate()?;
        let kappas = model.kappa_nodes();
        let weights = model.kappa_weights();
        let nk = kappas.len();
        let half = model.kappa_samples;
        let nm = model.nu_max as i32;
        let one = Complex64::new(1.0, 0.0);
        let mut unit = vec![SpectralCoefficients::zero(); (2 * model.nu_max + 1) * nk];
        let mut skipped = Vec::new();
        for h in 0..half {
            let b = mode_bessel_orders(model, kappas[half + h])?;
            // Nodes at ±κ share Bessel values.
            for k in [half - 1 - h, half + h] {
                let kappa = kappas[k];
                for nu in -nm..=nm {
                    let sys = build_system(model, nu, kappa, one, &b[nu.unsigned_abs() as usize]);
                    match solve_system(&sys) {
                        (Some(u), cond) if cond <= CONDITION_LIMIT => {
                            unit[(nu + nm) as usize * nk + k] = SpectralCoefficients::from_unknowns(u, one);
                        }
                        (_, cond) => skipped.push((nu, kappa, cond)),
                    }
                }
            }
        }
        Ok(Self { model: *model, kappas, weights, unit, skipped })
    }

    pub fn n_kappa(&self) -> usize {
        self.kappas.len()
    }

    pub fn unit(&self, nu: i32, k: usize) -> &SpectralCoefficients {
        &self.unit[(nu + self.model.nu_max as i32) as usize * self.kappas.len() + k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_small_for_default_mode() {
        let m = PipeModel::default();
        let ds = Complex64::new(0.3, -0.2);
        let sys = interface_system(&m, 2, -150.0, ds).unwrap();
        let (u, cond) = solve_system(&sys);
        let u = u.unwrap();
        assert!(cond < CONDITION_LIMIT);
        for r in 0..6 {
            let mut acc = -sys.rhs[r];
            let mut scale = sys.rhs[r].norm();
            for c in 0..6 {
                let t = sys.matrix[r][c] * u[c] * sys.exponents[c].exp();
                acc += t;
                scale += t.norm();
            }
            assert!(acc.norm() <= 1e-12 * scale, "row {r}: {}", acc.norm() / scale);
        }
    }

    #[test]
    fn zero_kappa_rejected() {
        let m = PipeModel::default();
        assert_eq!(solve_interface_coefficients(&m, 0, 0.0, Complex64::new(1.0, 0.0)), Err(EddyError::KappaZero));
    }
}
