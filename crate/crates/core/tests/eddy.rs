mod support;

use std::f64::consts::PI;

use bitrec_core::eddy::bessel::{bessel_ik, bessel_ik_orders};
use bitrec_core::eddy::interface::{interface_system, solve_system};
use bitrec_core::eddy::sensitivity::{estimate_logit, logit, phi_complex};
use bitrec_core::eddy::source::{coil_spectrum, coil_spectrum_grid, sensor_spectrum_grid, CoilQuadrature};
use bitrec_core::eddy::*;
use num_complex::Complex64;
use proptest::prelude::*;
use support::eddy_checks;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

// ---------- Bessel oracles ----------

/// `∫₀^∞ e^{−z cosh t} cosh(νt) dt` by the trapezoid rule, with the sum of
/// absolute values as a rounding estimate.
fn k_quadrature(nu: f64, z: Complex64) -> (Complex64, f64) {
    let h = 0.01;
    let mut sum = c(0.0, 0.0);
    let mut abs = 0.0;
    let mut t = 0.0f64;
    let mut past_peak = false;
    let mut last = 0.0;
    loop {
        let f = (-z * t.cosh()).exp() * (nu * t).cosh();
        let w = if t == 0.0 { 0.5 * h } else { h };
        sum += f * w;
        abs += f.norm() * w;
        if f.norm() < last {
            past_peak = true;
        }
        last = f.norm();
        if past_peak && f.norm() < 1e-20 * abs {
            break;
        }
        t += h;
    }
    (sum, abs * 1e-15)
}

/// `I_n(z)` from the better conditioned of the power series and the
/// `(1/π)∫₀^π e^{z cos θ} cos nθ dθ` representation.
fn i_oracle(n: usize, z: Complex64) -> (Complex64, f64) {
    let mut term = (z * 0.5).powu(n as u32);
    for k in 1..=n {
        term /= k as f64;
    }
    let q = z * z * 0.25;
    let mut series = c(0.0, 0.0);
    let mut series_abs = 0.0;
    for k in 0..2000 {
        series += term;
        series_abs += term.norm();
        if term.norm() < 1e-18 * series.norm() && k > 2 {
            break;
        }
        term = term * q / ((k + 1) as f64 * (k + 1 + n) as f64);
    }
    let nq = 4000;
    let mut integral = c(0.0, 0.0);
    let mut int_abs = 0.0;
    for i in 0..nq {
        let th = 2.0 * PI * i as f64 / nq as f64;
        let f = (z * th.cos()).exp() * (n as f64 * th).cos();
        integral += f;
        int_abs += f.norm();
    }
    integral /= nq as f64;
    int_abs /= nq as f64;
    if series_abs <= int_abs {
        (series, series_abs * 1e-15)
    } else {
        (integral, int_abs * 1e-15)
    }
}

#[test]
fn k0_at_one_matches_integral() {
    let (k, _) = k_quadrature(0.0, c(1.0, 0.0));
    let b = bessel_ik(0, c(1.0, 0.0)).unwrap();
    assert!((k.re - 0.421_024_438_2).abs() < 1e-10);
    assert!((b.k - k).norm() < 1e-13);
}

#[test]
fn bessel_against_quadrature() {
    let mut checked = 0;
    for &r in &[0.1, 0.7, 2.0, 5.0, 13.0, 40.0, 100.0, 200.0] {
        for &arg in &[0.0, PI / 8.0, PI / 4.0] {
            let z = Complex64::from_polar(r, arg);
            let b = bessel_ik_orders(40, z).unwrap();
            for n in [0usize, 1, 3, 12, 25, 40] {
                let (kq, kerr) = k_quadrature(n as f64, z);
                assert!(
                    (b[n].k - kq).norm() <= 1e-10 * kq.norm() + kerr,
                    "K_{n}({z}): {} vs {}",
                    b[n].k,
                    kq
                );
                let (iq, ierr) = i_oracle(n, z);
                if ierr <= 1e-11 * iq.norm() {
                    assert!(
                        (b[n].i - iq).norm() <= 1e-10 * iq.norm(),
                        "I_{n}({z}): {} vs {}",
                        b[n].i,
                        iq
                    );
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 100, "only {checked} I values had a usable oracle");
}

#[test]
fn derivative_identities() {
    let z = c(3.0, 1.5);
    let b = bessel_ik_orders(8, z).unwrap();
    for n in 1..8 {
        let di = (b[n - 1].i + b[n + 1].i) * 0.5;
        let dk = -(b[n - 1].k + b[n + 1].k) * 0.5;
        assert!((b[n].di - di).norm() < 1e-13 * di.norm());
        assert!((b[n].dk - dk).norm() < 1e-13 * dk.norm());
    }
}

#[test]
fn wronskian_sweep() {
    let worst = eddy_checks::wronskian_sweep();
    assert!(worst <= 1e-10, "worst Wronskian error {worst:e}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn wronskian_property(r in 0.1f64..200.0, arg in 0.0f64..(PI / 2.0), n in 0usize..40) {
        let z = Complex64::from_polar(r, arg);
        let b = bessel_ik_orders(n + 1, z).unwrap();
        let w = b[n].i * b[n + 1].k + b[n + 1].i * b[n].k;
        prop_assert!((w * z - 1.0).norm() < 1e-10);
    }
}

// ---------- sources ----------

fn single_loop(radius: f64, z: f64) -> CoilSpec {
    CoilSpec { loops: vec![CoilLoop { radius, z, ampere_turns: 1.0, sign: 1.0 }] }
}

#[test]
fn loop_field_matches_segment_sum() {
    let worst = eddy_checks::loop_field_against_segments();
    assert!(worst < 1e-8, "{worst:e}");
}

/// Worst error of the coil spectrum against `μ₀ I a I₁(|κ|a) e^{−jκz₀}/|κ|`,
/// measured at the scale of the on-wall field spectrum jκ|κ|K'_ν(|κ|ρ⁽¹⁾)·D,
/// since D itself grows like e^{|κ|a} where the field is negligible.
fn coil_spectrum_error(kappa_samples: usize) -> f64 {
    let model = PipeModel { kappa_samples, nu_max: 3, ..PipeModel::default() };
    let a = 8e-3;
    let z0 = 1.5e-3;
    let coil = single_loop(a, z0);
    let grid = coil_spectrum_grid(&model, &coil, &CoilQuadrature::default()).unwrap();
    let mut worst = 0.0f64;
    let mut biggest = 0.0f64;
    for (k, &kappa) in model.kappa_nodes().iter().enumerate() {
        let ka = kappa.abs();
        let i1 = bessel_ik(1, c(ka * a, 0.0)).unwrap().i;
        let wall = bessel_ik(0, c(ka * model.rho1, 0.0)).unwrap().dk * (kappa * ka);
        let expect = i1 * (MU0 * a / ka) * Complex64::from_polar(1.0, -kappa * z0);
        worst = worst.max(((grid.get(0, k) - expect) * wall).norm());
        biggest = biggest.max((expect * wall).norm());
        for nu in [1, -3] {
            let wall = bessel_ik(nu, c(ka * model.rho1, 0.0)).unwrap().dk * (kappa * ka);
            assert!((grid.get(nu, k) * wall).norm() < 1e-12 * biggest.max((expect * wall).norm()));
        }
    }
    worst / biggest
}

#[test]
fn coil_spectrum_matches_vector_potential_form() {
    // The transform is taken over one period 2π/Δκ of the grid. What remains is
    // the field of the periodic images, which falls like the period cubed.
    let coarse = coil_spectrum_error(512);
    let fine = coil_spectrum_error(2048);
    assert!(coarse < 1e-5, "{coarse:e}");
    assert!(fine < 1e-7, "{fine:e}");
    assert!(coarse / fine > 30.0, "{coarse:e} vs {fine:e}");
}

#[test]
fn coil_spectrum_reality_and_single_mode() {
    let model = PipeModel::default();
    let coil = CoilSpec {
        loops: vec![
            CoilLoop { radius: 8e-3, z: 2e-3, ampere_turns: 1.0, sign: 1.0 },
            CoilLoop { radius: 8e-3, z: -2e-3, ampere_turns: 1.0, sign: 1.0 },
        ],
    };
    let q = CoilQuadrature::default();
    let kappa = 7.0 * model.kappa_step();
    let plus = coil_spectrum(&model, &coil, 0, kappa, &q).unwrap();
    let minus = coil_spectrum(&model, &coil, 0, -kappa, &q).unwrap();
    assert!((minus - plus.conj()).norm() < 1e-12 * plus.norm());
    assert!(coil_spectrum(&model, &coil, 2, kappa, &q).unwrap().norm() < 1e-12 * plus.norm());
    assert_eq!(coil_spectrum(&model, &coil, 0, 0.0, &q), Err(EddyError::KappaZero));
}

#[test]
fn coil_quadrature_reports_non_convergence() {
    let model = PipeModel::default();
    let q = CoilQuadrature { z_spacing: Some(5e-3), max_refinements: 1, ..CoilQuadrature::default() };
    let r = coil_spectrum(&model, &single_loop(8e-3, 0.0), 0, 100.0 * model.kappa_step(), &q);
    assert!(matches!(r, Err(EddyError::QuadratureNotConverged { .. })));
}

#[test]
fn sensor_spectrum_closed_form() {
    let model = PipeModel::default();
    let kappa = 250.0;
    let axial = SensorSpec { rho: 9.5e-3, phi: 0.0, z: 0.0, axis: [0.0, 0.0, 1.0] };
    for nu in [0, 2, -5] {
        let d = sensor_spectrum(&model, &axial, nu, kappa).unwrap();
        let (iq, _) = i_oracle(nu.unsigned_abs() as usize, c(kappa * axial.rho, 0.0));
        let expect = c(0.0, MU0 / (PI * PI * PI * model.omega)) * iq;
        assert!((d - expect).norm() < 1e-10 * expect.norm());
    }
    let circ = SensorSpec { axis: [0.0, 1.0, 0.0], ..axial };
    assert_eq!(sensor_spectrum(&model, &circ, 0, kappa).unwrap(), c(0.0, 0.0));
    let shift = 1.3e-3;
    let moved = SensorSpec { z: shift, ..axial };
    let a = sensor_spectrum(&model, &axial, 3, kappa).unwrap();
    let b = sensor_spectrum(&model, &moved, 3, kappa).unwrap();
    assert!((b - a * Complex64::from_polar(1.0, -kappa * shift)).norm() < 1e-14 * a.norm());
    assert_eq!(sensor_spectrum(&model, &axial, 1, 0.0), Err(EddyError::KappaZero));
}

#[test]
fn invalid_specs_rejected() {
    let model = PipeModel::default();
    let bad = SensorSpec { rho: 11e-3, phi: 0.0, z: 0.0, axis: [0.0, 1.0, 0.0] };
    assert!(matches!(bad.validate(&model), Err(EddyError::InvalidModel(_))));
    let skew = SensorSpec { rho: 9e-3, axis: [0.0, 1.0, 1e-5], ..bad };
    assert!(skew.validate(&model).is_err());
    assert!(single_loop(11e-3, 0.0).validate(&model).is_err());
    assert!(PipeModel { rho2: 9e-3, ..model }.validate().is_err());
    assert!(PipeModel { kappa_max: 1e5, ..model }.validate().is_err());
}

// ---------- interface system ----------

#[test]
fn vacuum_pipe_has_no_eddy_term() {
    let model = PipeModel { sigma2: 1e-6, ..PipeModel::default() };
    for (nu, kappa) in [(0, 50.0), (3, -400.0), (-7, 2500.0)] {
        let ds = c(0.7, 0.2);
        let s = solve_interface_coefficients(&model, nu, kappa, ds).unwrap();
        assert!(s.c_ec.norm() / ds.norm() < 1e-8, "{}", s.c_ec.norm());
        // Outside, the source field continues unchanged.
        assert!((s.d3 - ds).norm() / ds.norm() < 1e-8);
    }
}

#[test]
fn interface_residuals() {
    let model = PipeModel::default().with_frequency(4000.0);
    for (nu, kappa) in [(0, 6.0), (1, -90.0), (5, 700.0), (-12, 3000.0), (12, -3000.0)] {
        let sys = interface_system(&model, nu, kappa, c(1.0, -0.5)).unwrap();
        let (u, _) = solve_system(&sys);
        let u = u.unwrap();
        for r in 0..6 {
            let mut acc = -sys.rhs[r];
            let mut scale = sys.rhs[r].norm();
            for k in 0..6 {
                let t = sys.matrix[r][k] * u[k] * sys.exponents[k].exp();
                acc += t;
                scale += t.norm();
            }
            assert!(acc.norm() <= 1e-10 * scale);
        }
    }
}

#[test]
fn interface_continuity_random_modes() {
    let worst = eddy_checks::interface_continuity(1000, 11);
    assert!(worst <= 1e-10, "{worst:e}");
}

#[test]
fn frequency_conductivity_trade_leaves_system_unchanged() {
    let a = PipeModel::default();
    let b = PipeModel { omega: a.omega * 4.0, sigma2: a.sigma2 / 4.0, ..a };
    let sa = interface_system(&a, 2, 300.0, c(1.0, 0.0)).unwrap();
    let sb = interface_system(&b, 2, 300.0, c(1.0, 0.0)).unwrap();
    for r in 0..6 {
        for k in 0..6 {
            let (x, y) = (sa.matrix[r][k], sb.matrix[r][k]);
            assert!((x - y).norm() <= 1e-12 * x.norm().max(1e-300));
        }
    }
}

/// Double-double arithmetic for an independent re-solve of the 6×6 system.
#[derive(Clone, Copy, Debug)]
struct Dd(f64, f64);

impl Dd {
    fn new(x: f64) -> Self {
        Dd(x, 0.0)
    }
    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let v = s - a;
        Dd(s, (a - (s - v)) + (b - v))
    }
    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.0, o.0);
        let t = Dd::two_sum(self.1, o.1);
        let r = Dd::two_sum(s.0, s.1 + t.0);
        Dd::two_sum(r.0, r.1 + t.1)
    }
    fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }
    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p);
        Dd::two_sum(p, e + self.0 * o.1 + self.1 * o.0)
    }
    fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd::new(q1)).neg());
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd::new(q2)).neg());
        let q3 = r.0 / o.0;
        Dd::two_sum(q1, q2).add(Dd::new(q3))
    }
}

#[derive(Clone, Copy, Debug)]
struct Cdd(Dd, Dd);

impl Cdd {
    fn from(z: Complex64) -> Self {
        Cdd(Dd::new(z.re), Dd::new(z.im))
    }
    fn sub(self, o: Cdd) -> Cdd {
        Cdd(self.0.add(o.0.neg()), self.1.add(o.1.neg()))
    }
    fn mul(self, o: Cdd) -> Cdd {
        Cdd(self.0.mul(o.0).add(self.1.mul(o.1).neg()), self.0.mul(o.1).add(self.1.mul(o.0)))
    }
    fn div(self, o: Cdd) -> Cdd {
        let d = o.0.mul(o.0).add(o.1.mul(o.1));
        let conj = Cdd(o.0, o.1.neg());
        let n = self.mul(conj);
        Cdd(n.0.div(d), n.1.div(d))
    }
    fn norm(self) -> f64 {
        self.0 .0.hypot(self.1 .0)
    }
    fn to_f64(self) -> Complex64 {
        c(self.0 .0 + self.0 .1, self.1 .0 + self.1 .1)
    }
}

#[test]
fn interface_solution_matches_extended_precision() {
    let model = PipeModel::default();
    let ds = c(1.0, 0.0);
    let sys = interface_system(&model, 0, 100.0, ds).unwrap();
    let got = solve_interface_coefficients(&model, 0, 100.0, ds).unwrap().unknowns();

    let mut a: Vec<Vec<Cdd>> = sys.matrix.iter().map(|r| r.iter().map(|&v| Cdd::from(v)).collect()).collect();
    let mut b: Vec<Cdd> = sys.rhs.iter().map(|&v| Cdd::from(v)).collect();
    for col in 0..6 {
        let p = (col..6).max_by(|&x, &y| a[x][col].norm().total_cmp(&a[y][col].norm())).unwrap();
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..6 {
            let f = a[r][col].div(a[col][col]);
            for k in col..6 {
                let t = f.mul(a[col][k]);
                a[r][k] = a[r][k].sub(t);
            }
            b[r] = b[r].sub(f.mul(b[col]));
        }
    }
    let mut x = vec![Cdd::from(c(0.0, 0.0)); 6];
    for r in (0..6).rev() {
        let mut s = b[r];
        for k in r + 1..6 {
            s = s.sub(a[r][k].mul(x[k]));
        }
        x[r] = s.div(a[r][r]);
    }
    for k in 0..6 {
        let expect = x[k].to_f64() * (-sys.exponents[k]).exp();
        if expect.norm() == 0.0 {
            assert!(got[k].norm() < 1e-300);
            continue;
        }
        assert!((got[k] - expect).norm() <= 1e-8 * expect.norm(), "unknown {k}: {} vs {}", got[k], expect);
    }
}

#[test]
fn transfer_function_is_even_in_mode() {
    // Λ(−ν, −κ) differs from Λ(ν, κ) by a sign flip of rows 1 and 4, so the unit
    // responses at (ν, κ) and (−ν, −κ) coincide.
    let table = ModeTable::new(&PipeModel::default()).unwrap();
    let nk = table.n_kappa();
    for nu in [0, 1, 7, 12] {
        for k in [0, 3, nk / 2 - 1, nk - 1] {
            let a = table.unit(nu, k).unknowns();
            let b = table.unit(-nu, nk - 1 - k).unknowns();
            for i in 0..6 {
                assert!((a[i] - b[i]).norm() <= 1e-12 * a[i].norm().max(1e-300));
            }
        }
    }
    // Only the near-static high-order modes are dropped, where I_ν(|κ|ρ) is ~1e-24.
    let step = table.model.kappa_step();
    assert!(table.skipped.iter().all(|&(nu, kappa, _)| nu.abs() >= 10 && kappa.abs() < 2.5 * step), "{:?}", table.skipped);
    for &(nu, kappa, _) in &table.skipped {
        assert!(table.skipped.iter().any(|&(n2, k2, _)| n2 == -nu && k2 == -kappa));
    }
}

// ---------- fields ----------

#[test]
fn vacuum_field_matches_biot_savart() {
    let worst = eddy_checks::vacuum_limit(20, 3);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn region_is_checked() {
    let model = PipeModel::default();
    let table = ModeTable::new(&PipeModel { nu_max: 1, kappa_samples: 16, ..model }).unwrap();
    let sensor = SensorSpec { rho: 9.5e-3, phi: 0.0, z: 0.0, axis: [0.0, 1.0, 0.0] };
    let src = sensor_spectrum_grid(&table.model, &sensor).unwrap();
    let r = evaluate_fields(&table, &src, 2, &[[10.0e-3, 0.0, 0.0]]);
    assert!(matches!(r, Err(EddyError::RegionMismatch { region: 2, .. })));
    let r = evaluate_fields(&table, &src, 1, &[[9.0e-3, 0.0, 0.0]]);
    assert!(matches!(r, Err(EddyError::RegionMismatch { region: 1, .. })));
    let other = sensor_spectrum_grid(&model, &sensor).unwrap();
    assert!(matches!(
        evaluate_fields(&table, &other, 1, &[[10.0e-3, 0.0, 0.0]]),
        Err(EddyError::DimensionMismatch(_))
    ));
}

#[test]
fn rotating_source_and_point_together_preserves_fields() {
    let model = PipeModel { kappa_samples: 256, ..PipeModel::default() };
    let table = ModeTable::new(&model).unwrap();
    let alpha = 0.83;
    let s1 = SensorSpec { rho: 9.5e-3, phi: 0.3, z: 1e-3, axis: [0.0, 1.0, 0.0] };
    let s2 = SensorSpec { phi: 0.3 + alpha, ..s1 };
    let f1 = sensor_spectrum_grid(&model, &s1).unwrap();
    let f2 = sensor_spectrum_grid(&model, &s2).unwrap();
    for (region, rho) in [(1u8, 10.2e-3), (2, 11.3e-3), (3, 13.0e-3)] {
        let a = evaluate_fields(&table, &f1, region, &[[rho, 1.0, 2e-3]]).unwrap().values[0];
        let b = evaluate_fields(&table, &f2, region, &[[rho, 1.0 + alpha, 2e-3]]).unwrap().values[0];
        let h_scale = a.h.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let e_scale = a.e.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..3 {
            assert!((a.h[i] - b.h[i]).norm() <= 1e-9 * h_scale, "region {region}");
            assert!((a.e[i] - b.e[i]).norm() <= 1e-9 * e_scale, "region {region}");
        }
    }
}

/// `∇·B` by fourth-order central differences, scaled by 1 mm so it is
/// comparable with `‖B‖`.
fn divergence(table: &ModeTable, src: &SourceSpectrum, region: u8, p: [f64; 3], mu: f64) -> (f64, f64) {
    let h = 1e-5;
    let b_at = |q: [f64; 3]| evaluate_fields(table, src, region, &[q]).unwrap().values[0].b(mu);
    let d4 = |f: &dyn Fn(f64) -> Complex64| (f(-2.0) - f(2.0) + (f(1.0) - f(-1.0)) * 8.0) / (12.0 * h);
    let rho = p[0];
    let drho = d4(&|s| {
        let r = rho + s * h;
        b_at([r, p[1], p[2]])[0] * r
    }) / rho;
    // Steps of arc length h, so this is already (1/ρ)∂B_φ/∂φ.
    let dphi = d4(&|s| b_at([rho, p[1] + s * h / rho, p[2]])[1]);
    let dz = d4(&|s| b_at([rho, p[1], p[2] + s * h])[2]);
    let b0 = b_at(p);
    let norm = b0.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    ((drho + dphi + dz).norm() * 1e-3, norm)
}

#[test]
fn flux_density_is_divergence_free() {
    let model = PipeModel { kappa_samples: 256, ..PipeModel::default() };
    let table = ModeTable::new(&model).unwrap();
    let sensor = SensorSpec { rho: 9.5e-3, phi: 0.4, z: 0.0, axis: [0.6, 0.0, 0.8] };
    let src = sensor_spectrum_grid(&model, &sensor).unwrap();
    let points = [
        (1u8, [10.1e-3, 0.2, 0.5e-3]),
        (2, [11.0e-3, 1.7, -1.0e-3]),
        (2, [11.9e-3, 3.0, 2.0e-3]),
        (2, [12.2e-3, 5.1, 0.0]),
        (3, [13.5e-3, 0.9, -2.5e-3]),
    ];
    for (region, p) in points {
        let mu = if region == 2 { model.mu2() } else { MU0 };
        let (div, norm) = divergence(&table, &src, region, p, mu);
        assert!(div < 1e-6 * norm, "region {region}: {div:e} vs {norm:e}");
    }
}

// ---------- sensitivities and images ----------

fn small_setup() -> (ModeTable, SourceSpectrum, Vec<SourceSpectrum>, VoxelGrid) {
    let model = PipeModel { nu_max: 6, kappa_samples: 128, kappa_max: 2000.0, ..PipeModel::default() };
    let table = ModeTable::new(&model).unwrap();
    let coil = CoilSpec {
        loops: vec![
            CoilLoop { radius: 8e-3, z: 2e-3, ampere_turns: 1.0, sign: 1.0 },
            CoilLoop { radius: 8e-3, z: -2e-3, ampere_turns: 1.0, sign: 1.0 },
        ],
    };
    let cs = coil_spectrum_grid(&model, &coil, &CoilQuadrature::default()).unwrap();
    let sensors: Vec<SourceSpectrum> = SensorSpec::ring(3, 9.5e-3, 0.0, [0.0, 1.0, 0.0])
        .iter()
        .map(|s| sensor_spectrum_grid(&model, s).unwrap())
        .collect();
    let grid = VoxelGrid::uniform(&model, 2, 6, -2e-3, 2e-3, 2);
    (table, cs, sensors, grid)
}

#[test]
fn sensitivity_is_linear_in_coil_current() {
    let (table, coil, sensors, grid) = small_setup();
    let s1 = build_sensitivity(&table, &coil, &sensors, &grid, 1).unwrap();
    let s2 = build_sensitivity(&table, &coil.scaled(c(2.0, 0.0)), &sensors, &grid, 1).unwrap();
    for (a, b) in s1.s_sigma.iter().zip(&s2.s_sigma).chain(s1.s_mu.iter().zip(&s2.s_mu)) {
        assert_eq!(*a * 2.0, *b);
    }
    assert!(s1.s_sigma.iter().all(|v| v.norm() > 0.0));
}

#[test]
fn sensitivity_rejects_voxels_outside_wall() {
    let (table, coil, sensors, mut grid) = small_setup();
    grid.rho_edges[0] = 9e-3;
    assert!(matches!(
        build_sensitivity(&table, &coil, &sensors, &grid, 1),
        Err(EddyError::VoxelOutsideRegion { voxel: 0 })
    ));
}

#[test]
fn first_order_response_is_linear() {
    let (table, coil, sensors, grid) = small_setup();
    let sens = build_sensitivity(&table, &coil, &sensors, &grid, 2).unwrap();
    let n = grid.len();
    let sigma = vec![table.model.sigma2; n];
    let mu = vec![MU0; n];
    let phi = phi_complex(&sens, &sigma, &mu).unwrap();
    // δσ = −0.01σ on voxel 0 and its half.
    let db = |scale: f64| -> Vec<Complex64> {
        (0..sens.m).map(|i| sens.s_sigma[i * n] * (-0.01 * table.model.sigma2 * scale)).collect()
    };
    let (full, half) = (db(1.0), db(0.5));
    for i in 0..sens.m {
        assert!((half[i] * 2.0 - full[i]).norm() <= 1e-15 * full[i].norm());
        // A vacated voxel (δσ = −σ) reproduces its Φ column.
        assert!((phi[i * n] - full[i] * 100.0).norm() <= 1e-12 * phi[i * n].norm());
    }
}

#[test]
fn phi_assembly() {
    let (table, coil, sensors, grid) = small_setup();
    let sens = build_sensitivity(&table, &coil, &sensors, &grid, 1).unwrap();
    let n = grid.len();
    let sigma = vec![table.model.sigma2; n];
    let mu0 = vec![MU0; n];
    let mats = assemble_phi(&[sens.clone()], &sigma, &mu0).unwrap();
    assert_eq!(mats.len(), 2);
    let phi = phi_complex(&sens, &sigma, &mu0).unwrap();
    for i in 0..sens.m {
        for j in 0..n {
            assert_eq!(mats[0][(i, j)], (sens.s_sigma[i * n + j] * -sigma[j]).re);
            assert_eq!(mats[1][(i, j)], phi[i * n + j].im);
        }
    }
    // Magnetic wall: the permeability term enters.
    let mu = vec![1.5 * MU0; n];
    let mag = phi_complex(&sens, &sigma, &mu).unwrap();
    assert!((mag[0] - phi[0]).norm() > 0.0);
    // Linearity in the sensitivities.
    let scaled = phi_complex(&sens.scaled(3.0), &sigma, &mu).unwrap();
    for (a, b) in mag.iter().zip(&scaled) {
        assert!((a * 3.0 - b).norm() <= 1e-15 * b.norm());
    }
    assert!(matches!(assemble_phi(&[sens], &sigma[1..], &mu0), Err(EddyError::DimensionMismatch(_))));
    let two = assemble_phi(&[], &sigma, &mu0).unwrap();
    assert!(two.is_empty());
}

#[test]
fn merge_edge_cases() {
    let model = PipeModel::default();
    let g = VoxelGrid::uniform(&model, 1, 4, 0.0, 1e-3, 1);
    let flat = VoxelImage::uniform(g.clone(), 0.5, 1.0, MU0);
    let out = merge_logodds(&[flat.clone(), flat.clone()], &[0.5; 4], LOGIT_LIMIT).unwrap();
    assert!(out.probabilities().iter().all(|&p| p == 0.5));
    let other = VoxelImage::uniform(VoxelGrid::uniform(&model, 1, 5, 0.0, 1e-3, 1), 0.5, 1.0, MU0);
    assert_eq!(merge_logodds(&[flat.clone(), other], &[0.5; 4], LOGIT_LIMIT), Err(EddyError::GridMismatch));
    let sure = VoxelImage { logodds: vec![estimate_logit(1.0); 4], ..flat.clone() };
    let out = merge_logodds(&[sure.clone(), sure.clone(), sure], &[0.5; 4], LOGIT_LIMIT).unwrap();
    assert!(out.logodds.iter().all(|&l| l == LOGIT_LIMIT));
    assert!((logit(0.9) + logit(0.1)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn merge_is_order_invariant(ps in prop::collection::vec(prop::collection::vec(0.001f64..0.999, 6), 2..6), seed in 0u64..1000) {
        let model = PipeModel::default();
        let g = VoxelGrid::uniform(&model, 1, 3, 0.0, 1e-3, 2);
        let images: Vec<VoxelImage> = ps.iter().map(|p| VoxelImage {
            logodds: p.iter().map(|&x| logit(x)).collect(),
            ..VoxelImage::uniform(g.clone(), 0.5, 1.0, MU0)
        }).collect();
        let mut shuffled = images.clone();
        let k = shuffled.len();
        shuffled.rotate_left((seed as usize) % k);
        shuffled.swap(0, k - 1);
        let priors = vec![0.3; 6];
        let a = merge_logodds(&images, &priors, LOGIT_LIMIT).unwrap();
        let b = merge_logodds(&shuffled, &priors, LOGIT_LIMIT).unwrap();
        prop_assert_eq!(a.logodds.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.logodds.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
