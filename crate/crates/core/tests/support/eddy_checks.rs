//! Structural checks of the pipe model shared by the core tests and the
//! acceptance suite. Each returns the worst relative error it saw.
#![allow(dead_code)]

use std::f64::consts::PI;

use bitrec_core::eddy::bessel::bessel_ik_orders;
use bitrec_core::eddy::fields::{unit_mode_field, RadialBasis};
use bitrec_core::eddy::source::{coil_field, coil_spectrum_grid, CoilQuadrature};
use bitrec_core::eddy::{evaluate_fields, CoilLoop, CoilSpec, ModeTable, PipeModel, MU0};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const IMAGING_FREQUENCIES: [f64; 4] = [1000.0, 2000.0, 4000.0, 16000.0];

/// `max |z(I_ν K_{ν+1} + I_{ν+1} K_ν) − 1|` over `ν ∈ [0, 20]`,
/// `|z| ∈ [0.1, 100]` and `arg z ∈ [0, π/4]`.
pub fn wronskian_sweep() -> f64 {
    let mut worst = 0.0f64;
    for ir in 0..=40 {
        let r = 0.1 * 1000f64.powf(ir as f64 / 40.0);
        for ia in 0..=8 {
            let z = Complex64::from_polar(r, PI / 4.0 * ia as f64 / 8.0);
            let b = bessel_ik_orders(21, z).expect("bessel");
            for n in 0..=20 {
                let w = b[n].i * b[n + 1].k + b[n + 1].i * b[n].k;
                worst = worst.max((w * z - 1.0).norm());
            }
        }
    }
    worst
}

/// Jumps of `B_ρ`, `H_φ`, `H_z` across both wall radii for `draws` random grid
/// modes of the imaging geometry at its four frequencies.
pub fn interface_continuity(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = PipeModel::default();
    let tables: Vec<ModeTable> =
        IMAGING_FREQUENCIES.iter().map(|&f| ModeTable::new(&base.with_frequency(f)).expect("table")).collect();
    let bases: Vec<[RadialBasis; 4]> = tables
        .iter()
        .map(|t| {
            let m = &t.model;
            [
                RadialBasis::new(t, 0.0, 1, m.rho1).unwrap(),
                RadialBasis::new(t, 0.0, 2, m.rho1).unwrap(),
                RadialBasis::new(t, 0.0, 2, m.rho2).unwrap(),
                RadialBasis::new(t, 0.0, 3, m.rho2).unwrap(),
            ]
        })
        .collect();
    let nm = base.nu_max as i32;
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let f = rng.gen_range(0..tables.len());
        let t = &tables[f];
        let nu = rng.gen_range(-nm..=nm);
        let k = rng.gen_range(0..t.n_kappa());
        let b = &bases[f];
        for (inner, outer) in [(&b[0], &b[1]), (&b[2], &b[3])] {
            let (mu_in, mu_out) = if inner.region == 1 { (MU0, t.model.mu2()) } else { (t.model.mu2(), MU0) };
            let a = unit_mode_field(t, inner, nu, k);
            let c = unit_mode_field(t, outer, nu, k);
            let h_scale = (a[3].norm() + a[4].norm() + a[5].norm()) + (c[3].norm() + c[4].norm() + c[5].norm());
            if h_scale == 0.0 {
                continue;
            }
            let b_scale = (a[3].norm() * mu_in + a[4].norm() * mu_in + a[5].norm() * mu_in)
                + (c[3].norm() * mu_out + c[4].norm() * mu_out + c[5].norm() * mu_out);
            worst = worst.max((a[3] * mu_in - c[3] * mu_out).norm() / b_scale);
            worst = worst.max((a[4] - c[4]).norm() / h_scale);
            worst = worst.max((a[5] - c[5]).norm() / h_scale);
        }
    }
    worst
}

/// Coil flux density by a midpoint sum over `segments` straight pieces of each loop.
pub fn biot_savart(coil: &CoilSpec, rho: f64, z: f64, segments: usize) -> [f64; 3] {
    let mut b = [0.0; 3];
    for lp in &coil.loops {
        let current = lp.ampere_turns * lp.sign;
        let dt = 2.0 * PI / segments as f64;
        for s in 0..segments {
            let t = (s as f64 + 0.5) * dt;
            let (st, ct) = t.sin_cos();
            let dl = [-lp.radius * st * dt, lp.radius * ct * dt, 0.0];
            let r = [rho - lp.radius * ct, -lp.radius * st, z - lp.z];
            let d = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
            let c = MU0 * current / (4.0 * PI * d * d * d);
            b[0] += c * (dl[1] * r[2] - dl[2] * r[1]);
            b[1] += c * (dl[2] * r[0] - dl[0] * r[2]);
            b[2] += c * (dl[0] * r[1] - dl[1] * r[0]);
        }
    }
    // At φ = 0 the Cartesian x, y, z components are the ρ, φ, z components.
    b
}

/// Near-vacuum pipe driven by a loop: relative error of the reconstructed
/// bore field against the Biot–Savart sum at `points` random points.
pub fn vacuum_limit(points: usize, seed: u64) -> f64 {
    let model = PipeModel { sigma2: 1e-6, nu_max: 2, kappa_max: 8000.0, kappa_samples: 4096, ..PipeModel::default() };
    let coil = CoilSpec { loops: vec![CoilLoop { radius: 7.5e-3, z: 0.0, ampere_turns: 1.0, sign: 1.0 }] };
    let table = ModeTable::new(&model).expect("table");
    let src = coil_spectrum_grid(&model, &coil, &CoilQuadrature::default()).expect("coil spectrum");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<[f64; 3]> = (0..points)
        .map(|_| [rng.gen_range(10.0e-3..model.rho1), rng.gen_range(0.0..2.0 * PI), rng.gen_range(-5e-3..5e-3)])
        .collect();
    let ev = evaluate_fields(&table, &src, 1, &pts).expect("fields");
    let mut worst = 0.0f64;
    for (p, v) in pts.iter().zip(&ev.values) {
        let bs = biot_savart(&coil, p[0], p[2], 10_000);
        let h_ref = [bs[0] / MU0, bs[1] / MU0, bs[2] / MU0];
        let err = (0..3).map(|c| (v.h[c] - h_ref[c]).norm_sqr()).sum::<f64>().sqrt();
        let scale = h_ref.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst = worst.max(err / scale);
    }
    worst
}

/// Closed-form loop field against the segment sum on the wall radius.
pub fn loop_field_against_segments() -> f64 {
    let coil = CoilSpec { loops: vec![CoilLoop { radius: 8e-3, z: 0.0, ampere_turns: 1.0, sign: 1.0 }] };
    let mut worst = 0.0f64;
    for i in 0..21 {
        let z = -10e-3 + 1e-3 * i as f64;
        let (br, bz) = coil_field(&coil, 10.5e-3, z);
        let bs = biot_savart(&coil, 10.5e-3, z, 10_000);
        worst = worst.max((br - bs[0]).abs() / bs[0].abs().max(bs[2].abs()));
        worst = worst.max((bz - bs[2]).abs() / bs[2].abs().max(bs[0].abs()));
    }
    worst
}
