//! Modified Bessel functions `I_n`, `K_n` of integer order for complex arguments
//! with nonnegative real part.
//!
//! `K_0`, `K_1` come from the ascending series for `|z| ≤ 2` and Steed's continued
//! fraction otherwise; higher `K_n` by forward recurrence. `I_n` is obtained by
//! backward (Miller) recurrence started from the ratio continued fraction and
//! normalised with the Wronskian `I_0 K_1 + I_1 K_0 = 1/z`.

use alloc::vec::Vec;
#[cfg(not(feature = "std"))]
use num_traits::Float;
use num_complex::Complex64;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_RADIUS: f64 = 2.0;
const MAX_TERMS: usize = 20_000;
const EPS: f64 = 1e-15;
/// Largest `Re z` for which unscaled values stay finite.
const UNSCALED_LIMIT: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum BesselError {
    #[error("Bessel argument must be nonzero with nonnegative real part, got {0}")]
    Domain(Complex64),
    #[error("continued fraction did not converge at z = {0}")]
    NotConverged(Complex64),
    /// The values are returned scaled because `e^{Re z}` would overflow.
    #[error("unscaled Bessel values overflow at Re z = {exponent}")]
    OverflowScaled { scaled: ScaledIk, exponent: f64 },
}

/// `I_n(z)`, `K_n(z)` and their derivatives with respect to the argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselIk {
    pub i: Complex64,
    pub k: Complex64,
    pub di: Complex64,
    pub dk: Complex64,
}

/// The same quantities with `I, I'` multiplied by `e^{−Re z}` and `K, K'` by `e^{Re z}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledIk {
    pub i: Complex64,
    pub k: Complex64,
    pub di: Complex64,
    pub dk: Complex64,
}

impl ScaledIk {
    /// Undoes the scaling; `exponent` is `Re z`.
    pub fn unscale(&self, exponent: f64) -> BesselIk {
        let up = exponent.exp();
        let down = (-exponent).exp();
        BesselIk { i: self.i * up, k: self.k * down, di: self.di * up, dk: self.dk * down }
    }
}

fn check(z: Complex64) -> Result<(), BesselError> {
    if !(z.re.is_finite() && z.im.is_finite()) || z.re < 0.0 || z == Complex64::new(0.0, 0.0) {
        return Err(BesselError::Domain(z));
    }
    Ok(())
}

/// Unscaled `K_0(z)`, `K_1(z)` from the ascending series.
fn k01_series(z: Complex64) -> (Complex64, Complex64) {
    let t = z * z * 0.25;
    let log_half = (z * 0.5).ln();
    let mut i0 = Complex64::new(0.0, 0.0);
    let mut i1 = Complex64::new(0.0, 0.0);
    let mut s0 = Complex64::new(0.0, 0.0);
    let mut s1 = Complex64::new(0.0, 0.0);
    // term0 = t^k/(k!)², term1 = t^k/(k!(k+1)!)
    let mut term0 = Complex64::new(1.0, 0.0);
    let mut term1 = Complex64::new(1.0, 0.0);
    let mut harmonic = 0.0; // H_k
    for k in 0..200usize {
        let kf = k as f64;
        if k > 0 {
            term0 = term0 * t / (kf * kf);
            term1 = term1 * t / (kf * (kf + 1.0));
            harmonic += 1.0 / kf;
        }
        let h_next = harmonic + 1.0 / (kf + 1.0);
        i0 += term0;
        i1 += term1;
        s0 += term0 * harmonic;
        s1 += term1 * (harmonic + h_next - 2.0 * EULER_GAMMA);
        if term0.norm() < EPS * i0.norm() && term1.norm() < EPS * i1.norm() {
            break;
        }
    }
    let i1 = i1 * z * 0.5;
    let k0 = -(log_half + EULER_GAMMA) * i0 + s0;
    let k1 = z.inv() + log_half * i1 - z * 0.25 * s1;
    (k0, k1)
}

/// `e^z K_0(z)`, `e^z K_1(z)` by Steed's method; valid for `|z| > 2`, `Re z ≥ 0`.
fn k01_steed(z: Complex64) -> Result<(Complex64, Complex64), BesselError> {
    let one = Complex64::new(1.0, 0.0);
    let mut b = (one + z) * 2.0;
    let mut d = b.inv();
    let mut delh = d;
    let mut h = d;
    let mut q1 = Complex64::new(0.0, 0.0);
    let mut q2 = one;
    let a1 = 0.25;
    let mut q = Complex64::new(a1, 0.0);
    let mut c = a1;
    let mut a = -a1;
    let mut s = one + q * delh;
    let mut converged = false;
    for i in 1..MAX_TERMS {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += qnew * c;
        b += 2.0;
        d = (b + d * a).inv();
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if dels.norm() < EPS * s.norm() {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(BesselError::NotConverged(z));
    }
    let h = h * a1;
    // e^{Re z} K_0 = sqrt(π/2z) e^{−i Im z} / s
    let phase = Complex64::new(0.0, -z.im).exp();
    let k0 = (Complex64::new(core::f64::consts::FRAC_PI_2, 0.0) / z).sqrt() * phase / s;
    let k1 = k0 * (z + 0.5 - h) / z;
    Ok((k0, k1))
}

/// `I_{n+1}/I_n = 1/g`, `g = b_1 + 1/(b_2 + ...)`, `b_k = 2(n+k)/z`, with `g`
/// evaluated by the modified Lentz method.
fn i_ratio(n: usize, z: Complex64) -> Result<Complex64, BesselError> {
    // Complex::inv squares the modulus, so the guard must stay above ~1e-150.
    let tiny = 1e-140;
    let zi = z.inv();
    let b = |k: usize| zi * (2.0 * (n + k) as f64);
    let mut g = b(1);
    let mut c = g;
    let mut d = Complex64::new(0.0, 0.0);
    for k in 2..MAX_TERMS {
        let bk = b(k);
        d = bk + d;
        if d.norm() < tiny {
            d = Complex64::new(tiny, 0.0);
        }
        c = bk + c.inv();
        if c.norm() < tiny {
            c = Complex64::new(tiny, 0.0);
        }
        d = d.inv();
        let delta = c * d;
        g *= delta;
        if (delta - 1.0).norm() < EPS {
            return Ok(g.inv());
        }
    }
    Err(BesselError::NotConverged(z))
}

/// Scaled values for orders `0..=n_max`.
pub fn bessel_ik_scaled_orders(n_max: usize, z: Complex64) -> Result<Vec<ScaledIk>, BesselError> {
    check(z)?;
    let top = n_max + 1;
    let mut ks = Vec::with_capacity(top + 1);
    let (k0, k1) = if z.norm() <= SERIES_RADIUS {
        let (k0, k1) = k01_series(z);
        let up = z.re.exp();
        (k0 * up, k1 * up)
    } else {
        k01_steed(z)?
    };
    ks.push(k0);
    ks.push(k1);
    let zi = z.inv();
    for n in 1..top {
        let next = ks[n - 1] + zi * (2.0 * n as f64) * ks[n];
        ks.push(next);
    }

    // Miller: i_n ∝ I_n, recurred downward from the top ratio.
    let mut iv = alloc::vec![Complex64::new(0.0, 0.0); top + 2];
    iv[top] = Complex64::new(1.0, 0.0);
    iv[top + 1] = i_ratio(top, z)?;
    for n in (1..=top).rev() {
        iv[n - 1] = iv[n + 1] + zi * (2.0 * n as f64) * iv[n];
        if iv[n - 1].norm() > 1e250 {
            for v in iv.iter_mut().skip(n - 1) {
                *v *= 1e-250;
            }
        }
    }
    let norm = (z * (ks[1] + ks[0] * (iv[1] / iv[0]))).inv() / iv[0];
    let is: Vec<Complex64> = iv.iter().take(top + 1).map(|v| v * norm).collect();

    Ok((0..=n_max)
        .map(|n| {
            let nz = zi * n as f64;
            ScaledIk { i: is[n], k: ks[n], di: is[n + 1] + nz * is[n], dk: -ks[n + 1] + nz * ks[n] }
        })
        .collect())
}

/// Scaled values for one (possibly negative) order, using `I_{−n} = I_n`, `K_{−n} = K_n`.
pub fn bessel_ik_scaled(nu: i32, z: Complex64) -> Result<ScaledIk, BesselError> {
    let n = nu.unsigned_abs() as usize;
    Ok(bessel_ik_scaled_orders(n, z)?[n])
}

pub fn bessel_ik(nu: i32, z: Complex64) -> Result<BesselIk, BesselError> {
    let scaled = bessel_ik_scaled(nu, z)?;
    if z.re > UNSCALED_LIMIT {
        return Err(BesselError::OverflowScaled { scaled, exponent: z.re });
    }
    Ok(scaled.unscale(z.re))
}

/// Unscaled values for orders `0..=n_max`.
pub fn bessel_ik_orders(n_max: usize, z: Complex64) -> Result<Vec<BesselIk>, BesselError> {
    let scaled = bessel_ik_scaled_orders(n_max, z)?;
    if z.re > UNSCALED_LIMIT {
        return Err(BesselError::OverflowScaled { scaled: scaled[n_max], exponent: z.re });
    }
    Ok(scaled.iter().map(|s| s.unscale(z.re)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn real_reference_values() {
        // Reference digits from standard tables.
        let b = bessel_ik(0, c(1.0, 0.0)).unwrap();
        assert!((b.k.re - 0.421_024_438_240_708_3).abs() < 1e-15);
        assert!((b.i.re - 1.266_065_877_752_008_4).abs() < 1e-15);
        let b = bessel_ik(1, c(1.0, 0.0)).unwrap();
        assert!((b.k.re - 0.601_907_230_197_234_6).abs() < 1e-15);
        assert!((b.i.re - 0.565_159_103_992_485_0).abs() < 1e-15);
        let b = bessel_ik(0, c(5.0, 0.0)).unwrap();
        assert!((b.k.re / 3.691_098_334_042_594e-3 - 1.0).abs() < 1e-13);
        assert!((b.i.re / 27.239_871_823_604_44 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn small_argument_limits() {
        let b = bessel_ik_orders(3, c(1e-8, 0.0)).unwrap();
        assert!((b[0].i.re - 1.0).abs() < 1e-15);
        for v in &b[1..] {
            assert!(v.i.norm() < 1e-8);
        }
    }

    #[test]
    fn wronskian_at_complex_argument() {
        let z = c(2.0, 1.0);
        let v = bessel_ik_orders(6, z).unwrap();
        for n in [0usize, 1, 5] {
            let w = v[n].i * v[n + 1].k + v[n + 1].i * v[n].k;
            assert!((w * z - 1.0).norm() < 1e-12, "n={n}: {w}");
        }
    }

    #[test]
    fn negative_order_and_domain() {
        let z = c(0.7, 0.3);
        assert_eq!(bessel_ik(-3, z).unwrap(), bessel_ik(3, z).unwrap());
        assert!(matches!(bessel_ik(0, c(0.0, 0.0)), Err(BesselError::Domain(_))));
        assert!(matches!(bessel_ik(0, c(-1.0, 0.0)), Err(BesselError::Domain(_))));
        assert!(matches!(bessel_ik(0, c(800.0, 0.0)), Err(BesselError::OverflowScaled { .. })));
    }
}
