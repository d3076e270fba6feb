//! Cylindrical Bessel, Neumann, Hankel and Macdonald functions of order 0 (and
//! the order-1 companions needed for derivatives) on the positive real axis.
//!
//! Switchover points:
//! - `J0`, `Y0`, `J1`, `Y1`: ascending series for `x < 12`, Hankel asymptotic
//!   expansion for `x >= 12`.
//! - `K0`: ascending series for `x <= 2`, trapezoidal rule on
//!   `K0(x) = ∫_0^∞ exp(-x cosh t) dt` for `2 < x < 25`, asymptotic expansion
//!   for `x >= 25`. Values below the smallest normal double are flushed to zero
//!   and flagged.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_860_61;

pub const JY_SWITCH: f64 = 12.0;
pub const K0_SERIES_MAX: f64 = 2.0;
pub const K0_ASYMPTOTIC_MIN: f64 = 25.0;

/// Above this argument `K0` is below the smallest normal double.
const K0_UNDERFLOW: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BesselKind {
    J0,
    Y0,
    K0,
    /// Outgoing Hankel function `J0 + i Y0`.
    H0Plus,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfunError {
    #[error("NonPositiveArgument: x = {0}")]
    NonPositiveArgument(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesselValue {
    pub value: Complex64,
    /// Set when the true value underflows and zero was returned.
    pub underflow: bool,
}

pub fn cyl_bessel(kind: BesselKind, x: f64) -> Result<BesselValue, SfunError> {
    let ok = |v: Complex64| Ok(BesselValue { value: v, underflow: false });
    if kind == BesselKind::J0 && x == 0.0 {
        return ok(Complex64::new(1.0, 0.0));
    }
    if !(x > 0.0) {
        return Err(SfunError::NonPositiveArgument(x));
    }
    match kind {
        BesselKind::J0 => ok(j0(x).into()),
        BesselKind::Y0 => ok(y0(x).into()),
        BesselKind::H0Plus => ok(h0plus(x)),
        BesselKind::K0 => {
            if x > K0_UNDERFLOW {
                Ok(BesselValue { value: Complex64::new(0.0, 0.0), underflow: true })
            } else {
                ok(k0(x).into())
            }
        }
    }
}

/// Returns (J0, Y0) from the ascending series, valid for 0 < x < ~15.
fn jy0_series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut j = 1.0;
    let mut s = 0.0;
    let mut h = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        h += 1.0 / kf;
        j += term;
        s -= h * term;
        if term.abs() < 1e-18 * j.abs().max(1e-300) && k > 4 {
            break;
        }
    }
    let y = (2.0 / PI) * ((0.5 * x).ln() + EULER_GAMMA) * j + (2.0 / PI) * s;
    (j, y)
}

/// Returns (J1, Y1) from the ascending series.
fn jy1_series(x: f64) -> (f64, f64) {
    let q = 0.25 * x * x;
    let half = 0.5 * x;
    // term_k = (-q)^k / (k! (k+1)!)
    let mut term = 1.0;
    let mut j = 1.0;
    let mut hk = 0.0;
    let mut hk1 = 1.0;
    let mut s = hk + hk1 - 2.0 * EULER_GAMMA;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * (kf + 1.0));
        hk += 1.0 / kf;
        hk1 += 1.0 / (kf + 1.0);
        j += term;
        s += (hk + hk1 - 2.0 * EULER_GAMMA) * term;
        if term.abs() < 1e-18 && k > 4 {
            break;
        }
    }
    let j1 = half * j;
    let y1 = (2.0 / PI) * j1 * half.ln() - 2.0 / (PI * x) - half * s / PI;
    (j1, y1)
}

/// Hankel asymptotic (P, Q) for order `nu`.
fn hankel_pq(nu: f64, x: f64) -> (f64, f64) {
    let mu = 4.0 * nu * nu;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        a *= (mu - odd * odd) / (kf * 8.0 * x);
        if a.abs() >= last {
            break;
        }
        last = a.abs();
        match k % 4 {
            1 => q += a,
            2 => p -= a,
            3 => q -= a,
            _ => p += a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    (p, q)
}

fn jy_asymptotic(nu: f64, x: f64) -> (f64, f64) {
    let (p, q) = hankel_pq(nu, x);
    let chi = x - (0.5 * nu + 0.25) * PI;
    let (s, c) = chi.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

pub fn j0(x: f64) -> f64 {
    let x = x.abs();
    if x < JY_SWITCH {
        jy0_series(x).0
    } else {
        jy_asymptotic(0.0, x).0
    }
}

/// Neumann function `Y0`; requires `x > 0`.
pub fn y0(x: f64) -> f64 {
    if x < JY_SWITCH {
        jy0_series(x).1
    } else {
        jy_asymptotic(0.0, x).1
    }
}

pub fn j1(x: f64) -> f64 {
    let s = x.signum();
    let x = x.abs();
    s * if x < JY_SWITCH { jy1_series(x).0 } else { jy_asymptotic(1.0, x).0 }
}

/// Neumann function `Y1`; requires `x > 0`.
pub fn y1(x: f64) -> f64 {
    if x < JY_SWITCH {
        jy1_series(x).1
    } else {
        jy_asymptotic(1.0, x).1
    }
}

/// Outgoing Hankel function `J0 + i Y0`; both parts come from one evaluation.
pub fn h0plus(x: f64) -> Complex64 {
    let (j, y) = if x < JY_SWITCH { jy0_series(x) } else { jy_asymptotic(0.0, x) };
    Complex64::new(j, y)
}

/// Modified Bessel function `I0` from its ascending series.
pub fn i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut s = 1.0;
    for k in 1..500 {
        let kf = k as f64;
        term *= q / (kf * kf);
        s += term;
        if term < 1e-17 * s {
            break;
        }
    }
    s
}

fn k0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut i0s = 1.0;
    let mut s = 0.0;
    let mut h = 0.0;
    for k in 1..100 {
        let kf = k as f64;
        term *= q / (kf * kf);
        h += 1.0 / kf;
        i0s += term;
        s += h * term;
        if term < 1e-18 && k > 3 {
            break;
        }
    }
    -((0.5 * x).ln() + EULER_GAMMA) * i0s + s
}

/// `exp(x) K0(x)` by the trapezoidal rule on the cosh integral. The strip
/// half-width `d` is chosen so the integrand stays O(1) inside it, which makes
/// the rule converge like `exp(-2 pi d / h)`.
fn k0_scaled_integral(x: f64) -> f64 {
    let d = (1.0 - 6.0 / x).max(-1.0).acos().min(1.4);
    let h = 2.0 * PI * d / 42.0;
    let mut s = 0.5;
    let mut t = h;
    loop {
        let e = (-x * (t.cosh() - 1.0)).exp();
        s += e;
        if e < 1e-18 {
            break;
        }
        t += h;
    }
    h * s
}

fn k0_scaled_asymptotic(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut a = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = -a * odd * odd / (kf * 8.0 * x);
        if next.abs() >= a.abs() {
            break;
        }
        a = next;
        sum += a;
        if a.abs() < 1e-17 {
            break;
        }
    }
    (FRAC_PI_2 / x).sqrt() * sum
}

/// Macdonald function `K0`; requires `x > 0`. Underflows to zero quietly, use
/// [`cyl_bessel`] for the flag.
pub fn k0(x: f64) -> f64 {
    if x <= K0_SERIES_MAX {
        k0_series(x)
    } else if x < K0_ASYMPTOTIC_MIN {
        (-x).exp() * k0_scaled_integral(x)
    } else if x > K0_UNDERFLOW {
        0.0
    } else {
        (-x).exp() * k0_scaled_asymptotic(x)
    }
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    /// (x, relative Wronskian deviation) per sampled point.
    pub points: Vec<(f64, f64)>,
    pub max_rel_deviation: f64,
}

/// Relative deviation of `J0'(x) Y0(x) - J0(x) Y0'(x) = -2/(pi x)` at `x`.
pub fn wronskian_deviation(x: f64) -> f64 {
    // J0' = -J1, Y0' = -Y1
    let w = -j1(x) * y0(x) + j0(x) * y1(x);
    let exact = -2.0 / (PI * x);
    ((w - exact) / exact).abs()
}

pub fn sfun_selftest() -> SelftestReport {
    let n = 121;
    let (lo, hi) = (-3.0_f64, 3.0_f64);
    let points: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = 10f64.powf(lo + (hi - lo) * i as f64 / (n - 1) as f64);
            (x, wronskian_deviation(x))
        })
        .collect();
    let max_rel_deviation = points.iter().map(|p| p.1).fold(0.0, f64::max);
    SelftestReport { points, max_rel_deviation }
}
