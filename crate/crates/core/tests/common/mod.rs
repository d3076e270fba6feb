#![allow(dead_code)]

use gauss_quad::GaussLegendre;
use num_complex::Complex64 as C64;
use scat2d::bs::{factorize_potential, FactorizedPotential, Preset};
use scat2d::opcore::{assemble_gamma, build_disk_grid, AngularGrid, QuadGrid2D, WeightedOperator};
use scat2d::threshold::ProjectionSet;
use std::f64::consts::PI;

pub const EULER: f64 = 0.577_215_664_901_532_9;

pub fn unit_well_grid() -> QuadGrid2D {
    build_disk_grid(1.0, 32, 64).unwrap()
}

pub fn gaussian_grid() -> QuadGrid2D {
    build_disk_grid(6.0, 48, 64).unwrap()
}

pub fn square_well(g: f64) -> FactorizedPotential {
    factorize_potential(Preset::square_well(1.0), g, &unit_well_grid()).unwrap()
}

pub fn gaussian(g: f64) -> FactorizedPotential {
    factorize_potential(Preset::gaussian(), g, &gaussian_grid()).unwrap()
}

/// Zero-energy radial solution `R'' + R'/r - l^2 R / r^2 = V R` integrated by
/// RK4 from `r ~ 0` to `r_out`; returns the number of sign changes of `R` on
/// `(0, inf)`, the exterior continued analytically (`a + b ln r` or
/// `a r^l + b r^{-l}`). By Sturm oscillation this is the number of negative
/// eigenvalues in channel `l`.
pub fn shooting_nodes(v: &dyn Fn(f64) -> f64, l: usize, r_out: f64) -> usize {
    let lf = l as f64;
    let r0 = 1e-6;
    let steps = 200_000;
    let h = (r_out - r0) / steps as f64;
    // y = (R, R'), regular start R = r^l.
    let mut y = [r0.powf(lf), if l == 0 { 0.0 } else { lf * r0.powf(lf - 1.0) }];
    let f = |r: f64, y: [f64; 2]| [y[1], -y[1] / r + (lf * lf / (r * r) + v(r)) * y[0]];
    let mut r = r0;
    let mut nodes = 0;
    for _ in 0..steps {
        let k1 = f(r, y);
        let k2 = f(r + h / 2.0, [y[0] + h / 2.0 * k1[0], y[1] + h / 2.0 * k1[1]]);
        let k3 = f(r + h / 2.0, [y[0] + h / 2.0 * k2[0], y[1] + h / 2.0 * k2[1]]);
        let k4 = f(r + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
        let next = [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if next[0] * y[0] < 0.0 {
            nodes += 1;
        }
        // keep magnitudes bounded
        let s = next[0].abs().max(next[1].abs()).max(1e-300);
        y = if s > 1e100 { [next[0] / s, next[1] / s] } else { next };
        r += h;
    }
    let (big_r, d) = (y[0], y[1]);
    let exterior_zero = if l == 0 {
        let b = d * r;
        let a = big_r - b * r.ln();
        b != 0.0 && (-a / b) > r.ln()
    } else {
        let a = (big_r + r * d / lf) / (2.0 * r.powf(lf));
        let b = (big_r - r * d / lf) * r.powf(lf) / 2.0;
        a != 0.0 && -b / a > r.powf(2.0 * lf)
    };
    nodes + exterior_zero as usize
}

/// Bound states of a radial potential summed over channels, degeneracy 2 for `l >= 1`.
pub fn shooting_count(v: &dyn Fn(f64) -> f64, r_out: f64) -> usize {
    let mut total = 0;
    for l in 0.. {
        let n = shooting_nodes(v, l, r_out);
        if n == 0 && l > 0 {
            break;
        }
        total += if l == 0 { n } else { 2 * n };
    }
    total
}

/// `K0(z)` for complex `z` by the ascending series (principal logarithm).
pub fn k0_series(z: C64) -> C64 {
    let q = z * z / 4.0;
    let mut term = C64::new(1.0, 0.0);
    let mut i0 = term;
    let mut acc = C64::new(0.0, 0.0);
    let mut harmonic = 0.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        harmonic += 1.0 / k as f64;
        i0 += term;
        acc += term * harmonic;
        if term.norm() < 1e-18 * i0.norm() {
            break;
        }
    }
    -((z / 2.0).ln() + EULER) * i0 + acc
}

/// Double-double number `hi + lo`.
#[derive(Clone, Copy, Debug)]
pub struct Dd(pub f64, pub f64);

impl Dd {
    pub fn from(x: f64) -> Self {
        Dd(x, 0.0)
    }

    fn two_sum(a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        let bb = s - a;
        (s, (a - (s - bb)) + (b - bb))
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = Self::two_sum(self.0, o.0);
        let e = e + self.1 + o.1;
        let (h, l) = Self::two_sum(s, e);
        Dd(h, l)
    }

    pub fn neg(self) -> Dd {
        Dd(-self.0, -self.1)
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p) + self.0 * o.1 + self.1 * o.0;
        let (h, l) = Self::two_sum(p, e);
        Dd(h, l)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.0 / o.0;
        let r = self.add(o.mul(Dd::from(q1)).neg());
        let q2 = r.0 / o.0;
        let r = r.add(o.mul(Dd::from(q2)).neg());
        let q3 = r.0 / o.0;
        Dd::from(q1).add(Dd::from(q2)).add(Dd::from(q3))
    }

    pub fn value(self) -> f64 {
        self.0 + self.1
    }
}

/// Euler's constant and `ln 2` to double-double precision.
const EULER_DD: Dd = Dd(0.577_215_664_901_532_9, -4.942_915_152_430_645e-18);
const LN2_DD: Dd = Dd(0.693_147_180_559_945_3, 2.319_046_813_846_299_6e-17);

/// `K0(x)` from 40 terms of the ascending series in double-double arithmetic.
/// `ln x` is only needed for `x = 1` here, where it vanishes.
pub fn k0_series_dd_at_one() -> f64 {
    let q = Dd::from(0.25);
    let mut term = Dd::from(1.0);
    let mut i0 = term;
    let mut acc = Dd::from(0.0);
    let mut harmonic = Dd::from(0.0);
    for k in 1..=40 {
        let kk = Dd::from((k * k) as f64);
        term = term.mul(q).div(kk);
        harmonic = harmonic.add(Dd::from(1.0).div(Dd::from(k as f64)));
        i0 = i0.add(term);
        acc = acc.add(term.mul(harmonic));
    }
    // -(ln(1/2) + gamma) I0 + sum = (ln 2 - gamma) I0 + sum
    LN2_DD.add(EULER_DD.neg()).mul(i0).add(acc).value()
}

/// Exponential integral `Ei(x)`, `x > 0`, by its power series.
pub fn ei(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..400 {
        term *= x / k as f64;
        let add = term / k as f64;
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    EULER + x.ln() + sum
}

/// Gauss–Legendre composite rule on `[a, b]` with `panels` panels.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = GaussLegendre::new(20).unwrap();
    let w = (b - a) / panels as f64;
    (0..panels).map(|p| rule.integrate(a + p as f64 * w, a + (p + 1) as f64 * w, f)).sum()
}

/// `PV int_0^inf g(t) / (a - t) dt` by singularity subtraction on `[0, 2a]`.
pub fn principal_value(g: &dyn Fn(f64) -> f64, a: f64, t_max: f64) -> f64 {
    let ga = g(a);
    let near = |t: f64| if (t - a).abs() < 1e-12 { 0.0 } else { (g(t) - ga) / (a - t) };
    integrate(&near, 0.0, 2.0 * a, 64) + integrate(&|t| g(t) / (a - t), 2.0 * a, t_max.max(4.0 * a), 400)
}

/// Spectral image of `tanh(pi A / 2)` on a radial function `f(r)` through the
/// point-interaction kernel `K(x, y) = 2 / (pi^2 i) (|x|^2 - |y|^2 + i0)^{-1}`
/// and `K = -2 (1 + tanh(pi A / 2)) P0`:
/// `tanh(pi A/2) f (r) = (i / pi) PV int_0^inf f(sqrt t) / (r^2 - t) dt`.
pub fn tanh_half_by_kernel(f: &dyn Fn(f64) -> f64, r: f64, t_max: f64) -> C64 {
    let pv = principal_value(&|t: f64| f(t.sqrt()), r * r, t_max);
    // K f = pi (2 / (pi^2 i)) (PV - i pi f(r))
    let kf = C64::new(0.0, -2.0 / PI) * pv - 2.0 * f(r);
    -kf / 2.0 - f(r)
}

/// Norms of the discrete zero-energy identities.
#[derive(Debug, Clone, Copy)]
pub struct LemmaNorms {
    pub g0vq: f64,
    pub ps: [f64; 3],
    pub g0vs: [f64; 3],
    pub g1vs3: f64,
    pub g0vm00s3: f64,
}

pub fn lemma_norms(pot: &FactorizedPotential, pset: &ProjectionSet) -> LemmaNorms {
    let m = pot.grid.polar.as_ref().map(|l| l.n_angular).unwrap_or(64);
    let ang = AngularGrid::new(m).unwrap();
    let g0 = assemble_gamma(0, &pot.grid, &ang, pot.basis).unwrap();
    let g1 = assemble_gamma(1, &pot.grid, &ang, pot.basis).unwrap();
    let v = pot.v_op();
    let g0v = g0.compose(&v).unwrap();
    let g1v = g1.compose(&v).unwrap();
    let n = |a: &WeightedOperator, b: &WeightedOperator| a.compose(b).unwrap().norm();
    let ss = [&pset.s1, &pset.s2, &pset.s3];
    LemmaNorms {
        g0vq: n(&g0v, &pset.q),
        ps: ss.map(|s| n(&pset.p, s)),
        g0vs: ss.map(|s| n(&g0v, s)),
        g1vs3: n(&g1v, &pset.s3),
        g0vm00s3: g0v.compose(&pset.m00).unwrap().compose(&pset.s3).unwrap().norm(),
    }
}

impl LemmaNorms {
    pub fn max_exact(&self) -> f64 {
        self.g0vq.max(self.ps.iter().copied().fold(0.0, f64::max))
    }

    pub fn max_structural(&self) -> f64 {
        self.g0vs.iter().copied().fold(self.g1vs3.max(self.g0vm00s3), f64::max)
    }
}
