//! Wave operator `W-` in the spectral representation of `H0`: the families
//! `N`, `Ntilde`, `B`, `Btilde` on the energy axis, dilation multipliers in
//! `s = ln lambda`, and a split-step propagation oracle on a periodic box.

use crate::bs::{assemble_m, BsError, EnergyPoint, FactorizedPotential, MAX_CONDITION};
use crate::opcore::{
    assemble_f0, modes_to_nodal, nodal_to_modes, AngularGrid, Basis, BlockVector, CMat, CVec, OpError, WeightedOperator,
    C64,
};
use crate::sfun::j0;
use crate::threshold::ProjectionSet;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::{PI, SQRT_2};
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaveOpError {
    #[error("UnderResolved: {0}")]
    UnderResolved(String),
    #[error("GridMismatch: {0}")]
    GridMismatch(String),
    #[error("PResonancePresent: rank T3 = {0}")]
    PResonancePresent(usize),
    #[error("BoundaryContamination: leaked mass {0:.3e}")]
    BoundaryContamination(f64),
    #[error("BadPacket: {0}")]
    BadPacket(String),
    #[error("Io: {0}")]
    Io(String),
    #[error(transparent)]
    Bs(#[from] BsError),
    #[error(transparent)]
    Op(#[from] OpError),
}

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// Energies uniform in `s = ln lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogGrid {
    pub s_min: f64,
    pub h: f64,
    pub n: usize,
}

impl LogGrid {
    pub fn new(lambda_min: f64, lambda_max: f64, n: usize) -> Result<Self, WaveOpError> {
        if !(lambda_min > 0.0 && lambda_max > lambda_min) || n < 2 {
            return Err(WaveOpError::GridMismatch(format!("log grid [{lambda_min}, {lambda_max}] with {n} points")));
        }
        let s_min = lambda_min.ln();
        Ok(LogGrid { s_min, h: (lambda_max.ln() - s_min) / (n - 1) as f64, n })
    }

    /// Grid with step close to `h` covering `[lambda_min, lambda_max]`.
    pub fn with_step(lambda_min: f64, lambda_max: f64, h: f64) -> Result<Self, WaveOpError> {
        if !(h > 0.0) {
            return Err(WaveOpError::GridMismatch(format!("log step {h}")));
        }
        let n = ((lambda_max / lambda_min).ln() / h).ceil() as usize + 1;
        Self::new(lambda_min, lambda_max, n.max(2))
    }

    pub fn s(&self, j: usize) -> f64 {
        self.s_min + self.h * j as f64
    }

    pub fn lambda(&self, j: usize) -> f64 {
        self.s(j).exp()
    }

    pub fn lambdas(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.lambda(j)).collect()
    }

    /// Quadrature weight of `d lambda` at node `j`.
    pub fn weight(&self, j: usize) -> f64 {
        self.h * self.lambda(j)
    }

    fn same(&self, other: &LogGrid) -> bool {
        self.n == other.n && (self.h - other.h).abs() <= 1e-12 * self.h && (self.s_min - other.s_min).abs() <= 1e-12
    }
}

/// Samples of a function on `R+ x S^1` in the spectral representation of `H0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: LogGrid,
    pub ang: AngularGrid,
    /// `values[j][k]` at energy `lambda_j` and direction `omega_k`.
    pub values: Vec<CVec>,
}

impl SpectralField {
    pub fn zeros(grid: LogGrid, ang: AngularGrid) -> Self {
        SpectralField { grid, ang, values: vec![CVec::zeros(ang.m); grid.n] }
    }

    pub fn from_fn(grid: LogGrid, ang: AngularGrid, f: impl Fn(f64, f64) -> C64) -> Self {
        let values = (0..grid.n)
            .map(|j| CVec::from_iterator(ang.m, (0..ang.m).map(|k| f(grid.lambda(j), ang.angle(k)))))
            .collect();
        SpectralField { grid, ang, values }
    }

    fn check(&self, other: &SpectralField) -> Result<(), WaveOpError> {
        if !self.grid.same(&other.grid) || self.ang != other.ang {
            return Err(WaveOpError::GridMismatch("spectral fields live on different grids".into()));
        }
        Ok(())
    }

    /// `L^2(R+ x S^1)` norm restricted to `lo <= lambda <= hi`.
    pub fn norm_between(&self, lo: f64, hi: f64) -> f64 {
        let wa = self.ang.weight();
        (0..self.grid.n)
            .filter(|j| (lo..=hi).contains(&self.grid.lambda(*j)))
            .map(|j| self.grid.weight(j) * wa * self.values[j].norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm(&self) -> f64 {
        self.norm_between(0.0, f64::INFINITY)
    }

    pub fn sub(&self, other: &SpectralField) -> Result<SpectralField, WaveOpError> {
        self.check(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(SpectralField { values, ..self.clone() })
    }

    /// Spatial value `(F0* f)(x)`.
    pub fn evaluate_at(&self, x: [f64; 2]) -> C64 {
        let mut acc = ZERO;
        for j in 0..self.grid.n {
            let k0 = self.grid.lambda(j).sqrt();
            for k in 0..self.ang.m {
                let t = self.ang.angle(k);
                acc += C64::from_polar(self.grid.weight(j), k0 * (t.cos() * x[0] + t.sin() * x[1])) * self.values[j][k];
            }
        }
        acc * self.ang.weight() / (2.0 * PI * SQRT_2)
    }

    /// Spatial value at radius `r` of the angular mean of the field.
    pub fn evaluate_radial(&self, r: f64) -> C64 {
        let mut acc = ZERO;
        for j in 0..self.grid.n {
            let mean = self.values[j].sum() / self.ang.m as f64;
            acc += mean * (self.grid.weight(j) * j0(self.grid.lambda(j).sqrt() * r));
        }
        acc / SQRT_2
    }
}

/// Symbol of a dilation multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolTag {
    /// `(1 - tanh(pi x)) / 2`.
    Theta,
    /// `(1 - tanh(2 pi x) - i / cosh(2 pi x)) / 2`.
    ThetaTilde,
    /// `-tanh(pi x)`: the spectral image of `tanh(pi A / 2)`.
    TanhHalf,
    Custom,
}

pub fn theta(x: f64) -> C64 {
    C64::new(0.5 * (1.0 - (PI * x).tanh()), 0.0)
}

pub fn theta_tilde(x: f64) -> C64 {
    let y = 2.0 * PI * x;
    C64::new(0.5 * (1.0 - y.tanh()), -0.5 / y.cosh())
}

pub fn tanh_half(x: f64) -> C64 {
    C64::new(-(PI * x).tanh(), 0.0)
}

/// Function of the dilation generator `A+` sampled on the dual grid of a
/// zero-padded FFT over a [`LogGrid`]. On `Phi(s) = e^{s/2} f(e^s)` the
/// generator acts as `-i d/ds`: a mode `e^{i x s}` has dual variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct MellinMultiplier {
    pub tag: SymbolTag,
    pub grid: LogGrid,
    pub n_fft: usize,
    pub dual: Vec<f64>,
    pub values: Vec<C64>,
}

impl MellinMultiplier {
    pub fn new(tag: SymbolTag, grid: LogGrid) -> Self {
        let f = match tag {
            SymbolTag::Theta => theta,
            SymbolTag::ThetaTilde => theta_tilde,
            SymbolTag::TanhHalf | SymbolTag::Custom => tanh_half,
        };
        let mut m = Self::custom(grid, f);
        m.tag = tag;
        m
    }

    pub fn custom(grid: LogGrid, f: impl Fn(f64) -> C64) -> Self {
        let n_fft = (3 * grid.n).next_power_of_two();
        let dual: Vec<f64> = (0..n_fft)
            .map(|k| {
                let q = if k <= n_fft / 2 { k as f64 } else { k as f64 - n_fft as f64 };
                2.0 * PI * q / (n_fft as f64 * grid.h)
            })
            .collect();
        let values = dual.iter().map(|x| f(*x)).collect();
        MellinMultiplier { tag: SymbolTag::Custom, grid, n_fft, dual, values }
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Applies the multiplier to a function of `lambda` sampled on the grid.
    pub fn apply_samples(&self, f: &[C64]) -> Vec<C64> {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(self.n_fft);
        let inv = planner.plan_fft_inverse(self.n_fft);
        let mut buf = vec![ZERO; self.n_fft];
        for (j, x) in f.iter().enumerate() {
            buf[j] = x * (0.5 * self.grid.s(j)).exp();
        }
        fwd.process(&mut buf);
        for (b, v) in buf.iter_mut().zip(&self.values) {
            *b *= v / self.n_fft as f64;
        }
        inv.process(&mut buf);
        (0..self.grid.n).map(|j| buf[j] * (-0.5 * self.grid.s(j)).exp()).collect()
    }

    /// Dense matrix of the multiplier on grid samples of `Phi`.
    pub fn phi_matrix(&self) -> CMat {
        let n = self.grid.n;
        let mut m = CMat::zeros(n, n);
        for k in 0..n {
            let mut e = vec![ZERO; n];
            e[k] = C64::new((-0.5 * self.grid.s(k)).exp(), 0.0);
            let col = self.apply_samples(&e);
            for j in 0..n {
                m[(j, k)] = col[j] * (0.5 * self.grid.s(j)).exp();
            }
        }
        m
    }
}

/// `(m(A+) ⊗ 1) f`, applied direction by direction.
pub fn dilation_multiplier_apply(m: &MellinMultiplier, field: &SpectralField) -> Result<SpectralField, WaveOpError> {
    if !m.grid.same(&field.grid) {
        return Err(WaveOpError::GridMismatch(format!("multiplier grid {:?} vs field grid {:?}", m.grid, field.grid)));
    }
    let cols: Vec<Vec<C64>> = (0..field.ang.m)
        .into_par_iter()
        .map(|k| m.apply_samples(&field.values.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    let values = (0..field.grid.n).map(|j| CVec::from_iterator(field.ang.m, cols.iter().map(|c| c[j]))).collect();
    Ok(SpectralField { values, ..field.clone() })
}

/// Square-grid wave function, `values[iy * n + ix]` at
/// `(-side/2 + ix dx, -side/2 + iy dx)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WavePacket {
    pub n: usize,
    pub side: f64,
    pub values: Vec<C64>,
    /// Declared energy window `[lambda_lo, lambda_hi]`.
    pub window: (f64, f64),
    pub time: f64,
}

/// Packet whose Fourier transform is a smooth bump in `|xi|` times a von
/// Mises profile around `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpSpec {
    pub n: usize,
    pub side: f64,
    pub window: (f64, f64),
    pub direction: f64,
    pub kappa: f64,
    pub center: [f64; 2],
}

impl Default for BumpSpec {
    fn default() -> Self {
        BumpSpec { n: 256, side: 102.4, window: (0.5, 4.0), direction: 0.0, kappa: 4.0, center: [0.0, 0.0] }
    }
}

fn fft2(data: &mut [C64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    data.par_chunks_mut(n).for_each(|row| fft.process(row));
    let mut t = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = data[i * n + j];
        }
    }
    t.par_chunks_mut(n).for_each(|row| fft.process(row));
    for i in 0..n {
        for j in 0..n {
            data[j * n + i] = t[i * n + j];
        }
    }
}

/// Signed FFT frequencies `2 pi q / (n dx)`.
fn frequencies(n: usize, dx: f64) -> Vec<f64> {
    (0..n)
        .map(|q| {
            let q = if q < n.div_ceil(2) { q as f64 } else { q as f64 - n as f64 };
            2.0 * PI * q / (n as f64 * dx)
        })
        .collect()
}

impl WavePacket {
    pub fn dx(&self) -> f64 {
        self.side / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.side + i as f64 * self.dx()
    }

    pub fn from_fn(n: usize, side: f64, window: (f64, f64), f: impl Fn([f64; 2]) -> C64) -> Self {
        let mut p = WavePacket { n, side, values: vec![ZERO; n * n], window, time: 0.0 };
        for iy in 0..n {
            for ix in 0..n {
                p.values[iy * n + ix] = f([p.coord(ix), p.coord(iy)]);
            }
        }
        p
    }

    pub fn bump(spec: &BumpSpec) -> Result<Self, WaveOpError> {
        let (lo, hi) = spec.window;
        if !(lo > 0.0 && hi > lo) || spec.n < 8 || !(spec.side > 0.0) || spec.kappa < 0.0 {
            return Err(WaveOpError::BadPacket(format!("{spec:?}")));
        }
        let n = spec.n;
        let dx = spec.side / n as f64;
        let (klo, khi) = (lo.sqrt(), hi.sqrt());
        if khi > 0.5 * PI / dx {
            return Err(WaveOpError::UnderResolved(format!("|xi| = {khi} against Nyquist {}", PI / dx)));
        }
        let xi = frequencies(n, dx);
        let mut data = vec![ZERO; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let (a, b) = (xi[ix], xi[iy]);
                let k = a.hypot(b);
                let u = (2.0 * k - klo - khi) / (khi - klo);
                if u.abs() >= 1.0 {
                    continue;
                }
                let radial = (1.0 - 1.0 / (1.0 - u * u)).exp();
                let angular = (spec.kappa * ((b.atan2(a) - spec.direction).cos() - 1.0)).exp();
                // Grid origin sits at -side/2, hence the extra shift.
                let shift = -(a * (spec.center[0] + 0.5 * spec.side) + b * (spec.center[1] + 0.5 * spec.side));
                data[iy * n + ix] = C64::from_polar(radial * angular, shift);
            }
        }
        fft2(&mut data, n, true);
        let mut p = WavePacket { n, side: spec.side, values: data, window: spec.window, time: 0.0 };
        let nrm = p.norm();
        for v in &mut p.values {
            *v /= nrm;
        }
        Ok(p)
    }

    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>()).sqrt() * self.dx()
    }

    pub fn distance(&self, other: &WavePacket) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() * self.dx()
    }

    /// Fraction of `|psi|^2` within `width` of the box boundary.
    pub fn edge_mass(&self, width: f64) -> f64 {
        let n = self.n;
        let half = 0.5 * self.side - width;
        let mut edge = 0.0;
        let mut total = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let m = self.values[iy * n + ix].norm_sqr();
                total += m;
                if self.coord(ix).abs() > half || self.coord(iy).abs() > half {
                    edge += m;
                }
            }
        }
        if total > 0.0 {
            edge / total
        } else {
            0.0
        }
    }

    /// Flat little-endian `(re, im)` pairs after a 4-line text header.
    pub fn write_snapshot(&self, w: &mut impl Write) -> Result<(), WaveOpError> {
        let io = |e: std::io::Error| WaveOpError::Io(e.to_string());
        write!(w, "dims {} {}\nspacing {}\ntime {}\nendianness little\n", self.n, self.n, self.dx(), self.time).map_err(io)?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes()).map_err(io)?;
            w.write_all(&v.im.to_le_bytes()).map_err(io)?;
        }
        Ok(())
    }

    pub fn read_snapshot(r: &mut impl BufRead) -> Result<Self, WaveOpError> {
        let io = |e: std::io::Error| WaveOpError::Io(e.to_string());
        let mut header = Vec::new();
        for _ in 0..4 {
            let mut line = String::new();
            r.read_line(&mut line).map_err(io)?;
            header.push(line.trim().to_string());
        }
        let bad = || WaveOpError::Io(format!("bad snapshot header {header:?}"));
        let dims: Vec<usize> = header[0].split_whitespace().skip(1).filter_map(|t| t.parse().ok()).collect();
        let dx: f64 = header[1].strip_prefix("spacing ").and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        let time: f64 = header[2].strip_prefix("time ").and_then(|t| t.parse().ok()).ok_or_else(bad)?;
        if dims.len() != 2 || dims[0] != dims[1] || header[3] != "endianness little" {
            return Err(bad());
        }
        let n = dims[0];
        let mut bytes = vec![0u8; 16 * n * n];
        r.read_exact(&mut bytes).map_err(io)?;
        let values = bytes
            .chunks_exact(16)
            .map(|c| {
                C64::new(f64::from_le_bytes(c[..8].try_into().unwrap()), f64::from_le_bytes(c[8..].try_into().unwrap()))
            })
            .collect();
        Ok(WavePacket { n, side: dx * n as f64, values, window: (0.0, f64::INFINITY), time })
    }
}

/// Lagrange weights on six consecutive nodes around `u` (in grid units).
fn lagrange6(u: f64) -> (i64, [f64; 6]) {
    let i0 = u.floor() as i64 - 2;
    let mut w = [1.0; 6];
    for (p, wp) in w.iter_mut().enumerate() {
        for q in 0..6 {
            if q != p {
                *wp *= (u - (i0 + q as i64) as f64) / (p as f64 - q as f64);
            }
        }
    }
    (i0, w)
}

/// Zero-padding factor of the spatial FFT in [`spectral_transform`].
pub const SPECTRAL_PAD: usize = 4;

/// `F0 psi` on `grid x ang` by padded FFT and polar interpolation. Energies
/// beyond the packet grid's band are set to zero.
pub fn spectral_transform(psi: &WavePacket, grid: &LogGrid, ang: &AngularGrid) -> Result<SpectralField, WaveOpError> {
    let n = psi.n;
    let dx = psi.dx();
    let nyquist = PI / dx;
    if psi.window.1.is_finite() && psi.window.1.sqrt() > 0.5 * nyquist {
        return Err(WaveOpError::UnderResolved(format!(
            "sqrt(lambda_hi) = {} exceeds half the Nyquist frequency {nyquist}",
            psi.window.1.sqrt()
        )));
    }
    let p = SPECTRAL_PAD * n;
    let mut buf = vec![ZERO; p * p];
    let wrap = |i: usize| (i as i64 - (n / 2) as i64).rem_euclid(p as i64) as usize;
    for iy in 0..n {
        for ix in 0..n {
            buf[wrap(iy) * p + wrap(ix)] = psi.values[iy * n + ix];
        }
    }
    fft2(&mut buf, p, false);
    let dxi = 2.0 * PI / (p as f64 * dx);
    let pre = dx * dx / (2.0 * PI * SQRT_2);
    let at = |xi: [f64; 2]| -> C64 {
        let (ix0, wx) = lagrange6(xi[0] / dxi);
        let (iy0, wy) = lagrange6(xi[1] / dxi);
        let mut acc = ZERO;
        for (a, wa) in wy.iter().enumerate() {
            let row = (iy0 + a as i64).rem_euclid(p as i64) as usize * p;
            for (b, wb) in wx.iter().enumerate() {
                acc += buf[row + (ix0 + b as i64).rem_euclid(p as i64) as usize] * (wa * wb);
            }
        }
        acc * pre
    };
    let values = (0..grid.n)
        .into_par_iter()
        .map(|j| {
            let k = grid.lambda(j).sqrt();
            CVec::from_iterator(
                ang.m,
                (0..ang.m).map(|q| {
                    if k > 0.9 * nyquist {
                        return ZERO;
                    }
                    let t = ang.angle(q);
                    at([k * t.cos(), k * t.sin()])
                }),
            )
        })
        .collect();
    Ok(SpectralField { grid: *grid, ang: *ang, values })
}

/// `F0* f` on an `n x n` box of the given side. Energies the box cannot
/// resolve are dropped.
pub fn from_spectral(field: &SpectralField, n: usize, side: f64) -> WavePacket {
    let mut out = WavePacket { n, side, values: vec![ZERO; n * n], window: (0.0, f64::INFINITY), time: 0.0 };
    let nyquist = PI / out.dx();
    let used: Vec<usize> = (0..field.grid.n).filter(|j| field.grid.lambda(*j).sqrt() <= 0.9 * nyquist).collect();
    if used.is_empty() {
        return out;
    }
    let kmax = field.grid.lambda(*used.last().unwrap()).sqrt();
    let tmax = 0.5 * side * SQRT_2 + 1.0;
    let dt = (PI / (4.0 * kmax)).min(0.1);
    let nt = (2.0 * tmax / dt).ceil() as usize + 8;
    let t0 = -tmax - 3.0 * dt;
    let m = field.ang.m;
    let profiles: Vec<Vec<C64>> = (0..m)
        .into_par_iter()
        .map(|k| {
            (0..nt)
                .map(|q| {
                    let t = t0 + q as f64 * dt;
                    used.iter()
                        .map(|&j| C64::from_polar(field.grid.weight(j), field.grid.lambda(j).sqrt() * t) * field.values[j][k])
                        .sum()
                })
                .collect()
        })
        .collect();
    let pre = field.ang.weight() / (2.0 * PI * SQRT_2);
    let dirs: Vec<(f64, f64)> = (0..m).map(|k| field.ang.angle(k).sin_cos()).collect();
    let coords: Vec<f64> = (0..n).map(|i| out.coord(i)).collect();
    out.values.par_chunks_mut(n).enumerate().for_each(|(iy, row)| {
        for (ix, v) in row.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (k, (s, c)) in dirs.iter().enumerate() {
                let t = c * coords[ix] + s * coords[iy];
                let (q0, w) = lagrange6((t - t0) / dt);
                for (a, wa) in w.iter().enumerate() {
                    acc += profiles[k][(q0 + a as i64) as usize] * *wa;
                }
            }
            *v = acc * pre;
        }
    });
    out
}

/// `|| F0* F0 psi - psi || / || psi ||`.
pub fn round_trip_error(psi: &WavePacket, grid: &LogGrid, ang: &AngularGrid) -> Result<f64, WaveOpError> {
    let back = from_spectral(&spectral_transform(psi, grid, ang)?, psi.n, psi.side);
    Ok(psi.distance(&back) / psi.norm())
}

/// `N`, `Ntilde`, `B`, `Btilde` at one energy.
#[derive(Debug, Clone)]
pub struct NbSet {
    pub lambda: f64,
    pub n: WeightedOperator,
    pub ntilde: WeightedOperator,
    pub b: WeightedOperator,
    pub btilde: WeightedOperator,
    /// `|| N B + Ntilde Btilde - T || / || T ||` with `T = F0 v M^{-1} v F0*`.
    pub identity_defect: f64,
}

fn require_no_p(pset: &ProjectionSet) -> Result<(), WaveOpError> {
    if pset.ranks.t3 > 0 {
        return Err(WaveOpError::PResonancePresent(pset.ranks.t3));
    }
    Ok(())
}

/// `N(lambda) = F0 v S3perp` and `Ntilde(lambda) = F0 v lambda^{-1/4} S3`.
pub fn assemble_n(
    pot: &FactorizedPotential,
    pset: &ProjectionSet,
    lambda: f64,
    ang: &AngularGrid,
) -> Result<(WeightedOperator, WeightedOperator), WaveOpError> {
    let fv = assemble_f0(lambda, &pot.grid, ang, pot.basis)?.compose(&pot.v_op())?;
    let n = fv.compose(&pset.s3_perp())?;
    let nt = fv.compose(&pset.s3)?.scale(C64::new(lambda.powf(-0.25), 0.0));
    Ok((n, nt))
}

pub fn assemble_nb(
    pot: &FactorizedPotential,
    pset: &ProjectionSet,
    lambda: f64,
    ang: &AngularGrid,
) -> Result<NbSet, WaveOpError> {
    require_no_p(pset)?;
    let f0 = assemble_f0(lambda, &pot.grid, ang, pot.basis)?;
    let v = pot.v_op();
    let m = assemble_m(pot, EnergyPoint::BoundaryLambda(lambda))?;
    let cond = m.condition_number();
    if !(cond < MAX_CONDITION) {
        return Err(BsError::NearSingularM { cond }.into());
    }
    let x = m.solve(&v.compose(&f0.adjoint())?)?;
    let (n, ntilde) = assemble_n(pot, pset, lambda, ang)?;
    let b = pset.s3_perp().compose(&x)?;
    let btilde = pset.s3.compose(&x)?.scale(C64::new(lambda.powf(0.25), 0.0));
    let t = f0.compose(&v)?.compose(&x)?;
    let sum = n.compose(&b)?.add(&ntilde.compose(&btilde)?)?;
    let identity_defect = sum.sub(&t)?.norm() / t.norm().max(f64::MIN_POSITIVE);
    Ok(NbSet { lambda, n, ntilde, b, btilde, identity_defect })
}

fn to_basis(v: &CVec, basis: Basis, m: usize) -> BlockVector {
    match basis {
        Basis::Nodal => BlockVector { basis, parts: vec![v.clone()] },
        Basis::Modes => BlockVector { basis, parts: nodal_to_modes(v, 1, m) },
    }
}

fn from_basis(f: &BlockVector, m: usize) -> CVec {
    match f.basis {
        Basis::Nodal => f.parts[0].clone(),
        Basis::Modes => modes_to_nodal(&f.parts, 1, m),
    }
}

/// Applies `m(A+) ⊗ 1` to a family of grid vectors indexed by energy.
fn multiply_family(mult: &MellinMultiplier, family: &[BlockVector]) -> Vec<BlockVector> {
    let shape: Vec<usize> = family[0].parts.iter().map(|p| p.len()).collect();
    let mut out = family.to_vec();
    let columns: Vec<(usize, usize)> = shape.iter().enumerate().flat_map(|(b, &len)| (0..len).map(move |i| (b, i))).collect();
    let results: Vec<Vec<C64>> = columns
        .par_iter()
        .map(|&(b, i)| {
            let col: Vec<C64> = family.iter().map(|f| f.parts[b][i]).collect();
            if col.iter().all(|z| *z == ZERO) {
                col
            } else {
                mult.apply_samples(&col)
            }
        })
        .collect();
    for ((b, i), col) in columns.iter().zip(results) {
        for (j, z) in col.into_iter().enumerate() {
            out[j].parts[*b][*i] = z;
        }
    }
    out
}

/// Result of the stationary formula.
#[derive(Debug, Clone)]
pub struct FormulaOutput {
    /// `F0 W- F0* phi`.
    pub field: SpectralField,
    /// `phi + theta(A+)((S - 1) phi)`, the generic-case simplification.
    pub simplified: SpectralField,
    /// Energies where `B`, `Btilde` were assembled.
    pub active: Vec<usize>,
    pub max_identity_defect: f64,
    /// Singular values of `N theta B - theta N B` in angular modes 0 and 1.
    pub commutator_singular_values: Vec<(usize, Vec<f64>)>,
}

/// Energies with `|phi(lambda)|` below this fraction of the maximum are skipped.
pub const ACTIVE_CUTOFF: f64 = 1e-10;

/// `phi - 2 pi i {N theta(A+) B phi + Ntilde thetatilde(A+) Btilde phi}`.
pub fn waveop_apply_formula(
    pot: &FactorizedPotential,
    pset: &ProjectionSet,
    field: &SpectralField,
) -> Result<FormulaOutput, WaveOpError> {
    require_no_p(pset)?;
    let grid = field.grid;
    let ang = field.ang;
    let m = ang.m;
    let peak = field.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let active: Vec<usize> = (0..grid.n).filter(|j| field.values[*j].norm() > ACTIVE_CUTOFF * peak).collect();
    let space = pot.space();
    let nbs: Vec<NbSet> = active
        .par_iter()
        .map(|&j| assemble_nb(pot, pset, grid.lambda(j), &ang))
        .collect::<Result<_, _>>()?;
    let ns: Vec<(WeightedOperator, WeightedOperator)> = (0..grid.n)
        .into_par_iter()
        .map(|j| assemble_n(pot, pset, grid.lambda(j), &ang))
        .collect::<Result<_, _>>()?;
    let mut b = vec![space.zeros(); grid.n];
    let mut bt = vec![space.zeros(); grid.n];
    let mut t_phi = vec![CVec::zeros(m); grid.n];
    for (nb, &j) in nbs.iter().zip(&active) {
        let phi = to_basis(&field.values[j], pot.basis, m);
        b[j] = nb.b.apply(&phi);
        bt[j] = nb.btilde.apply(&phi);
        let t = nb.n.apply(&b[j]);
        let tt = nb.ntilde.apply(&bt[j]);
        t_phi[j] = from_basis(&BlockVector { basis: t.basis, parts: t.parts.iter().zip(&tt.parts).map(|(x, y)| x + y).collect() }, m);
    }
    let theta_m = MellinMultiplier::new(SymbolTag::Theta, grid);
    let tb = multiply_family(&theta_m, &b);
    let ttb = if pset.ranks.s3 > 0 {
        multiply_family(&MellinMultiplier::new(SymbolTag::ThetaTilde, grid), &bt)
    } else {
        bt.clone()
    };
    let values: Vec<CVec> = (0..grid.n)
        .map(|j| {
            let a = ns[j].0.apply(&tb[j]);
            let c = ns[j].1.apply(&ttb[j]);
            let sum = BlockVector { basis: a.basis, parts: a.parts.iter().zip(&c.parts).map(|(x, y)| x + y).collect() };
            &field.values[j] - from_basis(&sum, m) * (2.0 * PI * I)
        })
        .collect();
    // (S - 1) phi = -2 pi i T phi, then theta(A+) direction by direction.
    let s_minus_1 = SpectralField { grid, ang, values: t_phi.iter().map(|t| t * (-2.0 * PI * I)).collect() };
    let ts = dilation_multiplier_apply(&theta_m, &s_minus_1)?;
    let simplified = SpectralField {
        grid,
        ang,
        values: field.values.iter().zip(&ts.values).map(|(a, b)| a + b).collect(),
    };
    let max_identity_defect = nbs.iter().map(|nb| nb.identity_defect).fold(0.0, f64::max);
    let commutator_singular_values = if pot.basis == Basis::Modes {
        let th = theta_m.phi_matrix();
        [0usize, 1]
            .iter()
            .map(|&l| {
                // Entry (j, k): theta_jk (N_j - N_k) B_k in the unitary Phi coordinates.
                let d = CMat::from_fn(grid.n, active.len(), |j, c| {
                    let k = active[c];
                    let bk = &nbs[c].b.blocks[l].matrix;
                    let nj = &ns[j].0.blocks[l].matrix;
                    let nk = &ns[k].0.blocks[l].matrix;
                    let diff: C64 = (0..bk.nrows()).map(|a| (nj[(0, a)] - nk[(0, a)]) * bk[(a, 0)]).sum();
                    th[(j, k)] * diff * (-2.0 * PI * I)
                });
                let mut sv: Vec<f64> = d.singular_values().iter().copied().collect();
                sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
                sv.truncate(10);
                (l, sv)
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(FormulaOutput {
        field: SpectralField { grid, ang, values },
        simplified,
        active,
        max_identity_defect,
        commutator_singular_values,
    })
}

/// Propagation result at one horizon.
#[derive(Debug, Clone)]
pub struct TimeDomainRun {
    pub packet: WavePacket,
    pub norm_drift: f64,
    pub leaked_mass: f64,
    pub steps: usize,
}

/// Width of the boundary frame watched for leakage, as a fraction of the side.
pub const EDGE_FRACTION: f64 = 1.0 / 16.0;
pub const MAX_LEAK: f64 = 1e-3;

/// `e^{-i T H} e^{i T H0} psi`, the wave operator `W-` at horizon `T`: exact
/// free propagation in Fourier space, then Strang splitting for `H`.
pub fn waveop_timedomain(pot: &FactorizedPotential, psi: &WavePacket, t: f64, dt: f64) -> Result<TimeDomainRun, WaveOpError> {
    if !(t >= 0.0 && dt > 0.0) {
        return Err(WaveOpError::BadPacket(format!("horizon {t}, step {dt}")));
    }
    let preset = pot
        .preset
        .ok_or_else(|| BsError::BadPotentialSpec("time-domain propagation needs an analytic potential".into()))?;
    let n = psi.n;
    let dx = psi.dx();
    let xi = frequencies(n, dx);
    let k2: Vec<f64> = (0..n * n).map(|i| xi[i % n].powi(2) + xi[i / n].powi(2)).collect();
    let inv = 1.0 / (n * n) as f64;
    let mut data = psi.values.clone();
    let norm0 = psi.norm();
    fft2(&mut data, n, false);
    for (d, k) in data.iter_mut().zip(&k2) {
        *d *= C64::from_polar(inv, t * k);
    }
    fft2(&mut data, n, true);
    let width = EDGE_FRACTION * psi.side;
    let mut leaked = WavePacket { values: data.clone(), ..psi.clone() }.edge_mass(width);
    let pot_vals: Vec<f64> = (0..n * n)
        .map(|i| pot.g * preset.v0(psi.coord(i % n).hypot(psi.coord(i / n))))
        .collect();
    let steps = if t == 0.0 { 0 } else { (t / dt).ceil() as usize };
    if steps > 0 && pot.g != 0.0 {
        let h = t / steps as f64;
        let half: Vec<C64> = pot_vals.iter().map(|v| C64::from_polar(1.0, -0.5 * h * v)).collect();
        let kin: Vec<C64> = k2.iter().map(|k| C64::from_polar(inv, -h * k)).collect();
        for _ in 0..steps {
            data.par_iter_mut().zip(&half).for_each(|(d, p)| *d *= p);
            fft2(&mut data, n, false);
            data.par_iter_mut().zip(&kin).for_each(|(d, p)| *d *= p);
            fft2(&mut data, n, true);
            data.par_iter_mut().zip(&half).for_each(|(d, p)| *d *= p);
        }
    } else if steps > 0 {
        fft2(&mut data, n, false);
        for (d, k) in data.iter_mut().zip(&k2) {
            *d *= C64::from_polar(inv, -t * k);
        }
        fft2(&mut data, n, true);
    }
    let packet = WavePacket { values: data, time: 0.0, ..psi.clone() };
    leaked = leaked.max(packet.edge_mass(width));
    if leaked > MAX_LEAK {
        return Err(WaveOpError::BoundaryContamination(leaked));
    }
    let norm_drift = (packet.norm() - norm0).abs() / norm0;
    Ok(TimeDomainRun { packet, norm_drift, leaked_mass: leaked, steps })
}

/// Runs at horizons `T0` and `2 T0`.
#[derive(Debug, Clone)]
pub struct TimeDomainPair {
    pub short: TimeDomainRun,
    pub long: TimeDomainRun,
    /// `|| W(2 T0) psi - W(T0) psi || / || psi ||`.
    pub cauchy: f64,
    /// `2 W(2 T0) psi - W(T0) psi`, exact for a `1/T` error.
    pub richardson: WavePacket,
}

pub fn waveop_timedomain_pair(pot: &FactorizedPotential, psi: &WavePacket, t0: f64, dt: f64) -> Result<TimeDomainPair, WaveOpError> {
    let short = waveop_timedomain(pot, psi, t0, dt)?;
    let long = waveop_timedomain(pot, psi, 2.0 * t0, dt)?;
    let cauchy = long.packet.distance(&short.packet) / psi.norm();
    let values = long.packet.values.iter().zip(&short.packet.values).map(|(a, b)| 2.0 * a - b).collect();
    let richardson = WavePacket { values, ..psi.clone() };
    Ok(TimeDomainPair { short, long, cauchy, richardson })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareSpec {
    pub grid: LogGrid,
    pub t0: f64,
    pub dt: f64,
    /// Energy range over which the two results are compared.
    pub compare: (f64, f64),
}

/// Time for the packet center to travel three support radii, at the group
/// velocity `2 sqrt(lambda)` of the window's geometric-mean energy.
pub fn default_horizon(support_radius: f64, window: (f64, f64)) -> f64 {
    let lambda_c = (window.0 * window.1).sqrt();
    3.0 * support_radius / (2.0 * lambda_c.sqrt())
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    /// `|| formula - timedomain || / || psi ||` over the comparison range.
    pub relative_error: f64,
    /// `| || W- psi || - || psi || | / || psi ||` for the formula.
    pub isometry_defect: f64,
    pub max_identity_defect: f64,
    pub cauchy: f64,
    pub norm_drift: f64,
    pub leaked_mass: f64,
    /// `|| formula - simplified || / || psi ||`.
    pub simplified_residual: f64,
    pub commutator_singular_values: Vec<(usize, Vec<f64>)>,
    /// Fraction of the input's spectral mass inside its declared window.
    pub window_mass: f64,
    /// Time-domain `W(2 T0) psi`.
    pub oracle: WavePacket,
}

pub fn compare_waveops(
    pot: &FactorizedPotential,
    pset: &ProjectionSet,
    psi: &WavePacket,
    spec: &CompareSpec,
) -> Result<CompareReport, WaveOpError> {
    let m = match &pot.grid.polar {
        Some(l) if pot.basis == Basis::Modes => l.n_angular,
        _ => 64,
    };
    let ang = AngularGrid::new(m)?;
    let phi = spectral_transform(psi, &spec.grid, &ang)?;
    let nrm = phi.norm();
    let window_mass = (phi.norm_between(psi.window.0, psi.window.1) / nrm).powi(2);
    let formula = waveop_apply_formula(pot, pset, &phi)?;
    let td = waveop_timedomain_pair(pot, psi, spec.t0, spec.dt)?;
    let phi_td = spectral_transform(&WavePacket { window: psi.window, ..td.long.packet.clone() }, &spec.grid, &ang)?;
    let (lo, hi) = spec.compare;
    let relative_error = formula.field.sub(&phi_td)?.norm_between(lo, hi) / nrm;
    let isometry_defect = (formula.field.norm() - nrm).abs() / nrm;
    let simplified_residual = formula.field.sub(&formula.simplified)?.norm() / nrm;
    Ok(CompareReport {
        relative_error,
        isometry_defect,
        max_identity_defect: formula.max_identity_defect,
        cauchy: td.cauchy,
        norm_drift: td.long.norm_drift.max(td.short.norm_drift),
        leaked_mass: td.long.leaked_mass.max(td.short.leaked_mass),
        simplified_residual,
        commutator_singular_values: formula.commutator_singular_values,
        window_mass,
        oracle: td.long.packet,
    })
}
