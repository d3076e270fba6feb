//! Winding number of `lambda -> S(lambda)` from the trace integrand
//! `tr(i (1 - S)^n S* S')`, and a finite-difference bound-state counter.

use crate::bs::{log_energies, smatrix, BsError, FactorizedPotential, SMatrixSample};
use crate::opcore::{AngularGrid, CMat, C64};
use crate::threshold::{compute_projection_set, ThresholdError, DEFAULT_TOL};
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LevinsonError {
    #[error("PhaseAliasing: eigenphase step {step:.3} at lambda = {lambda:.4e}")]
    PhaseAliasing { lambda: f64, step: f64 },
    #[error("UnconvergedCount: {coarse} vs {fine}")]
    UnconvergedCount { coarse: usize, fine: usize },
    #[error("PResonancePresent: rank T3 = {0}")]
    PResonancePresent(usize),
    #[error("BadSweep: {0}")]
    BadSweep(String),
    #[error(transparent)]
    Bs(#[from] BsError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

pub const MAX_PHASE_STEP: f64 = PI / 4.0;

#[derive(Debug, Clone)]
pub struct WindingResult {
    pub winding: f64,
    pub n_regularization: usize,
    /// Continuous eigenphases, one curve per branch, sampled on the sweep.
    pub eigenphase_branches: Vec<Vec<f64>>,
    /// Contribution of `(0, lambda_min)` and `(lambda_max, inf)`.
    pub tail_estimate: f64,
    /// Trapezoid part only.
    pub interior: f64,
    /// Change of the interior integral when every other sample is dropped.
    pub fd_error_estimate: f64,
    /// Integer winding read off the tracked eigenphases.
    pub eigenphase_winding: i64,
    /// Real part of the integrand at interval midpoints (per unit `ln lambda`, including `1/2pi`).
    pub integrand: Vec<f64>,
    /// Midpoints `sqrt(lambda_j lambda_{j+1})` matching `integrand`.
    pub midpoints: Vec<f64>,
    /// Largest imaginary part of the integrand.
    pub max_imag_integrand: f64,
}

/// Antiderivative of `(1/2pi) (1 - e^{i phi})^n` in `phi`.
fn antiderivative(n: usize, phi: f64) -> C64 {
    let i = C64::new(0.0, 1.0);
    let e = C64::from_polar(1.0, phi);
    let f = match n {
        0 => C64::new(phi, 0.0),
        1 => phi + i * e,
        2 => phi + 2.0 * i * e - 0.5 * i * e * e,
        _ => {
            // (1 - e)^n = sum_k C(n,k) (-e)^k, integral of e^{ik phi} is e^{ik phi}/(ik).
            let mut acc = C64::new(phi, 0.0);
            let mut binom = 1.0;
            for k in 1..=n {
                binom *= (n - k + 1) as f64 / k as f64;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                acc += sign * binom * C64::from_polar(1.0, k as f64 * phi) / (i * k as f64);
            }
            acc
        }
    };
    f / (2.0 * PI)
}

fn matrix_power(a: &CMat, n: usize) -> CMat {
    let mut p = CMat::identity(a.nrows(), a.ncols());
    for _ in 0..n {
        p = &p * a;
    }
    p
}

/// Assigns each new eigenvalue to the nearest previous branch and extends it
/// continuously; returns the largest phase step.
fn track(branches: &mut [Vec<f64>], eig: &[C64]) -> f64 {
    let mut used = vec![false; eig.len()];
    let mut worst: f64 = 0.0;
    let mut order: Vec<usize> = (0..branches.len()).collect();
    // Branches sitting away from 1 are matched first, they are the ones that can be confused.
    let dist = |b: usize| (0.5 * branches[b].last().unwrap()).sin().abs();
    order.sort_by(|a, b| dist(*b).partial_cmp(&dist(*a)).unwrap());
    for b in order {
        let last = *branches[b].last().unwrap();
        let z0 = C64::from_polar(1.0, last);
        let (k, z) = eig
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .min_by(|x, y| (x.1 - z0).norm().partial_cmp(&(y.1 - z0).norm()).unwrap())
            .map(|(k, z)| (k, *z))
            .unwrap();
        used[k] = true;
        let step = (z / z0).arg();
        worst = worst.max(step.abs());
        branches[b].push(last + step);
    }
    worst
}

/// Eigenvalue branches across the sweep; refuses steps above `pi/4`.
pub fn track_eigenphases(sweep: &[SMatrixSample]) -> Result<Vec<Vec<f64>>, LevinsonError> {
    let first = sweep.first().ok_or_else(|| LevinsonError::BadSweep("empty sweep".into()))?;
    let mut branches: Vec<Vec<f64>> = first.eigenvalues().iter().map(|z| vec![z.arg()]).collect();
    for s in &sweep[1..] {
        let step = track(&mut branches, &s.eigenvalues());
        if step > MAX_PHASE_STEP {
            return Err(LevinsonError::PhaseAliasing { lambda: s.lambda, step });
        }
    }
    Ok(branches)
}

/// `int tr(i (1-S)^n S* dS/ds) ds / 2pi` over `s = ln lambda` with central
/// differences on the staggered grid: each interval contributes the integrand
/// at its midpoint, `S' ~ (S_{j+1} - S_j) / ds`, `S ~ (S_j + S_{j+1}) / 2`.
/// Only samples with index `i % stride == 0` are used. Also returns the
/// integrand (per unit `s`) at each interval midpoint.
fn interior_integral(x: &[f64], dense: &[CMat], n: usize, stride: usize) -> (f64, Vec<C64>) {
    let idx: Vec<usize> = (0..x.len()).step_by(stride).collect();
    let one = CMat::identity(dense[0].nrows(), dense[0].ncols());
    let mut total = 0.0;
    let mut vals = Vec::with_capacity(idx.len().saturating_sub(1));
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ds = x[b] - x[a];
        let mid = (&dense[a] + &dense[b]) * C64::new(0.5, 0.0);
        let step = &dense[b] - &dense[a];
        let t = matrix_power(&(&one - &mid), n) * mid.adjoint() * step;
        let v = C64::new(0.0, 1.0) * t.trace() / (2.0 * PI);
        total += v.re;
        vals.push(v / ds);
    }
    (total, vals)
}

/// Winding number `(1/2pi) int tr(i (1-S)^n S* S') dlambda` with the sign
/// flipped so that a bound state contributes `-1`. The tails beyond the sweep
/// are closed along the shortest arc from each endpoint eigenvalue to `1`.
pub fn winding_number(sweep: &[SMatrixSample], n: usize) -> Result<WindingResult, LevinsonError> {
    if sweep.len() < 3 {
        return Err(LevinsonError::BadSweep("need at least three samples".into()));
    }
    if sweep.windows(2).any(|w| !(w[1].lambda > w[0].lambda)) {
        return Err(LevinsonError::BadSweep("energies must be strictly ascending".into()));
    }
    let branches = track_eigenphases(sweep)?;
    let x: Vec<f64> = sweep.iter().map(|s| s.lambda.ln()).collect();
    let dense: Vec<CMat> = sweep.iter().map(|s| s.dense()).collect();
    let (interior_raw, vals) = interior_integral(&x, &dense, n, 1);
    let fd_error_estimate = if sweep.len() >= 7 {
        (interior_integral(&x, &dense, n, 2).0 - interior_raw).abs()
    } else {
        f64::NAN
    };
    // The integrand above is the Levinson form; its sign is reversed for the winding.
    let interior = -interior_raw;
    let mut tail = 0.0;
    for z in sweep[0].eigenvalues() {
        tail += (antiderivative(n, z.arg()) - antiderivative(n, 0.0)).re;
    }
    for z in sweep[sweep.len() - 1].eigenvalues() {
        tail += (antiderivative(n, 0.0) - antiderivative(n, z.arg())).re;
    }
    let wraps: f64 = branches
        .iter()
        .map(|b| {
            let end = *b.last().unwrap();
            let principal = C64::from_polar(1.0, end).arg();
            (end - principal - (b[0] - C64::from_polar(1.0, b[0]).arg())) / (2.0 * PI)
        })
        .sum();
    Ok(WindingResult {
        winding: interior + tail,
        n_regularization: n,
        eigenphase_branches: branches,
        tail_estimate: tail,
        interior,
        fd_error_estimate,
        eigenphase_winding: wraps.round() as i64,
        integrand: vals.iter().map(|v| -v.re).collect(),
        midpoints: sweep.windows(2).map(|w| (w[0].lambda * w[1].lambda).sqrt()).collect(),
        max_imag_integrand: vals.iter().map(|v| v.im.abs()).fold(0.0, f64::max),
    })
}

/// Sweep controls for [`levinson_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSpec {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub points_per_decade: usize,
    /// Number of directions; must match the grid's angular count in the mode basis.
    pub m_angles: usize,
    /// Extend the range until the endpoint criteria hold and refine aliased steps.
    pub adaptive: bool,
}

impl SweepSpec {
    pub fn new(lambda_min: f64, lambda_max: f64, points_per_decade: usize, m_angles: usize) -> Self {
        SweepSpec { lambda_min, lambda_max, points_per_decade, m_angles, adaptive: true }
    }
}

/// Lower end: `|S - 1|` below this fraction of its peak.
pub const LOW_END_FRACTION: f64 = 0.1;
/// Upper end: `|S - 1|` at most this value, so every eigenphase lies within `pi/3` of zero.
pub const HIGH_END_NORM: f64 = 1.0;
pub const LAMBDA_FLOOR: f64 = 1e-100;
pub const LAMBDA_CEILING: f64 = 1e4;
const MAX_REFINEMENTS: usize = 8;
/// Adaptive sweeps bisect any interval whose eigenphase step exceeds this.
pub const REFINE_STEP: f64 = PI / 48.0;

fn evaluate(pot: &FactorizedPotential, lambdas: &[f64], ang: &AngularGrid) -> Result<Vec<SMatrixSample>, LevinsonError> {
    lambdas
        .par_iter()
        .map(|l| smatrix(pot, *l, ang).map_err(LevinsonError::from))
        .collect()
}

fn merge(sweep: &mut Vec<SMatrixSample>, extra: Vec<SMatrixSample>) {
    sweep.extend(extra);
    sweep.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
    sweep.dedup_by(|a, b| (a.lambda / b.lambda - 1.0).abs() < 1e-12);
}

/// Samples `S` on a log grid, extending and refining when `spec.adaptive`.
pub fn levinson_sweep(pot: &FactorizedPotential, spec: &SweepSpec) -> Result<Vec<SMatrixSample>, LevinsonError> {
    if !(spec.lambda_min > 0.0 && spec.lambda_max > spec.lambda_min) || spec.points_per_decade < 2 {
        return Err(LevinsonError::BadSweep(format!("{spec:?}")));
    }
    let ang = AngularGrid::new(spec.m_angles).map_err(BsError::from)?;
    let ppd = spec.points_per_decade as f64;
    let decades = |lo: f64, hi: f64| ((hi / lo).log10() * ppd).ceil() as usize + 1;
    let mut sweep = evaluate(pot, &log_energies(spec.lambda_min, spec.lambda_max, decades(spec.lambda_min, spec.lambda_max)), &ang)?;
    if !spec.adaptive {
        return Ok(sweep);
    }
    loop {
        let peak = sweep.iter().map(|s| s.s_minus_1_norm).fold(0.0, f64::max);
        let lo = sweep[0].lambda;
        let hi = sweep[sweep.len() - 1].lambda;
        let need_low = sweep[0].s_minus_1_norm > LOW_END_FRACTION * peak && lo > LAMBDA_FLOOR;
        let need_high = sweep[sweep.len() - 1].s_minus_1_norm > HIGH_END_NORM && hi < LAMBDA_CEILING;
        if !need_low && !need_high {
            break;
        }
        if need_low {
            let new_lo = (lo * 1e-5).max(LAMBDA_FLOOR);
            let pts = log_energies(new_lo, lo, decades(new_lo, lo));
            let extra = evaluate(pot, &pts[..pts.len() - 1], &ang)?;
            merge(&mut sweep, extra);
        }
        if need_high {
            let new_hi = (hi * 10.0).min(LAMBDA_CEILING);
            let pts = log_energies(hi, new_hi, decades(hi, new_hi));
            let extra = evaluate(pot, &pts[1..], &ang)?;
            merge(&mut sweep, extra);
        }
    }
    for _ in 0..MAX_REFINEMENTS {
        let mut mids = Vec::new();
        let mut branches: Vec<Vec<f64>> = sweep[0].eigenvalues().iter().map(|z| vec![z.arg()]).collect();
        for w in sweep.windows(2) {
            if track(&mut branches, &w[1].eigenvalues()) > REFINE_STEP {
                mids.push((w[0].lambda * w[1].lambda).sqrt());
            }
        }
        if mids.is_empty() {
            break;
        }
        let extra = evaluate(pot, &mids, &ang)?;
        merge(&mut sweep, extra);
    }
    Ok(sweep)
}

/// Symmetric band matrix stored by rows: `band[i][k] = A[i][i + k]`, `k <= bw`.
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn at(&mut self, i: usize, k: usize) -> &mut f64 {
        &mut self.data[i * (self.bw + 1) + k]
    }

    /// Number of negative pivots of `L D L^T` (Sylvester inertia).
    fn negative_inertia(mut self) -> usize {
        let (n, bw) = (self.n, self.bw);
        let mut neg = 0;
        let mut row = vec![0.0; bw + 1];
        for i in 0..n {
            let d = *self.at(i, 0);
            if d < 0.0 {
                neg += 1;
            }
            let d = if d == 0.0 { f64::EPSILON } else { d };
            let w = bw.min(n - 1 - i);
            for k in 1..=w {
                row[k] = *self.at(i, k);
            }
            for k in 1..=w {
                let lk = row[k] / d;
                if lk == 0.0 {
                    continue;
                }
                let j = i + k;
                for q in k..=w {
                    *self.at(j, q - k) -= lk * row[q];
                }
            }
        }
        neg
    }
}

/// Negative eigenvalues of the 5-point Dirichlet Laplacian plus `V` on
/// `[-box_radius, box_radius]^2` with `n_grid^2` interior points.
pub fn count_fd(v: &dyn Fn(f64) -> f64, box_radius: f64, n_grid: usize) -> usize {
    let n = n_grid;
    let h = 2.0 * box_radius / (n + 1) as f64;
    let ih2 = 1.0 / (h * h);
    let mut band = Band { n: n * n, bw: n, data: vec![0.0; n * n * (n + 1)] };
    for iy in 0..n {
        for ix in 0..n {
            let i = iy * n + ix;
            let x = -box_radius + (ix + 1) as f64 * h;
            let y = -box_radius + (iy + 1) as f64 * h;
            *band.at(i, 0) = 4.0 * ih2 + v(x.hypot(y));
            if ix + 1 < n {
                *band.at(i, 1) = -ih2;
            }
            if iy + 1 < n {
                *band.at(i, n) = -ih2;
            }
        }
    }
    band.negative_inertia()
}

/// Bound-state count of `-Delta + V`, cross-checked at `n_grid` and `2 n_grid`.
pub fn count_bound_states(pot: &FactorizedPotential, box_radius: f64, n_grid: usize) -> Result<usize, LevinsonError> {
    let preset = pot
        .preset
        .ok_or_else(|| BsError::BadPotentialSpec("bound-state count needs an analytic potential".into()))?;
    if !(box_radius >= 3.0 * preset.length_scale()) || n_grid < 8 {
        return Err(LevinsonError::BadSweep(format!(
            "box radius {box_radius} must be at least 3x the potential radius {}",
            preset.length_scale()
        )));
    }
    let g = pot.g;
    let v = move |r: f64| g * preset.v0(r);
    let coarse = count_fd(&v, box_radius, n_grid);
    let fine = count_fd(&v, box_radius, 2 * n_grid);
    if coarse != fine {
        return Err(LevinsonError::UnconvergedCount { coarse, fine });
    }
    Ok(fine)
}

#[derive(Debug, Clone)]
pub struct LevinsonReport {
    /// Windings for `n = 0, 1, 2`.
    pub windings: [WindingResult; 3],
    pub n_bound: usize,
    /// `|winding(n=0) + N_bound|`.
    pub discrepancy: f64,
    /// `max |winding(n) - winding(0)|`.
    pub n_spread: f64,
    pub lambda_range: (f64, f64),
    pub samples: Vec<SMatrixSample>,
}

/// Box and resolution for the bound-state counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountSpec {
    pub box_radius: f64,
    pub n_grid: usize,
}

pub fn levinson_check(pot: &FactorizedPotential, spec: &SweepSpec, count: &CountSpec) -> Result<LevinsonReport, LevinsonError> {
    if !pot.is_zero() {
        let pset = compute_projection_set(pot, DEFAULT_TOL)?;
        if pset.ranks.t3 > 0 {
            return Err(LevinsonError::PResonancePresent(pset.ranks.t3));
        }
    }
    let samples = levinson_sweep(pot, spec)?;
    let w0 = winding_number(&samples, 0)?;
    let w1 = winding_number(&samples, 1)?;
    let w2 = winding_number(&samples, 2)?;
    let n_bound = if pot.is_zero() { 0 } else { count_bound_states(pot, count.box_radius, count.n_grid)? };
    let discrepancy = (w0.winding + n_bound as f64).abs();
    let n_spread = (w1.winding - w0.winding).abs().max((w2.winding - w0.winding).abs());
    let lambda_range = (samples[0].lambda, samples[samples.len() - 1].lambda);
    Ok(LevinsonReport { windings: [w0, w1, w2], n_bound, discrepancy, n_spread, lambda_range, samples })
}
