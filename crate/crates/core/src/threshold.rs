//! Zero-energy analysis: `M00 = u + v G0 v`, the projections `P`, `Q` and the
//! chain `S1 >= S2 >= S3`, classification of threshold obstructions and a
//! coupling tuner that produces them.

use crate::bs::{assemble_with_kernel, factorize_potential, BsError, FactorizedPotential, Preset};
use crate::opcore::{
    nullspace_projection_scaled, split_spectrum, Basis, BlockVector, CMat, CVec, GapReport, OpError, QuadGrid2D,
    ResolventKernel, Space, WeightedOperator, C64,
};
use nalgebra::SymmetricEigen;
use thiserror::Error;

/// Relative tolerance for rank decisions. Couplings quoted to five digits sit
/// about 1e-5 (relative) away from exact criticality, so the default must
/// exceed that.
pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThresholdError {
    #[error(transparent)]
    Bs(#[from] BsError),
    #[error(transparent)]
    Op(#[from] OpError),
    #[error("NoObstruction: stage {0:?} has no vector {1}")]
    NoObstruction(Stage, usize),
    #[error("DecayFitUnstable: residual {0:.3}")]
    DecayFitUnstable(f64),
    #[error("NoSignChange: inertia {0} at both ends of the bracket")]
    NoSignChange(usize),
    #[error("TargetNotReached: {0}")]
    TargetNotReached(String),
    #[error("NonSeparable: moment conditions couple angular modes")]
    NonSeparable,
}

impl From<ThresholdError> for String {
    fn from(e: ThresholdError) -> String {
        e.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    S1,
    S2,
    S3,
    T2,
    T3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ranks {
    pub s1: usize,
    pub s2: usize,
    pub s3: usize,
    pub t2: usize,
    pub t3: usize,
}

#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub p: WeightedOperator,
    pub q: WeightedOperator,
    pub s1: WeightedOperator,
    pub s2: WeightedOperator,
    pub s3: WeightedOperator,
    pub t2: WeightedOperator,
    pub t3: WeightedOperator,
    pub m00: WeightedOperator,
    pub ranks: Ranks,
    pub gap_report: Vec<(Stage, GapReport)>,
    /// Weighted-orthonormal bases; `s1 = t2 + s2`, `s2 = t3 + s3`.
    pub t2_vectors: Vec<BlockVector>,
    pub t3_vectors: Vec<BlockVector>,
    pub s3_vectors: Vec<BlockVector>,
    pub tol: f64,
    pub space: Space,
    pub v: BlockVector,
}

impl ProjectionSet {
    pub fn vectors(&self, stage: Stage) -> Vec<BlockVector> {
        match stage {
            Stage::S1 => [self.t2_vectors.clone(), self.t3_vectors.clone(), self.s3_vectors.clone()].concat(),
            Stage::S2 => [self.t3_vectors.clone(), self.s3_vectors.clone()].concat(),
            Stage::S3 => self.s3_vectors.clone(),
            Stage::T2 => self.t2_vectors.clone(),
            Stage::T3 => self.t3_vectors.clone(),
        }
    }

    pub fn projection(&self, stage: Stage) -> &WeightedOperator {
        match stage {
            Stage::S1 => &self.s1,
            Stage::S2 => &self.s2,
            Stage::S3 => &self.s3,
            Stage::T2 => &self.t2,
            Stage::T3 => &self.t3,
        }
    }

    /// `S3^perp = 1 - S3`.
    pub fn s3_perp(&self) -> WeightedOperator {
        WeightedOperator::identity(&self.space).sub(&self.s3).expect("same layout")
    }

    /// `c(f) = <v, M00 f> / |v|^2`, the constant term of the zero-energy solution.
    pub fn constant_term(&self, f: &BlockVector) -> C64 {
        let n2 = self.space.inner(&self.v, &self.v).re;
        if n2 == 0.0 {
            return C64::new(0.0, 0.0);
        }
        self.space.inner(&self.v, &self.m00.apply(f)) / n2
    }
}

pub fn assemble_m00(pot: &FactorizedPotential) -> Result<WeightedOperator, ThresholdError> {
    Ok(assemble_with_kernel(pot, &ResolventKernel::ZeroEnergy)?)
}

fn projector(space: &Space, vectors: &[BlockVector]) -> WeightedOperator {
    let mut p = WeightedOperator::zero(space, space);
    for f in vectors {
        p = p.add(&WeightedOperator::outer(f, space, f, space)).expect("same layout");
    }
    p
}

/// Splits a set of weighted-orthonormal vectors (grouped by block) according
/// to the small Hermitian matrices `h_b` acting on their coefficients: returns
/// (null combinations, range combinations, all |eigenvalues|).
fn split_subspace(
    groups: &[(usize, Vec<CVec>)],
    h: &[CMat],
    threshold: f64,
    space: &Space,
) -> (Vec<BlockVector>, Vec<BlockVector>, Vec<f64>) {
    let mut null = Vec::new();
    let mut range = Vec::new();
    let mut values = Vec::new();
    for ((b, basis), hb) in groups.iter().zip(h) {
        if basis.is_empty() {
            continue;
        }
        let herm = (hb + hb.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        for (i, e) in eig.eigenvalues.iter().enumerate() {
            let mut f = space.zeros();
            for (j, bj) in basis.iter().enumerate() {
                f.parts[*b] += bj * eig.eigenvectors[(j, i)];
            }
            let val = e.abs().sqrt();
            values.push(val);
            if val < threshold {
                null.push(f);
            } else {
                range.push(f);
            }
        }
    }
    (null, range, values)
}

fn group_by_block(vectors: &[BlockVector], n_blocks: usize) -> Vec<(usize, Vec<CVec>)> {
    let mut groups: Vec<(usize, Vec<CVec>)> = (0..n_blocks).map(|b| (b, Vec::new())).collect();
    for f in vectors {
        let b = f
            .parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.norm().partial_cmp(&y.1.norm()).unwrap())
            .map(|x| x.0)
            .unwrap();
        groups[b].1.push(f.parts[b].clone());
    }
    groups
}

pub fn compute_projection_set(pot: &FactorizedPotential, tol: f64) -> Result<ProjectionSet, ThresholdError> {
    let m00 = assemble_m00(pot)?;
    let space = pot.space();
    let v = pot.v_vector();
    let v2 = space.inner(&v, &v).re;
    let one = WeightedOperator::identity(&space);
    let p = if v2 > 0.0 {
        WeightedOperator::outer(&v, &space, &v, &space).scale(C64::new(1.0 / v2, 0.0))
    } else {
        WeightedOperator::zero(&space, &space)
    };
    let q = one.sub(&p)?;
    let m_norm = m00.norm();
    let mut gap_report = Vec::new();

    // S1: kernel of Q M00 Q inside Ran Q.
    let a1 = q.compose(&m00)?.compose(&q)?.add(&p.scale(C64::new(m_norm, 0.0)))?;
    let ns1 = nullspace_projection_scaled(&a1, tol, None, "S1")?;
    gap_report.push((Stage::S1, ns1.report.clone()));
    let s1_vectors: Vec<BlockVector> = (0..ns1.rank()).map(|i| ns1.vector(i, &space)).collect();

    // S2: kernel of S1 M00 P M00 S1 on Ran S1, i.e. c(f) = 0.
    let nb = space.n_blocks();
    let groups = group_by_block(&s1_vectors, nb);
    let h2: Vec<CMat> = groups
        .iter()
        .map(|(b, basis)| {
            let mv: Vec<BlockVector> = basis
                .iter()
                .map(|f| {
                    let mut fb = space.zeros();
                    fb.parts[*b] = f.clone();
                    m00.apply(&fb)
                })
                .collect();
            let c: Vec<C64> = mv.iter().map(|g| space.inner(&v, g)).collect();
            CMat::from_fn(basis.len(), basis.len(), |i, j| {
                if v2 > 0.0 {
                    c[i].conj() * c[j] / v2
                } else {
                    C64::new(0.0, 0.0)
                }
            })
        })
        .collect();
    let thr2 = tol * m_norm;
    let (s2_vectors, t2_vectors, vals2) = split_subspace(&groups, &h2, thr2, &space);
    gap_report.push((Stage::S2, split_spectrum(&vals2, thr2, "S2")?));

    // S3: part of Ran S2 annihilated by <v, x1 f>, <v, x2 f>, <v, M00 f>.
    let functionals: Vec<BlockVector> = {
        let x1: Vec<f64> = pot.grid.nodes.iter().zip(&pot.v).map(|(x, vv)| x[0] * vv).collect();
        let x2: Vec<f64> = pot.grid.nodes.iter().zip(&pot.v).map(|(x, vv)| x[1] * vv).collect();
        let m00v = m00.adjoint().apply(&v);
        [pot.nodal_vector(&x1), pot.nodal_vector(&x2), m00v]
            .into_iter()
            .filter_map(|phi| {
                let n = space.norm(&phi);
                (n > 0.0).then(|| phi.scale(C64::new(1.0 / n, 0.0)))
            })
            .collect()
    };
    let groups2 = group_by_block(&s2_vectors, nb);
    let h3: Vec<CMat> = groups2
        .iter()
        .map(|(b, basis)| {
            // C^* C with C[i][j] = <phi_i, f_j>.
            let c = CMat::from_fn(functionals.len(), basis.len(), |i, j| {
                let mut fb = space.zeros();
                fb.parts[*b] = basis[j].clone();
                space.inner(&functionals[i], &fb)
            });
            c.adjoint() * c
        })
        .collect();
    let (s3_vectors, t3_vectors, vals3) = split_subspace(&groups2, &h3, tol, &space);
    gap_report.push((Stage::S3, split_spectrum(&vals3, tol, "S3")?));
    if !t3_vectors.is_empty() {
        let global = CMat::from_fn(functionals.len(), s2_vectors.len(), |i, j| space.inner(&functionals[i], &s2_vectors[j]));
        let rank_global = global.singular_values().iter().filter(|s| **s >= tol).count();
        if rank_global != t3_vectors.len() {
            return Err(ThresholdError::NonSeparable);
        }
    }

    let s1 = ns1.projector;
    let s2 = projector(&space, &s2_vectors);
    let s3 = projector(&space, &s3_vectors);
    let t2 = s1.sub(&s2)?;
    let t3 = s2.sub(&s3)?;
    let ranks = Ranks {
        s1: s1_vectors.len(),
        s2: s2_vectors.len(),
        s3: s3_vectors.len(),
        t2: t2_vectors.len(),
        t3: t3_vectors.len(),
    };
    Ok(ProjectionSet { p, q, s1, s2, s3, t2, t3, m00, ranks, gap_report, t2_vectors, t3_vectors, s3_vectors, tol, space, v })
}

/// Far-field power law of a zero-energy solution.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub exponent: f64,
    /// RMS deviation of `ln |psi|` from the fitted line.
    pub residual: f64,
    pub radii: Vec<f64>,
    /// RMS of `|psi|` over directions at each radius.
    pub values: Vec<f64>,
    pub constant_term: C64,
}

/// Least-squares slope and RMS residual of `y` against `x`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let res = (x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, res)
}

const RAY_DIRECTIONS: usize = 16;
const RAY_SAMPLES: usize = 20;

/// Samples `psi = c - G0 v f` on rays from twice the grid radius out to
/// `ray_radius` and fits `|psi| ~ r^exponent`.
pub fn zero_energy_profile(
    pset: &ProjectionSet,
    which: (Stage, usize),
    pot: &FactorizedPotential,
    ray_radius: f64,
) -> Result<DecayFit, ThresholdError> {
    let vectors = pset.vectors(which.0);
    let f = vectors.get(which.1).ok_or(ThresholdError::NoObstruction(which.0, which.1))?;
    let c = pset.constant_term(f);
    let nodal = pot.grid.convert(f, Basis::Nodal);
    let src: Vec<C64> = (0..pot.grid.len()).map(|j| nodal.parts[0][j] * pot.v[j] * pot.grid.weights[j]).collect();
    let r0 = 2.0 * pot.grid.radius;
    let r1 = ray_radius.max(4.0 * r0);
    let g0 = ResolventKernel::ZeroEnergy;
    let mut radii = Vec::with_capacity(RAY_SAMPLES);
    let mut values = Vec::with_capacity(RAY_SAMPLES);
    for i in 0..RAY_SAMPLES {
        let r = r0 * (r1 / r0).powf(i as f64 / (RAY_SAMPLES - 1) as f64);
        let mut acc = 0.0;
        for d in 0..RAY_DIRECTIONS {
            let t = 2.0 * std::f64::consts::PI * (d as f64 + 0.5) / RAY_DIRECTIONS as f64;
            let x = [r * t.cos(), r * t.sin()];
            let mut psi = c;
            for (y, s) in pot.grid.nodes.iter().zip(&src) {
                psi -= g0.eval((x[0] - y[0]).hypot(x[1] - y[1])) * s;
            }
            acc += psi.norm_sqr();
        }
        radii.push(r);
        values.push((acc / RAY_DIRECTIONS as f64).sqrt());
    }
    let lx: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ly: Vec<f64> = values.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
    let (exponent, _, residual) = fit_line(&lx, &ly);
    if residual > 0.2 {
        return Err(ThresholdError::DecayFitUnstable(residual));
    }
    Ok(DecayFit { exponent, residual, radii, values, constant_term: c })
}

#[derive(Debug, Clone)]
pub struct ThresholdReport {
    pub n_s: usize,
    pub n_p: usize,
    pub n_zero_bound: usize,
    pub tol: f64,
    pub fits: Vec<(Stage, usize, DecayFit)>,
    /// Obstruction vectors whose decay exponent disagrees with their stage.
    pub disagreements: Vec<(Stage, usize, f64)>,
    pub gaps: Vec<(Stage, f64)>,
}

impl ThresholdReport {
    /// Flat `key = value` block.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "n_s = {}\nn_p = {}\nn_zero_bound = {}\ntol = {:e}\n",
            self.n_s, self.n_p, self.n_zero_bound, self.tol
        );
        for (st, r) in &self.gaps {
            s += &format!("gap_{:?} = {:.6e}\n", st, r);
        }
        for (st, i, f) in &self.fits {
            s += &format!("decay_{:?}_{} = {:.4}\n", st, i, f.exponent);
        }
        s += &format!("disagreements = {}\n", self.disagreements.len());
        s
    }
}

/// Expected far-field exponent check per stage.
pub fn exponent_matches(stage: Stage, exponent: f64) -> bool {
    match stage {
        Stage::T2 => exponent.abs() <= 0.1,
        Stage::T3 => (exponent + 1.0).abs() <= 0.1,
        Stage::S3 => exponent <= -1.85,
        _ => true,
    }
}

pub const DEFAULT_RAY_FACTOR: f64 = 50.0;

pub fn classify_threshold(pset: &ProjectionSet, pot: &FactorizedPotential) -> Result<ThresholdReport, ThresholdError> {
    let mut fits = Vec::new();
    let mut disagreements = Vec::new();
    for stage in [Stage::T2, Stage::T3, Stage::S3] {
        for i in 0..pset.vectors(stage).len() {
            let fit = zero_energy_profile(pset, (stage, i), pot, DEFAULT_RAY_FACTOR * pot.grid.radius)?;
            if !exponent_matches(stage, fit.exponent) {
                disagreements.push((stage, i, fit.exponent));
            }
            fits.push((stage, i, fit));
        }
    }
    Ok(ThresholdReport {
        n_s: pset.ranks.t2,
        n_p: pset.ranks.t3,
        n_zero_bound: pset.ranks.s3,
        tol: pset.tol,
        fits,
        disagreements,
        gaps: pset.gap_report.iter().map(|(s, r)| (*s, r.ratio)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    SResonance,
    PResonance,
    ZeroBound,
}

impl Target {
    /// Angular modes in which a radial potential develops this obstruction.
    fn channel(&self, l: usize, n: usize) -> bool {
        let l = l.min(n - l);
        match self {
            Target::SResonance => l == 0,
            Target::PResonance => l == 1,
            Target::ZeroBound => l >= 2,
        }
    }
}

/// Number of negative eigenvalues of `Q M00 Q` on `Ran Q`, restricted to the
/// target's angular channels when the mode basis is in use.
pub fn threshold_inertia(pot: &FactorizedPotential, target: Option<Target>) -> Result<usize, ThresholdError> {
    let m00 = assemble_m00(pot)?;
    let space = pot.space();
    let v = pot.v_vector();
    let v2 = space.inner(&v, &v).re;
    let a = if v2 > 0.0 {
        let p = WeightedOperator::outer(&v, &space, &v, &space).scale(C64::new(1.0 / v2, 0.0));
        let q = WeightedOperator::identity(&space).sub(&p)?;
        q.compose(&m00)?.compose(&q)?.add(&p.scale(C64::new(m00.norm(), 0.0)))?
    } else {
        m00
    };
    let n = a.blocks.len();
    Ok(a.hermitian_eigen()
        .iter()
        .enumerate()
        .filter(|(l, _)| match (target, pot.basis) {
            (Some(t), Basis::Modes) => t.channel(*l, n),
            _ => true,
        })
        .map(|(_, (e, _))| e.iter().filter(|x| **x < 0.0).count())
        .sum())
}

/// Bisects on the coupling until the inertia of `Q M00 Q` jumps, then checks
/// that the targeted stage is populated at the returned coupling.
pub fn tune_critical_coupling(
    preset: Preset,
    grid: &QuadGrid2D,
    target: Target,
    bracket: (f64, f64),
    tol: f64,
) -> Result<f64, ThresholdError> {
    let count = |g: f64| -> Result<usize, ThresholdError> {
        threshold_inertia(&factorize_potential(preset, g, grid)?, Some(target))
    };
    let (mut lo, mut hi) = bracket;
    let c_lo = count(lo)?;
    let c_hi = count(hi)?;
    if c_lo == c_hi {
        return Err(ThresholdError::NoSignChange(c_lo));
    }
    while hi - lo > 1e-12 * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if count(mid)? == c_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    let pot = factorize_potential(preset, g, grid)?;
    let pset = compute_projection_set(&pot, tol)?;
    let got = match target {
        Target::SResonance => pset.ranks.t2,
        Target::PResonance => pset.ranks.t3,
        Target::ZeroBound => pset.ranks.s3,
    };
    if got == 0 {
        return Err(ThresholdError::TargetNotReached(format!("{target:?} absent at g = {g}, ranks {:?}", pset.ranks)));
    }
    Ok(g)
}
