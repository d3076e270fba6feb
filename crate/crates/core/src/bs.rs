//! Birman–Schwinger operator `M = u + v R0 v` and the stationary scattering
//! matrix `S(lambda) = 1 - 2 pi i F0(lambda) v M^{-1} v F0(lambda)*`.

use crate::opcore::{
    assemble_f0, assemble_kernel_operator, AngularGrid, Basis, BlockVector, CMat, CVec, DiagonalRule, OpError,
    QuadGrid2D, ResolventKernel, Space, WeightedOperator, C64,
};
use nalgebra::Schur;
use rayon::prelude::*;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BsError {
    #[error("BadPotentialSpec: {0}")]
    BadPotentialSpec(String),
    #[error("SingularEnergy: {0}")]
    SingularEnergy(String),
    #[error("NearSingularM: condition number {cond:.3e}")]
    NearSingularM { cond: f64 },
    #[error("BadSweep: {0}")]
    BadSweep(String),
    #[error(transparent)]
    Op(#[from] OpError),
}

/// Radial potential shapes `V0`; the sampled potential is `g V0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    /// `-exp(-|x|^2 / width^2)`.
    Gaussian { width: f64 },
    /// `sign` on `|x| < radius`, zero outside; `sign = -1` is a well.
    SquareWell { radius: f64, sign: f64 },
    /// `-1` on `inner < |x| < outer`, `+height` on `|x| <= inner`.
    Ring { inner: f64, outer: f64, height: f64 },
}

impl Preset {
    pub fn gaussian() -> Self {
        Preset::Gaussian { width: 1.0 }
    }

    pub fn square_well(radius: f64) -> Self {
        Preset::SquareWell { radius, sign: -1.0 }
    }

    pub fn validate(&self) -> Result<(), BsError> {
        let bad = |m: String| Err(BsError::BadPotentialSpec(m));
        match *self {
            Preset::Gaussian { width } if !(width > 0.0) => bad(format!("gaussian width {width}")),
            Preset::SquareWell { radius, .. } if !(radius > 0.0) => bad(format!("square_well radius {radius}")),
            Preset::SquareWell { sign, .. } if sign != 1.0 && sign != -1.0 => bad(format!("square_well sign {sign}")),
            Preset::Ring { inner, outer, height } if !(inner > 0.0 && outer > inner && height.is_finite()) => {
                bad(format!("ring inner {inner} outer {outer} height {height}"))
            }
            _ => Ok(()),
        }
    }

    pub fn v0(&self, r: f64) -> f64 {
        match *self {
            Preset::Gaussian { width } => -(-(r * r) / (width * width)).exp(),
            Preset::SquareWell { radius, sign } => {
                if r < radius {
                    sign
                } else {
                    0.0
                }
            }
            Preset::Ring { inner, outer, height } => {
                if r <= inner {
                    height
                } else if r < outer {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Radius beyond which the potential vanishes (or is below 1e-15 for the Gaussian).
    pub fn support_radius(&self) -> f64 {
        match *self {
            Preset::Gaussian { width } => width * (15.0 * 10f64.ln()).sqrt(),
            Preset::SquareWell { radius, .. } => radius,
            Preset::Ring { outer, .. } => outer,
        }
    }

    /// Radii where the potential jumps; disk grids should put panel breaks there.
    /// Width, well radius or outer ring radius.
    pub fn length_scale(&self) -> f64 {
        match *self {
            Preset::Gaussian { width } => width,
            Preset::SquareWell { radius, .. } => radius,
            Preset::Ring { outer, .. } => outer,
        }
    }

    pub fn discontinuities(&self) -> Vec<f64> {
        match *self {
            Preset::Gaussian { .. } => vec![],
            Preset::SquareWell { radius, .. } => vec![radius],
            Preset::Ring { inner, outer, .. } => vec![inner, outer],
        }
    }
}

/// Sampled potential with `V = u v^2`, `v = |V|^{1/2}`, `u = sign(V)` (`+1` where `V >= 0`).
#[derive(Debug, Clone)]
pub struct FactorizedPotential {
    pub grid: QuadGrid2D,
    pub preset: Option<Preset>,
    pub g: f64,
    pub potential: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
    /// Representation used for every operator built from this potential.
    pub basis: Basis,
    pub rule: DiagonalRule,
}

pub fn factorize_potential(preset: Preset, g: f64, grid: &QuadGrid2D) -> Result<FactorizedPotential, BsError> {
    preset.validate()?;
    if !g.is_finite() {
        return Err(BsError::BadPotentialSpec(format!("coupling {g}")));
    }
    let samples: Vec<f64> = (0..grid.len()).map(|i| g * preset.v0(grid.node_radius(i))).collect();
    let mut pot = factorize_samples(grid, samples)?;
    pot.preset = Some(preset);
    pot.g = g;
    if grid.polar.is_some() {
        pot.basis = Basis::Modes;
    }
    Ok(pot)
}

/// Factorizes arbitrary nodal samples; the result uses the nodal basis.
pub fn factorize_samples(grid: &QuadGrid2D, samples: Vec<f64>) -> Result<FactorizedPotential, BsError> {
    if samples.len() != grid.len() || samples.iter().any(|x| !x.is_finite()) {
        return Err(BsError::BadPotentialSpec("samples must be finite, one per node".into()));
    }
    let v = samples.iter().map(|x| x.abs().sqrt()).collect();
    let u = samples.iter().map(|x| if *x >= 0.0 { 1.0 } else { -1.0 }).collect();
    Ok(FactorizedPotential {
        grid: grid.clone(),
        preset: None,
        g: 1.0,
        potential: samples,
        v,
        u,
        basis: Basis::Nodal,
        rule: DiagonalRule::default(),
    })
}

impl FactorizedPotential {
    pub fn with_basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_rule(mut self, rule: DiagonalRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn space(&self) -> Space {
        self.grid.space(self.basis)
    }

    /// Multiplication by nodal samples `f` (radial in the mode basis).
    pub fn multiplication(&self, f: &[f64]) -> WeightedOperator {
        let space = self.space();
        match self.basis {
            Basis::Nodal => WeightedOperator::diagonal(&space, |_, i| C64::new(f[i], 0.0)),
            Basis::Modes => {
                let n = self.grid.polar.as_ref().unwrap().n_angular;
                WeightedOperator::diagonal(&space, |_, a| C64::new(f[a * n], 0.0))
            }
        }
    }

    pub fn v_op(&self) -> WeightedOperator {
        self.multiplication(&self.v)
    }

    pub fn u_op(&self) -> WeightedOperator {
        self.multiplication(&self.u)
    }

    /// `v` as a grid vector in the potential's basis.
    pub fn v_vector(&self) -> BlockVector {
        self.nodal_vector(&self.v)
    }

    /// Nodal samples as a grid vector in the potential's basis.
    pub fn nodal_vector(&self, f: &[f64]) -> BlockVector {
        let nodal = BlockVector {
            basis: Basis::Nodal,
            parts: vec![CVec::from_iterator(f.len(), f.iter().map(|x| C64::new(*x, 0.0)))],
        };
        self.grid.convert(&nodal, self.basis)
    }

    pub fn is_zero(&self) -> bool {
        self.v.iter().all(|x| *x == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergyPoint {
    /// `M(kappa) = u + v R0(-kappa^2) v`, `kappa > 0`.
    RealKappa(f64),
    /// `u + v R0(lambda + i0) v`, `lambda > 0`.
    BoundaryLambda(f64),
}

pub fn resolvent_kernel(energy: EnergyPoint) -> Result<ResolventKernel, BsError> {
    match energy {
        EnergyPoint::RealKappa(k) if k > 0.0 => Ok(ResolventKernel::Macdonald { kappa: k }),
        EnergyPoint::BoundaryLambda(l) if l > 0.0 => Ok(ResolventKernel::Outgoing { lambda: l }),
        e => Err(BsError::SingularEnergy(format!("{e:?}"))),
    }
}

pub fn assemble_m(pot: &FactorizedPotential, energy: EnergyPoint) -> Result<WeightedOperator, BsError> {
    let kernel = resolvent_kernel(energy)?;
    assemble_with_kernel(pot, &kernel)
}

/// `u + v G v` for any resolvent-type kernel.
pub fn assemble_with_kernel(pot: &FactorizedPotential, kernel: &ResolventKernel) -> Result<WeightedOperator, BsError> {
    let vgv = assemble_kernel_operator(&pot.grid, kernel, pot.rule, pot.basis, &pot.v, &pot.v)?;
    Ok(pot.u_op().add(&vgv)?)
}

/// Condition number above which `M` is treated as singular.
pub const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Clone)]
pub struct SMatrixSample {
    pub lambda: f64,
    /// `S(lambda)` on the angular grid.
    pub s: WeightedOperator,
    pub unitarity_defect: f64,
    pub s_minus_1_norm: f64,
    pub cond_m: f64,
}

impl SMatrixSample {
    /// Dense `m x m` matrix indexed by directions.
    pub fn dense(&self) -> CMat {
        self.s.to_nodal().blocks[0].matrix.clone()
    }

    /// Eigenvalues of `S`; ordered by angular mode in the mode basis.
    pub fn eigenvalues(&self) -> Vec<C64> {
        match self.s.basis {
            Basis::Modes => self.s.blocks.iter().map(|b| b.matrix[(0, 0)]).collect(),
            Basis::Nodal => Schur::new(self.s.blocks[0].matrix.clone()).unpack().1.diagonal().iter().copied().collect(),
        }
    }
}

/// `F0(lambda) v M^{-1} v F0(lambda)*` and `M`.
pub fn transition_operator(
    pot: &FactorizedPotential,
    lambda: f64,
    ang: &AngularGrid,
) -> Result<(WeightedOperator, WeightedOperator), BsError> {
    let m = assemble_m(pot, EnergyPoint::BoundaryLambda(lambda))?;
    let f0 = assemble_f0(lambda, &pot.grid, ang, pot.basis)?;
    let v = pot.v_op();
    let vfs = v.compose(&f0.adjoint())?;
    let x = m.solve(&vfs)?;
    let t = f0.compose(&v)?.compose(&x)?;
    Ok((t, m))
}

pub fn smatrix(pot: &FactorizedPotential, lambda: f64, ang: &AngularGrid) -> Result<SMatrixSample, BsError> {
    if !(lambda > 0.0) {
        return Err(BsError::SingularEnergy(format!("lambda = {lambda}")));
    }
    let (t, m) = transition_operator(pot, lambda, ang)?;
    let cond_m = m.condition_number();
    if !(cond_m < MAX_CONDITION) {
        return Err(BsError::NearSingularM { cond: cond_m });
    }
    let one = WeightedOperator::identity(&t.row_space());
    let s = one.sub(&t.scale(C64::new(0.0, 2.0 * PI)))?;
    let unitarity_defect = s.adjoint().compose(&s)?.sub(&one)?.norm();
    let s_minus_1_norm = s.sub(&one)?.norm();
    Ok(SMatrixSample { lambda, s, unitarity_defect, s_minus_1_norm, cond_m })
}

/// Independent `S(lambda)` evaluations; errors are reported per entry.
pub fn sweep_smatrix(
    pot: &FactorizedPotential,
    lambdas: &[f64],
    ang: &AngularGrid,
) -> Result<Vec<Result<SMatrixSample, BsError>>, BsError> {
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(BsError::BadSweep("energies must be positive".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(BsError::BadSweep("energies must be strictly ascending".into()));
    }
    Ok(lambdas.par_iter().map(|l| smatrix(pot, *l, ang)).collect())
}

/// `n` energies log-spaced over `[lo, hi]`.
pub fn log_energies(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// `(M(-i sqrt(lambda)) + S1)^{-1}`.
pub fn assemble_i1(pot: &FactorizedPotential, lambda: f64, s1: &WeightedOperator) -> Result<WeightedOperator, BsError> {
    let m = assemble_m(pot, EnergyPoint::BoundaryLambda(lambda))?.add(s1)?;
    let cond = m.condition_number();
    if !(cond < MAX_CONDITION) {
        return Err(BsError::NearSingularM { cond });
    }
    Ok(m.inverse()?)
}
