//! Spatial and angular discretization, the spectral transform at fixed energy
//! and its zero-energy expansion operators, and weighted linear algebra.
//!
//! Fourier convention: `(F f)(xi) = (2 pi)^{-1} ∫ e^{-i xi.x} f(x) dx`. The
//! spectral transform at energy `lambda` is `2^{-1/2} (F f)(sqrt(lambda) omega)`,
//! so its `lambda -> 0` limit carries the prefactor `1 / (2^{3/2} pi)`.

mod grid;
mod nullspace;
mod nystrom;
mod operator;
mod transform;

pub use grid::{
    build_disk_grid, build_disk_grid_panels, gauss_legendre, modes_to_nodal, nodal_to_modes, AngularGrid,
    PolarLayout, QuadGrid2D,
};
pub use nullspace::{nullspace_projection, nullspace_projection_scaled, split_spectrum, GapReport, NullSpace};
pub use nystrom::{assemble_kernel_operator, DiagonalRule, ResolventKernel};
pub use operator::{Basis, Block, BlockVector, CMat, CVec, Space, WeightedOperator, C64};
pub use transform::{assemble_f0, assemble_gamma, F0_PREFACTOR};

use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpError {
    #[error("BadGridSpec: {0}")]
    BadGridSpec(String),
    #[error("NonPositiveEnergy: lambda = {0}")]
    NonPositiveEnergy(f64),
    #[error("BadOrder: j = {0}")]
    BadOrder(usize),
    #[error("IllConditionedSplit at stage {stage}: gap ratio {ratio:.3e} across threshold {threshold:.3e}")]
    IllConditionedSplit { stage: String, ratio: f64, threshold: f64 },
    #[error("NotSelfAdjoint: relative defect {0:.3e}")]
    NotSelfAdjoint(f64),
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("Singular: {0}")]
    Singular(String),
    #[error("BasisUnavailable: {0}")]
    BasisUnavailable(String),
}

/// Mode blocks of a rotation-equivariant operator from its circulant kernel.
/// `kernel(a, b, d)` is the entry between row point `a` at angle `theta_d` and
/// column point `b` at angle 0 (weights included). Returns `n` blocks of size
/// `rows x cols`.
pub(crate) fn circulant_blocks(
    rows: usize,
    cols: usize,
    n: usize,
    kernel: impl Fn(usize, usize, usize) -> C64 + Sync,
) -> Vec<CMat> {
    use rayon::prelude::*;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let columns: Vec<Vec<Vec<C64>>> = (0..rows)
        .into_par_iter()
        .map(|a| {
            let mut out = Vec::with_capacity(cols);
            let mut buf = vec![C64::new(0.0, 0.0); n];
            for b in 0..cols {
                for (d, x) in buf.iter_mut().enumerate() {
                    *x = kernel(a, b, d);
                }
                fft.process(&mut buf);
                out.push(buf.clone());
            }
            out
        })
        .collect();
    (0..n)
        .map(|l| CMat::from_fn(rows, cols, |a, b| columns[a][b][l]))
        .collect()
}

impl WeightedOperator {
    /// Dense nodal form of a mode-basis operator (identity on nodal input).
    /// Node `a * n + p` of a block of size `r` maps to row `a`, angle `p`.
    pub fn to_nodal(&self) -> WeightedOperator {
        if self.basis == Basis::Nodal {
            return self.clone();
        }
        let n = self.blocks.len();
        let r = self.blocks[0].matrix.nrows();
        let c = self.blocks[0].matrix.ncols();
        let ifft = FftPlanner::new().plan_fft_inverse(n);
        let mut dense = CMat::zeros(r * n, c * n);
        let mut buf = vec![C64::new(0.0, 0.0); n];
        for a in 0..r {
            for b in 0..c {
                for l in 0..n {
                    buf[l] = self.blocks[l].matrix[(a, b)];
                }
                ifft.process(&mut buf);
                for p in 0..n {
                    for q in 0..n {
                        dense[(a * n + p, b * n + q)] = buf[(p + n - q) % n] / n as f64;
                    }
                }
            }
        }
        let expand = |w: &Vec<f64>| -> Vec<f64> { w.iter().flat_map(|x| std::iter::repeat(*x).take(n)).collect() };
        WeightedOperator::new(
            Basis::Nodal,
            vec![(dense, expand(&self.blocks[0].row_weights), expand(&self.blocks[0].col_weights))],
        )
    }
}
