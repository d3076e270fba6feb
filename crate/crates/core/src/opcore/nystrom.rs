//! Nyström assembly of operators with the 2D free-resolvent kernels, whose
//! diagonal carries a logarithmic singularity `-(1/2pi) ln|x-y|`.

use super::operator::{Basis, CMat, WeightedOperator, C64};
use super::{circulant_blocks, OpError, QuadGrid2D};
use crate::sfun::{h0plus, k0, EULER_GAMMA};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResolventKernel {
    /// `(1/2pi) K0(kappa r)`, the kernel of `(-Delta + kappa^2)^{-1}`.
    Macdonald { kappa: f64 },
    /// `(i/4) H0+(sqrt(lambda) r)`, the boundary value at `lambda + i0`.
    Outgoing { lambda: f64 },
    /// `-(1/2pi) (ln(r/2) + gamma)`, the constant-free part of the small-`kappa` expansion.
    ZeroEnergy,
}

const INV_2PI: f64 = 1.0 / (2.0 * PI);

impl ResolventKernel {
    pub fn eval(&self, r: f64) -> C64 {
        match *self {
            ResolventKernel::Macdonald { kappa } => C64::new(INV_2PI * k0(kappa * r), 0.0),
            ResolventKernel::Outgoing { lambda } => C64::new(0.0, 0.25) * h0plus(lambda.sqrt() * r),
            ResolventKernel::ZeroEnergy => C64::new(-INV_2PI * ((0.5 * r).ln() + EULER_GAMMA), 0.0),
        }
    }

    /// Limit of `G(r) + (1/2pi) ln r` as `r -> 0`.
    pub fn regular_part_at_zero(&self) -> C64 {
        match *self {
            ResolventKernel::Macdonald { kappa } => C64::new(-INV_2PI * ((0.5 * kappa).ln() + EULER_GAMMA), 0.0),
            ResolventKernel::Outgoing { lambda } => {
                C64::new(-INV_2PI * ((0.5 * lambda.sqrt()).ln() + EULER_GAMMA), 0.25)
            }
            ResolventKernel::ZeroEnergy => C64::new(INV_2PI * (2f64.ln() - EULER_GAMMA), 0.0),
        }
    }

    pub fn is_real(&self) -> bool {
        !matches!(self, ResolventKernel::Outgoing { .. })
    }
}

/// Treatment of the log-singular diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiagonalRule {
    /// Kernel averaged over the disk with the same area as the node's cell.
    CellAverage,
    /// `∫ ln|x_i - y| phi(y) dy` written as `sum_j ln r_ij w_j (phi_j - phi_i) + phi_i L_i`,
    /// with `L_i` the exact integral of the logarithm over the grid disk.
    #[default]
    SingularitySubtraction,
}

/// `∫_{|y| < R} ln|x - y| dy` for `|x| <= R`.
fn disk_log_integral(radius: f64, r: f64) -> f64 {
    PI * radius * radius * radius.ln() - 0.5 * PI * (radius * radius - r * r)
}

/// Diagonal kernel values (to be multiplied by the node weight), one per node
/// for the nodal basis or one per ring for the mode basis.
fn diagonal_values(grid: &QuadGrid2D, kernel: &ResolventKernel, rule: DiagonalRule, basis: Basis) -> Vec<C64> {
    let g0 = kernel.regular_part_at_zero();
    let idx: Vec<usize> = match basis {
        Basis::Nodal => (0..grid.len()).collect(),
        Basis::Modes => {
            let l = grid.polar.as_ref().unwrap();
            (0..l.n_radial()).map(|a| a * l.n_angular).collect()
        }
    };
    idx.iter()
        .map(|&i| {
            let w = grid.weights[i];
            match rule {
                DiagonalRule::CellAverage => {
                    let rho = (w / PI).sqrt();
                    g0 - INV_2PI * (rho.ln() - 0.5)
                }
                DiagonalRule::SingularitySubtraction => {
                    let xi = grid.nodes[i];
                    let s: f64 = grid
                        .nodes
                        .iter()
                        .zip(&grid.weights)
                        .enumerate()
                        .filter(|(j, _)| *j != i)
                        .map(|(_, (y, wj))| (xi[0] - y[0]).hypot(xi[1] - y[1]).ln() * wj)
                        .sum();
                    let l = disk_log_integral(grid.radius, grid.node_radius(i));
                    g0 - INV_2PI * (l - s) / w
                }
            }
        })
        .collect()
}

/// Operator with entries `left_i G(|x_i - x_j|) w_j right_j` (diagonal per `rule`).
/// `left` and `right` are nodal samples; in the mode basis they must be radial.
pub fn assemble_kernel_operator(
    grid: &QuadGrid2D,
    kernel: &ResolventKernel,
    rule: DiagonalRule,
    basis: Basis,
    left: &[f64],
    right: &[f64],
) -> Result<WeightedOperator, OpError> {
    let diag = diagonal_values(grid, kernel, rule, basis);
    match basis {
        Basis::Nodal => {
            let n = grid.len();
            let mut m = CMat::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let g = if i == j {
                        diag[i]
                    } else {
                        let (x, y) = (grid.nodes[i], grid.nodes[j]);
                        kernel.eval((x[0] - y[0]).hypot(x[1] - y[1]))
                    };
                    m[(i, j)] = g * (left[i] * grid.weights[j] * right[j]);
                }
            }
            Ok(WeightedOperator::new(Basis::Nodal, vec![(m, grid.weights.clone(), grid.weights.clone())]))
        }
        Basis::Modes => {
            let l = grid
                .polar
                .as_ref()
                .ok_or_else(|| OpError::BasisUnavailable("mode basis needs a polar grid".into()))?;
            let (nr, n) = (l.n_radial(), l.n_angular);
            let cos: Vec<f64> = (0..n).map(|d| l.angle(d).cos()).collect();
            let lv: Vec<f64> = (0..nr).map(|a| left[a * n]).collect();
            let rv: Vec<f64> = (0..nr).map(|a| right[a * n]).collect();
            let w: Vec<f64> = (0..nr).map(|a| l.node_weight(a)).collect();
            let blocks = circulant_blocks(nr, nr, n, |a, b, d| {
                let g = if a == b && d == 0 {
                    diag[a]
                } else {
                    let (ra, rb) = (l.radii[a], l.radii[b]);
                    let r2 = ra * ra + rb * rb - 2.0 * ra * rb * cos[d];
                    kernel.eval(r2.max(0.0).sqrt())
                };
                g * (lv[a] * w[b] * rv[b])
            });
            Ok(WeightedOperator::new(Basis::Modes, blocks.into_iter().map(|m| (m, w.clone(), w.clone())).collect()))
        }
    }
}
