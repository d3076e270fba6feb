use super::operator::{Basis, CMat, WeightedOperator, C64};
use super::{circulant_blocks, AngularGrid, OpError, QuadGrid2D};
use std::f64::consts::{PI, SQRT_2};

/// `2^{-1/2} (2 pi)^{-1}`.
pub const F0_PREFACTOR: f64 = 1.0 / (SQRT_2 * 2.0 * PI);

/// Operator from grid functions to functions on the circle with entries
/// `kernel(omega_k . x_j) w_j`.
fn plane_wave_operator(
    grid: &QuadGrid2D,
    ang: &AngularGrid,
    basis: Basis,
    kernel: impl Fn(f64) -> C64 + Sync,
) -> Result<WeightedOperator, OpError> {
    match basis {
        Basis::Nodal => {
            let m = CMat::from_fn(ang.m, grid.len(), |k, j| {
                let (s, c) = ang.angle(k).sin_cos();
                let x = grid.nodes[j];
                kernel(c * x[0] + s * x[1]) * grid.weights[j]
            });
            Ok(WeightedOperator::new(Basis::Nodal, vec![(m, vec![ang.weight(); ang.m], grid.weights.clone())]))
        }
        Basis::Modes => {
            let l = grid
                .polar
                .as_ref()
                .ok_or_else(|| OpError::BasisUnavailable("mode basis needs a polar grid".into()))?;
            if l.n_angular != ang.m {
                return Err(OpError::BasisUnavailable(format!(
                    "mode basis needs m = n_angular ({} != {})",
                    ang.m, l.n_angular
                )));
            }
            let (nr, n) = (l.n_radial(), l.n_angular);
            let cos: Vec<f64> = (0..n).map(|d| l.angle(d).cos()).collect();
            let w: Vec<f64> = (0..nr).map(|a| l.node_weight(a)).collect();
            let blocks = circulant_blocks(1, nr, n, |_, b, d| kernel(l.radii[b] * cos[d]) * w[b]);
            Ok(WeightedOperator::new(
                Basis::Modes,
                blocks.into_iter().map(|m| (m, vec![ang.weight()], w.clone())).collect(),
            ))
        }
    }
}

/// Spectral transform at energy `lambda`: `2^{-1/2} (2 pi)^{-1} e^{-i sqrt(lambda) omega.x}`.
pub fn assemble_f0(lambda: f64, grid: &QuadGrid2D, ang: &AngularGrid, basis: Basis) -> Result<WeightedOperator, OpError> {
    if !(lambda > 0.0) {
        return Err(OpError::NonPositiveEnergy(lambda));
    }
    let k = lambda.sqrt();
    plane_wave_operator(grid, ang, basis, |t| C64::from_polar(F0_PREFACTOR, -k * t))
}

/// Zero-energy expansion operator `(-i)^j (2^{3/2} pi j!)^{-1} (omega.x)^j`.
pub fn assemble_gamma(j: usize, grid: &QuadGrid2D, ang: &AngularGrid, basis: Basis) -> Result<WeightedOperator, OpError> {
    if j > 2 {
        return Err(OpError::BadOrder(j));
    }
    let fact = [1.0, 1.0, 2.0][j];
    let c = C64::new(0.0, -1.0).powu(j as u32) / (2.0 * SQRT_2 * PI * fact);
    plane_wave_operator(grid, ang, basis, |t| c * t.powi(j as i32))
}
