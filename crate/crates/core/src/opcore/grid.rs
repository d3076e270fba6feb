use super::operator::{Basis, BlockVector, CVec, Space, C64};
use super::OpError;
use gauss_quad::GaussLegendre;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Radial Gauss–Legendre panels times uniform angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarLayout {
    pub radii: Vec<f64>,
    /// Radial weights including the Jacobian `r`.
    pub radial_weights: Vec<f64>,
    pub n_angular: usize,
}

impl PolarLayout {
    pub fn n_radial(&self) -> usize {
        self.radii.len()
    }

    pub fn angle(&self, p: usize) -> f64 {
        2.0 * PI * p as f64 / self.n_angular as f64
    }

    /// Area weight of every node on ring `a`.
    pub fn node_weight(&self, a: usize) -> f64 {
        self.radial_weights[a] * 2.0 * PI / self.n_angular as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid2D {
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub radius: f64,
    /// Present for disk grids; node `a * n_angular + p` sits at radius `a`, angle `p`.
    pub polar: Option<PolarLayout>,
}

/// Gauss–Legendre nodes and weights on `[lo, hi]`, ascending.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let rule = GaussLegendre::new(n).expect("Gauss-Legendre order >= 2");
    let mut pairs: Vec<(f64, f64)> = rule
        .iter()
        .map(|(x, w)| (0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * (hi - lo) * w))
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs
}

pub fn build_disk_grid(radius: f64, n_radial: usize, n_angular: usize) -> Result<QuadGrid2D, OpError> {
    build_disk_grid_panels(&[0.0, radius], n_radial, n_angular)
}

/// Disk grid whose radial rule is split at `breaks` (first 0, last the radius),
/// with `n_per_panel` Gauss–Legendre nodes in each panel.
pub fn build_disk_grid_panels(breaks: &[f64], n_per_panel: usize, n_angular: usize) -> Result<QuadGrid2D, OpError> {
    let bad = |m: &str| Err(OpError::BadGridSpec(m.to_string()));
    if breaks.len() < 2 || breaks[0] != 0.0 {
        return bad("radial breaks must start at 0");
    }
    if breaks.windows(2).any(|w| !(w[1] > w[0])) || !breaks.iter().all(|b| b.is_finite()) {
        return bad("radius must be positive and breaks increasing");
    }
    if n_per_panel * (breaks.len() - 1) < 4 || n_per_panel < 2 {
        return bad("need n_radial >= 4");
    }
    if n_angular < 8 {
        return bad("need n_angular >= 8");
    }
    let mut radii = Vec::new();
    let mut radial_weights = Vec::new();
    for w in breaks.windows(2) {
        for (r, wt) in gauss_legendre(n_per_panel, w[0], w[1]) {
            radii.push(r);
            radial_weights.push(wt * r);
        }
    }
    let layout = PolarLayout { radii, radial_weights, n_angular };
    let mut nodes = Vec::with_capacity(layout.n_radial() * n_angular);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for a in 0..layout.n_radial() {
        for p in 0..n_angular {
            let t = layout.angle(p);
            nodes.push([layout.radii[a] * t.cos(), layout.radii[a] * t.sin()]);
            weights.push(layout.node_weight(a));
        }
    }
    Ok(QuadGrid2D { nodes, weights, radius: *breaks.last().unwrap(), polar: Some(layout) })
}

impl QuadGrid2D {
    /// Unstructured grid; only the nodal basis is available on it.
    pub fn from_nodes(nodes: Vec<[f64; 2]>, weights: Vec<f64>, radius: f64) -> Result<Self, OpError> {
        if nodes.len() != weights.len() || nodes.is_empty() {
            return Err(OpError::BadGridSpec("nodes and weights differ in length".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(OpError::BadGridSpec("weights must be positive".into()));
        }
        if nodes.iter().any(|x| x[0].hypot(x[1]) > radius) {
            return Err(OpError::BadGridSpec("node outside radius".into()));
        }
        Ok(QuadGrid2D { nodes, weights, radius, polar: None })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_radius(&self, i: usize) -> f64 {
        self.nodes[i][0].hypot(self.nodes[i][1])
    }

    pub fn integrate(&self, f: impl Fn([f64; 2]) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(x, w)| f(*x) * w).sum()
    }

    pub fn space(&self, basis: Basis) -> Space {
        match basis {
            Basis::Nodal => Space { basis, weights: vec![self.weights.clone()] },
            Basis::Modes => {
                let l = self.polar.as_ref().expect("mode basis needs a polar grid");
                let w: Vec<f64> = (0..l.n_radial()).map(|a| l.node_weight(a)).collect();
                Space { basis, weights: vec![w; l.n_angular] }
            }
        }
    }

    /// Samples `f` at the nodes into the requested basis.
    pub fn sample(&self, basis: Basis, f: impl Fn([f64; 2]) -> C64) -> BlockVector {
        let nodal = BlockVector {
            basis: Basis::Nodal,
            parts: vec![CVec::from_iterator(self.len(), self.nodes.iter().map(|x| f(*x)))],
        };
        self.convert(&nodal, basis)
    }

    /// Changes the representation of a grid vector.
    pub fn convert(&self, f: &BlockVector, to: Basis) -> BlockVector {
        if f.basis == to {
            return f.clone();
        }
        let l = self.polar.as_ref().expect("mode basis needs a polar grid");
        match to {
            Basis::Modes => BlockVector { basis: to, parts: nodal_to_modes(&f.parts[0], l.n_radial(), l.n_angular) },
            Basis::Nodal => BlockVector { basis: to, parts: vec![modes_to_nodal(&f.parts, l.n_radial(), l.n_angular)] },
        }
    }
}

/// `f[a * n + p] -> parts[l][a] = n^{-1/2} sum_p f e^{-i l theta_p}`.
pub fn nodal_to_modes(f: &CVec, n_rows: usize, n: usize) -> Vec<CVec> {
    let fft = FftPlanner::new().plan_fft_forward(n);
    let s = 1.0 / (n as f64).sqrt();
    let mut parts = vec![CVec::zeros(n_rows); n];
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for a in 0..n_rows {
        for p in 0..n {
            buf[p] = f[a * n + p];
        }
        fft.process(&mut buf);
        for l in 0..n {
            parts[l][a] = buf[l] * s;
        }
    }
    parts
}

pub fn modes_to_nodal(parts: &[CVec], n_rows: usize, n: usize) -> CVec {
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let s = 1.0 / (n as f64).sqrt();
    let mut out = CVec::zeros(n_rows * n);
    let mut buf = vec![C64::new(0.0, 0.0); n];
    for a in 0..n_rows {
        for l in 0..n {
            buf[l] = parts[l][a];
        }
        fft.process(&mut buf);
        for p in 0..n {
            out[a * n + p] = buf[p] * s;
        }
    }
    out
}

/// Equispaced directions on the unit circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AngularGrid {
    pub m: usize,
}

impl AngularGrid {
    pub fn new(m: usize) -> Result<Self, OpError> {
        if m < 4 || m % 2 != 0 {
            return Err(OpError::BadGridSpec(format!("angular grid needs even m >= 4, got {m}")));
        }
        Ok(AngularGrid { m })
    }

    pub fn angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.m as f64
    }

    pub fn weight(&self) -> f64 {
        2.0 * PI / self.m as f64
    }

    /// Index of the antipodal direction.
    pub fn antipode(&self, k: usize) -> usize {
        (k + self.m / 2) % self.m
    }

    pub fn space(&self, basis: Basis) -> Space {
        match basis {
            Basis::Nodal => Space { basis, weights: vec![vec![self.weight(); self.m]] },
            Basis::Modes => Space { basis, weights: vec![vec![self.weight()]; self.m] },
        }
    }

    pub fn convert(&self, f: &BlockVector, to: Basis) -> BlockVector {
        if f.basis == to {
            return f.clone();
        }
        match to {
            Basis::Modes => BlockVector { basis: to, parts: nodal_to_modes(&f.parts[0], 1, self.m) },
            Basis::Nodal => BlockVector { basis: to, parts: vec![modes_to_nodal(&f.parts, 1, self.m)] },
        }
    }
}
