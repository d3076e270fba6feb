//! Block-diagonal weighted operators.
//!
//! An operator is stored either as one dense block acting on nodal values, or
//! as one block per angular Fourier mode when the underlying grids are polar
//! and the operator commutes with the discrete rotation. Every block carries
//! the quadrature weights of its codomain (rows) and domain (columns); inner
//! products are `<f, g> = sum_i w_i conj(f_i) g_i`.

use super::OpError;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// A single block indexed by grid nodes.
    Nodal,
    /// Block `l` holds angular Fourier mode `l` (unitary DFT over the angles).
    Modes,
}

/// Block layout and weights of a discrete Hilbert space.
#[derive(Debug, Clone, PartialEq)]
pub struct Space {
    pub basis: Basis,
    pub weights: Vec<Vec<f64>>,
}

impl Space {
    pub fn n_blocks(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn zeros(&self) -> BlockVector {
        BlockVector {
            basis: self.basis,
            parts: self.weights.iter().map(|w| CVec::zeros(w.len())).collect(),
        }
    }

    pub fn inner(&self, f: &BlockVector, g: &BlockVector) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (b, w) in self.weights.iter().enumerate() {
            for (i, wi) in w.iter().enumerate() {
                s += f.parts[b][i].conj() * g.parts[b][i] * *wi;
            }
        }
        s
    }

    pub fn norm(&self, f: &BlockVector) -> f64 {
        self.inner(f, f).re.max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockVector {
    pub basis: Basis,
    pub parts: Vec<CVec>,
}

impl BlockVector {
    pub fn scale(&self, a: C64) -> BlockVector {
        BlockVector { basis: self.basis, parts: self.parts.iter().map(|p| p * a).collect() }
    }

    pub fn axpy(&mut self, a: C64, x: &BlockVector) {
        for (p, q) in self.parts.iter_mut().zip(&x.parts) {
            *p += q * a;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.parts.iter().flat_map(|p| p.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub matrix: CMat,
    pub row_weights: Vec<f64>,
    pub col_weights: Vec<f64>,
}

impl Block {
    fn new(matrix: CMat, row_weights: Vec<f64>, col_weights: Vec<f64>) -> Self {
        assert_eq!(matrix.nrows(), row_weights.len());
        assert_eq!(matrix.ncols(), col_weights.len());
        Block { matrix, row_weights, col_weights }
    }

    /// `W_r^{1/2} A W_c^{-1/2}`, whose Euclidean properties are the weighted ones of `A`.
    pub fn symmetrized(&self) -> CMat {
        let mut m = self.matrix.clone();
        for j in 0..m.ncols() {
            let cj = 1.0 / self.col_weights[j].sqrt();
            for i in 0..m.nrows() {
                m[(i, j)] *= self.row_weights[i].sqrt() * cj;
            }
        }
        m
    }

    pub fn adjoint(&self) -> Block {
        let mut m = self.matrix.adjoint();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                m[(i, j)] *= self.row_weights[j] / self.col_weights[i];
            }
        }
        Block::new(m, self.col_weights.clone(), self.row_weights.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedOperator {
    pub basis: Basis,
    pub blocks: Vec<Block>,
}

fn weights_match(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-13 * x.abs().max(y.abs()))
}

impl WeightedOperator {
    pub fn new(basis: Basis, blocks: Vec<(CMat, Vec<f64>, Vec<f64>)>) -> Self {
        WeightedOperator {
            basis,
            blocks: blocks.into_iter().map(|(m, r, c)| Block::new(m, r, c)).collect(),
        }
    }

    pub fn identity(space: &Space) -> Self {
        Self::diagonal(space, |_, _| C64::new(1.0, 0.0))
    }

    pub fn zero(rows: &Space, cols: &Space) -> Self {
        assert_eq!(rows.basis, cols.basis);
        assert_eq!(rows.n_blocks(), cols.n_blocks());
        WeightedOperator {
            basis: rows.basis,
            blocks: rows
                .weights
                .iter()
                .zip(&cols.weights)
                .map(|(r, c)| Block::new(CMat::zeros(r.len(), c.len()), r.clone(), c.clone()))
                .collect(),
        }
    }

    /// Multiplication operator with entries `f(block, index)`.
    pub fn diagonal(space: &Space, f: impl Fn(usize, usize) -> C64) -> Self {
        WeightedOperator {
            basis: space.basis,
            blocks: space
                .weights
                .iter()
                .enumerate()
                .map(|(b, w)| {
                    let m = CMat::from_diagonal(&CVec::from_iterator(w.len(), (0..w.len()).map(|i| f(b, i))));
                    Block::new(m, w.clone(), w.clone())
                })
                .collect(),
        }
    }

    /// Rank-one operator `f <g, .>`.
    pub fn outer(f: &BlockVector, rows: &Space, g: &BlockVector, cols: &Space) -> Self {
        let mut op = Self::zero(rows, cols);
        for (b, blk) in op.blocks.iter_mut().enumerate() {
            for i in 0..blk.matrix.nrows() {
                for j in 0..blk.matrix.ncols() {
                    blk.matrix[(i, j)] = f.parts[b][i] * g.parts[b][j].conj() * blk.col_weights[j];
                }
            }
        }
        op
    }

    pub fn row_space(&self) -> Space {
        Space { basis: self.basis, weights: self.blocks.iter().map(|b| b.row_weights.clone()).collect() }
    }

    pub fn col_space(&self) -> Space {
        Space { basis: self.basis, weights: self.blocks.iter().map(|b| b.col_weights.clone()).collect() }
    }

    pub fn nrows(&self) -> usize {
        self.blocks.iter().map(|b| b.matrix.nrows()).sum()
    }

    pub fn ncols(&self) -> usize {
        self.blocks.iter().map(|b| b.matrix.ncols()).sum()
    }

    pub fn adjoint(&self) -> Self {
        WeightedOperator { basis: self.basis, blocks: self.blocks.iter().map(Block::adjoint).collect() }
    }

    pub fn compose(&self, rhs: &Self) -> Result<Self, OpError> {
        if self.basis != rhs.basis || self.blocks.len() != rhs.blocks.len() {
            return Err(OpError::ShapeMismatch("compose: block layouts differ".into()));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (a, b) in self.blocks.iter().zip(&rhs.blocks) {
            if !weights_match(&a.col_weights, &b.row_weights) {
                return Err(OpError::ShapeMismatch("compose: inner weights differ".into()));
            }
            blocks.push(Block::new(&a.matrix * &b.matrix, a.row_weights.clone(), b.col_weights.clone()));
        }
        Ok(WeightedOperator { basis: self.basis, blocks })
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(&CMat, &CMat) -> CMat) -> Result<Self, OpError> {
        if self.basis != rhs.basis || self.blocks.len() != rhs.blocks.len() {
            return Err(OpError::ShapeMismatch("block layouts differ".into()));
        }
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (a, b) in self.blocks.iter().zip(&rhs.blocks) {
            if !weights_match(&a.row_weights, &b.row_weights) || !weights_match(&a.col_weights, &b.col_weights) {
                return Err(OpError::ShapeMismatch("weights differ".into()));
            }
            blocks.push(Block::new(f(&a.matrix, &b.matrix), a.row_weights.clone(), a.col_weights.clone()));
        }
        Ok(WeightedOperator { basis: self.basis, blocks })
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, OpError> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, OpError> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for b in &mut out.blocks {
            b.matrix *= s;
        }
        out
    }

    pub fn apply(&self, f: &BlockVector) -> BlockVector {
        assert_eq!(self.basis, f.basis);
        BlockVector {
            basis: self.basis,
            parts: self.blocks.iter().zip(&f.parts).map(|(b, p)| &b.matrix * p).collect(),
        }
    }

    /// Solves `self X = rhs` blockwise by LU.
    pub fn solve(&self, rhs: &Self) -> Result<Self, OpError> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (a, b) in self.blocks.iter().zip(&rhs.blocks) {
            let x = a
                .matrix
                .clone()
                .lu()
                .solve(&b.matrix)
                .ok_or_else(|| OpError::Singular("LU solve failed".into()))?;
            blocks.push(Block::new(x, a.col_weights.clone(), b.col_weights.clone()));
        }
        Ok(WeightedOperator { basis: self.basis, blocks })
    }

    pub fn inverse(&self) -> Result<Self, OpError> {
        self.solve(&Self::identity(&self.row_space()))
    }

    /// Weighted operator norm (largest singular value of the symmetrized blocks).
    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .filter(|b| b.matrix.nrows() > 0 && b.matrix.ncols() > 0)
            .map(|b| b.symmetrized().singular_values().max())
            .fold(0.0, f64::max)
    }

    /// Largest entry modulus over all blocks.
    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flat_map(|b| b.matrix.iter()).map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// All weighted singular values, unsorted.
    pub fn singular_values(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .filter(|b| b.matrix.nrows() > 0 && b.matrix.ncols() > 0)
            .flat_map(|b| b.symmetrized().singular_values().iter().copied().collect::<Vec<_>>())
            .collect()
    }

    /// Weighted condition number `sigma_max / sigma_min` over all blocks.
    pub fn condition_number(&self) -> f64 {
        let sv = self.singular_values();
        let max = sv.iter().copied().fold(0.0, f64::max);
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if min == 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// `|| A - A* ||` relative to `|| A ||`.
    pub fn self_adjoint_defect(&self) -> f64 {
        let d = self.sub(&self.adjoint()).map(|d| d.norm()).unwrap_or(f64::INFINITY);
        let n = self.norm();
        if n == 0.0 {
            d
        } else {
            d / n
        }
    }

    /// Hermitian eigen-decomposition of the symmetrized blocks of a
    /// weighted-self-adjoint operator. Eigenvectors are returned in the
    /// original (unsymmetrized) coordinates and are weighted-orthonormal.
    pub fn hermitian_eigen(&self) -> Vec<(Vec<f64>, CMat)> {
        self.blocks
            .iter()
            .map(|b| {
                let h = b.symmetrized();
                let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
                let eig = SymmetricEigen::new(h);
                let mut vecs = eig.eigenvectors;
                for i in 0..vecs.nrows() {
                    let s = 1.0 / b.row_weights[i].sqrt();
                    for j in 0..vecs.ncols() {
                        vecs[(i, j)] *= s;
                    }
                }
                (eig.eigenvalues.iter().copied().collect(), vecs)
            })
            .collect()
    }
}
