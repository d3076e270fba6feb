use super::operator::{BlockVector, CMat, CVec, Space, WeightedOperator, C64};
use super::OpError;

/// Spectral gap around a rank decision.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub threshold: f64,
    /// Singular values below the threshold (the null part), ascending.
    pub discarded: Vec<f64>,
    /// Smallest singular value kept above the threshold, if any.
    pub smallest_kept: Option<f64>,
    /// `smallest_kept / max(discarded)`; with nothing discarded the threshold
    /// stands in for the denominator.
    pub ratio: f64,
}

/// Weighted-orthonormal null vectors and the matching orthogonal projection.
#[derive(Debug, Clone)]
pub struct NullSpace {
    pub projector: WeightedOperator,
    /// (block index, vector) pairs.
    pub vectors: Vec<(usize, CVec)>,
    pub report: GapReport,
}

impl NullSpace {
    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, i: usize, space: &Space) -> BlockVector {
        let mut f = space.zeros();
        let (b, v) = &self.vectors[i];
        f.parts[*b] = v.clone();
        f
    }
}

pub const MIN_GAP_RATIO: f64 = 10.0;

/// Splits singular values at `threshold` and certifies the gap.
pub fn split_spectrum(values: &[f64], threshold: f64, stage: &str) -> Result<GapReport, OpError> {
    let mut discarded: Vec<f64> = values.iter().copied().filter(|s| *s < threshold).collect();
    discarded.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let smallest_kept = values.iter().copied().filter(|s| *s >= threshold).reduce(f64::min);
    let below = discarded.last().copied().unwrap_or(threshold).max(f64::MIN_POSITIVE);
    let ratio = match smallest_kept {
        Some(k) => k / below,
        None => f64::INFINITY,
    };
    if ratio < MIN_GAP_RATIO {
        return Err(OpError::IllConditionedSplit { stage: stage.to_string(), ratio, threshold });
    }
    Ok(GapReport { threshold, discarded, smallest_kept, ratio })
}

/// Projection onto the span of singular vectors with singular value below
/// `tol * sigma_max`.
pub fn nullspace_projection(op: &WeightedOperator, tol: f64) -> Result<NullSpace, OpError> {
    nullspace_projection_scaled(op, tol, None, "nullspace")
}

/// As [`nullspace_projection`], with the threshold `tol * scale` when a
/// reference scale is given (for operators that may vanish identically).
pub fn nullspace_projection_scaled(
    op: &WeightedOperator,
    tol: f64,
    scale: Option<f64>,
    stage: &str,
) -> Result<NullSpace, OpError> {
    if !(tol > 0.0) {
        return Err(OpError::ShapeMismatch(format!("tolerance must be positive, got {tol}")));
    }
    if op.blocks.iter().any(|b| b.matrix.nrows() != b.matrix.ncols()) {
        return Err(OpError::ShapeMismatch("nullspace_projection needs a square operator".into()));
    }
    let defect = op.self_adjoint_defect();
    if defect > 1e-8 {
        return Err(OpError::NotSelfAdjoint(defect));
    }
    let eig = op.hermitian_eigen();
    let all: Vec<f64> = eig.iter().flat_map(|(e, _)| e.iter().map(|x| x.abs())).collect();
    let sigma_max = all.iter().copied().fold(0.0, f64::max);
    let threshold = tol * scale.unwrap_or(sigma_max);
    let report = if sigma_max == 0.0 && scale.is_none() {
        GapReport { threshold: 0.0, discarded: all.clone(), smallest_kept: None, ratio: f64::INFINITY }
    } else {
        split_spectrum(&all, threshold, stage)?
    };
    let mut vectors = Vec::new();
    let mut projector = WeightedOperator::zero(&op.row_space(), &op.col_space());
    for (b, (vals, vecs)) in eig.iter().enumerate() {
        let w = &op.blocks[b].row_weights;
        for (i, v) in vals.iter().enumerate() {
            if v.abs() < threshold || (sigma_max == 0.0 && scale.is_none()) {
                let col: CVec = vecs.column(i).into_owned();
                add_outer(&mut projector.blocks[b].matrix, &col, w);
                vectors.push((b, col));
            }
        }
    }
    Ok(NullSpace { projector, vectors, report })
}

/// `P += f f^* W` for a weighted-unit vector `f`.
pub(crate) fn add_outer(p: &mut CMat, f: &CVec, w: &[f64]) {
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            p[(i, j)] += f[i] * f[j].conj() * C64::new(w[j], 0.0);
        }
    }
}
