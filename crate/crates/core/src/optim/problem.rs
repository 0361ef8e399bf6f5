//! Least-squares problem plumbing: named parameter blocks with frozen
//! flags, block-sparse Jacobians, and the finite-difference oracle.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("non-finite residual at row {row}")]
    NonFiniteResidual { row: usize },
    #[error("non-finite Jacobian entry")]
    NonFiniteJacobian,
    #[error("problem construction failed: {0}")]
    Construction(String),
}

/// A named slice of the full parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub frozen: bool,
}

/// Layout of the full parameter vector as named blocks. The solver only
/// ever moves unfrozen entries; frozen blocks stay bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    /// Builds a layout from `(name, len, frozen)` triples, packed in order.
    pub fn new(spec: impl IntoIterator<Item = (String, usize, bool)>) -> Self {
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (name, len, frozen) in spec {
            blocks.push(ParamBlock {
                name,
                offset,
                len,
                frozen,
            });
            offset += len;
        }
        ParamLayout {
            blocks,
            total: offset,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Indices of unfrozen entries, in order.
    pub fn active_indices(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        for b in &self.blocks {
            if !b.frozen {
                idx.extend(b.offset..b.offset + b.len);
            }
        }
        idx
    }

    /// Map full index -> active index (None when frozen).
    pub fn active_map(&self) -> Vec<Option<usize>> {
        let mut map = vec![None; self.total];
        for (ai, fi) in self.active_indices().into_iter().enumerate() {
            map[fi] = Some(ai);
        }
        map
    }

    pub fn active_len(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| !b.frozen)
            .map(|b| b.len)
            .sum()
    }

    pub fn extract_active(&self, full: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.active_len(),
            self.active_indices().into_iter().map(|i| full[i]),
        )
    }

    /// Writes active entries into a copy of `base`, leaving frozen entries
    /// untouched.
    pub fn splice(&self, base: &DVector<f64>, active: &DVector<f64>) -> DVector<f64> {
        let mut full = base.clone();
        for (ai, fi) in self.active_indices().into_iter().enumerate() {
            full[fi] = active[ai];
        }
        full
    }
}

/// One dense block of a block-sparse Jacobian: a contiguous row range
/// touching an arbitrary set of full-space columns.
#[derive(Debug, Clone)]
pub struct JacBlock {
    pub row0: usize,
    pub cols: Vec<usize>,
    /// Dense `group_rows x cols.len()` values.
    pub values: DMatrix<f64>,
}

/// Block-sparse Jacobian over the full parameter space.
#[derive(Debug, Clone)]
pub struct BlockJacobian {
    pub nrows: usize,
    pub ncols: usize,
    pub blocks: Vec<JacBlock>,
}

impl BlockJacobian {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        BlockJacobian {
            nrows,
            ncols,
            blocks: Vec::new(),
        }
    }

    pub fn push(&mut self, block: JacBlock) {
        debug_assert!(block.row0 + block.values.nrows() <= self.nrows);
        debug_assert_eq!(block.cols.len(), block.values.ncols());
        self.blocks.push(block);
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut dense = DMatrix::zeros(self.nrows, self.ncols);
        for b in &self.blocks {
            for (ci, &col) in b.cols.iter().enumerate() {
                for r in 0..b.values.nrows() {
                    dense[(b.row0 + r, col)] += b.values[(r, ci)];
                }
            }
        }
        dense
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.values.iter().all(|v| v.is_finite()))
    }

    /// Accumulates the Gauss-Newton system restricted to active columns:
    /// returns `(J^T J, J^T r)`.
    pub fn gram(
        &self,
        residual: &DVector<f64>,
        active_map: &[Option<usize>],
        active_len: usize,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let mut gram = DMatrix::zeros(active_len, active_len);
        let mut grad = DVector::zeros(active_len);
        for b in &self.blocks {
            let rows = b.values.nrows();
            let act: Vec<Option<usize>> = b.cols.iter().map(|&c| active_map[c]).collect();
            for (ci, &ai) in act.iter().enumerate() {
                let Some(ai) = ai else { continue };
                let mut g = 0.0;
                for r in 0..rows {
                    g += b.values[(r, ci)] * residual[b.row0 + r];
                }
                grad[ai] += g;
                for (cj, &aj) in act.iter().enumerate() {
                    let Some(aj) = aj else { continue };
                    if aj > ai {
                        continue; // fill symmetric half later
                    }
                    let mut s = 0.0;
                    for r in 0..rows {
                        s += b.values[(r, ci)] * b.values[(r, cj)];
                    }
                    gram[(ai, aj)] += s;
                }
            }
        }
        // Mirror the lower triangle.
        for i in 0..active_len {
            for j in i + 1..active_len {
                gram[(i, j)] = gram[(j, i)];
            }
        }
        (gram, grad)
    }
}

/// A nonlinear least-squares problem over the full parameter vector.
/// Residuals keep a fixed dimension for fixed structural inputs.
pub trait LeastSquaresProblem {
    fn residual_len(&self) -> usize;
    fn param_len(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError>;
    fn jacobian(&self, x: &DVector<f64>) -> Result<BlockJacobian, EvalError>;
}

/// Concatenation of sub-problems over a shared parameter vector.
pub struct CompositeProblem<'a> {
    parts: Vec<&'a dyn LeastSquaresProblem>,
    param_len: usize,
}

impl<'a> CompositeProblem<'a> {
    pub fn new(param_len: usize) -> Self {
        CompositeProblem {
            parts: Vec::new(),
            param_len,
        }
    }

    pub fn push(&mut self, part: &'a dyn LeastSquaresProblem) {
        debug_assert_eq!(part.param_len(), self.param_len);
        self.parts.push(part);
    }
}

impl LeastSquaresProblem for CompositeProblem<'_> {
    fn residual_len(&self) -> usize {
        self.parts.iter().map(|p| p.residual_len()).sum()
    }

    fn param_len(&self) -> usize {
        self.param_len
    }

    fn residuals(&self, x: &DVector<f64>) -> Result<DVector<f64>, EvalError> {
        let mut out = DVector::zeros(self.residual_len());
        let mut row = 0;
        for p in &self.parts {
            let r = p.residuals(x)?;
            out.rows_mut(row, r.len()).copy_from(&r);
            row += r.len();
        }
        Ok(out)
    }

    fn jacobian(&self, x: &DVector<f64>) -> Result<BlockJacobian, EvalError> {
        let mut out = BlockJacobian::new(self.residual_len(), self.param_len);
        let mut row = 0;
        for p in &self.parts {
            let jac = p.jacobian(x)?;
            for mut b in jac.blocks {
                b.row0 += row;
                out.push(b);
            }
            row += p.residual_len();
        }
        Ok(out)
    }
}

/// Central-difference Jacobian: column `j` is
/// `(f(x + h e_j) - f(x - h e_j)) / (2h)`.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>, EvalError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, EvalError>,
{
    let r0 = f(x)?;
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let rp = f(&xp)?;
        let rm = f(&xm)?;
        for i in 0..r0.len() {
            let v = (rp[i] - rm[i]) / (2.0 * h);
            if !v.is_finite() {
                return Err(EvalError::NonFiniteJacobian);
            }
            jac[(i, j)] = v;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn numeric_jacobian_of_linear_map_recovers_matrix() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0]);
        let a2 = a.clone();
        let f = move |x: &DVector<f64>| Ok(&a2 * x);
        let x = DVector::from_vec(vec![0.05, -0.1, 0.08]);
        let jac = numeric_jacobian(f, &x, 1e-6).unwrap();
        assert!((jac - a).amax() <= 1e-10);
    }

    #[test]
    fn numeric_jacobian_of_sine_at_zero() {
        let f = |x: &DVector<f64>| Ok(DVector::from_vec(vec![x[0].sin()]));
        let jac = numeric_jacobian(f, &DVector::zeros(1), 1e-6).unwrap();
        assert_abs_diff_eq!(jac[(0, 0)], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn layout_splice_keeps_frozen_entries() {
        let layout = ParamLayout::new([
            ("a".into(), 2, false),
            ("b".into(), 3, true),
            ("c".into(), 1, false),
        ]);
        assert_eq!(layout.total_len(), 6);
        assert_eq!(layout.active_len(), 3);
        let base = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let active = DVector::from_vec(vec![10.0, 11.0, 12.0]);
        let full = layout.splice(&base, &active);
        assert_eq!(full.as_slice(), &[10.0, 11.0, 2.0, 3.0, 4.0, 12.0]);
        assert_eq!(layout.extract_active(&full).as_slice(), &[10.0, 11.0, 12.0]);
    }

    #[test]
    fn block_jacobian_gram_matches_dense() {
        let mut jac = BlockJacobian::new(4, 5);
        jac.push(JacBlock {
            row0: 0,
            cols: vec![0, 2],
            values: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
        });
        jac.push(JacBlock {
            row0: 2,
            cols: vec![1, 2, 4],
            values: DMatrix::from_row_slice(2, 3, &[0.5, -1.0, 2.0, 1.5, 0.0, -0.5]),
        });
        let r = DVector::from_vec(vec![1.0, -1.0, 2.0, 0.5]);
        let layout = ParamLayout::new([("x".into(), 3, false), ("y".into(), 2, true)]);
        let map = layout.active_map();
        let (gram, grad) = jac.gram(&r, &map, layout.active_len());

        let dense = jac.to_dense();
        let dense_active = dense.columns(0, 3).into_owned();
        assert!((gram - dense_active.transpose() * &dense_active).amax() <= 1e-12);
        assert!((grad - dense_active.transpose() * r).amax() <= 1e-12);
    }
}
