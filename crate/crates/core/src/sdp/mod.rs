//! Standard-form semidefinite programs.
//!
//! Primal: maximize `⟨C, X⟩` subject to `⟨A_i, X⟩ = b_i`, `X ⪰ 0`.
//! Dual:   minimize `bᵀy` subject to `Σ y_i A_i − C = S ⪰ 0`.
//!
//! `X` is block diagonal. Each block is either a dense symmetric PSD block
//! or a diagonal (nonnegative orthant) block; SDPA writes the latter with a
//! negative block size.

mod sdpa;
mod solver;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::numkernel::DenseMatrix;

pub use sdpa::{export_sdpa, import_sdpa};
pub use solver::{solve, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("SDPA parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Dense(usize),
    Diagonal(usize),
}

impl BlockKind {
    pub fn dim(self) -> usize {
        match self {
            BlockKind::Dense(d) | BlockKind::Diagonal(d) => d,
        }
    }
}

/// One upper-triangle entry of a block-diagonal symmetric matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Sparse block-diagonal symmetric matrix stored by its upper triangle.
///
/// Entries are kept sorted by `(block, row, col)` with duplicates merged.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseBlockMatrix {
    entries: Vec<BlockEntry>,
}

impl SparseBlockMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from arbitrary entries. A lower-triangle entry is mirrored to
    /// the upper triangle; if both `(i, j)` and `(j, i)` are supplied they
    /// must agree, otherwise the matrix is not symmetric.
    pub fn from_entries(entries: impl IntoIterator<Item = BlockEntry>) -> Result<Self, SdpError> {
        let mut upper: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let mut lower: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        for e in entries {
            if e.row <= e.col {
                *upper.entry((e.block, e.row, e.col)).or_insert(0.0) += e.value;
            } else {
                *lower.entry((e.block, e.col, e.row)).or_insert(0.0) += e.value;
            }
        }
        for (k, v) in lower {
            match upper.get(&k) {
                Some(&u) if (u - v).abs() > 1e-12 * u.abs().max(v.abs()).max(1.0) => {
                    return Err(SdpError::Malformed(format!(
                        "non-symmetric entries at block {} ({}, {})",
                        k.0 + 1,
                        k.1 + 1,
                        k.2 + 1
                    )));
                }
                Some(_) => {}
                None => {
                    upper.insert(k, v);
                }
            }
        }
        Ok(Self {
            entries: upper
                .into_iter()
                .filter(|(_, v)| *v != 0.0)
                .map(|((block, row, col), value)| BlockEntry { block, row, col, value })
                .collect(),
        })
    }

    /// Adds `value` at `(row, col)` (and its mirror).
    pub fn add(&mut self, block: usize, row: usize, col: usize, value: f64) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        match self
            .entries
            .binary_search_by(|e| (e.block, e.row, e.col).cmp(&(block, row, col)))
        {
            Ok(k) => {
                self.entries[k].value += value;
                if self.entries[k].value == 0.0 {
                    self.entries.remove(k);
                }
            }
            Err(k) => {
                if value != 0.0 {
                    self.entries.insert(k, BlockEntry { block, row, col, value });
                }
            }
        }
    }

    pub fn entries(&self) -> &[BlockEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.value.abs()))
    }

    /// `⟨self, X⟩` for a block value.
    pub fn inner(&self, x: &[BlockValue]) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let v = match &x[e.block] {
                    BlockValue::Dense(m) => m[(e.row, e.col)],
                    BlockValue::Diagonal(d) => {
                        if e.row == e.col {
                            d[e.row]
                        } else {
                            0.0
                        }
                    }
                };
                if e.row == e.col {
                    e.value * v
                } else {
                    2.0 * e.value * v
                }
            })
            .sum()
    }
}

/// Value of one block of a primal or dual matrix variable.
#[derive(Clone, Debug, PartialEq)]
pub enum BlockValue {
    /// Full symmetric storage.
    Dense(DenseMatrix),
    Diagonal(Vec<f64>),
}

impl BlockValue {
    pub fn zeros(kind: BlockKind) -> Self {
        match kind {
            BlockKind::Dense(d) => BlockValue::Dense(DenseMatrix::zeros(d, d)),
            BlockKind::Diagonal(d) => BlockValue::Diagonal(vec![0.0; d]),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            BlockValue::Dense(m) => m[(i, j)],
            BlockValue::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdpProblem {
    blocks: Vec<BlockKind>,
    c: SparseBlockMatrix,
    a: Vec<SparseBlockMatrix>,
    b: Vec<f64>,
}

impl SdpProblem {
    pub fn new(
        blocks: Vec<BlockKind>,
        c: SparseBlockMatrix,
        a: Vec<SparseBlockMatrix>,
        b: Vec<f64>,
    ) -> Result<Self, SdpError> {
        let p = Self { blocks, c, a, b };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<(), SdpError> {
        if self.a.len() != self.b.len() {
            return Err(SdpError::Malformed(format!(
                "{} constraint matrices but {} right-hand sides",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.blocks.iter().any(|k| k.dim() == 0) {
            return Err(SdpError::Malformed("zero-sized block".into()));
        }
        for (idx, m) in std::iter::once(&self.c).chain(&self.a).enumerate() {
            for e in m.entries() {
                let kind = self.blocks.get(e.block).ok_or_else(|| {
                    SdpError::Malformed(format!("matrix {idx} references block {}", e.block + 1))
                })?;
                if e.row > e.col || e.col >= kind.dim() {
                    return Err(SdpError::Malformed(format!(
                        "matrix {idx}: entry ({}, {}) outside block {} of size {}",
                        e.row + 1,
                        e.col + 1,
                        e.block + 1,
                        kind.dim()
                    )));
                }
                if matches!(kind, BlockKind::Diagonal(_)) && e.row != e.col {
                    return Err(SdpError::Malformed(format!(
                        "matrix {idx}: off-diagonal entry in diagonal block {}",
                        e.block + 1
                    )));
                }
                if !e.value.is_finite() {
                    return Err(SdpError::Malformed(format!("matrix {idx}: non-finite entry")));
                }
            }
        }
        if self.b.iter().any(|v| !v.is_finite()) {
            return Err(SdpError::Malformed("non-finite right-hand side".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[BlockKind] {
        &self.blocks
    }

    pub fn objective(&self) -> &SparseBlockMatrix {
        &self.c
    }

    pub fn constraints(&self) -> &[SparseBlockMatrix] {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    /// Sum of block dimensions.
    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(|k| k.dim()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// A dual improving ray was found: no primal `X` satisfies the constraints.
    PrimalInfeasible,
    /// A primal improving ray was found: the dual is infeasible.
    DualInfeasible,
    Stalled,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vec<BlockValue>,
    pub y: Vec<f64>,
    pub s: Vec<BlockValue>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// `max_i |⟨A_i, X⟩ − b_i|`.
    pub primal_residual: f64,
    /// Largest entry of `Σ y_i A_i − S − C`.
    pub dual_residual: f64,
    /// `⟨X, S⟩`.
    pub complementarity: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_matrix_mirrors_and_rejects_asymmetry() {
        let m = SparseBlockMatrix::from_entries([
            BlockEntry { block: 0, row: 1, col: 0, value: 2.0 },
            BlockEntry { block: 0, row: 0, col: 0, value: 1.0 },
        ])
        .unwrap();
        assert_eq!(m.entries().len(), 2);
        assert_eq!(m.entries()[1], BlockEntry { block: 0, row: 0, col: 1, value: 2.0 });
        let bad = SparseBlockMatrix::from_entries([
            BlockEntry { block: 0, row: 1, col: 0, value: 2.0 },
            BlockEntry { block: 0, row: 0, col: 1, value: 3.0 },
        ]);
        assert!(matches!(bad, Err(SdpError::Malformed(_))));
    }

    #[test]
    fn inconsistent_blocks_are_rejected() {
        let mut a = SparseBlockMatrix::new();
        a.add(0, 0, 2, 1.0);
        let p = SdpProblem::new(vec![BlockKind::Dense(2)], SparseBlockMatrix::new(), vec![a], vec![1.0]);
        assert!(p.is_err());
        let mut d = SparseBlockMatrix::new();
        d.add(0, 0, 1, 1.0);
        let p = SdpProblem::new(vec![BlockKind::Diagonal(2)], SparseBlockMatrix::new(), vec![d], vec![1.0]);
        assert!(p.is_err());
        let p = SdpProblem::new(vec![BlockKind::Dense(1)], SparseBlockMatrix::new(), vec![], vec![1.0]);
        assert!(p.is_err());
    }
}
