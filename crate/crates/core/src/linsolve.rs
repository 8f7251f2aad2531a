//! Sparse linear systems over the interior nodes with the full `3^d` stencil pattern.
//!
//! The pattern and its symbolic LU factorization depend only on the domain, so they are
//! computed once and reused for every Newton or policy-iteration step.

use std::fmt;

use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::MatMut;
use faer::prelude::Solve;

use crate::error::{Error, Result};
use crate::lattice::{stencil_len, LatticeDomain};

const NONE: usize = usize::MAX;

pub(crate) struct SystemPattern {
    n: usize,
    slots: usize,
    symbolic: SymbolicSparseColMat<usize>,
    /// Value position of entry (row node, stencil slot), or `NONE` if that neighbor is a
    /// boundary point.
    position: Vec<usize>,
    lu: SymbolicLu<usize>,
}

impl fmt::Debug for SystemPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemPattern")
            .field("n", &self.n)
            .field("nnz", &self.position.iter().filter(|&&p| p != NONE).count())
            .finish()
    }
}

impl SystemPattern {
    pub(crate) fn new(domain: &LatticeDomain) -> Result<Self> {
        let n = domain.n_nodes();
        let slots = stencil_len(domain.dim());
        // The stencil is symmetric: node j sees i through slot s exactly when i sees j
        // through the mirrored slot. Column j therefore holds its interior stencil
        // neighbors, already sorted because ids follow lexicographic index order.
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut position = vec![NONE; n * slots];
        col_ptr.push(0);
        for j in 0..n {
            for (s, &i) in domain.stencil(j).iter().enumerate() {
                let i = i as usize;
                if i < n {
                    let mirror = slots - 1 - s;
                    position[i * slots + mirror] = row_idx.len();
                    row_idx.push(i);
                }
            }
            col_ptr.push(row_idx.len());
        }
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let lu = SymbolicLu::try_new(symbolic.as_ref())
            .map_err(|e| Error::LinearSolver(format!("symbolic factorization: {e:?}")))?;
        Ok(SystemPattern {
            n,
            slots,
            symbolic,
            position,
            lu,
        })
    }

    #[cfg(test)]
    pub(crate) fn n(&self) -> usize {
        self.n
    }

    pub(crate) fn nnz(&self) -> usize {
        self.symbolic.row_idx().len()
    }

    /// Value position of (row, slot), if the neighbor is an unknown.
    #[inline]
    pub(crate) fn position(&self, row: usize, slot: usize) -> Option<usize> {
        match self.position[row * self.slots + slot] {
            NONE => None,
            p => Some(p),
        }
    }

    /// Solves `A x = b` in place, with `A` given by values in pattern order.
    pub(crate) fn solve(&self, values: &[f64], rhs: &mut [f64]) -> Result<()> {
        let a = SparseColMatRef::new(self.symbolic.as_ref(), values);
        let lu = Lu::try_new_with_symbolic(self.lu.clone(), a)
            .map_err(|e| Error::LinearSolver(format!("numeric factorization: {e:?}")))?;
        let n = self.n;
        lu.solve_in_place(MatMut::from_column_major_slice_mut(rhs, n, 1));
        if let Some(k) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { node: k });
        }
        Ok(())
    }
}
