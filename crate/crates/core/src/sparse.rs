//! Element-wise assembly into a fixed sparsity pattern plus a reusable sparse
//! Cholesky factorization.

use std::sync::Once;

use faer::linalg::solvers::SolveCore;
use faer::sparse::linalg::LltError;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, Mat, Par, Side};

use crate::error::{Error, Result};
use crate::quad::Mat8;

static SEQUENTIAL: Once = Once::new();

/// Element DOF map; `None` marks an eliminated (prescribed) DOF.
pub type ElementDofs = [Option<usize>; 8];

/// An SPD system whose sparsity pattern is fixed by an element connectivity.
///
/// The symbolic analysis is done once; numeric factorizations reuse it. Only
/// the lower triangle is stored.
pub struct SpdPattern {
    n: usize,
    symbolic: SymbolicSparseColMat<usize>,
    llt_symbolic: SymbolicLlt<usize>,
    /// Per element, position of local entry `(i, j)` in the value array, or
    /// `usize::MAX` when the entry is dropped (eliminated DOF or upper part).
    scatter: Vec<[usize; 64]>,
}

impl SpdPattern {
    pub fn new(n: usize, elements: &[ElementDofs]) -> Result<Self> {
        // single-threaded kernels keep every solve bit-reproducible
        SEQUENTIAL.call_once(|| faer::set_global_parallelism(Par::Seq));
        if n == 0 {
            return Err(Error::Singular("system has no free DOFs".into()));
        }
        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
        for dofs in elements {
            for a in dofs.iter().flatten() {
                for b in dofs.iter().flatten() {
                    if a >= b {
                        cols[*b].push(*a);
                    }
                }
            }
        }
        for (j, c) in cols.iter_mut().enumerate() {
            c.push(j);
            c.sort_unstable();
            c.dedup();
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0);
        for c in &cols {
            row_idx.extend_from_slice(c);
            col_ptr.push(row_idx.len());
        }
        let scatter = elements
            .iter()
            .map(|dofs| {
                let mut map = [usize::MAX; 64];
                for i in 0..8 {
                    for j in 0..8 {
                        if let (Some(r), Some(c)) = (dofs[i], dofs[j]) {
                            if r >= c {
                                let col = &row_idx[col_ptr[c]..col_ptr[c + 1]];
                                let k = col.binary_search(&r).expect("entry in pattern");
                                map[i * 8 + j] = col_ptr[c] + k;
                            }
                        }
                    }
                }
                map
            })
            .collect();
        let symbolic = SymbolicSparseColMat::new_checked(n, n, col_ptr, None, row_idx);
        let llt_symbolic = SymbolicLlt::try_new(symbolic.as_ref(), Side::Lower)
            .map_err(|e| Error::Singular(format!("symbolic analysis failed: {e:?}")))?;
        Ok(Self {
            n,
            symbolic,
            llt_symbolic,
            scatter,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Assembles the lower triangle from per-element matrices.
    pub fn assemble(&self, element: impl Fn(usize) -> Mat8) -> Vec<f64> {
        let mut values = vec![0.0; self.symbolic.row_idx().len()];
        for (e, map) in self.scatter.iter().enumerate() {
            let ke = element(e);
            for i in 0..8 {
                for j in 0..8 {
                    let p = map[i * 8 + j];
                    if p != usize::MAX {
                        values[p] += ke[i][j];
                    }
                }
            }
        }
        values
    }

    /// Numeric Cholesky of an assembled value array.
    pub fn factorize(&self, values: &[f64]) -> Result<SpdFactor> {
        let mat = SparseColMatRef::new(self.symbolic.as_ref(), values);
        let llt = Llt::try_new_with_symbolic(self.llt_symbolic.clone(), mat, Side::Lower)
            .map_err(|e| match e {
                LltError::Numeric(inner) => Error::Singular(format!("{inner:?}")),
                LltError::Generic(inner) => Error::Singular(format!("{inner:?}")),
            })?;
        Ok(SpdFactor { llt, n: self.n })
    }
}

/// A numeric factorization ready for repeated solves.
pub struct SpdFactor {
    llt: Llt<usize, f64>,
    n: usize,
}

impl SpdFactor {
    /// Solves for each column of `rhs` (column-major, `n` rows each).
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut m = Mat::<f64>::from_fn(self.n, rhs.len(), |i, j| rhs[j][i]);
        self.llt.solve_in_place_with_conj(Conj::No, m.as_mut());
        (0..rhs.len())
            .map(|j| (0..self.n).map(|i| m[(i, j)]).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_spring_chain() {
        // two elements sharing DOFs; stiffness diag-dominant per element
        let mut ke = [[0.0; 8]; 8];
        for (i, row) in ke.iter_mut().enumerate() {
            row[i] = 4.0;
            if i + 1 < 8 {
                row[i + 1] = -1.0;
            }
            if i > 0 {
                row[i - 1] = -1.0;
            }
        }
        let e0: ElementDofs = [Some(0), Some(1), Some(2), Some(3), None, None, None, None];
        let e1: ElementDofs = [Some(2), Some(3), Some(4), Some(5), None, None, None, None];
        let pat = SpdPattern::new(6, &[e0, e1]).unwrap();
        let vals = pat.assemble(|_| ke);
        let f = pat.factorize(&vals).unwrap();
        let b = vec![1.0, 0.0, 2.0, 0.0, -1.0, 3.0];
        let x = &f.solve(std::slice::from_ref(&b))[0];
        // dense check
        let mut k = [[0.0; 6]; 6];
        for dofs in [[0, 1, 2, 3], [2, 3, 4, 5]] {
            for i in 0..4 {
                for j in 0..4 {
                    k[dofs[i]][dofs[j]] += ke[i][j];
                }
            }
        }
        for i in 0..6 {
            let r: f64 = (0..6).map(|j| k[i][j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
    }
}
