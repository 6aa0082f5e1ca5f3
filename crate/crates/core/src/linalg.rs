//! Row-compressed sparse matrices, block-system composition, direct sparse
//! solves and the mass-matrix L2 norm.
//!
//! Factorisation is delegated to `faer`'s sparse LU with partial pivoting. The
//! symbolic analysis depends only on the sparsity pattern and is cached by
//! [`LuSolver`] across Newton/L-scheme iterations.

use faer::sparse::linalg::LuError;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::MatMut;
use faer::linalg::solvers::SolveCore;
use faer::Conj;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("matrix is singular to working precision (pivot {pivot})")]
    Singular { pivot: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("residual contract violated: |Ax - b| = {residual:e} > {bound:e}")]
    Residual { residual: f64, bound: f64 },
    #[error("factorisation failed: {0}")]
    Backend(String),
}

/// Sorted-column CSR sparsity pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityPattern {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
}

impl SparsityPattern {
    /// Builds a pattern from per-row column lists (duplicates allowed).
    pub fn from_rows(ncols: usize, rows: Vec<Vec<usize>>) -> Self {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            debug_assert!(r.last().map_or(true, |&c| c < ncols));
            col_idx.extend_from_slice(&r);
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
        }
    }

    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Position of `(row, col)` in the value array.
    pub fn find(&self, row: usize, col: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[row]..self.row_ptr[row + 1]];
        cols.binary_search(&col).ok().map(|k| self.row_ptr[row] + k)
    }

    pub fn row(&self, row: usize) -> std::ops::Range<usize> {
        self.row_ptr[row]..self.row_ptr[row + 1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub pattern: std::sync::Arc<SparsityPattern>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(pattern: std::sync::Arc<SparsityPattern>) -> Self {
        let nnz = pattern.nnz();
        Self {
            pattern,
            values: vec![0.0; nnz],
        }
    }

    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows = vec![Vec::new(); nrows];
        for &(r, c, _) in triplets {
            rows[r].push(c);
        }
        let pattern = std::sync::Arc::new(SparsityPattern::from_rows(ncols, rows));
        let mut m = Self::zeros(pattern);
        for &(r, c, v) in triplets {
            let k = m.pattern.find(r, c).expect("entry in pattern");
            m.values[k] += v;
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        let t: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, n, &t)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        let mut t = Vec::new();
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                if v != 0.0 {
                    t.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, m, &t)
    }

    pub fn nrows(&self) -> usize {
        self.pattern.nrows
    }

    pub fn ncols(&self) -> usize {
        self.pattern.ncols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pattern.find(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols()]; self.nrows()];
        for (i, row) in d.iter_mut().enumerate() {
            for k in self.pattern.row(i) {
                row[self.pattern.col_idx[k]] += self.values[k];
            }
        }
        d
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows()];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `y += alpha * A x`
    pub fn mul_vec_add(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        let p = &*self.pattern;
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in p.row_ptr[i]..p.row_ptr[i + 1] {
                s += self.values[k] * x[p.col_idx[k]];
            }
            *yi += alpha * s;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * other` on an identical pattern.
    pub fn add_scaled(&mut self, alpha: f64, other: &CsrMatrix) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows())
            .map(|i| self.pattern.row(i).map(|k| self.values[k]).sum())
            .collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.nrows() {
            for k in self.pattern.row(i) {
                let j = self.pattern.col_idx[k];
                worst = worst.max((self.values[k] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Square sparse system, optionally split into equal field blocks.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Start offset of every field block.
    pub block_offsets: Vec<usize>,
}

impl SparseSystem {
    pub fn new(matrix: CsrMatrix, rhs: Vec<f64>) -> Result<Self, SolveError> {
        if matrix.nrows() != matrix.ncols() || rhs.len() != matrix.nrows() {
            return Err(SolveError::Dimension(format!(
                "{}x{} matrix with rhs of length {}",
                matrix.nrows(),
                matrix.ncols(),
                rhs.len()
            )));
        }
        Ok(Self {
            matrix,
            rhs,
            block_offsets: vec![0],
        })
    }

    /// Replaces the rows listed in `constraints` with identity rows and the
    /// right-hand side with the prescribed value.
    pub fn constrain_rows(&mut self, constraints: &[(usize, f64)]) {
        apply_row_constraints(&mut self.matrix, &mut self.rhs, constraints);
    }
}

/// Row replacement for Dirichlet-type constraints.
pub fn apply_row_constraints(matrix: &mut CsrMatrix, rhs: &mut [f64], constraints: &[(usize, f64)]) {
    for &(row, value) in constraints {
        let range = matrix.pattern.row(row);
        let diag = matrix.pattern.find(row, row).expect("constrained row needs a diagonal entry");
        for k in range {
            matrix.values[k] = 0.0;
        }
        matrix.values[diag] = 1.0;
        rhs[row] = value;
    }
}

/// Column-compressed twin of a CSR pattern, with the permutation that maps
/// CSR value positions onto CSC positions.
#[derive(Debug, Clone)]
struct CscShadow {
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    csr_to_csc: Vec<usize>,
}

impl CscShadow {
    fn new(p: &SparsityPattern) -> Self {
        let mut col_ptr = vec![0usize; p.ncols + 1];
        for &c in &p.col_idx {
            col_ptr[c + 1] += 1;
        }
        for c in 0..p.ncols {
            col_ptr[c + 1] += col_ptr[c];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; p.nnz()];
        let mut csr_to_csc = vec![0usize; p.nnz()];
        for r in 0..p.nrows {
            for k in p.row(r) {
                let c = p.col_idx[k];
                let dst = next[c];
                next[c] += 1;
                row_idx[dst] = r;
                csr_to_csc[k] = dst;
            }
        }
        Self {
            col_ptr,
            row_idx,
            csr_to_csc,
        }
    }
}

/// Sparse LU solver that reuses the symbolic analysis of one pattern.
pub struct LuSolver {
    pattern: std::sync::Arc<SparsityPattern>,
    csc: CscShadow,
    symbolic: SymbolicLu<usize>,
    values: Vec<f64>,
}

fn map_lu_error(e: LuError) -> SolveError {
    match e {
        LuError::SymbolicSingular { index } => SolveError::Singular { pivot: index },
        LuError::Generic(e) => SolveError::Backend(format!("{e:?}")),
    }
}

impl LuSolver {
    pub fn new(pattern: std::sync::Arc<SparsityPattern>) -> Result<Self, SolveError> {
        if pattern.nrows != pattern.ncols {
            return Err(SolveError::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                pattern.nrows, pattern.ncols
            )));
        }
        let csc = CscShadow::new(&pattern);
        let sym = SymbolicSparseColMatRef::new_checked(pattern.nrows, pattern.ncols, &csc.col_ptr, None, &csc.row_idx);
        let symbolic = SymbolicLu::try_new(sym).map_err(|e| SolveError::Backend(format!("{e:?}")))?;
        let values = vec![0.0; pattern.nnz()];
        Ok(Self {
            pattern,
            csc,
            symbolic,
            values,
        })
    }

    pub fn pattern(&self) -> &std::sync::Arc<SparsityPattern> {
        &self.pattern
    }

    /// Factorises `matrix` (whose pattern must match) and solves for `rhs`,
    /// enforcing the backward-error contract
    /// `|Ax - b| <= 1e-10 (|A|_F |x| + |b|)`.
    pub fn solve(&mut self, matrix: &CsrMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        if !std::sync::Arc::ptr_eq(&matrix.pattern, &self.pattern) && *matrix.pattern != *self.pattern {
            return Err(SolveError::Dimension("matrix pattern differs from the analysed one".into()));
        }
        if rhs.len() != self.pattern.nrows {
            return Err(SolveError::Dimension(format!(
                "rhs length {} for {} rows",
                rhs.len(),
                self.pattern.nrows
            )));
        }
        for (k, &v) in matrix.values.iter().enumerate() {
            self.values[self.csc.csr_to_csc[k]] = v;
        }
        let n = self.pattern.nrows;
        let sym = SymbolicSparseColMatRef::new_checked(n, n, &self.csc.col_ptr, None, &self.csc.row_idx);
        let mat = SparseColMatRef::new(sym, &self.values);
        let lu = Lu::try_new_with_symbolic(self.symbolic.clone(), mat).map_err(map_lu_error)?;

        let mut x = rhs.to_vec();
        lu_solve_in_place(&lu, &mut x);
        if let Some(pivot) = x.iter().position(|v| !v.is_finite()) {
            return Err(SolveError::Singular { pivot });
        }

        let bound = |x: &[f64]| 1e-10 * (matrix.frobenius_norm() * norm2(x) + norm2(rhs));
        let mut r = residual(matrix, &x, rhs);
        if norm2(&r) > bound(&x) {
            // one step of iterative refinement
            lu_solve_in_place(&lu, &mut r);
            for (xi, di) in x.iter_mut().zip(&r) {
                *xi += di;
            }
            r = residual(matrix, &x, rhs);
            let res = norm2(&r);
            if !res.is_finite() {
                return Err(SolveError::Singular { pivot: 0 });
            }
            if res > bound(&x) {
                return Err(SolveError::Residual {
                    residual: res,
                    bound: bound(&x),
                });
            }
        }
        Ok(x)
    }
}

fn lu_solve_in_place(lu: &Lu<usize, f64>, x: &mut [f64]) {
    let n = x.len();
    let rhs = MatMut::from_column_major_slice_mut(x, n, 1);
    lu.solve_in_place_with_conj(Conj::No, rhs);
}

fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = a.mul_vec(x);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    r
}

/// Dense solve by LU with partial pivoting; intended for small systems.
pub fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>, SolveError> {
    use faer::linalg::solvers::Solve;
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(SolveError::Dimension(format!("dense system is not {n}x{n}")));
    }
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[i][j]);
    let rhs = faer::Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
    let x = m.partial_piv_lu().solve(&rhs);
    let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    match x.iter().position(|v| !v.is_finite()) {
        Some(pivot) => Err(SolveError::Singular { pivot }),
        None => Ok(x),
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One-shot sparse solve.
pub fn solve_sparse(system: &SparseSystem) -> Result<Vec<f64>, SolveError> {
    let mut lu = LuSolver::new(system.matrix.pattern.clone())?;
    lu.solve(&system.matrix, &system.rhs)
}

/// `sqrt(v^T M v)` with `M` the (unweighted) mass matrix.
pub fn discrete_l2_norm(mass: &CsrMatrix, v: &[f64]) -> Result<f64, SolveError> {
    if mass.ncols() != v.len() || mass.nrows() != v.len() {
        return Err(SolveError::Dimension(format!(
            "{}x{} mass matrix with vector of length {}",
            mass.nrows(),
            mass.ncols(),
            v.len()
        )));
    }
    let mv = mass.mul_vec(v);
    let q: f64 = mv.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(q.max(0.0).sqrt())
}

/// Layout of a square block matrix whose blocks all live on the same node
/// pattern. `mask[r][s]` says whether block `(r, s)` is structurally present.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub block_size: usize,
    pub nblocks: usize,
    pub pattern: std::sync::Arc<SparsityPattern>,
    /// For every present block, the global value position of each node-pattern entry.
    maps: Vec<Vec<Option<Vec<usize>>>>,
}

impl BlockLayout {
    pub fn new(node_pattern: &SparsityPattern, mask: &[Vec<bool>]) -> Self {
        let nb = mask.len();
        let n = node_pattern.nrows;
        for r in 0..nb {
            assert!(mask[r][r], "diagonal blocks must be present");
        }
        let mut rows = Vec::with_capacity(nb * n);
        for r in 0..nb {
            for i in 0..n {
                let mut cols = Vec::new();
                for s in 0..nb {
                    if mask[r][s] {
                        cols.extend(node_pattern.row(i).map(|k| s * n + node_pattern.col_idx[k]));
                    }
                }
                rows.push(cols);
            }
        }
        let pattern = SparsityPattern::from_rows(nb * n, rows);
        let mut maps = vec![vec![None; nb]; nb];
        for r in 0..nb {
            for s in 0..nb {
                if !mask[r][s] {
                    continue;
                }
                let mut map = Vec::with_capacity(node_pattern.nnz());
                for i in 0..n {
                    for k in node_pattern.row(i) {
                        let j = node_pattern.col_idx[k];
                        map.push(pattern.find(r * n + i, s * n + j).unwrap());
                    }
                }
                maps[r][s] = Some(map);
            }
        }
        Self {
            block_size: n,
            nblocks: nb,
            pattern: std::sync::Arc::new(pattern),
            maps,
        }
    }

    pub fn dim(&self) -> usize {
        self.block_size * self.nblocks
    }

    pub fn zeros(&self) -> CsrMatrix {
        CsrMatrix::zeros(self.pattern.clone())
    }

    /// `global[r, s] += alpha * block` where `block` lives on the node pattern.
    pub fn add_block(&self, global: &mut CsrMatrix, r: usize, s: usize, alpha: f64, block: &CsrMatrix) {
        let map = self.maps[r][s].as_ref().expect("block not present in layout");
        for (k, &v) in block.values.iter().enumerate() {
            global.values[map[k]] += alpha * v;
        }
    }

    pub fn offset(&self, block: usize) -> usize {
        block * self.block_size
    }
}
