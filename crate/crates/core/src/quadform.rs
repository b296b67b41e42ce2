//! Symmetric bilinear forms and the Euclidean frame algebra behind the error functions.
//!
//! Exact paths (signature, Gram determinants, cofactors) run over rationals;
//! frame and projector constructions run in `f64`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::exact::{Inertia, Rat, RatMatrix};
use crate::subset::Subset;

/// Frames whose condition number exceeds this are rejected.
pub const MAX_FRAME_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadformError {
    #[error("bilinear form matrix is not symmetric")]
    NotSymmetric,
    #[error("bilinear form is degenerate (det A = 0)")]
    DegenerateForm,
    #[error("bilinear form entries must be integers")]
    NonIntegral,
    #[error("frame is singular or ill-conditioned (condition number {condition:e})")]
    SingularFrame { condition: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Exact inertia `(r_plus, n_minus)` of a nondegenerate symmetric matrix.
pub fn signature(a: &RatMatrix) -> Result<(usize, usize), QuadformError> {
    if !a.is_symmetric() {
        return Err(QuadformError::NotSymmetric);
    }
    let Inertia { positive, negative, zero } = a.inertia();
    if zero > 0 {
        return Err(QuadformError::DegenerateForm);
    }
    Ok((positive, negative))
}

/// Integral symmetric bilinear form `B(x, y) = x^T A y` on `Z^n`.
#[derive(Debug, Clone)]
pub struct BilinearForm {
    exact: RatMatrix,
    float: DMatrix<f64>,
    inverse: DMatrix<f64>,
    signature: (usize, usize),
}

impl PartialEq for BilinearForm {
    fn eq(&self, other: &Self) -> bool {
        self.exact == other.exact
    }
}

impl BilinearForm {
    pub fn from_rows(rows: &[Vec<i64>]) -> Result<Self, QuadformError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(QuadformError::DimensionMismatch("form matrix must be square".into()));
        }
        Self::from_exact(RatMatrix::from_i64_rows(rows))
    }

    pub fn from_exact(a: RatMatrix) -> Result<Self, QuadformError> {
        if !a.is_square() {
            return Err(QuadformError::DimensionMismatch("form matrix must be square".into()));
        }
        if !a.is_integral() {
            return Err(QuadformError::NonIntegral);
        }
        let signature = signature(&a)?;
        let float = a.to_f64();
        let inverse = a.inverse().ok_or(QuadformError::DegenerateForm)?.to_f64();
        Ok(Self { exact: a, float, inverse, signature })
    }

    /// The Euclidean form on `R^n`.
    pub fn euclidean(n: usize) -> Self {
        Self::from_exact(RatMatrix::identity(n)).expect("identity is nondegenerate")
    }

    pub fn dim(&self) -> usize {
        self.exact.rows()
    }

    /// `(r_plus, n_minus)`.
    pub fn signature(&self) -> (usize, usize) {
        self.signature
    }

    pub fn matrix(&self) -> &RatMatrix {
        &self.exact
    }

    pub fn matrix_f64(&self) -> &DMatrix<f64> {
        &self.float
    }

    pub fn inverse_f64(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    pub fn pair(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut acc = 0.0;
        for i in 0..n {
            if x[i] == 0.0 {
                continue;
            }
            let mut row = 0.0;
            for j in 0..n {
                row += self.float[(i, j)] * y[j];
            }
            acc += x[i] * row;
        }
        acc
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        self.pair(x, x)
    }

    pub fn pair_exact(&self, x: &[Rat], y: &[Rat]) -> Rat {
        self.exact.bilinear(x, y)
    }

    pub fn quad_exact(&self, x: &[Rat]) -> Rat {
        self.exact.bilinear(x, x)
    }

    /// `A x` in floating point.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (&self.float * DVector::from_column_slice(x)).iter().copied().collect()
    }
}

/// `W = M^{-T}`, rejecting frames with condition number above [`MAX_FRAME_CONDITION`].
pub fn dual_frame(m: &DMatrix<f64>) -> Result<DMatrix<f64>, QuadformError> {
    if !m.is_square() {
        return Err(QuadformError::DimensionMismatch("frame must be square".into()));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(QuadformError::SingularFrame { condition: f64::INFINITY });
    }
    let sv = m.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_FRAME_CONDITION) {
        return Err(QuadformError::SingularFrame { condition });
    }
    let inv = m.clone().try_inverse().ok_or(QuadformError::SingularFrame { condition })?;
    Ok(inv.transpose())
}

/// Parameter vectors `m^(j)` (columns of `M`) and their Euclidean dual basis `w^(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorFunctionFrame {
    m: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl ErrorFunctionFrame {
    pub fn new(m: DMatrix<f64>) -> Result<Self, QuadformError> {
        let w = dual_frame(&m)?;
        Ok(Self { m, w })
    }

    /// Frame from a list of column vectors `m^(1), .., m^(r)`.
    pub fn from_columns(cols: &[Vec<f64>]) -> Result<Self, QuadformError> {
        let r = cols.len();
        if cols.iter().any(|c| c.len() != r) {
            return Err(QuadformError::DimensionMismatch(format!("expected {r} columns of length {r}")));
        }
        Self::new(DMatrix::from_fn(r, r, |i, j| cols[j][i]))
    }

    pub fn identity(r: usize) -> Self {
        Self::new(DMatrix::identity(r, r)).expect("identity frame")
    }

    pub fn rank(&self) -> usize {
        self.m.ncols()
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn m_col(&self, j: usize) -> DVector<f64> {
        self.m.column(j).into_owned()
    }

    pub fn w_col(&self, j: usize) -> DVector<f64> {
        self.w.column(j).into_owned()
    }

    /// `M_S`: the columns indexed by `s`, in increasing order.
    pub fn m_sub(&self, s: Subset) -> DMatrix<f64> {
        select_columns(&self.m, &s.indices())
    }

    pub fn w_sub(&self, s: Subset) -> DMatrix<f64> {
        select_columns(&self.w, &s.indices())
    }

    pub fn projectors(&self, s: Subset) -> SubsetProjectors {
        subset_projectors(self, s)
    }

    /// `Q_{S,S'}` with entries `b_i^(S) . b_j^(S')`.
    pub fn q_rel(&self, s: Subset, s_prime: Subset) -> DMatrix<f64> {
        let a = orthonormal_rows(&self.m, s);
        let b = orthonormal_rows(&self.m, s_prime);
        a * b.transpose()
    }

    /// `P_{S,S'}` with entries `c_i^(S) . c_j^(S')`.
    pub fn p_rel(&self, s: Subset, s_prime: Subset) -> DMatrix<f64> {
        let a = orthonormal_rows(&self.w, s);
        let b = orthonormal_rows(&self.w, s_prime);
        a * b.transpose()
    }
}

pub(crate) fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

/// Orthonormal rows spanning the columns of `vectors` indexed by `s`.
///
/// Modified Gram–Schmidt in increasing index order with one re-orthogonalization
/// pass. For the full index set of an `r x r` matrix the standard basis is returned.
pub fn orthonormal_rows(vectors: &DMatrix<f64>, s: Subset) -> DMatrix<f64> {
    let r = vectors.nrows();
    let idx = s.indices();
    if idx.len() == r && idx.len() == vectors.ncols() {
        return DMatrix::identity(r, r);
    }
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(idx.len());
    for &j in &idx {
        let mut v = vectors.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        assert!(norm > 0.0, "linearly dependent vectors in orthonormalization");
        basis.push(v / norm);
    }
    DMatrix::from_fn(idx.len(), r, |i, k| basis[i][k])
}

/// Orthonormal bases for `<m^(j) : j in S>` (rows of `q`) and `<w^(j) : j in S>` (rows of `p`).
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetProjectors {
    pub subset: Subset,
    pub q: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

pub fn subset_projectors(frame: &ErrorFunctionFrame, s: Subset) -> SubsetProjectors {
    SubsetProjectors { subset: s, q: orthonormal_rows(frame.m(), s), p: orthonormal_rows(frame.w(), s) }
}

/// Gram determinant and cofactor matrix of the columns of `vectors` under `form`, exactly.
pub fn gram_cofactors_exact(vectors: &RatMatrix, form: &RatMatrix) -> (Rat, RatMatrix) {
    let gram = vectors.transpose().mul(form).mul(vectors);
    (gram.det(), gram.cofactor_matrix())
}

/// Floating-point Gram determinant and cofactor matrix.
pub fn gram_cofactors(vectors: &DMatrix<f64>, form: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let gram = vectors.transpose() * form * vectors;
    let s = gram.nrows();
    let delta = gram.determinant();
    if s == 1 {
        return (delta, DMatrix::from_element(1, 1, 1.0));
    }
    let cof = DMatrix::from_fn(s, s, |i, j| {
        let minor = gram.clone().remove_row(i).remove_column(j).determinant();
        if (i + j) % 2 == 0 {
            minor
        } else {
            -minor
        }
    });
    (delta, cof)
}
