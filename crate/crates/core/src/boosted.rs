//! Error functions boosted to an indefinite form: `E^A(C; x) = E(EAC; EAx)` and
//! `M^A(C; x) = M(EAC; EAx)`, where the rows of `E` are an `A`-orthonormal basis of
//! the positive definite span of the columns of `C`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_traits::Zero;
use serde::Serialize;
use thiserror::Error;

use crate::errfn::{stencil_residual, term_pairs, DecompositionTerm, ErrFnError, ErrFnValue, FrameEvaluator, Kind, QuadratureSpec};
use crate::exact::{rat_from_f64, RatMatrix};
use crate::quadform::{select_columns, BilinearForm, ErrorFunctionFrame, QuadformError};
use crate::special::sign;
use crate::subset::Subset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoostedError {
    #[error("cone vectors do not span a positive definite subspace (smallest Gram eigenvalue {min_eigenvalue:e})")]
    NotTimelike { min_eigenvalue: f64 },
    #[error("Gram matrix of the projecting vectors is singular")]
    DegenerateGram,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    ErrFn(#[from] ErrFnError),
    #[error(transparent)]
    Form(#[from] QuadformError),
}

/// `C^T A C > 0` cone data with its orthonormal frame `E` and dual basis `D`.
#[derive(Debug, Clone)]
pub struct ConeMatrix {
    c: DMatrix<f64>,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    e: DMatrix<f64>,
    d: DMatrix<f64>,
    frame: Option<ErrorFunctionFrame>,
}

fn is_integral(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.fract() == 0.0 && x.abs() < 1e15)
}

fn to_rat(m: &DMatrix<f64>) -> RatMatrix {
    RatMatrix::from_fn(m.nrows(), m.ncols(), |i, j| rat_from_f64(m[(i, j)]).expect("finite entry"))
}

fn gram_min_eigenvalue(gram: &DMatrix<f64>) -> f64 {
    gram.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// `A`-Gram–Schmidt on the columns of `c`, returning the rows of `E`.
fn a_orthonormal_rows(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = c.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(c.ncols());
    for j in 0..c.ncols() {
        let mut v = c.column(j).into_owned();
        for _ in 0..2 {
            for b in &basis {
                let k = (b.transpose() * a * &v)[0];
                v.axpy(-k, b, 1.0);
            }
        }
        let q = (v.transpose() * a * &v)[0];
        if !(q > 0.0) {
            return None;
        }
        basis.push(v / q.sqrt());
    }
    Some(DMatrix::from_fn(basis.len(), n, |i, k| basis[i][k]))
}

impl ConeMatrix {
    pub fn new(c: DMatrix<f64>, form: &BilinearForm) -> Result<Self, BoostedError> {
        Self::with_form_matrix(c, form.matrix_f64().clone(), Some(form))
    }

    fn with_form_matrix(c: DMatrix<f64>, a: DMatrix<f64>, form: Option<&BilinearForm>) -> Result<Self, BoostedError> {
        let n = a.nrows();
        if c.nrows() != n {
            return Err(BoostedError::DimensionMismatch(format!("cone vectors have length {}, form has dimension {n}", c.nrows())));
        }
        let s = c.ncols();
        let a_inv = match form {
            Some(f) => f.inverse_f64().clone(),
            None => a.clone().try_inverse().ok_or(QuadformError::DegenerateForm)?,
        };
        if s == 0 {
            return Ok(Self { c, a, a_inv, e: DMatrix::zeros(0, n), d: DMatrix::zeros(n, 0), frame: None });
        }
        let gram = c.transpose() * &a * &c;
        let min_eigenvalue = gram_min_eigenvalue(&gram);
        let timelike = match form {
            Some(f) if is_integral(&c) => to_rat(&c).transpose().mul(f.matrix()).mul(&to_rat(&c)).inertia().is_positive_definite(),
            _ => {
                let scale = gram.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
                min_eigenvalue > 1e-10 * scale
            }
        };
        if !timelike {
            return Err(BoostedError::NotTimelike { min_eigenvalue });
        }
        let e = a_orthonormal_rows(&c, &a).ok_or(BoostedError::NotTimelike { min_eigenvalue })?;
        Self::assemble(c, a, a_inv, e)
    }

    fn assemble(c: DMatrix<f64>, a: DMatrix<f64>, a_inv: DMatrix<f64>, e: DMatrix<f64>) -> Result<Self, BoostedError> {
        let eac = &e * &a * &c;
        let frame = ErrorFunctionFrame::new(eac.clone())?;
        let d = e.transpose() * frame.w();
        Ok(Self { c, a, a_inv, e, d, frame: Some(frame) })
    }

    /// The same cone with `E` replaced by `rotation * E` for an orthogonal `rotation`.
    pub fn rotated(&self, rotation: &DMatrix<f64>) -> Result<Self, BoostedError> {
        if rotation.nrows() != self.rank() || rotation.ncols() != self.rank() {
            return Err(BoostedError::DimensionMismatch("rotation must be s x s".into()));
        }
        Self::assemble(self.c.clone(), self.a.clone(), self.a_inv.clone(), rotation * &self.e)
    }

    pub fn rank(&self) -> usize {
        self.c.ncols()
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn form_matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn e(&self) -> &DMatrix<f64> {
        &self.e
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// The Euclidean frame `EAC` (absent for an empty cone).
    pub fn frame(&self) -> Option<&ErrorFunctionFrame> {
        self.frame.as_ref()
    }

    /// `u = E A x`.
    pub fn euclidean_argument(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (&self.e * &self.a * xv).iter().copied().collect()
    }

    /// `x_+ = E^T E A x`, the `A`-orthogonal projection onto the span of `C`.
    pub fn project_plus(&self, x: &[f64]) -> Vec<f64> {
        let u = DVector::from_vec(self.euclidean_argument(x));
        (self.e.transpose() * u).iter().copied().collect()
    }

    pub fn pair(&self, x: &[f64], y: &[f64]) -> f64 {
        let xv = DVector::from_column_slice(x);
        let yv = DVector::from_column_slice(y);
        (xv.transpose() * &self.a * yv)[0]
    }

    /// `B(c_j, x)` for each column.
    pub fn c_pairings(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (self.c.transpose() * &self.a * xv).iter().copied().collect()
    }

    /// `B(d_j, x)` for each dual column.
    pub fn d_pairings(&self, x: &[f64]) -> Vec<f64> {
        let xv = DVector::from_column_slice(x);
        (self.d.transpose() * &self.a * xv).iter().copied().collect()
    }

    pub fn sub_cone(&self, s: Subset) -> Result<Self, BoostedError> {
        Self::with_form_matrix(select_columns(&self.c, &s.indices()), self.a.clone(), None)
    }
}

pub fn build_cone(c: &DMatrix<f64>, form: &BilinearForm) -> Result<ConeMatrix, BoostedError> {
    ConeMatrix::new(c.clone(), form)
}

#[derive(Debug, Clone)]
pub struct BoostedArgument {
    pub cone: ConeMatrix,
    pub x: Vec<f64>,
}

impl BoostedArgument {
    pub fn new(cone: ConeMatrix, x: &[f64]) -> Result<Self, BoostedError> {
        if x.len() != cone.dim() {
            return Err(BoostedError::DimensionMismatch(format!("x has length {}, expected {}", x.len(), cone.dim())));
        }
        Ok(Self { cone, x: x.to_vec() })
    }
}

pub fn project_plus(arg: &BoostedArgument) -> Vec<f64> {
    arg.cone.project_plus(&arg.x)
}

/// Columns `c_j - C_{S'} (C_{S'}^T A C_{S'})^{-1} C_{S'}^T A c_j` for `j` in `S`.
///
/// `C_{S'}` may span an indefinite subspace; only nondegeneracy of its Gram matrix is needed.
pub fn perp_columns(c: &DMatrix<f64>, a: &DMatrix<f64>, s: Subset, s_prime: Subset) -> Result<DMatrix<f64>, BoostedError> {
    let cs = select_columns(c, &s.indices());
    if s_prime.is_empty() {
        return Ok(cs);
    }
    let cp = select_columns(c, &s_prime.indices());
    let gram = cp.transpose() * a * &cp;
    let nondegenerate = if is_integral(c) && is_integral(a) {
        !to_rat(&cp).transpose().mul(&to_rat(a)).mul(&to_rat(&cp)).det().is_zero()
    } else {
        let scale = gram.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        gram.determinant().abs() > 1e-12 * scale.powi(gram.nrows() as i32)
    };
    if !nondegenerate {
        return Err(BoostedError::DegenerateGram);
    }
    let inv = gram.try_inverse().ok_or(BoostedError::DegenerateGram)?;
    Ok(&cs - &cp * inv * cp.transpose() * a * &cs)
}

/// Exact rational version of [`perp_columns`]; `None` when the Gram matrix of `C_{S'}` is singular.
pub fn perp_columns_exact(c: &RatMatrix, a: &RatMatrix, s: Subset, s_prime: Subset) -> Option<RatMatrix> {
    let cs = c.select_columns(&s.indices());
    if s_prime.is_empty() {
        return Some(cs);
    }
    let cp = c.select_columns(&s_prime.indices());
    let gram = cp.transpose().mul(a).mul(&cp);
    let inv = gram.inverse()?;
    Some(cs.sub(&cp.mul(&inv).mul(&cp.transpose()).mul(a).mul(&cs)))
}

/// The cone `C_{S ⊥ S'}`.
pub fn perp_cone(cone: &ConeMatrix, s: Subset, s_prime: Subset) -> Result<ConeMatrix, BoostedError> {
    let cols = perp_columns(&cone.c, &cone.a, s, s_prime)?;
    ConeMatrix::with_form_matrix(cols, cone.a.clone(), None)
}

/// Reusable evaluator of `E^A(C; ·)` and `M^A(C; ·)` for a fixed cone.
#[derive(Debug, Clone)]
pub struct BoostedEvaluator {
    cone: ConeMatrix,
    inner: Option<FrameEvaluator>,
}

impl BoostedEvaluator {
    pub fn new(cone: &ConeMatrix, quad: &QuadratureSpec) -> Result<Self, BoostedError> {
        let inner = match cone.frame() {
            Some(f) => Some(FrameEvaluator::new(f, quad)?),
            None => None,
        };
        Ok(Self { cone: cone.clone(), inner })
    }

    pub fn cone(&self) -> &ConeMatrix {
        &self.cone
    }

    pub fn e(&self, x: &[f64]) -> Result<ErrFnValue, BoostedError> {
        self.eval(Kind::E, x)
    }

    pub fn m(&self, x: &[f64]) -> Result<ErrFnValue, BoostedError> {
        self.eval(Kind::M, x)
    }

    /// Decomposition terms of `E^A(C; x)` into lower-rank `M` functions of the Euclidean argument.
    pub fn e_terms(&self, x: &[f64]) -> Result<Vec<DecompositionTerm>, BoostedError> {
        if x.len() != self.cone.dim() {
            return Err(BoostedError::DimensionMismatch(format!("x has length {}", x.len())));
        }
        match &self.inner {
            None => Ok(vec![DecompositionTerm { subset: Subset::EMPTY, coefficient: 1.0, value: ErrFnValue { value: 1.0, imag_residual: 0.0, est_error: 0.0 } }]),
            Some(ev) => Ok(ev.e_terms(&self.cone.euclidean_argument(x))?),
        }
    }

    /// `E^A` with wall ties broken along the ambient direction `side`.
    pub fn e_from_side(&self, x: &[f64], side: &[f64]) -> Result<ErrFnValue, BoostedError> {
        match &self.inner {
            None => Ok(ErrFnValue { value: 1.0, imag_residual: 0.0, est_error: 0.0 }),
            Some(ev) => {
                let u = self.cone.euclidean_argument(x);
                let su = self.cone.euclidean_argument(side);
                Ok(ev.e_from_side(&u, &su)?)
            }
        }
    }

    pub fn eval(&self, kind: Kind, x: &[f64]) -> Result<ErrFnValue, BoostedError> {
        if x.len() != self.cone.dim() {
            return Err(BoostedError::DimensionMismatch(format!("x has length {}", x.len())));
        }
        match &self.inner {
            None => Ok(ErrFnValue { value: 1.0, imag_residual: 0.0, est_error: 0.0 }),
            Some(ev) => {
                let u = self.cone.euclidean_argument(x);
                Ok(match kind {
                    Kind::E => ev.e(&u)?,
                    Kind::M => ev.m(&u)?,
                })
            }
        }
    }
}

pub fn eval_e_boosted(arg: &BoostedArgument, quad: &QuadratureSpec) -> Result<ErrFnValue, BoostedError> {
    BoostedEvaluator::new(&arg.cone, quad)?.e(&arg.x)
}

pub fn eval_m_boosted(arg: &BoostedArgument, quad: &QuadratureSpec) -> Result<ErrFnValue, BoostedError> {
    BoostedEvaluator::new(&arg.cone, quad)?.m(&arg.x)
}

/// Both boosted decompositions together with the directly evaluated values.
#[derive(Debug, Clone, Serialize)]
pub struct BoostedDecompositions {
    /// `M(C;x) = Σ_S (-1)^{s-|S|} sign(B(D_{[s]/S}, x)) E(C_S; x)`.
    pub m_terms: Vec<DecompositionTerm>,
    /// `E(C;x) = Σ_S sign(B(C_{[s]/S ⊥ S}, x)) M(C_S; x)`.
    pub e_terms: Vec<DecompositionTerm>,
    pub m_direct: ErrFnValue,
    pub e_direct: ErrFnValue,
}

pub fn boosted_decompositions(arg: &BoostedArgument, quad: &QuadratureSpec) -> Result<BoostedDecompositions, BoostedError> {
    let cone = &arg.cone;
    let s_total = cone.rank();
    let x = &arg.x;
    let full = Subset::full(s_total);
    let d_pair = cone.d_pairings(x);
    let mut m_terms = Vec::with_capacity(1 << s_total);
    let mut e_terms = Vec::with_capacity(1 << s_total);
    for s in Subset::all(s_total) {
        let comp = full.minus(s);
        let sub = BoostedEvaluator::new(&cone.sub_cone(s)?, quad)?;
        let parity = if comp.len() % 2 == 0 { 1.0 } else { -1.0 };
        let dsign: f64 = comp.indices().into_iter().map(|k| sign(d_pair[k])).product();
        m_terms.push(DecompositionTerm { subset: s, coefficient: parity * dsign, value: sub.e(x)? });

        let perp = perp_columns(cone.c(), cone.form_matrix(), comp, s)?;
        let xv = DVector::from_column_slice(x);
        let csign: f64 = (perp.transpose() * cone.form_matrix() * xv).iter().map(|&v| sign(v)).product();
        let value = if csign == 0.0 { ErrFnValue { value: 0.0, imag_residual: 0.0, est_error: 0.0 } } else { sub.m(x)? };
        e_terms.push(DecompositionTerm { subset: s, coefficient: csign, value });
    }
    let ev = BoostedEvaluator::new(cone, quad)?;
    Ok(BoostedDecompositions { m_terms, e_terms, m_direct: ev.m(x)?, e_direct: ev.e(x)? })
}

/// `Σ_j B(c_j,x)/√Q(c_j) · exp(-π B(c_j,x)²/Q(c_j)) · E(C_{[s]/j ⊥ j}; x)`, the boosted shadow without `i/2`.
pub fn boosted_shadow(arg: &BoostedArgument, quad: &QuadratureSpec) -> Result<f64, BoostedError> {
    let cone = &arg.cone;
    let s_total = cone.rank();
    let pairings = cone.c_pairings(&arg.x);
    let mut total = 0.0;
    for j in 0..s_total {
        let cj = cone.c().column(j).into_owned();
        let qj = (cj.transpose() * cone.form_matrix() * &cj)[0];
        let rest = Subset::full(s_total).minus(Subset::singleton(j));
        let perp = perp_cone(cone, rest, Subset::singleton(j))?;
        let lower = BoostedEvaluator::new(&perp, quad)?.e(&arg.x)?;
        total += pairings[j] / qj.sqrt() * (-PI * pairings[j] * pairings[j] / qj).exp() * lower.value;
    }
    Ok(total)
}

/// Central-difference value of `[B^{-1}(∂,∂) + 2π x.∂] F(C; x)`.
///
/// `A^{-1}` is diagonalized so only second differences along its eigenvectors are needed.
pub fn vigneras_residual_boosted(arg: &BoostedArgument, kind: Kind, h: f64, quad: &QuadratureSpec) -> Result<f64, BoostedError> {
    let ev = BoostedEvaluator::new(&arg.cone, quad)?;
    let eig = arg.cone.a_inv.clone().symmetric_eigen();
    let x = DVector::from_column_slice(&arg.x);
    let f = |y: &DVector<f64>| -> Result<Vec<(f64, f64)>, BoostedError> {
        Ok(match kind {
            Kind::M => vec![(1.0, ev.m(y.as_slice())?.value)],
            Kind::E => term_pairs(&ev.e_terms(y.as_slice())?),
        })
    };
    let center = f(&x)?;
    let n = x.len();
    let (mut plus, mut minus, mut first) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for k in 0..n {
        let v = eig.eigenvectors.column(k).into_owned();
        plus.push(f(&(&x + &v * h))?);
        minus.push(f(&(&x - &v * h))?);
        first.push(2.0 * PI * x.dot(&v));
    }
    let second: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    Ok(stencil_residual(&center, &plus, &minus, &second, &first, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lorentz() -> BilinearForm {
        BilinearForm::from_rows(&[vec![1, 0], vec![0, -1]]).unwrap()
    }

    #[test]
    fn euclidean_reduction() {
        let form = BilinearForm::euclidean(3);
        let c = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let cone = build_cone(&c, &form).unwrap();
        assert_eq!(cone.e(), &c.transpose());
        assert_eq!(cone.d(), &c);
    }

    #[test]
    fn one_dimensional_timelike() {
        let cone = build_cone(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &lorentz()).unwrap();
        assert_eq!(cone.e().as_slice(), &[1.0, 0.0]);
        assert_eq!(cone.d().as_slice(), &[1.0, 0.0]);
        assert_eq!(cone.project_plus(&[3.0, 7.0]), vec![3.0, 0.0]);
    }

    #[test]
    fn spacelike_cone_rejected() {
        let c = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(matches!(build_cone(&c, &lorentz()), Err(BoostedError::NotTimelike { .. })));
        let null = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(build_cone(&null, &lorentz()), Err(BoostedError::NotTimelike { .. })));
    }

    #[test]
    fn perp_examples() {
        let a = DMatrix::identity(2, 2);
        let c = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        let p = perp_columns(&c, &a, Subset::singleton(1), Subset::singleton(0)).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 1.0]);
        let same = perp_columns(&c, &a, Subset::singleton(0), Subset::EMPTY).unwrap();
        assert_eq!(same.as_slice(), &[1.0, 0.0]);
        let zero = perp_columns(&c, &a, Subset::singleton(0), Subset::singleton(0)).unwrap();
        assert_eq!(zero.as_slice(), &[0.0, 0.0]);
        let form = lorentz();
        let null = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]);
        assert!(matches!(
            perp_columns(&null, form.matrix_f64(), Subset::singleton(0), Subset::singleton(1)),
            Err(BoostedError::DegenerateGram)
        ));
    }
}
