//! Exact verification of the convergence conditions on a cone pair `(C, C')`.
//!
//! All quantities are computed over the rationals. The Gram matrix is taken in the
//! interleaved order `(c_1, c'_1, .., c_r, c'_r)`.

use std::collections::BTreeMap;

use num_traits::{One, Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::boosted::perp_columns_exact;
use crate::exact::{dot, matrix_repr, rat, rat_from_f64, rat_sign, Inertia, Rat, RatMatrix, RatRepr};
use crate::quadform::{BilinearForm, QuadformError};
use crate::subset::Subset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConeError {
    #[error("cone vectors must be exact integers or rationals: {0}")]
    NonExactInput(String),
    #[error("Gram determinant of (C, C') vanishes")]
    ZeroDelta,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Form(#[from] QuadformError),
}

/// `2r` vectors `c_j`, `c'_j` (columns of `c` and `c_prime`) on a lattice with form `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConePair {
    pub form: BilinearForm,
    pub c: RatMatrix,
    pub c_prime: RatMatrix,
}

impl ConePair {
    pub fn new(form: BilinearForm, c: RatMatrix, c_prime: RatMatrix) -> Result<Self, ConeError> {
        let n = form.dim();
        if c.rows() != n || c_prime.rows() != n {
            return Err(ConeError::DimensionMismatch(format!("cone vectors must have length {n}")));
        }
        if c.cols() != c_prime.cols() {
            return Err(ConeError::DimensionMismatch("C and C' must have the same number of columns".into()));
        }
        Ok(Self { form, c, c_prime })
    }

    /// Builds a pair from integer columns.
    pub fn from_i64_columns(form: BilinearForm, c: &[Vec<i64>], c_prime: &[Vec<i64>]) -> Result<Self, ConeError> {
        let to_m = |cols: &[Vec<i64>]| RatMatrix::from_columns(&cols.iter().map(|v| v.iter().map(|&x| rat(x)).collect()).collect::<Vec<_>>());
        Self::new(form, to_m(c), to_m(c_prime))
    }

    /// Builds a pair from floating columns, which must hold exact integers.
    pub fn from_f64_columns(form: BilinearForm, c: &[Vec<f64>], c_prime: &[Vec<f64>]) -> Result<Self, ConeError> {
        let conv = |cols: &[Vec<f64>]| -> Result<RatMatrix, ConeError> {
            let mut out = Vec::with_capacity(cols.len());
            for v in cols {
                let mut col = Vec::with_capacity(v.len());
                for &x in v {
                    if !x.is_finite() || x.fract() != 0.0 {
                        return Err(ConeError::NonExactInput(format!("{x} is not an integer")));
                    }
                    col.push(rat_from_f64(x).expect("finite"));
                }
                out.push(col);
            }
            Ok(RatMatrix::from_columns(&out))
        };
        Self::new(form, conv(c)?, conv(c_prime)?)
    }

    pub fn rank(&self) -> usize {
        self.c.cols()
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    /// `(c_1, c'_1, .., c_r, c'_r)` as columns.
    pub fn interleaved(&self) -> RatMatrix {
        interleave(&self.c, &self.c_prime)
    }

    /// `C^P`: `c_j` for `j` in `P`, `c'_j` otherwise.
    pub fn c_p(&self, p: Subset) -> RatMatrix {
        select_mixed(&self.c, &self.c_prime, Subset::full(self.rank()), p)
    }

    /// `C_{S^P}`: `c_j` for `j` in `S ∩ P`, `c'_j` for `j` in `S \ P`.
    pub fn c_sp(&self, s: Subset, p: Subset) -> RatMatrix {
        select_mixed(&self.c, &self.c_prime, s, p)
    }

    pub fn c_f64(&self) -> nalgebra::DMatrix<f64> {
        self.c.to_f64()
    }

    pub fn c_prime_f64(&self) -> nalgebra::DMatrix<f64> {
        self.c_prime.to_f64()
    }
}

fn interleave(c: &RatMatrix, cp: &RatMatrix) -> RatMatrix {
    let r = c.cols();
    let mut cols = Vec::with_capacity(2 * r);
    for j in 0..r {
        cols.push(c.column(j));
        cols.push(cp.column(j));
    }
    RatMatrix::from_fn(c.rows(), 2 * r, |i, k| cols[k][i].clone())
}

fn select_mixed(c: &RatMatrix, cp: &RatMatrix, s: Subset, p: Subset) -> RatMatrix {
    let cols: Vec<Vec<Rat>> = s.indices().into_iter().map(|j| if p.contains(j) { c.column(j) } else { cp.column(j) }).collect();
    RatMatrix::from_fn(c.rows(), cols.len(), |i, k| cols[k][i].clone())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub first_failed: Option<String>,
}

/// Exact data of the convergence conditions for one pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeSystemReport {
    pub r: usize,
    pub n: usize,
    pub delta: RatRepr,
    pub cofactors_jjprime: Vec<RatRepr>,
    pub reduced_cofactor_matrix: Vec<Vec<RatRepr>>,
    pub reduced_cofactor_inertia: Inertia,
    pub per_p_positive_definite: BTreeMap<String, bool>,
    pub q_minus: Option<Vec<Vec<RatRepr>>>,
    pub q_minus_inertia: Option<Inertia>,
    /// Reports for `C_{[r]/S ⊥ S^P}`, `C'_{[r]/S ⊥ S^P}`, keyed by `S=..;P=..`.
    pub recursion_reports: BTreeMap<String, ConeSystemReport>,
    pub verdict: Verdict,
}

/// Exact intermediate quantities for a pair given as interleaved columns.
struct Conditions {
    delta: Rat,
    d_jj: Vec<Rat>,
    reduced: RatMatrix,
    reduced_inertia: Inertia,
    per_p: BTreeMap<String, bool>,
    q_minus: Option<RatMatrix>,
    first_failed: Option<String>,
}

fn evaluate(form: &RatMatrix, c: &RatMatrix, cp: &RatMatrix) -> Conditions {
    let r = c.cols();
    let inter = interleave(c, cp);
    let gram = inter.transpose().mul(form).mul(&inter);
    let delta = gram.det();
    let cof = gram.cofactor_matrix();
    let d_jj: Vec<Rat> = (0..r).map(|j| cof[(2 * j, 2 * j + 1)].clone()).collect();
    let mut reduced = cof.clone();
    for j in 0..r {
        reduced[(2 * j, 2 * j + 1)] = Rat::zero();
        reduced[(2 * j + 1, 2 * j)] = Rat::zero();
    }
    let sign_r = if r % 2 == 0 { rat(1) } else { rat(-1) };
    let signed_reduced = reduced.scale(&sign_r);
    let reduced_inertia = signed_reduced.inertia();
    let mut per_p = BTreeMap::new();
    let mut cones_ok = true;
    for p in Subset::all(r) {
        let cols = select_mixed(c, cp, Subset::full(r), p);
        let g = cols.transpose().mul(form).mul(&cols);
        let pd = g.inertia().is_positive_definite();
        cones_ok &= pd;
        per_p.insert(p.to_string(), pd);
    }
    let q_minus = q_minus_matrix(form, c, cp, &delta, &d_jj);
    let first_failed = if (&delta * &sign_r).is_positive() {
        if d_jj.iter().all(|d| !(d * &sign_r).is_negative()) {
            if reduced_inertia.is_negative_definite() {
                if cones_ok {
                    None
                } else {
                    Some("cone_positive_definite".to_string())
                }
            } else {
                Some("reduced_cofactor_definite".to_string())
            }
        } else {
            Some("cofactor_sign".to_string())
        }
    } else {
        Some("delta_sign".to_string())
    };
    Conditions { delta, d_jj, reduced, reduced_inertia, per_p, q_minus, first_failed }
}

/// `A - (1/Δ) Σ_j D_{j,j'} (A c_j c'_j^T A + A c'_j c_j^T A)`.
fn q_minus_matrix(form: &RatMatrix, c: &RatMatrix, cp: &RatMatrix, delta: &Rat, d_jj: &[Rat]) -> Option<RatMatrix> {
    if delta.is_zero() {
        return None;
    }
    let n = form.rows();
    let mut q = form.clone();
    for (j, d) in d_jj.iter().enumerate() {
        if d.is_zero() {
            continue;
        }
        let ac = form.mul_vec(&c.column(j));
        let acp = form.mul_vec(&cp.column(j));
        let k = d / delta;
        for a in 0..n {
            for b in 0..n {
                let t = &ac[a] * &acp[b] + &acp[a] * &ac[b];
                q[(a, b)] -= &k * t;
            }
        }
    }
    Some(q)
}

fn report_from(conditions: Conditions, r: usize, n: usize, recursion_reports: BTreeMap<String, ConeSystemReport>) -> ConeSystemReport {
    let mut first_failed = conditions.first_failed.clone();
    if first_failed.is_none() {
        for (key, rep) in &recursion_reports {
            if let Some(f) = &rep.verdict.first_failed {
                first_failed = Some(format!("recursion {key}: {f}"));
                break;
            }
        }
    }
    ConeSystemReport {
        r,
        n,
        delta: RatRepr::from(&conditions.delta),
        cofactors_jjprime: conditions.d_jj.iter().map(RatRepr::from).collect(),
        reduced_cofactor_matrix: matrix_repr(&conditions.reduced),
        reduced_cofactor_inertia: conditions.reduced_inertia,
        per_p_positive_definite: conditions.per_p,
        q_minus_inertia: conditions.q_minus.as_ref().map(|q| q.inertia()),
        q_minus: conditions.q_minus.as_ref().map(matrix_repr),
        recursion_reports,
        verdict: Verdict { pass: first_failed.is_none(), first_failed },
    }
}

fn recursion_key(s: Subset, p: Subset) -> String {
    format!("S={s};P={p}")
}

/// Checks every hypothesis exactly, including all projected pairs
/// `C_{[r]/S ⊥ S^P}`, `C'_{[r]/S ⊥ S^P}` for nonempty `S ⊊ [r]` and `P ⊆ S`.
pub fn check_cone_pair(pair: &ConePair) -> ConeSystemReport {
    let r = pair.rank();
    let n = pair.dim();
    let form = pair.form.matrix();
    let top = evaluate(form, &pair.c, &pair.c_prime);
    let full = Subset::full(r);
    let mut recursion = BTreeMap::new();
    for s in Subset::all(r) {
        if s.is_empty() || s == full {
            continue;
        }
        let rest = full.minus(s);
        for p in s.subsets() {
            let key = recursion_key(s, p);
            let span = pair.c_sp(s, p);
            // the projecting block C_{S^P} is part of some C^P and must be positive definite
            let gram = span.transpose().mul(form).mul(&span);
            if !gram.inertia().is_positive_definite() {
                let mut rep = empty_failure(rest.len(), n, "projecting_block_positive_definite");
                rep.delta = RatRepr::from(&gram.det());
                recursion.insert(key, rep);
                continue;
            }
            let (pc, pcp) = perp_pair(pair, s, p).expect("positive definite block is nondegenerate");
            let cond = evaluate(form, &pc, &pcp);
            recursion.insert(key, report_from(cond, rest.len(), n, BTreeMap::new()));
        }
    }
    report_from(top, r, n, recursion)
}

/// `C_{[r]/S ⊥ S^P}` and `C'_{[r]/S ⊥ S^P}`, or `None` if `C_{S^P}` spans a degenerate subspace.
pub fn perp_pair(pair: &ConePair, s: Subset, p: Subset) -> Option<(RatMatrix, RatMatrix)> {
    let form = pair.form.matrix();
    let rest = Subset::full(pair.rank()).minus(s);
    let span = pair.c_sp(s, p);
    let k = rest.len();
    let joined_c = join_columns(&pair.c.select_columns(&rest.indices()), &span);
    let joined_cp = join_columns(&pair.c_prime.select_columns(&rest.indices()), &span);
    let tail = Subset(Subset::full(k + span.cols()).0 & !Subset::full(k).0);
    let head = Subset::full(k);
    Some((perp_columns_exact(&joined_c, form, head, tail)?, perp_columns_exact(&joined_cp, form, head, tail)?))
}

/// `Q_-` for columns `c`, `c'` on the form `a`; with no columns this is `a` itself.
pub fn q_minus_for(a: &RatMatrix, c: &RatMatrix, cp: &RatMatrix) -> Result<RatMatrix, ConeError> {
    let inter = interleave(c, cp);
    let gram = inter.transpose().mul(a).mul(&inter);
    let delta = gram.det();
    if delta.is_zero() {
        return Err(ConeError::ZeroDelta);
    }
    let cof = gram.cofactor_matrix();
    let d_jj: Vec<Rat> = (0..c.cols()).map(|j| cof[(2 * j, 2 * j + 1)].clone()).collect();
    Ok(q_minus_matrix(a, c, cp, &delta, &d_jj).expect("nonzero delta"))
}

fn join_columns(a: &RatMatrix, b: &RatMatrix) -> RatMatrix {
    let ka = a.cols();
    RatMatrix::from_fn(a.rows(), ka + b.cols(), |i, j| if j < ka { a[(i, j)].clone() } else { b[(i, j - ka)].clone() })
}

fn empty_failure(r: usize, n: usize, reason: &str) -> ConeSystemReport {
    ConeSystemReport {
        r,
        n,
        delta: RatRepr::from(&Rat::zero()),
        cofactors_jjprime: vec![],
        reduced_cofactor_matrix: vec![],
        reduced_cofactor_inertia: Inertia { positive: 0, negative: 0, zero: 0 },
        per_p_positive_definite: BTreeMap::new(),
        q_minus: None,
        q_minus_inertia: None,
        recursion_reports: BTreeMap::new(),
        verdict: Verdict { pass: false, first_failed: Some(reason.to_string()) },
    }
}

/// The exact matrix of `Q_-(x) = Q(x) - 2 Σ_j D_{j,j'} B(c_j,x) B(c'_j,x) / Δ`.
pub fn q_minus_form(pair: &ConePair) -> Result<RatMatrix, ConeError> {
    q_minus_for(pair.form.matrix(), &pair.c, &pair.c_prime)
}

/// Both sides of `Δ(x, c_1, c'_1, ..) = Δ Q_-(x) - X^T M X` at a rational point.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub lhs: Rat,
    pub rhs: Rat,
}

impl IdentityCheck {
    pub fn holds(&self) -> bool {
        self.lhs == self.rhs
    }
}

pub fn determinant_identity(pair: &ConePair, x: &[Rat]) -> Result<IdentityCheck, ConeError> {
    let n = pair.dim();
    if x.len() != n {
        return Err(ConeError::DimensionMismatch(format!("x must have length {n}")));
    }
    let inter = pair.interleaved();
    let a = pair.form.matrix();
    let with_x = RatMatrix::from_fn(n, inter.cols() + 1, |i, j| if j == 0 { x[i].clone() } else { inter[(i, j - 1)].clone() });
    let lhs = with_x.transpose().mul(a).mul(&with_x).det();
    let gram = inter.transpose().mul(a).mul(&inter);
    let delta = gram.det();
    let q_minus = q_minus_form(pair)?;
    let mut reduced = gram.cofactor_matrix();
    for j in 0..pair.rank() {
        reduced[(2 * j, 2 * j + 1)] = Rat::zero();
        reduced[(2 * j + 1, 2 * j)] = Rat::zero();
    }
    let big_x = inter.transpose().mul_vec(&a.mul_vec(x));
    let rhs = &delta * q_minus.bilinear(x, x) - reduced.bilinear(&big_x, &big_x);
    Ok(IdentityCheck { lhs, rhs })
}

/// `φ_r(x) = 2^{-r} Π_j [sign B(c_j,x) - sign B(c'_j,x)]` exactly, together with a wall flag.
pub fn kernel_phi_exact(pair: &ConePair, x: &[Rat]) -> (Rat, bool) {
    let a = pair.form.matrix();
    let ax = a.mul_vec(x);
    let mut value = Rat::one();
    let mut wall = false;
    let two = rat(2);
    for j in 0..pair.rank() {
        let b = dot(&pair.c.column(j), &ax);
        let bp = dot(&pair.c_prime.column(j), &ax);
        wall |= b.is_zero() || bp.is_zero();
        let diff = rat(rat_sign(&b) as i64 - rat_sign(&bp) as i64);
        value = value * diff / &two;
        if value.is_zero() {
            // a vanishing factor still counts as a wall hit only if it came from a zero argument
            let rest_wall = (j + 1..pair.rank()).any(|k| {
                dot(&pair.c.column(k), &ax).is_zero() || dot(&pair.c_prime.column(k), &ax).is_zero()
            });
            return (value, wall || rest_wall);
        }
    }
    (value, wall)
}

/// The signature-(4,4) form built on the `A_4` root lattice Gram matrix, with its cone pair.
pub fn build_a4_example() -> ConePair {
    let g = [[2, -1, 0, 0], [-1, 2, -1, 0], [0, -1, 2, -1], [0, 0, -1, 2]];
    let mut rows = vec![vec![0i64; 8]; 8];
    for i in 0..4 {
        for j in 0..4 {
            rows[i][j] = g[i][j];
        }
        rows[i][i + 4] = -1;
        rows[i + 4][i] = -1;
    }
    let form = BilinearForm::from_rows(&rows).expect("nondegenerate");
    let e = |k: usize| -> Vec<i64> {
        let mut v = vec![0; 8];
        v[k] = 1;
        v
    };
    let minus = |a: Vec<i64>, b: Vec<i64>| -> Vec<i64> { a.iter().zip(&b).map(|(x, y)| x - y).collect() };
    let c = vec![e(0), e(1), e(2), e(3)];
    let c_prime = vec![minus(e(0), e(5)), minus(e(1), e(6)), minus(e(2), e(7)), minus(e(3), e(4))];
    ConePair::from_i64_columns(form, &c, &c_prime).expect("consistent dimensions")
}

/// Signature-(1,1) pair `A = diag(1,-1)`, `c = (1,0)`, `c' = (2,1)`.
pub fn build_r1_example() -> ConePair {
    let form = BilinearForm::from_rows(&[vec![1, 0], vec![0, -1]]).expect("nondegenerate");
    ConePair::from_i64_columns(form, &[vec![1, 0]], &[vec![2, 1]]).expect("consistent dimensions")
}

/// Pair `c = (1,0)`, `c' = (2,1)` on `A = [[2,1],[1,-2]]`, a signature-(1,1) lattice with `|Λ*/Λ| = 5`.
pub fn build_lattice_r1_example() -> ConePair {
    let form = BilinearForm::from_rows(&[vec![2, 1], vec![1, -2]]).expect("nondegenerate");
    ConePair::from_i64_columns(form, &[vec![1, 0]], &[vec![2, 1]]).expect("consistent dimensions")
}

impl ConeSystemReport {
    pub fn passes(&self) -> bool {
        self.verdict.pass
    }

    pub fn delta(&self) -> Rat {
        self.delta.to_rat().expect("valid rational")
    }
}
