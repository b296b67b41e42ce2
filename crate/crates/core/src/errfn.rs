//! The r-tuple error function `E_r` and its complementary partner `M_r` on Euclidean `R^r`.
//!
//! `M_r` is evaluated along rays. Differentiating `M_r(t u)` in `t` and using the
//! first-derivative formula gives
//!
//! ```text
//! M_r(u) = -2 sum_j (m̂_j . û) ∫_{|u|}^∞ exp(-π s² (m̂_j . û)²) M_{r-1}(P_j M_{[r]/j}; s P_j û) ds
//! ```
//!
//! with `û = u/|u|`, `m̂_j = m_j/|m_j|` and `P_j` the orthonormal rows spanning
//! `m_j^⊥`. Wall signs are constant along a ray, so every integrand is an entire
//! function of `s` and Gauss–Legendre converges spectrally, right up to the walls.
//! The recursion bottoms out at `M_1(a; β) = -sign(β/a) erfc(√π |β|)` and `M_0 = 1`.
//!
//! `E_r` is assembled from the subset decomposition
//! `E_r(M;u) = Σ_S sign(M_{[r]/S}^T P_{[r]/S}^T P_{[r]/S} u) M_{|S|}(Q_S M_S; Q_S u)`.
//! Every sign argument and every `M`-wall that lies within `wall_eps` of `u` is
//! resolved as the one-sided limit along a fixed generic direction, which keeps
//! the sum continuous where `E_r` is smooth.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::quadform::{orthonormal_rows, select_columns, ErrorFunctionFrame, QuadformError};
use crate::special::{erfc, gauss_hermite, gauss_legendre, sign, Rule};
use crate::subset::Subset;

pub const DEFAULT_NODES: usize = 64;
pub const DEFAULT_MAX_R_DIRECT: usize = 4;
/// Hard ceiling on the rank accepted by any evaluator.
pub const MAX_RANK: usize = 6;
const MAX_HERMITE_POINTS: usize = 50_000_000;
/// Relative wall tolerance; walls closer than `WALL_REL_EPS * |u|` count as hit.
pub const WALL_REL_EPS: f64 = 1e-9;
pub const WALL_ABS_FLOOR: f64 = 1e-12;
/// `exp(-π (s² - ρ²))` below `exp(-42)` is dropped from the ray integrals.
const RAY_TAIL_EXPONENT: f64 = 42.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ErrFnError {
    #[error("argument within {wall_eps:e} of wall {index} (distance {distance:e})")]
    WallTooClose { index: usize, distance: f64, wall_eps: f64 },
    #[error("rank {r} exceeds the direct evaluation limit {max}")]
    RankTooLarge { r: usize, max: usize },
    #[error("invalid quadrature settings: {0}")]
    InvalidQuadrature(String),
    #[error("argument has length {got}, frame rank is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid subset or index: {0}")]
    InvalidIndex(String),
    #[error(transparent)]
    Frame(#[from] QuadformError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureScheme {
    /// Nested Gauss–Legendre along rays (default).
    Radial,
    /// Tensor Gauss–Hermite on the contour-shifted integral `z = t - i u`.
    ContourHermite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureSpec {
    pub nodes_per_axis: usize,
    pub scheme: QuadratureScheme,
    pub max_r_direct: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { nodes_per_axis: DEFAULT_NODES, scheme: QuadratureScheme::Radial, max_r_direct: DEFAULT_MAX_R_DIRECT }
    }
}

impl QuadratureSpec {
    pub fn with_nodes(nodes_per_axis: usize) -> Self {
        Self { nodes_per_axis, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ErrFnError> {
        if self.nodes_per_axis < 8 {
            return Err(ErrFnError::InvalidQuadrature(format!(
                "nodes_per_axis must be at least 8, got {}",
                self.nodes_per_axis
            )));
        }
        if self.max_r_direct > MAX_RANK {
            return Err(ErrFnError::InvalidQuadrature(format!("max_r_direct above {MAX_RANK}")));
        }
        Ok(())
    }

    fn check_rank(&self, r: usize) -> Result<(), ErrFnError> {
        self.validate()?;
        if r > self.max_r_direct {
            return Err(ErrFnError::RankTooLarge { r, max: self.max_r_direct });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Kind {
    M,
    E,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrFnValue {
    pub value: f64,
    pub imag_residual: f64,
    pub est_error: f64,
}

impl ErrFnValue {
    fn exact(value: f64) -> Self {
        Self { value, imag_residual: 0.0, est_error: 0.0 }
    }
}

/// A frame together with the point `u` at which to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrFnArgument {
    pub frame: ErrorFunctionFrame,
    pub u: DVector<f64>,
}

impl ErrFnArgument {
    pub fn new(frame: ErrorFunctionFrame, u: &[f64]) -> Result<Self, ErrFnError> {
        if u.len() != frame.rank() {
            return Err(ErrFnError::DimensionMismatch { expected: frame.rank(), got: u.len() });
        }
        Ok(Self { frame, u: DVector::from_column_slice(u) })
    }

    pub fn rank(&self) -> usize {
        self.frame.rank()
    }

    pub fn wall_eps(&self) -> f64 {
        wall_eps(self.u.norm())
    }

    /// Euclidean distances `|w^(j) . u| / |w^(j)|` to each wall.
    pub fn wall_distances(&self) -> Vec<f64> {
        (0..self.rank())
            .map(|j| {
                let w = self.frame.w_col(j);
                w.dot(&self.u).abs() / w.norm()
            })
            .collect()
    }

    pub fn check_walls(&self) -> Result<(), ErrFnError> {
        let eps = self.wall_eps();
        for (index, distance) in self.wall_distances().into_iter().enumerate() {
            if distance < eps {
                return Err(ErrFnError::WallTooClose { index, distance, wall_eps: eps });
            }
        }
        Ok(())
    }

    fn with_u(&self, u: DVector<f64>) -> Self {
        Self { frame: self.frame.clone(), u }
    }
}

pub fn wall_eps(norm_u: f64) -> f64 {
    (WALL_REL_EPS * norm_u).max(WALL_ABS_FLOOR)
}

/// Fixed generic direction used to resolve points lying on walls.
pub fn side_direction(dim: usize) -> DVector<f64> {
    const BASE: [f64; 8] = [0.5773, -0.3196, 0.7144, 0.2218, -0.6461, 0.4127, -0.1853, 0.8391];
    DVector::from_fn(dim, |k, _| {
        if k < BASE.len() {
            BASE[k]
        } else {
            ((k as f64 + 1.0) * 0.618_033_988_749_895).fract() - 0.4321
        }
    })
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

// ---------------------------------------------------------------------------
// Ray recursion

#[derive(Debug, Clone)]
struct RayChild {
    mhat: Vec<f64>,
    /// `P_{[r]/j}` as an `(r-1) x r` row-major matrix.
    proj: DMatrix<f64>,
    node: RayNode,
}

/// Precomputed reduction tree of a frame. Wall labels refer to the top-level frame.
#[derive(Debug, Clone)]
struct RayNode {
    labels: Vec<usize>,
    children: Vec<RayChild>,
}

impl RayNode {
    fn build(m: &DMatrix<f64>, labels: Vec<usize>) -> Self {
        let r = m.ncols();
        let mut children = Vec::new();
        if r >= 2 {
            let w = m.clone().try_inverse().expect("nonsingular frame").transpose();
            for j in 0..r {
                let mj = m.column(j);
                let mhat: Vec<f64> = (mj / mj.norm()).iter().copied().collect();
                let rest = Subset::full(r).minus(Subset::singleton(j));
                let proj = orthonormal_rows(&w, rest);
                let reduced = &proj * select_columns(m, &rest.indices());
                let child_labels = rest.indices().into_iter().map(|k| labels[k]).collect();
                children.push(RayChild { mhat, proj, node: RayNode::build(&reduced, child_labels) });
            }
        }
        Self { labels, children }
    }

    fn rank(&self) -> usize {
        self.labels.len()
    }

    /// `M` at radius `rho` along unit direction `dir`, with wall signs `sigma` (by label).
    fn eval(&self, rho: f64, dir: &[f64], side: &[f64], sigma: &[f64], rule: &Rule) -> f64 {
        match self.rank() {
            0 => 1.0,
            1 => -sigma[self.labels[0]] * erfc(PI.sqrt() * rho),
            _ => {
                let s_max = (rho * rho + RAY_TAIL_EXPONENT / PI).sqrt();
                let half = 0.5 * (s_max - rho);
                let mid = 0.5 * (s_max + rho);
                let mut total = 0.0;
                for child in &self.children {
                    let alpha: f64 = child.mhat.iter().zip(dir).map(|(a, b)| a * b).sum();
                    let v = mat_vec(&child.proj, dir);
                    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let child_side = normalized(&mat_vec(&child.proj, side));
                    let (child_dir, scale) =
                        if nv > WALL_REL_EPS { (v.iter().map(|x| x / nv).collect(), nv) } else { (child_side.clone(), 0.0) };
                    let mut integral = 0.0;
                    for (x, wgt) in rule.nodes.iter().zip(&rule.weights) {
                        let s = mid + half * x;
                        let g = (-PI * s * s * alpha * alpha).exp();
                        let inner = child.node.eval(s * scale, &child_dir, &child_side, sigma, rule);
                        integral += wgt * g * inner;
                    }
                    total += alpha * integral * half;
                }
                -2.0 * total
            }
        }
    }
}

fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|k| m[(i, k)] * v[k]).sum()).collect()
}

/// Precomputed `M_r` evaluator for one frame.
#[derive(Debug, Clone)]
struct MEvaluator {
    frame: DMatrix<f64>,
    dual: DMatrix<f64>,
    tree: RayNode,
}

impl MEvaluator {
    fn new(frame: DMatrix<f64>) -> Self {
        let r = frame.ncols();
        let dual = if r == 0 { DMatrix::zeros(0, 0) } else { frame.clone().try_inverse().expect("nonsingular").transpose() };
        let tree = RayNode::build(&frame, (0..r).collect());
        Self { frame, dual, tree }
    }

    fn rank(&self) -> usize {
        self.frame.ncols()
    }

    /// Signed wall quantities `w_k . u / |w_k|`.
    fn wall_values(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rank())
            .map(|k| {
                let w = self.dual.column(k);
                let d: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
                d / w.norm()
            })
            .collect()
    }

    /// Evaluates with walls closer than `eps` resolved along `side`.
    fn eval_resolved(&self, u: &[f64], side: &[f64], eps: f64, rule: &Rule) -> f64 {
        let r = self.rank();
        if r == 0 {
            return 1.0;
        }
        let side = normalized(side);
        let walls = self.wall_values(u);
        let side_walls = self.wall_values(&side);
        let sigma: Vec<f64> = walls
            .iter()
            .zip(&side_walls)
            .map(|(&q, &qs)| if q.abs() <= eps { sign(qs) } else { sign(q) })
            .collect();
        let rho = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rho <= eps {
            self.tree.eval(0.0, &side, &side, &sigma, rule)
        } else {
            let dir: Vec<f64> = u.iter().map(|x| x / rho).collect();
            self.tree.eval(rho, &dir, &side, &sigma, rule)
        }
    }

    fn eval_with_estimate(&self, u: &[f64], side: &[f64], eps: f64, nodes: usize) -> ErrFnValue {
        if self.rank() <= 1 {
            // closed form; no quadrature involved
            let rule = gauss_legendre(1);
            return ErrFnValue::exact(self.eval_resolved(u, side, eps, &rule));
        }
        let fine = self.eval_resolved(u, side, eps, &gauss_legendre(nodes));
        let coarse = self.eval_resolved(u, side, eps, &gauss_legendre((nodes / 2).max(4)));
        ErrFnValue { value: fine, imag_residual: 0.0, est_error: (fine - coarse).abs() }
    }
}

/// One term of a subset decomposition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionTerm {
    pub subset: Subset,
    pub coefficient: f64,
    pub value: ErrFnValue,
}

#[derive(Debug, Clone)]
struct SubsetTerm {
    subset: Subset,
    /// Orthonormal rows `Q_S`.
    q: DMatrix<f64>,
    /// Normals (in `u` space) of the sign arguments `M_{[r]/S}^T P^T P u`.
    sign_normals: Vec<DVector<f64>>,
    m: MEvaluator,
}

/// Reusable evaluator for `E_r` and `M_r` of a fixed frame.
///
/// Construction precomputes the reduction trees of all `2^r` subset frames.
#[derive(Debug, Clone)]
pub struct FrameEvaluator {
    frame: ErrorFunctionFrame,
    quad: QuadratureSpec,
    full: MEvaluator,
    terms: Vec<SubsetTerm>,
}

impl FrameEvaluator {
    pub fn new(frame: &ErrorFunctionFrame, quad: &QuadratureSpec) -> Result<Self, ErrFnError> {
        let r = frame.rank();
        quad.check_rank(r)?;
        let mut terms = Vec::with_capacity(1 << r);
        for s in Subset::all(r) {
            let comp = s.complement(r);
            let q = orthonormal_rows(frame.m(), s);
            let p = orthonormal_rows(frame.w(), comp);
            let ptp = p.transpose() * &p;
            let sign_normals = comp.indices().into_iter().map(|k| &ptp * frame.m_col(k)).collect();
            let sub = &q * frame.m_sub(s);
            terms.push(SubsetTerm { subset: s, q, sign_normals, m: MEvaluator::new(sub) });
        }
        Ok(Self { frame: frame.clone(), quad: quad.clone(), full: MEvaluator::new(frame.m().clone()), terms })
    }

    pub fn frame(&self) -> &ErrorFunctionFrame {
        &self.frame
    }

    pub fn rank(&self) -> usize {
        self.frame.rank()
    }

    fn check_len(&self, u: &[f64]) -> Result<(), ErrFnError> {
        if u.len() != self.rank() {
            return Err(ErrFnError::DimensionMismatch { expected: self.rank(), got: u.len() });
        }
        Ok(())
    }

    /// `M_r(M; u)`; fails with `WallTooClose` near a wall.
    pub fn m(&self, u: &[f64]) -> Result<ErrFnValue, ErrFnError> {
        self.check_len(u)?;
        let arg = ErrFnArgument { frame: self.frame.clone(), u: DVector::from_column_slice(u) };
        arg.check_walls()?;
        match self.quad.scheme {
            QuadratureScheme::Radial => {
                let side = side_direction(self.rank());
                Ok(self.full.eval_with_estimate(u, side.as_slice(), 0.0, self.quad.nodes_per_axis))
            }
            QuadratureScheme::ContourHermite => contour_hermite_with_estimate(&arg, self.quad.nodes_per_axis),
        }
    }

    /// One-sided limit of `M_r` onto the point `u`, approached from direction `side`.
    pub fn m_one_sided(&self, u: &[f64], side: &[f64]) -> Result<ErrFnValue, ErrFnError> {
        self.check_len(u)?;
        self.check_len(side)?;
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(self.full.eval_with_estimate(u, side, wall_eps(norm), self.quad.nodes_per_axis))
    }

    /// Terms of `E_r` as sign products times lower-rank `M` functions.
    pub fn e_terms(&self, u: &[f64]) -> Result<Vec<DecompositionTerm>, ErrFnError> {
        self.check_len(u)?;
        let side = side_direction(self.rank());
        Ok(self.e_terms_resolved(u, side.as_slice()))
    }

    fn e_terms_resolved(&self, u: &[f64], side: &[f64]) -> Vec<DecompositionTerm> {
        let uv = DVector::from_column_slice(u);
        let sv = DVector::from_column_slice(side);
        let eps = wall_eps(uv.norm());
        self.terms
            .iter()
            .map(|t| {
                let mut coefficient = 1.0;
                for n in &t.sign_normals {
                    let nn = n.norm();
                    let q = n.dot(&uv) / nn;
                    coefficient *= if q.abs() <= eps { sign(n.dot(&sv)) } else { sign(q) };
                }
                let value = if coefficient == 0.0 {
                    ErrFnValue::exact(0.0)
                } else {
                    let qu: Vec<f64> = (&t.q * &uv).iter().copied().collect();
                    let qs: Vec<f64> = (&t.q * &sv).iter().copied().collect();
                    t.m.eval_with_estimate(&qu, &qs, eps, self.quad.nodes_per_axis)
                };
                DecompositionTerm { subset: t.subset, coefficient, value }
            })
            .collect()
    }

    /// `E_r(M; u)`, defined everywhere.
    pub fn e(&self, u: &[f64]) -> Result<ErrFnValue, ErrFnError> {
        let terms = self.e_terms(u)?;
        Ok(sum_terms(&terms))
    }

    /// `E_r` with wall ties broken along a caller-chosen direction.
    pub fn e_from_side(&self, u: &[f64], side: &[f64]) -> Result<ErrFnValue, ErrFnError> {
        self.check_len(u)?;
        self.check_len(side)?;
        Ok(sum_terms(&self.e_terms_resolved(u, side)))
    }
}

fn sum_terms(terms: &[DecompositionTerm]) -> ErrFnValue {
    let mut value = 0.0;
    let mut est = 0.0;
    for t in terms {
        value += t.coefficient * t.value.value;
        est += t.coefficient.abs() * t.value.est_error;
    }
    ErrFnValue { value, imag_residual: 0.0, est_error: est }
}

// ---------------------------------------------------------------------------
// Contour-shifted Gauss–Hermite

/// `M_r` from the contour-shifted integral, complex-valued before taking the real part.
pub fn contour_hermite(arg: &ErrFnArgument, nodes: usize) -> Result<Complex64, ErrFnError> {
    let r = arg.rank();
    if r == 0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let total_points = nodes.checked_pow(r as u32).unwrap_or(usize::MAX);
    if total_points > MAX_HERMITE_POINTS {
        return Err(ErrFnError::InvalidQuadrature(format!("{nodes}^{r} Gauss–Hermite points is too many")));
    }
    let rule = gauss_hermite(nodes);
    let w = arg.frame.w();
    let u = &arg.u;
    let wu: Vec<f64> = (0..r).map(|j| w.column(j).dot(u)).collect();
    let scale = 1.0 / PI.sqrt();
    // w_j . t at each node, per axis contribution
    let per_axis: Vec<Vec<f64>> = (0..r).map(|j| (0..r).map(|k| w[(k, j)] * scale).collect()).collect();
    let det = arg.frame.m().determinant().abs();
    let pref = Complex64::new(0.0, 1.0 / PI).powu(r as u32) * (-PI * u.dot(u)).exp() / det;
    let sum = (0..total_points)
        .into_par_iter()
        .map(|flat| {
            let mut idx = flat;
            let mut weight = 1.0;
            let mut wt = vec![0.0; r];
            for k in 0..r {
                let i = idx % nodes;
                idx /= nodes;
                weight *= rule.weights[i];
                let x = rule.nodes[i];
                for j in 0..r {
                    wt[j] += per_axis[j][k] * x;
                }
            }
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..r {
                denom *= Complex64::new(wt[j], -wu[j]);
            }
            weight / denom
        })
        .reduce(|| Complex64::new(0.0, 0.0), |a, b| a + b);
    // each axis carries dt = dx/√π
    Ok(pref * sum * scale.powi(r as i32))
}

fn contour_hermite_with_estimate(arg: &ErrFnArgument, nodes: usize) -> Result<ErrFnValue, ErrFnError> {
    let fine = contour_hermite(arg, nodes)?;
    let coarse = contour_hermite(arg, (nodes / 2).max(4))?;
    Ok(ErrFnValue { value: fine.re, imag_residual: fine.im, est_error: (fine - coarse).norm() })
}

// ---------------------------------------------------------------------------
// Public operations

pub fn eval_m(arg: &ErrFnArgument, quad: &QuadratureSpec) -> Result<ErrFnValue, ErrFnError> {
    FrameEvaluator::new(&arg.frame, quad)?.m(arg.u.as_slice())
}

pub fn eval_e(arg: &ErrFnArgument, quad: &QuadratureSpec) -> Result<ErrFnValue, ErrFnError> {
    FrameEvaluator::new(&arg.frame, quad)?.e(arg.u.as_slice())
}

pub fn eval(kind: Kind, arg: &ErrFnArgument, quad: &QuadratureSpec) -> Result<ErrFnValue, ErrFnError> {
    match kind {
        Kind::M => eval_m(arg, quad),
        Kind::E => eval_e(arg, quad),
    }
}

/// Terms of `E_r = Σ_S sign(M_{[r]/S}^T P^T P u) M_{|S|}(Q_S M_S; Q_S u)`.
pub fn decompose_e_into_m(arg: &ErrFnArgument, quad: &QuadratureSpec) -> Result<Vec<DecompositionTerm>, ErrFnError> {
    FrameEvaluator::new(&arg.frame, quad)?.e_terms(arg.u.as_slice())
}

/// Terms of `M_r = Σ_S (-1)^{r-|S|} sign(W_{[r]/S}^T u) E_{|S|}(Q_S M_S; Q_S u)`.
pub fn decompose_m_into_e(arg: &ErrFnArgument, quad: &QuadratureSpec) -> Result<Vec<DecompositionTerm>, ErrFnError> {
    let r = arg.rank();
    quad.check_rank(r)?;
    arg.check_walls()?;
    let frame = &arg.frame;
    let mut out = Vec::with_capacity(1 << r);
    for s in Subset::all(r) {
        let comp = s.complement(r);
        let parity = if (r - s.len()) % 2 == 0 { 1.0 } else { -1.0 };
        let signs: f64 = comp.indices().into_iter().map(|k| sign(frame.w_col(k).dot(&arg.u))).product();
        let q = orthonormal_rows(frame.m(), s);
        let value = if s.is_empty() {
            ErrFnValue::exact(1.0)
        } else {
            let sub = ErrorFunctionFrame::new(&q * frame.m_sub(s))?;
            let qu: Vec<f64> = (&q * &arg.u).iter().copied().collect();
            FrameEvaluator::new(&sub, quad)?.e(&qu)?
        };
        out.push(DecompositionTerm { subset: s, coefficient: parity * signs, value });
    }
    Ok(out)
}

pub fn sum_decomposition(terms: &[DecompositionTerm]) -> ErrFnValue {
    sum_terms(terms)
}

/// Monte Carlo estimate of the defining convolution of `E_r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

impl From<McEstimate> for ErrFnValue {
    fn from(m: McEstimate) -> Self {
        ErrFnValue { value: m.value, imag_residual: 0.0, est_error: m.stderr }
    }
}

const MC_CHUNK: usize = 1 << 16;
pub const MIN_MC_SAMPLES: usize = 10_000;

/// Averages `sign(M^T u')` over `u' ~ N(u, I/(2π))`, the Gaussian of the convolution.
///
/// Samples are drawn in fixed chunks, each from its own ChaCha stream, so the
/// estimate depends only on `seed` and `n_samples`, not on the thread count.
pub fn eval_e_oracle_mc(arg: &ErrFnArgument, n_samples: usize, seed: u64) -> Result<McEstimate, ErrFnError> {
    if n_samples < MIN_MC_SAMPLES {
        return Err(ErrFnError::InvalidQuadrature(format!("n_samples must be at least {MIN_MC_SAMPLES}")));
    }
    let r = arg.rank();
    let m = arg.frame.m().clone();
    let u: Vec<f64> = arg.u.iter().copied().collect();
    let sigma = 1.0 / (2.0 * PI).sqrt();
    let chunks = n_samples.div_ceil(MC_CHUNK);
    let (sum, nonzero) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
            let mut x = vec![0.0; r];
            let mut sum = 0i64;
            let mut nonzero = 0i64;
            for _ in 0..count {
                for (xi, ui) in x.iter_mut().zip(&u) {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *xi = ui + sigma * g;
                }
                let mut s = 1i64;
                for j in 0..r {
                    let d: f64 = (0..r).map(|k| m[(k, j)] * x[k]).sum();
                    s *= sign(d) as i64;
                }
                sum += s;
                nonzero += s.abs();
            }
            (sum, nonzero)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_samples as f64;
    let mean = sum as f64 / n;
    let var = ((nonzero as f64 / n) - mean * mean).max(0.0) * n / (n - 1.0);
    Ok(McEstimate { value: mean, stderr: (var / n).sqrt(), n_samples })
}

/// Data of the rank-reduced frame `P_{[r]/j} M_{[r]/j}` at `P_{[r]/j} u`.
struct Reduction {
    norm_mj: f64,
    gauss: f64,
    mj_dot_u: f64,
    frame: Option<ErrorFunctionFrame>,
    u: Vec<f64>,
}

fn reduce(arg: &ErrFnArgument, j: usize) -> Result<Reduction, ErrFnError> {
    let r = arg.rank();
    if j >= r {
        return Err(ErrFnError::InvalidIndex(format!("index {j} out of range for rank {r}")));
    }
    let mj = arg.frame.m_col(j);
    let norm_mj = mj.norm();
    let mj_dot_u = mj.dot(&arg.u);
    let proj_len = mj_dot_u / norm_mj;
    let gauss = (-PI * proj_len * proj_len).exp();
    if r == 1 {
        return Ok(Reduction { norm_mj, gauss, mj_dot_u, frame: None, u: vec![] });
    }
    let rest = Subset::full(r).minus(Subset::singleton(j));
    let p = orthonormal_rows(arg.frame.w(), rest);
    let frame = ErrorFunctionFrame::new(&p * arg.frame.m_sub(rest))?;
    let u = (&p * &arg.u).iter().copied().collect();
    Ok(Reduction { norm_mj, gauss, mj_dot_u, frame: Some(frame), u })
}

fn reduced_value(red: &Reduction, kind: Kind, quad: &QuadratureSpec) -> Result<ErrFnValue, ErrFnError> {
    match &red.frame {
        None => Ok(ErrFnValue::exact(1.0)),
        Some(frame) => {
            let ev = FrameEvaluator::new(frame, quad)?;
            match kind {
                Kind::M => ev.m(&red.u),
                Kind::E => ev.e(&red.u),
            }
        }
    }
}

/// `w^(j)T ∂_u F_r(M; u) = (2/|m_j|) exp(-π (m̂_j.u)²) F_{r-1}(P M_{[r]/j}; P u)`.
pub fn derivative(arg: &ErrFnArgument, kind: Kind, j: usize, quad: &QuadratureSpec) -> Result<f64, ErrFnError> {
    let red = reduce(arg, j)?;
    let lower = reduced_value(&red, kind, quad)?;
    Ok(2.0 / red.norm_mj * red.gauss * lower.value)
}

pub fn derivative_m(arg: &ErrFnArgument, j: usize, quad: &QuadratureSpec) -> Result<f64, ErrFnError> {
    derivative(arg, Kind::M, j, quad)
}

pub fn derivative_e(arg: &ErrFnArgument, j: usize, quad: &QuadratureSpec) -> Result<f64, ErrFnError> {
    derivative(arg, Kind::E, j, quad)
}

/// The real bracket `Σ_j (m_j.u/|m_j|) exp(-π (m̂_j.u)²) F_{r-1}(..)`.
///
/// The shadow `(i/4) u.∂_u F` equals `i/2` times this value.
pub fn shadow(arg: &ErrFnArgument, kind: Kind, quad: &QuadratureSpec) -> Result<f64, ErrFnError> {
    let mut total = 0.0;
    for j in 0..arg.rank() {
        let red = reduce(arg, j)?;
        if red.mj_dot_u == 0.0 {
            continue;
        }
        let lower = reduced_value(&red, kind, quad)?;
        total += red.mj_dot_u / red.norm_mj * red.gauss * lower.value;
    }
    Ok(total)
}

/// Limit of `M_r` as `W_{[r]/S}^T u -> 0`:
/// `(-1)^{r-|S|} Π approach_signs · M_{|S|}(Q_S M_S; Q_S u)`.
///
/// `approach_signs[k]` is the sign of `w^(k).u` on the approaching side for each
/// `k` outside `S` (entries for `k` in `S` are ignored).
pub fn discontinuity_limit(
    arg: &ErrFnArgument,
    s: Subset,
    approach_signs: &[f64],
    quad: &QuadratureSpec,
) -> Result<f64, ErrFnError> {
    let r = arg.rank();
    if !s.is_subset_of(Subset::full(r)) || s == Subset::full(r) {
        return Err(ErrFnError::InvalidIndex(format!("{s} must be a proper subset of [{r}]")));
    }
    if approach_signs.len() != r {
        return Err(ErrFnError::DimensionMismatch { expected: r, got: approach_signs.len() });
    }
    let comp = s.complement(r);
    let parity = if comp.len() % 2 == 0 { 1.0 } else { -1.0 };
    let signs: f64 = comp.indices().into_iter().map(|k| sign(approach_signs[k])).product();
    if s.is_empty() {
        return Ok(parity * signs);
    }
    let q = orthonormal_rows(arg.frame.m(), s);
    let sub = ErrorFunctionFrame::new(&q * arg.frame.m_sub(s))?;
    let qu: Vec<f64> = (&q * &arg.u).iter().copied().collect();
    let value = FrameEvaluator::new(&sub, quad)?.m(&qu)?;
    Ok(parity * signs * value.value)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// `|M_r(M;u)| <= r! exp(-π u.u)`.
pub fn bound_check(arg: &ErrFnArgument, quad: &QuadratureSpec) -> Result<BoundCheck, ErrFnError> {
    bound_check_scaled(arg, quad, 1.0)
}

/// Bound check with the right-hand side multiplied by `rhs_scale`.
pub fn bound_check_scaled(arg: &ErrFnArgument, quad: &QuadratureSpec, rhs_scale: f64) -> Result<BoundCheck, ErrFnError> {
    let v = eval_m(arg, quad)?;
    let r = arg.rank();
    let fact: f64 = (1..=r).map(|k| k as f64).product();
    let lhs = v.value.abs();
    let rhs = rhs_scale * fact * (-PI * arg.u.dot(&arg.u)).exp();
    Ok(BoundCheck { lhs, rhs, ok: lhs <= rhs + v.est_error })
}

/// Central-difference value of `Σ_j (∂²_j + 2π u_j ∂_j) F` at `u`.
pub fn vigneras_residual(arg: &ErrFnArgument, kind: Kind, h: f64, quad: &QuadratureSpec) -> Result<f64, ErrFnError> {
    let r = arg.rank();
    if kind == Kind::M {
        let min_dist = arg.wall_distances().into_iter().fold(f64::INFINITY, f64::min);
        if min_dist < 5.0 * h {
            let index = arg.wall_distances().iter().position(|&d| d == min_dist).unwrap_or(0);
            return Err(ErrFnError::WallTooClose { index, distance: min_dist, wall_eps: 5.0 * h });
        }
    }
    let ev = FrameEvaluator::new(&arg.frame, quad)?;
    let f = |u: &DVector<f64>| -> Result<Vec<(f64, f64)>, ErrFnError> {
        Ok(match kind {
            Kind::M => vec![(1.0, ev.m(u.as_slice())?.value)],
            Kind::E => term_pairs(&ev.e_terms(u.as_slice())?),
        })
    };
    let center = f(&arg.u)?;
    let mut plus = Vec::with_capacity(r);
    let mut minus = Vec::with_capacity(r);
    for j in 0..r {
        let mut up = arg.u.clone();
        up[j] += h;
        let mut dn = arg.u.clone();
        dn[j] -= h;
        plus.push(f(&up)?);
        minus.push(f(&dn)?);
    }
    let second = vec![1.0; r];
    let first: Vec<f64> = arg.u.iter().map(|&x| 2.0 * PI * x).collect();
    Ok(stencil_residual(&center, &plus, &minus, &second, &first, h))
}

pub(crate) fn term_pairs(terms: &[DecompositionTerm]) -> Vec<(f64, f64)> {
    terms.iter().map(|t| (t.coefficient, t.value.value)).collect()
}

/// `Σ_j [a_j (f₊ - 2f₀ + f₋)/h² + b_j (f₊ - f₋)/(2h)]` for samples given as `(coefficient, value)` terms.
///
/// When every sample carries the same coefficients the differences are taken term by term, so
/// locally constant terms drop out exactly instead of cancelling in floating point.
pub(crate) fn stencil_residual(center: &[(f64, f64)], plus: &[Vec<(f64, f64)>], minus: &[Vec<(f64, f64)>], a: &[f64], b: &[f64], h: f64) -> f64 {
    let same = |s: &[(f64, f64)]| s.len() == center.len() && s.iter().zip(center).all(|(x, y)| x.0 == y.0);
    let residual = |c: f64, p: &dyn Fn(usize) -> f64, m: &dyn Fn(usize) -> f64| -> f64 {
        (0..a.len()).map(|j| a[j] * (p(j) - 2.0 * c + m(j)) / (h * h) + b[j] * (p(j) - m(j)) / (2.0 * h)).sum()
    };
    if plus.iter().chain(minus).all(|s| same(s)) {
        center
            .iter()
            .enumerate()
            .filter(|(_, t)| t.0 != 0.0)
            .map(|(k, t)| t.0 * residual(t.1, &|j| plus[j][k].1, &|j| minus[j][k].1))
            .sum()
    } else {
        let total = |s: &[(f64, f64)]| s.iter().map(|t| t.0 * t.1).sum::<f64>();
        residual(total(center), &|j| total(&plus[j]), &|j| total(&minus[j]))
    }
}

/// Central finite-difference gradient, used by tests and the verification suite.
pub fn finite_difference_gradient(
    arg: &ErrFnArgument,
    kind: Kind,
    h: f64,
    quad: &QuadratureSpec,
) -> Result<Vec<f64>, ErrFnError> {
    let ev = FrameEvaluator::new(&arg.frame, quad)?;
    (0..arg.rank())
        .map(|j| {
            let mut up = arg.u.clone();
            up[j] += h;
            let mut dn = arg.u.clone();
            dn[j] -= h;
            let (a, b) = match kind {
                Kind::M => (ev.m(up.as_slice())?.value, ev.m(dn.as_slice())?.value),
                Kind::E => (ev.e(up.as_slice())?.value, ev.e(dn.as_slice())?.value),
            };
            Ok((a - b) / (2.0 * h))
        })
        .collect()
}

impl ErrFnArgument {
    /// The same frame at `u + t·dir`.
    pub fn shifted(&self, dir: &[f64], t: f64) -> Self {
        let d = DVector::from_column_slice(dir);
        self.with_u(&self.u + d * t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arg(cols: &[Vec<f64>], u: &[f64]) -> ErrFnArgument {
        ErrFnArgument::new(ErrorFunctionFrame::from_columns(cols).unwrap(), u).unwrap()
    }

    #[test]
    fn rank_one_e_vanishes_at_origin() {
        let a = arg(&[vec![1.0]], &[0.0]);
        assert_eq!(eval_e(&a, &QuadratureSpec::default()).unwrap().value, 0.0);
    }

    #[test]
    fn wall_and_rank_errors() {
        let q = QuadratureSpec::default();
        let a = arg(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 0.0]);
        assert!(matches!(eval_m(&a, &q), Err(ErrFnError::WallTooClose { index: 1, .. })));
        let r5 = ErrFnArgument::new(ErrorFunctionFrame::identity(5), &[1.0; 5]).unwrap();
        assert!(matches!(eval_m(&r5, &q), Err(ErrFnError::RankTooLarge { r: 5, max: 4 })));
        assert!(QuadratureSpec::with_nodes(4).validate().is_err());
        assert!(ErrFnArgument::new(ErrorFunctionFrame::identity(2), &[1.0]).is_err());
    }

    #[test]
    fn monte_carlo_is_reproducible_and_checks_sample_count() {
        let a = arg(&[vec![1.0, 0.2], vec![0.1, 1.0]], &[0.3, -0.4]);
        let x = eval_e_oracle_mc(&a, 100_000, 9).unwrap();
        let y = eval_e_oracle_mc(&a, 100_000, 9).unwrap();
        assert_eq!(x, y);
        assert!(eval_e_oracle_mc(&a, 100, 9).is_err());
    }

    #[test]
    fn e_is_continuous_across_every_subset_wall() {
        // r=2 non-orthogonal frame: approach the M_2 wall w_1.u = 0 from both sides
        let frame = ErrorFunctionFrame::from_columns(&[vec![1.0, 0.3], vec![-0.4, 1.0]]).unwrap();
        let ev = FrameEvaluator::new(&frame, &QuadratureSpec::default()).unwrap();
        let w1 = frame.w_col(0);
        let along = DVector::from_column_slice(&[-w1[1], w1[0]]).normalize();
        let normal = w1.normalize();
        for t in [-1.3, 0.4, 0.9] {
            let base = &along * t;
            let plus = &base + &normal * 1e-7;
            let minus = &base - &normal * 1e-7;
            let a = ev.e(plus.as_slice()).unwrap().value;
            let b = ev.e(minus.as_slice()).unwrap().value;
            let on = ev.e(base.as_slice()).unwrap().value;
            assert!((a - b).abs() < 1e-6, "jump {a} vs {b}");
            assert!((a - on).abs() < 1e-6);
        }
    }

    #[test]
    fn radial_and_hermite_agree_away_from_walls() {
        let a = arg(&[vec![1.0, 0.3], vec![-0.2, 0.9]], &[0.8, -1.1]);
        let radial = eval_m(&a, &QuadratureSpec::default()).unwrap();
        let gh = contour_hermite(&a, 96).unwrap();
        assert!((radial.value - gh.re).abs() < 1e-6, "{} vs {}", radial.value, gh.re);
        assert!(gh.im.abs() < 1e-6);
    }
}
