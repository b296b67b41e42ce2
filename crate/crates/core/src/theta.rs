//! Indefinite theta series `θ_μ[φ, λ](τ, b, c)` over `Λ = ℤⁿ`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boosted::{BoostedError, BoostedEvaluator, ConeMatrix};
use crate::cones::{check_cone_pair, kernel_phi_exact, perp_pair, q_minus_for, ConeError, ConePair};
use crate::errfn::QuadratureSpec;
use crate::exact::{dot, rat, rat_from_f64, rat_to_f64, Rat, RatRepr};
use crate::quadform::BilinearForm;
use crate::subset::Subset;

/// Environment variable capping the worker threads used for summation.
pub const THREADS_ENV: &str = "THETA_FORGE_THREADS";

#[derive(Debug, Error)]
pub enum ThetaError {
    #[error("invalid theta spec: {0}")]
    InvalidSpec(String),
    #[error("p is not characteristic: Q(e_{index}) + B(e_{index}, p) is odd")]
    NotCharacteristic { index: usize },
    #[error("cone pair fails the convergence conditions at {0}")]
    ConeCheckFailed(String),
    #[error("no Gaussian decay on the kernel support (rate {rate})")]
    NotConvergent { rate: f64 },
    #[error("point budget exhausted at radius {radius} (tail bound {})", partial.tail_estimate)]
    Budget { radius: f64, partial: Box<ThetaValue> },
    #[error("found {found} nonzero exponents up to {cutoff} within the point budget")]
    ExpansionBudget { found: usize, cutoff: f64 },
    #[error(transparent)]
    Cone(#[from] ConeError),
    #[error(transparent)]
    Boosted(#[from] BoostedError),
}

/// A user kernel with its decay certificate: `|φ(x)| e^{πQ(x)/2} ≤ bound · e^{-π rate P₊(x)/2}`.
#[derive(Clone)]
pub struct UserKernel {
    pub f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    pub rate: f64,
    pub bound: f64,
}

impl fmt::Debug for UserKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UserKernel").field("rate", &self.rate).field("bound", &self.bound).finish()
    }
}

#[derive(Debug, Clone)]
pub enum Kernel {
    /// `φ_r(x) = 2^{-r} Π_j [sign B(c_j,x) - sign B(c'_j,x)]`.
    Holomorphic,
    /// `φ̂_r(x) = 2^{-r} Σ_P (-1)^{r-|P|} E(C^P; x)`.
    Completed,
    User(UserKernel),
}

impl Kernel {
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Holomorphic => "holomorphic",
            Kernel::Completed => "completed",
            Kernel::User(_) => "user",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ThetaSpec {
    pub pair: ConePair,
    pub mu: Vec<Rat>,
    pub p: Vec<i64>,
    pub b: Vec<f64>,
    pub c_ell: Vec<f64>,
    pub tau: Complex64,
    pub lambda: i64,
    pub kernel: Kernel,
    /// Quadrature for the boosted error functions of the completed kernel.
    pub quadrature: QuadratureSpec,
}

impl ThetaSpec {
    /// Spec at `τ = i` with `μ = p = b = c = 0`.
    pub fn new(pair: ConePair, kernel: Kernel) -> Self {
        let n = pair.dim();
        Self { pair, mu: vec![Rat::zero(); n], p: vec![0; n], b: vec![0.0; n], c_ell: vec![0.0; n], tau: Complex64::new(0.0, 1.0), lambda: 0, kernel, quadrature: QuadratureSpec::default() }
    }

    pub fn form(&self) -> &BilinearForm {
        &self.pair.form
    }

    pub fn dim(&self) -> usize {
        self.pair.dim()
    }

    pub fn validate(&self) -> Result<(), ThetaError> {
        let n = self.dim();
        for (name, len) in [("mu", self.mu.len()), ("p", self.p.len()), ("b", self.b.len()), ("c_ell", self.c_ell.len())] {
            if len != n {
                return Err(ThetaError::InvalidSpec(format!("{name} has length {len}, expected {n}")));
            }
        }
        if !(self.tau.im > 0.0) || !self.tau.re.is_finite() || !self.tau.im.is_finite() {
            return Err(ThetaError::InvalidSpec("tau must have positive imaginary part".into()));
        }
        if self.b.iter().chain(&self.c_ell).any(|x| !x.is_finite()) {
            return Err(ThetaError::InvalidSpec("b and c_ell must be finite".into()));
        }
        if !self.pair.form.matrix().is_integral() {
            return Err(ThetaError::InvalidSpec("the bilinear form must be integral".into()));
        }
        if !matches!(self.kernel, Kernel::User(_)) && self.lambda != 0 {
            return Err(ThetaError::InvalidSpec("lambda must be 0 for the built-in kernels".into()));
        }
        let a = self.pair.form.matrix();
        if a.mul_vec(&self.mu).iter().any(|x| !x.is_integer()) {
            return Err(ThetaError::InvalidSpec("mu must lie in the dual lattice".into()));
        }
        let p: Vec<Rat> = self.p.iter().map(|&x| rat(x)).collect();
        let ap = a.mul_vec(&p);
        for i in 0..n {
            let v = &a[(i, i)] + &ap[i];
            if !v.to_integer().is_even() {
                return Err(ThetaError::NotCharacteristic { index: i + 1 });
            }
        }
        self.quadrature.validate().map_err(|e| ThetaError::InvalidSpec(e.to_string()))?;
        if let Kernel::User(u) = &self.kernel {
            if !(u.rate > 0.0) || !(u.bound >= 0.0) {
                return Err(ThetaError::InvalidSpec("user kernel needs rate > 0 and bound >= 0".into()));
            }
        } else {
            let report = check_cone_pair(&self.pair);
            let needed = match self.kernel {
                Kernel::Completed => report.verdict.first_failed.clone(),
                // the holomorphic series only needs the top-level conditions
                _ => report.verdict.first_failed.clone().filter(|f| !f.starts_with("recursion")),
            };
            if let Some(f) = needed {
                return Err(ThetaError::ConeCheckFailed(f));
            }
        }
        Ok(())
    }

    /// `μ + p/2`, the offset of the summation coset.
    pub fn offset(&self) -> Vec<Rat> {
        self.mu.iter().zip(&self.p).map(|(m, &p)| m + Rat::new(p.into(), 2.into())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruncationPolicy {
    pub tol: f64,
    pub initial_radius: f64,
    pub max_points: usize,
}

impl Default for TruncationPolicy {
    fn default() -> Self {
        Self { tol: 1e-8, initial_radius: 2.0, max_points: 10_000_000 }
    }
}

impl TruncationPolicy {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), ThetaError> {
        if !(self.tol > 0.0) || !(self.initial_radius > 0.0) || self.max_points == 0 {
            return Err(ThetaError::InvalidSpec("policy needs tol > 0, initial_radius > 0 and max_points > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThetaValue {
    pub value: Complex64,
    pub n_points: usize,
    pub radius: f64,
    pub tail_estimate: f64,
    /// `Σ |terms|` over the enumerated points.
    pub abs_sum: f64,
    /// Shifted lattice points `k` where some `B(c_j, k+b)` or `B(c'_j, k+b)` vanishes.
    pub wall_hits: Vec<Vec<f64>>,
    /// Support points where `Q_-(k+b) < Q(k+b)`; always empty for a passing pair.
    pub support_violations: usize,
}

/// Precomputed data for summing one spec.
pub struct ThetaPlan {
    spec: ThetaSpec,
    a: DMatrix<f64>,
    upper: DMatrix<f64>,
    majorant: DMatrix<f64>,
    rate: f64,
    sector_factor: f64,
    q_minus: Option<DMatrix<f64>>,
    c: DMatrix<f64>,
    c_prime: DMatrix<f64>,
    completed: Vec<(f64, BoostedEvaluator)>,
    shift: Vec<f64>,
    shift_exact: Vec<Rat>,
}

/// `P₊ = Oᵀ |Λ| O` from the eigendecomposition `A = Oᵀ Λ O`.
pub fn majorant(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let abs = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::abs));
    &eig.eigenvectors * abs * eig.eigenvectors.transpose()
}

/// Smallest `γ` with `x^T N x ≤ -γ x^T P x` for all `x`, i.e. the least eigenvalue of `-N` relative to `P`.
fn relative_rate(n: &DMatrix<f64>, upper: &DMatrix<f64>) -> f64 {
    // P = UᵀU, so the relative eigenvalues are those of U^{-T} (-N) U^{-1}
    let inv = upper.clone().try_inverse().expect("majorant is positive definite");
    let m = inv.transpose() * (-n) * &inv;
    let m = (&m + m.transpose()) * 0.5;
    m.symmetric_eigenvalues().min()
}

fn sector_forms(pair: &ConePair) -> Result<Vec<(usize, DMatrix<f64>)>, ThetaError> {
    let r = pair.rank();
    let a_exact = pair.form.matrix();
    let a = a_exact.to_f64();
    let mut out = Vec::new();
    for s in Subset::all(r) {
        for p in s.subsets() {
            let (pc, pcp) = perp_pair(pair, s, p).ok_or(ConeError::ZeroDelta)?;
            let q_sub = q_minus_for(a_exact, &pc, &pcp)?.to_f64();
            let span = pair.c_sp(s, p).to_f64();
            let n = a.nrows();
            let p1 = if s.is_empty() {
                DMatrix::zeros(n, n)
            } else {
                let g = span.transpose() * &a * &span;
                &span * g.try_inverse().expect("positive definite block") * span.transpose() * &a
            };
            let p2 = DMatrix::identity(n, n) - &p1;
            let form = -(p1.transpose() * &a * &p1) + p2.transpose() * q_sub * &p2;
            out.push((s.len(), form));
        }
    }
    Ok(out)
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl ThetaPlan {
    pub fn new(spec: &ThetaSpec) -> Result<Self, ThetaError> {
        spec.validate()?;
        let a = spec.form().matrix_f64().clone();
        let majorant = majorant(&a);
        let upper = majorant.clone().cholesky().expect("majorant is positive definite").l().transpose();
        let (rate, sector_factor, q_minus) = match &spec.kernel {
            Kernel::Holomorphic => {
                let q = q_minus_for(spec.pair.form.matrix(), &spec.pair.c, &spec.pair.c_prime)?.to_f64();
                (relative_rate(&q, &upper), 1.0, Some(q))
            }
            Kernel::Completed => {
                let sectors = sector_forms(&spec.pair)?;
                let rate = sectors.iter().map(|(_, f)| relative_rate(f, &upper)).fold(f64::INFINITY, f64::min);
                let factor: f64 = sectors.iter().map(|(k, _)| factorial(*k)).sum();
                let q = q_minus_for(spec.pair.form.matrix(), &spec.pair.c, &spec.pair.c_prime)?.to_f64();
                (rate, factor, Some(q))
            }
            Kernel::User(u) => (u.rate, u.bound, None),
        };
        if !(rate > 0.0) {
            return Err(ThetaError::NotConvergent { rate });
        }
        let mut completed = Vec::new();
        if matches!(spec.kernel, Kernel::Completed) {
            let r = spec.pair.rank();
            let quad = spec.quadrature.clone();
            for p in Subset::all(r) {
                let cone = ConeMatrix::new(spec.pair.c_p(p).to_f64(), spec.form())?;
                let sign = if (r - p.len()) % 2 == 0 { 1.0 } else { -1.0 };
                completed.push((sign / f64::powi(2.0, r as i32), BoostedEvaluator::new(&cone, &quad)?));
            }
        }
        let offset = spec.offset();
        let b_exact: Vec<Rat> = spec.b.iter().map(|&x| rat_from_f64(x).expect("finite")).collect();
        let shift_exact: Vec<Rat> = offset.iter().zip(&b_exact).map(|(o, b)| o + b).collect();
        let shift = shift_exact.iter().map(rat_to_f64).collect();
        Ok(Self {
            spec: spec.clone(),
            a,
            upper,
            majorant,
            rate,
            sector_factor,
            q_minus,
            c: spec.pair.c_f64(),
            c_prime: spec.pair.c_prime_f64(),
            completed,
            shift,
            shift_exact,
        })
    }

    /// Decay rate `γ` of the summand relative to the majorant.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn majorant(&self) -> &DMatrix<f64> {
        &self.majorant
    }

    /// Bound on `Σ |term|` over shifted points with `P₊(k+b) > R²`.
    pub fn tail_bound(&self, radius: f64) -> f64 {
        let n = self.a.nrows();
        let a = PI * self.spec.tau.im * self.rate;
        let lmax = self.majorant.symmetric_eigenvalues().max();
        let delta = 0.5 * (n as f64 * lmax).sqrt();
        let det = self.majorant.determinant();
        let omega = PI.powf(n as f64 / 2.0) / libm::tgamma(n as f64 / 2.0 + 1.0);
        let count = |t: f64| omega * (t + delta).powi(n as i32) / det.sqrt();
        // Σ_{P₊ > R²} e^{-a P₊} ≤ ∫_R^∞ 2 a t e^{-a t²} N(t) dt
        let rule = crate::special::gauss_legendre(16);
        let width = 1.0 / a.sqrt();
        let mut total = 0.0;
        let mut lo = radius;
        for panel in 0..10_000 {
            let hi = lo + width;
            let mut part = 0.0;
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                let t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
                part += w * 0.5 * (hi - lo) * 2.0 * a * t * (-a * t * t).exp() * count(t);
            }
            total += part;
            lo = hi;
            if panel > 4 && lo * lo * a > n as f64 && part <= 1e-18 * total.max(1e-300) {
                break;
            }
        }
        self.sector_factor * self.prefactor() * total
    }

    fn prefactor(&self) -> f64 {
        self.spec.tau.im.powf(-(self.spec.lambda as f64) / 2.0)
    }

    /// Smallest radius `initial · 2^j` whose tail bound is below `tol`.
    pub fn radius_for(&self, policy: &TruncationPolicy) -> f64 {
        let mut r = policy.initial_radius;
        for _ in 0..60 {
            if self.tail_bound(r) < policy.tol {
                return r;
            }
            r *= 2.0;
        }
        r
    }

    /// Volume estimate of the number of shifted points with `P₊ ≤ R²`.
    pub fn estimated_points(&self, radius: f64) -> f64 {
        let n = self.a.nrows();
        let omega = PI.powf(n as f64 / 2.0) / libm::tgamma(n as f64 / 2.0 + 1.0);
        omega * radius.powi(n as i32) / self.majorant.determinant().sqrt()
    }

    /// Integer points `m` with `P₊(m + s) ≤ R²`, where `s = μ + p/2 + b`, in lexicographic order
    /// of the reversed coordinates. Returns `None` once more than `cap` points are found.
    pub fn enumerate(&self, radius: f64, cap: usize) -> Option<Vec<Vec<i64>>> {
        let n = self.a.nrows();
        let mut out = Vec::new();
        let mut m = vec![0i64; n];
        let r2 = radius * radius * (1.0 + 1e-12) + 1e-12;
        if enumerate_level(&self.upper, &self.shift, n, r2, &mut m, &mut out, cap) {
            Some(out)
        } else {
            None
        }
    }

    fn point(&self, m: &[i64]) -> Vec<f64> {
        m.iter().zip(&self.shift).map(|(&mi, s)| mi as f64 + s).collect()
    }

    /// Kernel value at `y = k + b` together with a wall flag.
    fn kernel_at(&self, m: &[i64], y: &[f64]) -> Result<(f64, bool), ThetaError> {
        let scale = (2.0 * self.spec.tau.im).sqrt();
        match &self.spec.kernel {
            Kernel::Holomorphic => Ok(self.phi(m, y)),
            Kernel::Completed => {
                let x: Vec<f64> = y.iter().map(|v| v * scale).collect();
                let mut total = 0.0;
                for (coef, ev) in &self.completed {
                    total += coef * ev.e(&x)?.value;
                }
                Ok((total, self.phi(m, y).1))
            }
            Kernel::User(u) => {
                let x: Vec<f64> = y.iter().map(|v| v * scale).collect();
                Ok(((u.f)(&x), false))
            }
        }
    }

    /// `φ_r(y)` with exact sign resolution for arguments close to zero.
    fn phi(&self, m: &[i64], y: &[f64]) -> (f64, bool) {
        let ay = &self.a * DVector::from_column_slice(y);
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut value = 1.0;
        let mut wall = false;
        let mut exact_ay: Option<Vec<Rat>> = None;
        for j in 0..self.c.ncols() {
            let mut signs = [0.0; 2];
            for (slot, cols) in [&self.c, &self.c_prime].into_iter().enumerate() {
                let col = cols.column(j);
                let v = col.dot(&ay);
                let tol = 1e-9 * (col.norm() * self.a.norm() * ynorm + 1.0);
                signs[slot] = if v.abs() > tol {
                    v.signum()
                } else {
                    let ay_exact = exact_ay.get_or_insert_with(|| {
                        let y_exact: Vec<Rat> = m.iter().zip(&self.shift_exact).map(|(&mi, s)| rat(mi) + s).collect();
                        self.spec.pair.form.matrix().mul_vec(&y_exact)
                    });
                    let col_exact = if slot == 0 { self.spec.pair.c.column(j) } else { self.spec.pair.c_prime.column(j) };
                    let e = dot(&col_exact, ay_exact);
                    if e.is_zero() {
                        wall = true;
                        0.0
                    } else if e.is_positive() {
                        1.0
                    } else {
                        -1.0
                    }
                };
            }
            value *= 0.5 * (signs[0] - signs[1]);
        }
        (value, wall)
    }

    /// Summand at the lattice point `m`, and its wall flag.
    fn term(&self, m: &[i64]) -> Result<(Complex64, bool, bool), ThetaError> {
        let y = self.point(m);
        let (phi, wall) = self.kernel_at(m, &y)?;
        if phi == 0.0 {
            return Ok((Complex64::zero(), wall, false));
        }
        let yv = DVector::from_column_slice(&y);
        let ay = &self.a * &yv;
        let q = yv.dot(&ay);
        let violation = match (&self.spec.kernel, &self.q_minus) {
            (Kernel::Holomorphic, Some(qm)) => {
                let qmv = (qm * &yv).dot(&yv);
                qmv < q - 1e-9 * (1.0 + q.abs())
            }
            _ => false,
        };
        let tau = self.spec.tau;
        // e^{πiB(k,p)}: B(m,p) is an integer, the offset part is a fixed phase
        let ap: i64 = {
            let mut s = 0i64;
            for i in 0..m.len() {
                for j in 0..m.len() {
                    s += m[i] * self.a[(i, j)] as i64 * self.spec.p[j];
                }
            }
            s
        };
        let k: Vec<f64> = y.iter().zip(&self.spec.b).map(|(yi, bi)| yi - bi).collect();
        let half: Vec<f64> = k.iter().zip(&self.spec.b).map(|(ki, bi)| ki + bi / 2.0).collect();
        let c_term = DVector::from_column_slice(&self.spec.c_ell).dot(&(&self.a * DVector::from_column_slice(&half)));
        let angle = PI * (ap.rem_euclid(2) as f64) + PI * self.offset_phase() - PI * tau.re * q + 2.0 * PI * c_term;
        let modulus = phi * (PI * tau.im * q).exp();
        Ok((Complex64::from_polar(modulus, angle.rem_euclid(2.0 * PI)), wall, violation))
    }

    /// `B(μ + p/2, p)` reduced mod 2.
    fn offset_phase(&self) -> f64 {
        let p: Vec<Rat> = self.spec.p.iter().map(|&x| rat(x)).collect();
        let v = dot(&self.spec.offset(), &self.spec.pair.form.matrix().mul_vec(&p));
        rat_to_f64(&mod_two(&v))
    }

    /// Sum over all points with `P₊(k+b) ≤ R²`.
    pub fn sum_at_radius(&self, radius: f64, cap: usize) -> Result<ThetaValue, ThetaError> {
        let points = match self.enumerate(radius, cap) {
            Some(p) => p,
            None => {
                let partial = self.sum_points(&self.enumerate_capped(radius, cap), radius)?;
                return Err(ThetaError::Budget { radius, partial: Box::new(partial) });
            }
        };
        self.sum_points(&points, radius)
    }

    fn enumerate_capped(&self, radius: f64, cap: usize) -> Vec<Vec<i64>> {
        let mut r = radius;
        loop {
            r /= 2.0;
            if let Some(p) = self.enumerate(r, cap) {
                return p;
            }
        }
    }

    fn sum_points(&self, points: &[Vec<i64>], radius: f64) -> Result<ThetaValue, ThetaError> {
        let terms: Vec<Result<(Complex64, bool, bool), ThetaError>> = with_pool(|| points.par_iter().map(|m| self.term(m)).collect());
        let mut values = Vec::with_capacity(terms.len());
        let mut wall_hits = Vec::new();
        let mut violations = 0;
        for (m, t) in points.iter().zip(terms) {
            let (v, wall, violation) = t?;
            if wall {
                wall_hits.push(self.point(m).iter().zip(&self.spec.b).map(|(y, b)| y - b).collect());
            }
            violations += violation as usize;
            values.push(v);
        }
        let abs: Vec<f64> = values.iter().map(|v| v.norm()).collect();
        let pref = self.prefactor();
        Ok(ThetaValue {
            value: pairwise_sum(&values) * pref,
            n_points: points.len(),
            radius,
            tail_estimate: self.tail_bound(radius),
            abs_sum: pairwise_sum_real(&abs) * pref,
            wall_hits,
            support_violations: violations,
        })
    }
}

fn enumerate_level(u: &DMatrix<f64>, s: &[f64], level: usize, rem: f64, m: &mut Vec<i64>, out: &mut Vec<Vec<i64>>, cap: usize) -> bool {
    if level == 0 {
        if out.len() >= cap {
            return false;
        }
        out.push(m.clone());
        return true;
    }
    let i = level - 1;
    let n = s.len();
    let mut partial = 0.0;
    for j in level..n {
        partial += u[(i, j)] * (m[j] as f64 + s[j]);
    }
    let uii = u[(i, i)];
    let center = -s[i] - partial / uii;
    let half = rem.max(0.0).sqrt() / uii;
    let lo = (center - half).ceil() as i64;
    let hi = (center + half).floor() as i64;
    for mi in lo..=hi {
        m[i] = mi;
        let t = uii * (mi as f64 + s[i]) + partial;
        let next = rem - t * t;
        if next < 0.0 {
            continue;
        }
        if !enumerate_level(u, s, level - 1, next, m, out, cap) {
            return false;
        }
    }
    m[i] = 0;
    true
}

fn mod_two(v: &Rat) -> Rat {
    let two = rat(2);
    let q = (v / &two).floor();
    v - q * two
}

fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()) {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

/// Pairwise summation; the grouping depends only on the length.
pub fn pairwise_sum(v: &[Complex64]) -> Complex64 {
    if v.len() <= 8 {
        return v.iter().fold(Complex64::zero(), |a, b| a + b);
    }
    let (l, r) = v.split_at(v.len() / 2);
    pairwise_sum(l) + pairwise_sum(r)
}

fn pairwise_sum_real(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (l, r) = v.split_at(v.len() / 2);
    pairwise_sum_real(l) + pairwise_sum_real(r)
}

/// `θ_μ[φ, λ](τ, b, c)` with the radius chosen from the tail bound.
pub fn eval_theta(spec: &ThetaSpec, policy: &TruncationPolicy) -> Result<ThetaValue, ThetaError> {
    policy.validate()?;
    let plan = ThetaPlan::new(spec)?;
    let radius = plan.radius_for(policy);
    let value = plan.sum_at_radius(radius, policy.max_points)?;
    if value.tail_estimate > policy.tol {
        return Err(ThetaError::Budget { radius, partial: Box::new(value) });
    }
    Ok(value)
}

/// Sum over the fixed ball `P₊(k+b) ≤ R²`.
pub fn eval_theta_at_radius(spec: &ThetaSpec, radius: f64, max_points: usize) -> Result<ThetaValue, ThetaError> {
    ThetaPlan::new(spec)?.sum_at_radius(radius, max_points)
}

/// One term `c · e^{πi·phase} q^{exponent}` of the holomorphic q-expansion.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QTerm {
    pub exponent: RatRepr,
    /// The coefficient multiplies `e^{πi·phase}`, with `phase ∈ [0, 2)`.
    pub phase: RatRepr,
    pub coefficient: RatRepr,
    pub wall_hit: bool,
}

impl QTerm {
    pub fn is_integral(&self) -> bool {
        self.coefficient.to_rat().map(|c| c.is_integer()).unwrap_or(false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QExpansion {
    pub terms: Vec<QTerm>,
    pub n_points: usize,
    pub radius: f64,
    pub support_violations: usize,
}

/// The first `n_terms` exponents of the holomorphic series with nonzero coefficient.
pub fn q_expansion(spec: &ThetaSpec, n_terms: usize, max_points: usize) -> Result<QExpansion, ThetaError> {
    q_expansion_scaled(spec, n_terms, max_points, 1.0)
}

/// As [`q_expansion`] but enumerating `radius_scale` times further than needed.
pub fn q_expansion_scaled(spec: &ThetaSpec, n_terms: usize, max_points: usize, radius_scale: f64) -> Result<QExpansion, ThetaError> {
    if !matches!(spec.kernel, Kernel::Holomorphic) {
        return Err(ThetaError::InvalidSpec("q-expansion needs the holomorphic kernel".into()));
    }
    if spec.b.iter().chain(&spec.c_ell).any(|&x| x != 0.0) {
        return Err(ThetaError::InvalidSpec("q-expansion needs b = c = 0".into()));
    }
    let plan = ThetaPlan::new(spec)?;
    let a = spec.pair.form.matrix();
    let q_minus = q_minus_for(a, &spec.pair.c, &spec.pair.c_prime)?;
    let p: Vec<Rat> = spec.p.iter().map(|&x| rat(x)).collect();
    let ap = a.mul_vec(&p);
    // on the support -Q(k)/2 ≥ γ P₊(k)/2, so exponents up to X live in P₊ ≤ 2X/γ
    let gamma = plan.rate * (1.0 - 1e-9);
    let mut cutoff = 1.0f64;
    let mut found = 0;
    loop {
        let radius = (2.0 * cutoff / gamma).sqrt() * radius_scale;
        let Some(points) = plan.enumerate(radius, max_points) else {
            return Err(ThetaError::ExpansionBudget { found, cutoff });
        };
        let mut groups: BTreeMap<(Rat, Rat), (Rat, bool)> = BTreeMap::new();
        let mut violations = 0;
        for m in &points {
            let y = plan.point(m);
            let (approx, _) = plan.phi(m, &y);
            if approx == 0.0 {
                continue;
            }
            let k: Vec<Rat> = m.iter().zip(&plan.shift_exact).map(|(&mi, s)| rat(mi) + s).collect();
            let (phi, wall) = kernel_phi_exact(&spec.pair, &k);
            if phi.is_zero() {
                continue;
            }
            let q = a.bilinear(&k, &k);
            if q_minus.bilinear(&k, &k) < q {
                violations += 1;
            }
            let exponent = -q / rat(2);
            if rat_to_f64(&exponent) > cutoff {
                continue;
            }
            let phase = mod_two(&dot(&k, &ap));
            let (phase, sign) = if phase >= Rat::one() { (phase - Rat::one(), -1) } else { (phase, 1) };
            let entry = groups.entry((exponent, phase)).or_insert((Rat::zero(), false));
            entry.0 += phi * rat(sign);
            entry.1 |= wall;
        }
        groups.retain(|_, (c, _)| !c.is_zero());
        let mut exponents: Vec<&Rat> = groups.keys().map(|(e, _)| e).collect();
        exponents.dedup();
        found = exponents.len();
        if found >= n_terms {
            let keep: Vec<Rat> = exponents.into_iter().take(n_terms).cloned().collect();
            let terms = groups
                .into_iter()
                .filter(|((e, _), _)| keep.contains(e))
                .map(|((e, ph), (c, wall))| QTerm { exponent: (&e).into(), phase: (&ph).into(), coefficient: (&c).into(), wall_hit: wall })
                .collect();
            return Ok(QExpansion { terms, n_points: points.len(), radius, support_violations: violations });
        }
        cutoff *= 2.0;
    }
}

/// Representatives of `Λ*/Λ = A^{-1}ℤⁿ / ℤⁿ` with entries in `[0, 1)`.
pub fn discriminant_classes(form: &BilinearForm) -> Vec<Vec<Rat>> {
    let a = form.matrix();
    let n = a.rows();
    let inv = a.inverse().expect("nondegenerate form");
    let det = a.det().abs().to_integer();
    let size: i64 = det.try_into().expect("small discriminant");
    let mut classes: Vec<Vec<Rat>> = Vec::new();
    let mut v = vec![0i64; n];
    loop {
        let x = inv.mul_vec(&v.iter().map(|&t| rat(t)).collect::<Vec<_>>());
        let frac: Vec<Rat> = x.iter().map(|t| t - t.floor()).collect();
        if !classes.contains(&frac) {
            classes.push(frac);
        }
        let mut i = 0;
        loop {
            if i == n {
                classes.sort();
                return classes;
            }
            v[i] += 1;
            if v[i] < size {
                break;
            }
            v[i] = 0;
            i += 1;
        }
    }
}

/// Outcome of the `τ → -1/τ` comparison at `τ = i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SLawReport {
    pub classes: Vec<Vec<RatRepr>>,
    pub lhs: Vec<Complex64>,
    pub rhs: Vec<Complex64>,
    /// Unimodular constant fitted from the largest right-hand side.
    pub constant: Complex64,
    pub max_deviation: f64,
    pub tail_estimate: f64,
}

impl SLawReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_deviation <= tol && (self.constant.norm() - 1.0).abs() <= tol
    }
}

/// Compares `θ_μ(-1/τ, c, -b)` with
/// `i^{λ+r} (-iτ)^{λ+n/2} |Λ*/Λ|^{-1/2} e^{πiQ(p)/2} Σ_ν e^{2πiB(μ,ν)} θ_ν(τ, b, c)` at `τ = i`.
pub fn s_law_check(base: &ThetaSpec, policy: &TruncationPolicy) -> Result<SLawReport, ThetaError> {
    let classes = discriminant_classes(base.form());
    let n = base.dim();
    let r = base.form().signature().0;
    let tau = Complex64::new(0.0, 1.0);
    let a = base.form().matrix();
    let spec_for = |mu: &[Rat], b: &[f64], c: &[f64]| {
        let mut s = base.clone();
        s.mu = mu.to_vec();
        s.b = b.to_vec();
        s.c_ell = c.to_vec();
        s.tau = tau;
        s
    };
    let neg_b: Vec<f64> = base.b.iter().map(|x| -x).collect();
    let mut theta_here = Vec::new();
    let mut lhs = Vec::new();
    let mut tail: f64 = 0.0;
    for mu in &classes {
        let v = eval_theta(&spec_for(mu, &base.b, &base.c_ell), policy)?;
        tail = tail.max(v.tail_estimate);
        theta_here.push(v.value);
        let l = eval_theta(&spec_for(mu, &base.c_ell, &neg_b), policy)?;
        tail = tail.max(l.tail_estimate);
        lhs.push(l.value);
    }
    let weight = base.lambda as f64 + n as f64 / 2.0;
    let p: Vec<Rat> = base.p.iter().map(|&x| rat(x)).collect();
    let qp = rat_to_f64(&a.bilinear(&p, &p));
    let i_pow = Complex64::new(0.0, 1.0).powf(base.lambda as f64 + r as f64);
    let pref = i_pow * (-Complex64::new(0.0, 1.0) * tau).powf(weight) / (classes.len() as f64).sqrt() * Complex64::from_polar(1.0, PI * qp / 2.0);
    let rhs: Vec<Complex64> = classes
        .iter()
        .map(|mu| {
            let s: Complex64 = classes
                .iter()
                .zip(&theta_here)
                .map(|(nu, th)| Complex64::from_polar(1.0, 2.0 * PI * rat_to_f64(&mod_two(&a.bilinear(mu, nu)))) * th)
                .sum();
            pref * s
        })
        .collect();
    let (best, _) = rhs.iter().enumerate().fold((0, -1.0), |acc, (i, v)| if v.norm() > acc.1 { (i, v.norm()) } else { acc });
    let constant = if rhs[best].norm() > 0.0 { lhs[best] / rhs[best] } else { Complex64::one() };
    let max_deviation = lhs.iter().zip(&rhs).map(|(l, r)| (l - constant * r).norm()).fold(0.0, f64::max);
    Ok(SLawReport { classes: classes.iter().map(|c| c.iter().map(RatRepr::from).collect()).collect(), lhs, rhs, constant, max_deviation, tail_estimate: tail })
}

/// `φ̂_r` at a single point, evaluated like the summand.
pub fn kernel_phi_hat(pair: &ConePair, x: &[f64]) -> Result<f64, ThetaError> {
    let r = pair.rank();
    let quad = QuadratureSpec::default();
    let mut total = 0.0;
    for p in Subset::all(r) {
        let cone = ConeMatrix::new(pair.c_p(p).to_f64(), &pair.form)?;
        let sign = if (r - p.len()) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * BoostedEvaluator::new(&cone, &quad)?.e(x)?.value;
    }
    Ok(total / f64::powi(2.0, r as i32))
}

/// `φ_r` at a real point, `sign(0) = 0`.
pub fn kernel_phi(pair: &ConePair, x: &[f64]) -> f64 {
    let ax = pair.form.matrix_f64() * DVector::from_column_slice(x);
    let (c, cp) = (pair.c_f64(), pair.c_prime_f64());
    (0..pair.rank())
        .map(|j| 0.5 * (crate::special::sign(c.column(j).dot(&ax)) - crate::special::sign(cp.column(j).dot(&ax))))
        .product()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerate_identity(radius: f64, shift: &[f64]) -> Vec<Vec<i64>> {
        let mut out = Vec::new();
        let mut m = vec![0; shift.len()];
        enumerate_level(&DMatrix::identity(shift.len(), shift.len()), shift, shift.len(), radius * radius, &mut m, &mut out, 1000);
        out
    }

    #[test]
    fn box_count_with_identity_majorant() {
        let pts = enumerate_identity(1.5, &[0.0, 0.0]);
        assert_eq!(pts.len(), 9);
        assert!(pts.iter().all(|m| m.iter().all(|x| x.abs() <= 1)));
    }

    #[test]
    fn tiny_radius_gives_origin() {
        assert_eq!(enumerate_identity(0.1, &[0.0, 0.0]), vec![vec![0, 0]]);
        assert_eq!(enumerate_identity(0.1, &[0.5, 0.0]), Vec::<Vec<i64>>::new());
    }

    #[test]
    fn lorentzian_majorant_is_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!((majorant(&a) - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<Complex64> = (0..1000).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let s = pairwise_sum(&v);
        assert!((s.re - 499500.0).abs() < 1e-9);
    }

    #[test]
    fn mod_two_range() {
        assert_eq!(mod_two(&rat(-3)), rat(1));
        assert_eq!(mod_two(&crate::exact::rat_frac(7, 2)), crate::exact::rat_frac(3, 2));
    }
}
