//! Identity checks with tolerances, and the exact sign lemma engine.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::boosted::{boosted_decompositions, build_cone, vigneras_residual_boosted, BoostedArgument, ConeMatrix};
use crate::cones::{build_a4_example, build_lattice_r1_example, build_r1_example, check_cone_pair, determinant_identity};
use crate::errfn::{
    bound_check, bound_check_scaled, decompose_e_into_m, decompose_m_into_e, discontinuity_limit, eval_e, eval_e_oracle_mc, eval_m,
    sum_decomposition, vigneras_residual, ErrFnArgument, FrameEvaluator, Kind, QuadratureSpec,
};
use crate::exact::{rat, rat_frac, rat_from_f64, Rat, RatMatrix};
use crate::quadform::{BilinearForm, ErrorFunctionFrame};
use crate::special::{erf, erfc};
use crate::subset::Subset;
use crate::theta::{discriminant_classes, eval_theta, eval_theta_at_radius, q_expansion, q_expansion_scaled, s_law_check, Kernel, ThetaSpec, TruncationPolicy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("a sign argument vanishes for S = {subset}")]
    GenericityViolated { subset: Subset },
    #[error("G must be a positive definite square matrix matching v")]
    NotPositiveDefinite,
    #[error("N must be a nonempty subset of the frame indices")]
    InvalidSubset,
}

/// Positive definite `G` with a vector `v`, both exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SignLemmaInstance {
    pub g: RatMatrix,
    pub v: Vec<Rat>,
}

impl SignLemmaInstance {
    pub fn new(g: RatMatrix, v: Vec<Rat>) -> Result<Self, VerifyError> {
        if !g.is_square() || g.rows() != v.len() || !g.is_symmetric() || !g.inertia().is_positive_definite() {
            return Err(VerifyError::NotPositiveDefinite);
        }
        Ok(Self { g, v })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// `[-G_SS^{-1} v_S ; v_Ŝ - G_ŜS G_SS^{-1} v_S]`, ordered as `S` then its complement.
    pub fn transformed(&self, s: Subset) -> Vec<Rat> {
        let n = self.dim();
        let si = s.indices();
        let hat = s.complement(n).indices();
        let g_ss = self.g.submatrix(&si, &si);
        let v_s: Vec<Rat> = si.iter().map(|&i| self.v[i].clone()).collect();
        let y = if si.is_empty() {
            vec![]
        } else {
            let sol = g_ss.solve(&RatMatrix::column_vector(&v_s)).expect("positive definite block");
            sol.column(0)
        };
        let mut out: Vec<Rat> = y.iter().map(|t| -t).collect();
        for &h in &hat {
            let row: Vec<Rat> = si.iter().map(|&i| self.g[(h, i)].clone()).collect();
            out.push(&self.v[h] - crate::exact::dot(&row, &y));
        }
        out
    }
}

/// `Σ_S sign Π [-G_SS^{-1} v_S ; v_Ŝ - G_ŜS G_SS^{-1} v_S]`.
pub fn sign_lemma_sum(inst: &SignLemmaInstance) -> Result<i64, VerifyError> {
    let mut total = 0i64;
    for s in Subset::all(inst.dim()) {
        let mut sgn = 1i64;
        for x in inst.transformed(s) {
            if x.is_zero() {
                return Err(VerifyError::GenericityViolated { subset: s });
            }
            if x.is_negative() {
                sgn = -sgn;
            }
        }
        total += sgn;
    }
    Ok(total)
}

/// `Σ_{S⊆N} (-1)^{|S|} sign(M_S^T P_S^T P_S u) sign(W_{N/S}^T Q_{[r]/S}^T Q_{[r]/S} u)` in exact arithmetic
/// on the binary values of the frame and `u`.
pub fn sign_identity_specialized(frame: &ErrorFunctionFrame, u: &[f64], n: Subset) -> Result<i64, VerifyError> {
    let r = frame.rank();
    if n.is_empty() || !n.is_subset_of(Subset::full(r)) || u.len() != r {
        return Err(VerifyError::InvalidSubset);
    }
    let w = frame.w();
    let ni = n.indices();
    let w_exact = RatMatrix::from_fn(r, ni.len(), |i, j| rat_from_f64(w[(i, ni[j])]).expect("finite frame"));
    let u_exact: Vec<Rat> = u.iter().map(|&x| rat_from_f64(x).expect("finite point")).collect();
    let g = w_exact.transpose().mul(&w_exact);
    let v = w_exact.transpose().mul_vec(&u_exact);
    let uv = DVector::from_column_slice(u);
    let wn = frame.w_sub(n);
    // a float pre-check so that near-degenerate inputs are rejected rather than decided by rounding
    let gf = wn.transpose() * &wn;
    let vf = wn.transpose() * &uv;
    let k = ni.len();
    let mut total = 0i64;
    for s in Subset::all(k) {
        let si = s.indices();
        let hat = s.complement(k).indices();
        let mut sgn = if s.len() % 2 == 0 { 1i64 } else { -1i64 };
        let y = if si.is_empty() {
            vec![]
        } else {
            g.submatrix(&si, &si).solve(&RatMatrix::column_vector(&si.iter().map(|&i| v[i].clone()).collect::<Vec<_>>())).expect("positive definite").column(0)
        };
        let yf = if si.is_empty() {
            DVector::zeros(0)
        } else {
            let gs = DMatrix::from_fn(si.len(), si.len(), |a, b| gf[(si[a], si[b])]);
            let vs = DVector::from_fn(si.len(), |a, _| vf[si[a]]);
            gs.lu().solve(&vs).unwrap_or_else(|| DVector::zeros(si.len()))
        };
        let mut args: Vec<(Rat, f64)> = y.iter().cloned().zip(yf.iter().copied()).collect();
        for &h in &hat {
            let row: Vec<Rat> = si.iter().map(|&i| g[(h, i)].clone()).collect();
            let exact = &v[h] - crate::exact::dot(&row, &y);
            let approx = vf[h] - si.iter().enumerate().map(|(a, &i)| gf[(h, i)] * yf[a]).sum::<f64>();
            args.push((exact, approx));
        }
        for (exact, approx) in args {
            if exact.is_zero() || approx.abs() < 1e-10 {
                return Err(VerifyError::GenericityViolated { subset: s });
            }
            if exact.is_negative() {
                sgn = -sgn;
            }
        }
        total += sgn;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub inputs: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(name: &str, inputs: String, residual: f64, tolerance: f64) -> Self {
        Self { name: name.to_string(), inputs, residual, tolerance, pass: residual <= tolerance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    fn pick(self, fast: usize, full: usize) -> usize {
        match self {
            Level::Fast => fast,
            Level::Full => full,
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Frame with entries in `[-1, 1]` and condition number below 20.
pub fn random_frame(rng: &mut impl Rng, r: usize) -> ErrorFunctionFrame {
    loop {
        let m = DMatrix::from_fn(r, r, |_, _| rng.gen_range(-1.0..1.0));
        let sv = m.clone().singular_values();
        if sv.max() / sv.min() < 20.0 {
            return ErrorFunctionFrame::new(m).expect("well conditioned");
        }
    }
}

/// Point in `[-1.5, 1.5]^r` whose relative distance to every wall exceeds `margin`.
pub fn generic_point(rng: &mut impl Rng, frame: &ErrorFunctionFrame, margin: f64) -> Vec<f64> {
    let r = frame.rank();
    loop {
        let u = DVector::from_fn(r, |_, _| rng.gen_range(-1.5..1.5));
        let ok = (0..r).all(|j| {
            let w = frame.w_col(j);
            w.dot(&u).abs() / w.norm() > margin * u.norm().max(0.1)
        });
        if ok {
            return u.iter().copied().collect();
        }
    }
}

/// Positive definite `L Lᵀ + I` with small integer `L`, and a rational vector.
pub fn random_sign_lemma_instance(rng: &mut impl Rng, n: usize) -> SignLemmaInstance {
    loop {
        let l = RatMatrix::from_fn(n, n, |_, _| rat(rng.gen_range(-3..=3)));
        let g = l.mul(&l.transpose()).add(&RatMatrix::identity(n));
        let v: Vec<Rat> = (0..n).map(|_| rat_frac(rng.gen_range(-50..=50), rng.gen_range(1..=9))).collect();
        let inst = SignLemmaInstance::new(g, v).expect("positive definite by construction");
        if Subset::all(n).all(|s| inst.transformed(s).iter().all(|x| !x.is_zero())) {
            return inst;
        }
    }
}

fn cone_in_form(rng: &mut impl Rng, form: &BilinearForm, s: usize) -> DMatrix<f64> {
    let n = form.dim();
    let eig = form.matrix_f64().clone().symmetric_eigen();
    let pos: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
    let neg: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] < 0.0).collect();
    loop {
        let mut c = DMatrix::zeros(n, s);
        for j in 0..s {
            for &k in &pos {
                c.column_mut(j).axpy(rng.gen_range(-1.0..1.0) / eig.eigenvalues[k].sqrt(), &eig.eigenvectors.column(k), 1.0);
            }
            for &k in &neg {
                c.column_mut(j).axpy(rng.gen_range(-0.3..0.3) / (-eig.eigenvalues[k]).sqrt(), &eig.eigenvectors.column(k), 1.0);
            }
        }
        let ev = (c.transpose() * form.matrix_f64() * &c).symmetric_eigenvalues();
        if ev.min() > 0.05 * ev.max() && ev.min() > 0.05 {
            return c;
        }
    }
}

/// Random boosted argument on `diag(1, .., 1, -1, ..)` with `s` cone vectors, away from the `d`-walls.
pub fn random_boosted_argument(rng: &mut impl Rng, n: usize, positive: usize, s: usize) -> BoostedArgument {
    let rows: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| if i != j { 0 } else if i < positive { 1 } else { -1 }).collect()).collect();
    let form = BilinearForm::from_rows(&rows).expect("diagonal form");
    let cone = build_cone(&cone_in_form(rng, &form, s), &form).expect("timelike cone");
    loop {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if far_from_d_walls(&cone, &x) {
            return BoostedArgument::new(cone, &x).expect("matching dimension");
        }
    }
}

fn far_from_d_walls(cone: &ConeMatrix, x: &[f64]) -> bool {
    let d = cone.d();
    let a = cone.form_matrix();
    cone.d_pairings(x).iter().enumerate().all(|(j, v)| {
        let dj = d.column(j).into_owned();
        v.abs() > 1e-2 * (dj.transpose() * a * &dj)[0].abs().sqrt()
    })
}

type Check = Box<dyn Fn(Level, u64) -> CheckReport + Send + Sync>;

fn checks() -> Vec<(&'static str, Check)> {
    vec![
        ("cones.a4_example", Box::new(check_a4)),
        ("cones.determinant_identity", Box::new(check_determinant_identity)),
        ("cones.r1_example", Box::new(check_r1)),
        ("errfn.bound", Box::new(check_bound)),
        ("errfn.bound_mutation_detected", Box::new(check_bound_mutation)),
        ("errfn.closed_forms", Box::new(check_closed_forms)),
        ("errfn.decomposition_closure", Box::new(check_decomposition_closure)),
        ("errfn.discontinuity", Box::new(check_discontinuity)),
        ("errfn.discontinuity_cancellation", Box::new(check_discontinuity_cancellation)),
        ("errfn.mc_oracle", Box::new(check_mc_oracle)),
        ("errfn.vigneras", Box::new(check_vigneras)),
        ("boosted.decomposition", Box::new(check_boosted_decomposition)),
        ("boosted.vigneras", Box::new(check_boosted_vigneras)),
        ("theta.convergence", Box::new(check_theta_convergence)),
        ("theta.elliptic_laws", Box::new(check_elliptic)),
        ("theta.q_expansion", Box::new(check_q_expansion)),
        ("theta.t_law", Box::new(check_t_law)),
        ("verify.sign_lemma", Box::new(check_sign_lemma)),
        ("verify.sign_identity_specialized", Box::new(check_specialized)),
    ]
}

/// Runs every check; the reports are sorted by name and depend only on `level` and `seed`.
pub fn run_suite(level: Level, seed: u64) -> Vec<CheckReport> {
    let mut all = checks();
    if level == Level::Full {
        all.push(("theta.s_law", Box::new(check_s_law)));
    }
    let mut reports: Vec<CheckReport> = all.par_iter().map(|(_, f)| f(level, seed)).collect();
    reports.sort_by(|a, b| a.name.cmp(&b.name));
    reports
}

fn failed(name: &str, inputs: String, err: impl std::fmt::Display) -> CheckReport {
    CheckReport { name: name.to_string(), inputs: format!("{inputs}; error: {err}"), residual: f64::INFINITY, tolerance: 0.0, pass: false }
}

fn quad() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn check_closed_forms(_: Level, _: u64) -> CheckReport {
    let mut worst: f64 = 0.0;
    for k in 1..=30 {
        for sgn in [1.0, -1.0] {
            let u = sgn * 0.1 * k as f64;
            let arg = ErrFnArgument::new(ErrorFunctionFrame::identity(1), &[u]).expect("rank one");
            let e = eval_e(&arg, &quad()).map(|v| v.value).unwrap_or(f64::NAN);
            let m = eval_m(&arg, &quad()).map(|v| v.value).unwrap_or(f64::NAN);
            worst = worst.max((e - erf(PI.sqrt() * u)).abs()).max((m + sgn * erfc(PI.sqrt() * u.abs())).abs());
        }
    }
    CheckReport::new("errfn.closed_forms", "u in ±{0.1,..,3}".into(), worst, 1e-10)
}

fn check_decomposition_closure(level: Level, seed: u64) -> CheckReport {
    let name = "errfn.decomposition_closure";
    let mut rng = rng(seed, 1);
    let count = level.pick(30, 200);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let r = 1 + i % 3;
        let f = random_frame(&mut rng, r);
        let u = generic_point(&mut rng, &f, 1e-3);
        let arg = ErrFnArgument::new(f, &u).expect("rank matches");
        let run = || -> Result<f64, crate::errfn::ErrFnError> {
            let m = eval_m(&arg, &quad())?.value;
            let via_e = sum_decomposition(&decompose_m_into_e(&arg, &quad())?).value;
            let e = eval_e(&arg, &quad())?.value;
            let via_m = sum_decomposition(&decompose_e_into_m(&arg, &quad())?).value;
            Ok((m - via_e).abs().max((e - via_m).abs()))
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => return failed(name, format!("instance {i}"), e),
        }
    }
    CheckReport::new(name, format!("{count} frames, r <= 3, seed {seed}"), worst, 1e-7)
}

fn check_mc_oracle(level: Level, seed: u64) -> CheckReport {
    let name = "errfn.mc_oracle";
    let mut rng = rng(seed, 2);
    let (count, samples) = match level {
        Level::Fast => (6, 1_000_000),
        Level::Full => (200, 4_000_000),
    };
    let mut outside = 0usize;
    let mut worst_z: f64 = 0.0;
    for i in 0..count {
        let r = 2 + i % 2;
        let f = random_frame(&mut rng, r);
        let u = generic_point(&mut rng, &f, 1e-3);
        let arg = ErrFnArgument::new(f, &u).expect("rank matches");
        let (e, mc) = match (eval_e(&arg, &quad()), eval_e_oracle_mc(&arg, samples, seed.wrapping_add(i as u64))) {
            (Ok(e), Ok(mc)) => (e, mc),
            (Err(e), _) | (_, Err(e)) => return failed(name, format!("instance {i}"), e),
        };
        let z = (e.value - mc.value).abs() / mc.stderr.max(1e-300);
        worst_z = worst_z.max(z);
        if z > 3.0 {
            outside += 1;
        }
    }
    // at most 1% of the instances may fall outside 3 standard errors
    let allowed = (count / 100) as f64;
    CheckReport::new(name, format!("{count} frames, {samples} samples, worst z {worst_z:.3}"), outside as f64, allowed)
}

fn check_bound(level: Level, seed: u64) -> CheckReport {
    let name = "errfn.bound";
    let mut rng = rng(seed, 3);
    let count = level.pick(600, 10_000);
    let mut violations = 0usize;
    for i in 0..count {
        let r = 1 + i % 3;
        let f = random_frame(&mut rng, r);
        let u = generic_point(&mut rng, &f, 1e-3);
        match bound_check(&ErrFnArgument::new(f, &u).expect("rank matches"), &quad()) {
            Ok(b) => violations += (!b.ok) as usize,
            Err(e) => return failed(name, format!("instance {i}"), e),
        }
    }
    CheckReport::new(name, format!("{count} samples, r <= 3"), violations as f64, 0.0)
}

fn check_bound_mutation(_: Level, _: u64) -> CheckReport {
    let name = "errfn.bound_mutation_detected";
    let arg = ErrFnArgument::new(ErrorFunctionFrame::identity(1), &[0.05]).expect("rank one");
    match bound_check_scaled(&arg, &quad(), 1e-3) {
        Ok(b) => CheckReport::new(name, "rhs scaled by 1e-3 at u = 0.05".into(), b.ok as u8 as f64, 0.0),
        Err(e) => failed(name, String::new(), e),
    }
}

fn vigneras_ratio(coarse: f64, fine: f64) -> f64 {
    coarse.abs() / fine.abs().max(1e-300)
}

fn check_vigneras(level: Level, seed: u64) -> CheckReport {
    let name = "errfn.vigneras";
    let mut rng = rng(seed, 4);
    let count = level.pick(3, 12);
    let mut worst = f64::INFINITY;
    for i in 0..count {
        let r = 1 + i % 3;
        let f = random_frame(&mut rng, r);
        let u = generic_point(&mut rng, &f, 0.05);
        let arg = ErrFnArgument::new(f, &u).expect("rank matches");
        for kind in [Kind::E, Kind::M] {
            match (vigneras_residual(&arg, kind, 1e-3, &quad()), vigneras_residual(&arg, kind, 5e-4, &quad())) {
                (Ok(a), Ok(b)) => worst = worst.min(vigneras_ratio(a, b)),
                (Err(e), _) | (_, Err(e)) => return failed(name, format!("instance {i}"), e),
            }
        }
    }
    // residual ratio under h -> h/2 must reach 3.5; the report stores 3.5 / ratio against 1
    CheckReport::new(name, format!("{count} frames, E and M, h = 1e-3 -> 5e-4, min ratio {worst:.3}"), 3.5 / worst, 1.0)
}

fn check_boosted_vigneras(level: Level, seed: u64) -> CheckReport {
    let name = "boosted.vigneras";
    let mut rng = rng(seed, 5);
    let shapes = [(3, 1, 1), (4, 2, 2), (5, 3, 3)];
    let count = level.pick(3, 9);
    let mut worst = f64::INFINITY;
    for i in 0..count {
        let (n, p, s) = shapes[i % 3];
        let arg = random_boosted_argument(&mut rng, n, p, s);
        for kind in [Kind::E, Kind::M] {
            match (vigneras_residual_boosted(&arg, kind, 1e-3, &quad()), vigneras_residual_boosted(&arg, kind, 5e-4, &quad())) {
                (Ok(a), Ok(b)) => worst = worst.min(vigneras_ratio(a, b)),
                (Err(e), _) | (_, Err(e)) => return failed(name, format!("instance {i}"), e),
            }
        }
    }
    CheckReport::new(name, format!("{count} cones, s <= 3, min ratio {worst:.3}"), 3.5 / worst, 1.0)
}

fn check_boosted_decomposition(level: Level, seed: u64) -> CheckReport {
    let name = "boosted.decomposition";
    let mut rng = rng(seed, 6);
    let count = level.pick(6, 40);
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let arg = random_boosted_argument(&mut rng, 4, 2, 2);
        match boosted_decompositions(&arg, &quad()) {
            Ok(d) => {
                let m: f64 = d.m_terms.iter().map(|t| t.coefficient * t.value.value).sum();
                let e: f64 = d.e_terms.iter().map(|t| t.coefficient * t.value.value).sum();
                worst = worst.max((m - d.m_direct.value).abs()).max((e - d.e_direct.value).abs());
            }
            Err(e) => return failed(name, format!("instance {i}"), e),
        }
    }
    CheckReport::new(name, format!("{count} (2,2) cones"), worst, 1e-7)
}

/// A point on the wall `w_{j}.u = 0` of a random rank-2 frame, with the unit normal.
fn wall_point(rng: &mut impl Rng, f: &ErrorFunctionFrame, j: usize) -> (DVector<f64>, DVector<f64>) {
    let w = f.w_col(j);
    let normal = w.normalize();
    let along = DVector::from_column_slice(&[-normal[1], normal[0]]) * rng.gen_range(0.3..1.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    (along, normal)
}

fn check_discontinuity(level: Level, seed: u64) -> CheckReport {
    let name = "errfn.discontinuity";
    let mut rng = rng(seed, 7);
    let count = level.pick(8, 50);
    let eps = 1e-8;
    let mut worst: f64 = 0.0;
    for i in 0..count {
        let f = random_frame(&mut rng, 2);
        let j = i % 2;
        let (on, normal) = wall_point(&mut rng, &f, j);
        let run = || -> Result<f64, crate::errfn::ErrFnError> {
            let ev = FrameEvaluator::new(&f, &quad())?;
            let up = &on + &normal * eps;
            let dn = &on - &normal * eps;
            let mp = ev.m(up.as_slice())?.value;
            let mm = ev.m(dn.as_slice())?.value;
            let arg = ErrFnArgument::new(f.clone(), on.as_slice())?;
            let keep = Subset::singleton(1 - j);
            let mut approach = vec![0.0; 2];
            approach[j] = 1.0;
            let lim = discontinuity_limit(&arg, keep, &approach, &quad())?;
            Ok(((mp - mm) / 2.0 - lim).abs())
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => return failed(name, format!("instance {i}"), e),
        }
    }
    CheckReport::new(name, format!("{count} rank-2 walls, offset {eps:e}"), worst, 1e-6)
}

fn check_discontinuity_cancellation(level: Level, seed: u64) -> CheckReport {
    let name = "errfn.discontinuity_cancellation";
    let mut rng = rng(seed, 8);
    let count = level.pick(8, 50);
    let eps = 1e-8;
    let mut worst: f64 = 0.0;
    let mut largest_term_jump: f64 = 0.0;
    for i in 0..count {
        let r = 2 + i % 2;
        let f = random_frame(&mut rng, r);
        let j = i % r;
        let u = DVector::from_column_slice(&generic_point(&mut rng, &f, 0.05));
        let w = f.w_col(j);
        let normal = w.normalize();
        let on = &u - &normal * normal.dot(&u);
        let run = || -> Result<(f64, f64), crate::errfn::ErrFnError> {
            let ev = FrameEvaluator::new(&f, &quad())?;
            let plus = ev.e_terms((&on + &normal * eps).as_slice())?;
            let minus = ev.e_terms((&on - &normal * eps).as_slice())?;
            let sp = sum_decomposition(&plus);
            let sm = sum_decomposition(&minus);
            let term_jump = plus.iter().zip(&minus).map(|(a, b)| (a.coefficient * a.value.value - b.coefficient * b.value.value).abs()).fold(0.0, f64::max);
            Ok(((sp.value - sm.value).abs() - 2.0 * (sp.est_error + sm.est_error), term_jump))
        };
        match run() {
            Ok((d, t)) => {
                worst = worst.max(d);
                largest_term_jump = largest_term_jump.max(t);
            }
            Err(e) => return failed(name, format!("instance {i}"), e),
        }
    }
    let inputs = format!("{count} walls, r in {{2,3}}, largest single-term jump {largest_term_jump:.3e}");
    if largest_term_jump < 1e-3 {
        return failed(name, inputs, "no individual term jumped");
    }
    CheckReport::new(name, inputs, worst.max(0.0), 1e-6)
}

fn check_a4(_: Level, _: u64) -> CheckReport {
    let report = check_cone_pair(&build_a4_example());
    let inertia_ok = report.q_minus_inertia.map(|i| (i.positive, i.negative, i.zero) == (0, 8, 0)).unwrap_or(false);
    let all_recursions = report.recursion_reports.len() == 64;
    let bad = (!report.passes()) as u8 + (!inertia_ok) as u8 + (!all_recursions) as u8;
    CheckReport::new("cones.a4_example", format!("verdict {:?}", report.verdict), bad as f64, 0.0)
}

fn check_r1(_: Level, _: u64) -> CheckReport {
    let mut bad = 0;
    for pair in [build_r1_example(), build_lattice_r1_example()] {
        let report = check_cone_pair(&pair);
        let inertia_ok = report.q_minus_inertia.map(|i| (i.positive, i.negative) == (0, 2)).unwrap_or(false);
        bad += (!report.passes() || !inertia_ok) as u8;
    }
    CheckReport::new("cones.r1_example", "diag(1,-1) and [[2,1],[1,-2]] pairs".into(), bad as f64, 0.0)
}

fn check_determinant_identity(level: Level, seed: u64) -> CheckReport {
    let name = "cones.determinant_identity";
    let mut rng = rng(seed, 9);
    let pair = build_a4_example();
    let count = level.pick(40, 100);
    let mut failures = 0;
    for _ in 0..count {
        let x: Vec<Rat> = (0..8).map(|_| rat_frac(rng.gen_range(-20..=20), rng.gen_range(1..=7))).collect();
        match determinant_identity(&pair, &x) {
            Ok(c) => failures += (!c.holds()) as usize,
            Err(e) => return failed(name, String::new(), e),
        }
    }
    CheckReport::new(name, format!("A4 example, {count} rational points"), failures as f64, 0.0)
}

fn lattice_spec(kernel: Kernel) -> ThetaSpec {
    let mut spec = ThetaSpec::new(build_lattice_r1_example(), kernel);
    spec.mu = vec![rat_frac(1, 5), rat_frac(3, 5)];
    spec.p = vec![2, 0];
    spec.b = vec![0.1, 0.23];
    spec.c_ell = vec![0.07, -0.31];
    spec.tau = Complex64::new(0.3, 0.9);
    spec
}

fn check_theta_convergence(_: Level, _: u64) -> CheckReport {
    let name = "theta.convergence";
    let mut worst: f64 = 0.0;
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let mut spec = lattice_spec(kernel);
        spec.tau = Complex64::new(0.0, 1.0);
        let run = || -> Result<f64, crate::theta::ThetaError> {
            let v = eval_theta(&spec, &TruncationPolicy::default())?;
            let w = eval_theta_at_radius(&spec, 2.0 * v.radius, 10_000_000)?;
            Ok((w.value - v.value).norm())
        };
        match run() {
            Ok(d) => worst = worst.max(d),
            Err(e) => return failed(name, String::new(), e),
        }
    }
    CheckReport::new(name, "rank-one lattice example at tau = i, radius doubled".into(), worst, 1e-9)
}

fn phase(t: f64) -> Complex64 {
    Complex64::from_polar(1.0, PI * t)
}

fn pair_f64(a: &DMatrix<f64>, x: &[f64], y: &[f64]) -> f64 {
    (DVector::from_column_slice(x).transpose() * a * DVector::from_column_slice(y))[0]
}

fn check_t_law(_: Level, _: u64) -> CheckReport {
    let name = "theta.t_law";
    let mut worst: f64 = 0.0;
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let spec = lattice_spec(kernel);
        let a = spec.form().matrix_f64().clone();
        let offset: Vec<f64> = spec.offset().iter().map(crate::exact::rat_to_f64).collect();
        let mut shifted = spec.clone();
        shifted.tau += 1.0;
        shifted.c_ell = spec.c_ell.iter().zip(&spec.b).map(|(c, b)| c + b).collect();
        let policy = TruncationPolicy::default();
        match (eval_theta(&spec, &policy), eval_theta(&shifted, &policy)) {
            (Ok(v), Ok(w)) => worst = worst.max((w.value - phase(-pair_f64(&a, &offset, &offset)) * v.value).norm()),
            (Err(e), _) | (_, Err(e)) => return failed(name, String::new(), e),
        }
    }
    CheckReport::new(name, "rank-one lattice example, both kernels".into(), worst, 1e-7)
}

fn check_elliptic(_: Level, _: u64) -> CheckReport {
    let name = "theta.elliptic_laws";
    let mut worst: f64 = 0.0;
    let k = [1.0, -2.0];
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let spec = lattice_spec(kernel);
        let a = spec.form().matrix_f64().clone();
        let p: Vec<f64> = spec.p.iter().map(|&x| x as f64).collect();
        let policy = TruncationPolicy::default();
        let mut bk = spec.clone();
        bk.b = spec.b.iter().zip(&k).map(|(b, k)| b + k).collect();
        let mut ck = spec.clone();
        ck.c_ell = spec.c_ell.iter().zip(&k).map(|(c, k)| c + k).collect();
        match (eval_theta(&spec, &policy), eval_theta(&bk, &policy), eval_theta(&ck, &policy)) {
            (Ok(v), Ok(vb), Ok(vc)) => {
                let eb = phase(pair_f64(&a, &k, &p)) * phase(-pair_f64(&a, &spec.c_ell, &k)) * v.value;
                let ec = phase(pair_f64(&a, &k, &p)) * phase(pair_f64(&a, &spec.b, &k)) * v.value;
                worst = worst.max((vb.value - eb).norm()).max((vc.value - ec).norm());
            }
            (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => return failed(name, String::new(), e),
        }
    }
    CheckReport::new(name, "shifts by k = (1,-2), both kernels".into(), worst, 1e-7)
}

fn check_q_expansion(_: Level, _: u64) -> CheckReport {
    let name = "theta.q_expansion";
    let mut bad = 0usize;
    for mu in discriminant_classes(&build_lattice_r1_example().form).into_iter().skip(1) {
        let mut spec = ThetaSpec::new(build_lattice_r1_example(), Kernel::Holomorphic);
        spec.mu = mu;
        match (q_expansion(&spec, 10, 1_000_000), q_expansion_scaled(&spec, 10, 1_000_000, 2.0)) {
            (Ok(a), Ok(b)) => {
                bad += (a.terms != b.terms) as usize;
                bad += a.terms.iter().filter(|t| !t.wall_hit && !t.is_integral()).count();
                bad += a.support_violations;
            }
            (Err(e), _) | (_, Err(e)) => return failed(name, String::new(), e),
        }
    }
    CheckReport::new(name, "10 terms per nonzero class, radius doubled".into(), bad as f64, 0.0)
}

fn check_s_law(_: Level, _: u64) -> CheckReport {
    let name = "theta.s_law";
    let mut spec = ThetaSpec::new(build_lattice_r1_example(), Kernel::Completed);
    spec.b = vec![0.1, 0.23];
    spec.c_ell = vec![0.07, -0.31];
    match s_law_check(&spec, &TruncationPolicy::default()) {
        Ok(r) => {
            let residual = r.max_deviation.max((r.constant.norm() - 1.0).abs());
            CheckReport::new(name, format!("completed kernel at tau = i, constant {}", r.constant), residual, 1e-4)
        }
        Err(e) => failed(name, String::new(), e),
    }
}

fn check_sign_lemma(level: Level, seed: u64) -> CheckReport {
    let name = "verify.sign_lemma";
    let mut rng = rng(seed, 10);
    let per_n = level.pick(100, 1000);
    let mut nonzero = 0usize;
    for n in 1..=5 {
        for _ in 0..per_n {
            let inst = random_sign_lemma_instance(&mut rng, n);
            match sign_lemma_sum(&inst) {
                Ok(s) => nonzero += (s != 0) as usize,
                Err(e) => return failed(name, format!("n = {n}"), e),
            }
        }
    }
    CheckReport::new(name, format!("{per_n} instances for each n in 1..=5"), nonzero as f64, 0.0)
}

fn check_specialized(level: Level, seed: u64) -> CheckReport {
    let name = "verify.sign_identity_specialized";
    let mut rng = rng(seed, 11);
    let count = level.pick(20, 200);
    let mut nonzero = 0usize;
    let mut done = 0;
    while done < count {
        let f = random_frame(&mut rng, 3);
        let u = generic_point(&mut rng, &f, 1e-3);
        let mut sums = Vec::new();
        for n in Subset::all(3).filter(|s| !s.is_empty()) {
            match sign_identity_specialized(&f, &u, n) {
                Ok(s) => sums.push(s),
                Err(VerifyError::GenericityViolated { .. }) => break,
                Err(e) => return failed(name, String::new(), e),
            }
        }
        if sums.len() == 7 {
            nonzero += sums.iter().filter(|&&s| s != 0).count();
            done += 1;
        }
    }
    CheckReport::new(name, format!("{count} rank-3 frames, all 7 nonempty N"), nonzero as f64, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_lemma_base_cases() {
        let inst = SignLemmaInstance::new(RatMatrix::from_i64_rows(&[vec![3]]), vec![rat(1)]).unwrap();
        assert_eq!(inst.transformed(Subset::EMPTY), vec![rat(1)]);
        assert_eq!(inst.transformed(Subset::singleton(0)), vec![rat_frac(-1, 3)]);
        assert_eq!(sign_lemma_sum(&inst), Ok(0));
        let inst = SignLemmaInstance::new(RatMatrix::identity(2), vec![rat(1), rat(1)]).unwrap();
        let signs: Vec<i64> = Subset::all(2)
            .map(|s| inst.transformed(s).iter().map(|x| if x.is_negative() { -1 } else { 1 }).product())
            .collect();
        assert_eq!(signs, vec![1, -1, -1, 1]);
        assert_eq!(sign_lemma_sum(&inst), Ok(0));
    }

    #[test]
    fn degenerate_instance_is_rejected() {
        let inst = SignLemmaInstance::new(RatMatrix::identity(2), vec![rat(1), rat(0)]).unwrap();
        assert!(matches!(sign_lemma_sum(&inst), Err(VerifyError::GenericityViolated { .. })));
        assert_eq!(SignLemmaInstance::new(RatMatrix::from_i64_rows(&[vec![-1]]), vec![rat(1)]), Err(VerifyError::NotPositiveDefinite));
    }

    #[test]
    fn specialized_identity_on_identity_frame() {
        let f = ErrorFunctionFrame::identity(2);
        for n in Subset::all(2).filter(|s| !s.is_empty()) {
            assert_eq!(sign_identity_specialized(&f, &[0.3, -0.7], n), Ok(0));
        }
        assert!(matches!(sign_identity_specialized(&f, &[0.0, 1.0], Subset::singleton(0)), Err(VerifyError::GenericityViolated { .. })));
    }
}
