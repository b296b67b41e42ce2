mod common;

use std::f64::consts::PI;

use common::*;
use nalgebra::{DMatrix, DVector};
use theta_forge::boosted::*;
use theta_forge::errfn::{eval_e, eval_m, ErrFnArgument, Kind, QuadratureSpec};
use theta_forge::{BilinearForm, ErrorFunctionFrame, Subset};

fn q() -> QuadratureSpec {
    QuadratureSpec::default()
}

fn lorentz() -> BilinearForm {
    BilinearForm::from_rows(&[vec![1, 0], vec![0, -1]]).unwrap()
}

fn far_from_d_walls(cone: &ConeMatrix, x: &[f64]) -> bool {
    let d = cone.d();
    let a = cone.form_matrix();
    cone.d_pairings(x).iter().enumerate().all(|(j, v)| {
        let dj = d.column(j).into_owned();
        let norm = (dj.transpose() * a * &dj)[0].abs().sqrt();
        v.abs() > 1e-2 * norm
    })
}

fn random_instance(seed: u64, n: usize, positive: usize, s: usize) -> (BoostedArgument, ConeMatrix) {
    let mut rng = rng(seed);
    let form = random_form(&mut rng, n, positive);
    let c = random_cone_columns(&mut rng, &form, s);
    let cone = build_cone(&c, &form).unwrap();
    loop {
        let x = random_vector(&mut rng, n, 1.0);
        if far_from_d_walls(&cone, &x) {
            return (BoostedArgument::new(cone.clone(), &x).unwrap(), cone);
        }
    }
}

#[test]
fn cone_invariants() {
    for seed in 0..10 {
        let (_, cone) = random_instance(seed, 4, 2, 2);
        let a = cone.form_matrix();
        let c = cone.c();
        let e = cone.e();
        assert!((e * a * e.transpose() - DMatrix::identity(2, 2)).norm() < 1e-10);
        assert!((e.transpose() * e * a * c - c).norm() < 1e-10);
        assert!((cone.d().transpose() * a * c - DMatrix::identity(2, 2)).norm() < 1e-10);
    }
}

#[test]
fn euclidean_form_reduces_to_errfn() {
    let form = BilinearForm::euclidean(2);
    let cols = DMatrix::from_column_slice(2, 2, &[1.0, 0.3, -0.2, 0.8]);
    let cone = build_cone(&cols, &form).unwrap();
    let x = [0.4, -0.9];
    let arg = BoostedArgument::new(cone, &x).unwrap();
    let frame = ErrorFunctionFrame::new(cols).unwrap();
    let plain = ErrFnArgument::new(frame, &x).unwrap();
    assert!(close(eval_e_boosted(&arg, &q()).unwrap().value, eval_e(&plain, &q()).unwrap().value, 1e-13));
    assert!(close(eval_m_boosted(&arg, &q()).unwrap().value, eval_m(&plain, &q()).unwrap().value, 1e-13));
}

#[test]
fn lorentzian_rank_one_closed_form() {
    let cone = build_cone(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &lorentz()).unwrap();
    for (u, y) in [(0.3, 5.0), (-1.2, -2.0)] {
        let arg = BoostedArgument::new(cone.clone(), &[u, y]).unwrap();
        assert!(close(eval_e_boosted(&arg, &q()).unwrap().value, e1_oracle(u), 1e-13));
        assert!(close(eval_m_boosted(&arg, &q()).unwrap().value, m1_oracle(u), 1e-13));
    }
    // a boosted timelike vector c = (2, 1): E = erf(√π B(c,x)/√Q(c))
    let cone = build_cone(&DMatrix::from_column_slice(2, 1, &[2.0, 1.0]), &lorentz()).unwrap();
    let x = [0.7, 0.4];
    let b = 2.0 * 0.7 - 0.4;
    let arg = BoostedArgument::new(cone, &x).unwrap();
    assert!(close(eval_e_boosted(&arg, &q()).unwrap().value, e1_oracle(b / 3f64.sqrt()), 1e-13));
}

#[test]
fn projection_examples() {
    let (arg, cone) = random_instance(3, 4, 2, 2);
    let p = project_plus(&arg);
    let pp = cone.project_plus(&p);
    assert!(p.iter().zip(&pp).all(|(a, b)| (a - b).abs() < 1e-12));
    let qp = cone.pair(&p, &p);
    assert!(qp >= 0.0);
    let c0: Vec<f64> = cone.c().column(0).iter().copied().collect();
    let fixed = cone.project_plus(&c0);
    assert!(c0.iter().zip(&fixed).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn boosted_bound() {
    for seed in 0..40 {
        let (arg, cone) = random_instance(100 + seed, 4, 2, 2);
        let m = eval_m_boosted(&arg, &q()).unwrap();
        let xp = cone.project_plus(&arg.x);
        let rhs = 2.0 * (-PI * cone.pair(&xp, &xp)).exp();
        assert!(m.value.abs() <= rhs + m.est_error, "{} > {rhs}", m.value);
    }
}

#[test]
fn rank_one_decomposition() {
    let (arg, cone) = random_instance(7, 3, 1, 1);
    let dec = boosted_decompositions(&arg, &q()).unwrap();
    let sd = cone.d_pairings(&arg.x)[0].signum();
    let e = eval_e_boosted(&arg, &q()).unwrap().value;
    let expected = -sd + e;
    // equivalently -sign + sign·|E|, since E is odd in B(d, x) for s = 1
    assert!(close(expected, -sd + sd * e.abs(), 1e-15));
    let sum: f64 = dec.m_terms.iter().map(|t| t.coefficient * t.value.value).sum();
    assert!(close(sum, expected, 1e-13), "{sum} vs {expected}");
    assert!(close(sum, dec.m_direct.value, 1e-13));
}

#[test]
fn decompositions_sum_to_direct_values() {
    for seed in 0..20 {
        let (arg, _) = random_instance(200 + seed, 4, 2, 2);
        let dec = boosted_decompositions(&arg, &q()).unwrap();
        let m_sum: f64 = dec.m_terms.iter().map(|t| t.coefficient * t.value.value).sum();
        let e_sum: f64 = dec.e_terms.iter().map(|t| t.coefficient * t.value.value).sum();
        let tol = 2.0 * (dec.m_direct.est_error + dec.e_direct.est_error) + 1e-12;
        assert!((m_sum - dec.m_direct.value).abs() <= tol.max(1e-10), "M {m_sum} vs {:?}", dec.m_direct);
        assert!((e_sum - dec.e_direct.value).abs() <= tol.max(1e-10), "E {e_sum} vs {:?}", dec.e_direct);
    }
}

#[test]
fn orthogonal_split_factorizes() {
    let form = BilinearForm::from_rows(&[vec![2, 0, 0, 0], vec![0, 1, 0, 0], vec![0, 0, -1, 0], vec![0, 0, 0, -3]]).unwrap();
    let c = DMatrix::from_column_slice(4, 2, &[1.0, 0.0, 0.5, 0.0, 0.0, 1.0, 0.0, 0.3]);
    // c1 = (1,0,0.5,0), c2 = (0,1,0,0.3) are orthogonal under the form
    let cone = build_cone(&c, &form).unwrap();
    let x = [0.3, -0.6, 0.2, 0.1];
    let arg = BoostedArgument::new(cone.clone(), &x).unwrap();
    let e = eval_e_boosted(&arg, &q()).unwrap().value;
    let m = eval_m_boosted(&arg, &q()).unwrap().value;
    let mut e_prod = 1.0;
    let mut m_prod = 1.0;
    for j in 0..2 {
        let sub = BoostedArgument::new(cone.sub_cone(Subset::singleton(j)).unwrap(), &x).unwrap();
        e_prod *= eval_e_boosted(&sub, &q()).unwrap().value;
        m_prod *= eval_m_boosted(&sub, &q()).unwrap().value;
    }
    assert!(close(e, e_prod, 1e-13));
    assert!(close(m, m_prod, 1e-13));
    let dec = boosted_decompositions(&arg, &q()).unwrap();
    let e_sum: f64 = dec.e_terms.iter().map(|t| t.coefficient * t.value.value).sum();
    assert!(close(e_sum, e_prod, 1e-12));
}

#[test]
fn gauge_invariance() {
    for seed in 0..10 {
        let (arg, cone) = random_instance(300 + seed, 5, 3, 3);
        let t = 0.3 + seed as f64;
        let rot = nalgebra::Rotation3::from_euler_angles(t, 2.0 * t, -t);
        let o = DMatrix::from_fn(3, 3, |i, j| rot[(i, j)]);
        let rotated = BoostedArgument::new(cone.rotated(&o).unwrap(), &arg.x).unwrap();
        let e0 = eval_e_boosted(&arg, &q()).unwrap();
        let e1 = eval_e_boosted(&rotated, &q()).unwrap();
        assert!((e0.value - e1.value).abs() <= 2.0 * (e0.est_error + e1.est_error) + 1e-12);
        let m0 = eval_m_boosted(&arg, &q()).unwrap();
        let m1 = eval_m_boosted(&rotated, &q()).unwrap();
        assert!((m0.value - m1.value).abs() <= 2.0 * (m0.est_error + m1.est_error) + 1e-12);
    }
}

#[test]
fn symmetries_of_the_cone_vectors() {
    let (arg, cone) = random_instance(17, 4, 2, 2);
    let e0 = eval_e_boosted(&arg, &q()).unwrap().value;
    let m0 = eval_m_boosted(&arg, &q()).unwrap().value;
    let form = BilinearForm::from_exact(theta_forge::exact::RatMatrix::from_fn(4, 4, |i, j| {
        theta_forge::exact::rat(cone.form_matrix()[(i, j)] as i64)
    }))
    .unwrap();
    let c = cone.c();
    let swapped = DMatrix::from_columns(&[c.column(1).into_owned(), c.column(0).into_owned()]);
    let scaled_flipped = DMatrix::from_columns(&[c.column(0) * 2.5, c.column(1) * -1.0]);
    for (cols, factor) in [(swapped, 1.0), (scaled_flipped, -1.0)] {
        let other = BoostedArgument::new(build_cone(&cols, &form).unwrap(), &arg.x).unwrap();
        assert!(close(eval_e_boosted(&other, &q()).unwrap().value, factor * e0, 1e-12));
        assert!(close(eval_m_boosted(&other, &q()).unwrap().value, factor * m0, 1e-12));
    }
}

#[test]
fn vigneras_equation_boosted() {
    for (seed, n, pos, s) in [(400, 3, 1, 1), (401, 4, 2, 2), (402, 5, 3, 3)] {
        let (arg, _) = random_instance(seed, n, pos, s);
        for kind in [Kind::E, Kind::M] {
            let r1 = vigneras_residual_boosted(&arg, kind, 1e-3, &q()).unwrap();
            let r2 = vigneras_residual_boosted(&arg, kind, 5e-4, &q()).unwrap();
            assert!(r1.abs() < 1e-3, "{kind:?} {r1}");
            assert!(r2.abs() < r1.abs() / 3.5, "{kind:?} {r1} {r2}");
        }
    }
}

#[test]
fn shadow_identity() {
    for seed in 0..10 {
        let (arg, cone) = random_instance(500 + seed, 4, 2, 2);
        let formula = boosted_shadow(&arg, &q()).unwrap();
        let ev = BoostedEvaluator::new(&cone, &q()).unwrap();
        let x = DVector::from_column_slice(&arg.x);
        let h = 1e-4;
        let up = &x * (1.0 + h);
        let dn = &x * (1.0 - h);
        // x.∂E = d/dt E(t x) at t = 1
        let x_dot_grad = (ev.e(up.as_slice()).unwrap().value - ev.e(dn.as_slice()).unwrap().value) / (2.0 * h);
        assert!(close(2.0 * formula, x_dot_grad, 1e-5), "{formula} vs {x_dot_grad}");
        // agrees with the Euclidean shadow in the frame EAC
        let u = cone.euclidean_argument(&arg.x);
        let plain = ErrFnArgument::new(cone.frame().unwrap().clone(), &u).unwrap();
        let euclid = theta_forge::errfn::shadow(&plain, Kind::E, &q()).unwrap();
        assert!(close(formula, euclid, 1e-10));
    }
}

#[test]
fn large_argument_limit() {
    let (arg, cone) = random_instance(600, 4, 2, 2);
    let ev = BoostedEvaluator::new(&cone, &q()).unwrap();
    let x = DVector::from_column_slice(&arg.x);
    let target: f64 = cone.c_pairings(&arg.x).iter().map(|v| v.signum()).product();
    let mut gaps = vec![];
    for t in [1.0, 4.0, 16.0] {
        let y = &x * t;
        gaps.push((ev.e(y.as_slice()).unwrap().value - target).abs());
    }
    assert!(gaps[2] < 1e-8, "{gaps:?}");
    assert!(gaps[2] <= gaps[0]);
}

#[test]
fn perp_degenerate_and_empty() {
    let form = lorentz();
    let c = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]);
    let cone = build_cone(&c, &form).unwrap_err();
    // the pair spans the whole indefinite plane, so it is not a cone
    assert!(matches!(cone, BoostedError::NotTimelike { .. }));
    let single = build_cone(&DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), &form).unwrap();
    let p = perp_cone(&single, Subset::singleton(0), Subset::EMPTY).unwrap();
    assert_eq!(p.c(), single.c());
    assert!(matches!(perp_cone(&single, Subset::singleton(0), Subset::singleton(0)), Err(BoostedError::NotTimelike { .. })));
}
