mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use theta_forge::cones::ConePair;
use theta_forge::exact::{rat, rat_frac, rat_to_f64, Rat};
use theta_forge::theta::{
    discriminant_classes, eval_theta, eval_theta_at_radius, kernel_phi, kernel_phi_hat, q_expansion, q_expansion_scaled, s_law_check,
    Kernel, ThetaError, ThetaPlan, ThetaSpec, TruncationPolicy, UserKernel, THREADS_ENV,
};
use theta_forge::BilinearForm;

fn form() -> BilinearForm {
    BilinearForm::from_rows(&[vec![2, 1], vec![1, -2]]).unwrap()
}

/// c = (1,0), c' = (2,1): no lattice isometry swaps them.
fn pair() -> ConePair {
    ConePair::from_i64_columns(form(), &[vec![1, 0]], &[vec![2, 1]]).unwrap()
}

/// c = (1,0), c' = (1,1): exchanged by the reflection in (0,1).
fn symmetric_pair() -> ConePair {
    ConePair::from_i64_columns(form(), &[vec![1, 0]], &[vec![1, 1]]).unwrap()
}

fn generic_spec(kernel: Kernel) -> ThetaSpec {
    let mut spec = ThetaSpec::new(pair(), kernel);
    spec.mu = vec![rat_frac(1, 5), rat_frac(3, 5)];
    spec.p = vec![2, 0];
    spec.b = vec![0.1, 0.23];
    spec.c_ell = vec![0.07, -0.31];
    spec.tau = Complex64::new(0.3, 0.9);
    spec
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn b_pair(a: &[[f64; 2]; 2], x: &[f64], y: &[f64]) -> f64 {
    (0..2).map(|i| (0..2).map(|j| x[i] * a[i][j] * y[j]).sum::<f64>()).sum()
}

/// Term-by-term evaluation of the defining series over `|m_i| ≤ half_width`.
fn brute_force(spec: &ThetaSpec, half_width: i64) -> Complex64 {
    let a = [[2.0, 1.0], [1.0, -2.0]];
    let c = [1.0, 0.0];
    let cp: Vec<f64> = (0..2).map(|i| rat_to_f64(&spec.pair.c_prime[(i, 0)])).collect();
    let mu: Vec<f64> = spec.mu.iter().map(rat_to_f64).collect();
    let p: Vec<f64> = spec.p.iter().map(|&x| x as f64).collect();
    let tau = spec.tau;
    let mut total = Complex64::new(0.0, 0.0);
    for m0 in -half_width..=half_width {
        for m1 in -half_width..=half_width {
            let k = [m0 as f64 + mu[0] + p[0] / 2.0, m1 as f64 + mu[1] + p[1] / 2.0];
            let y = [k[0] + spec.b[0], k[1] + spec.b[1]];
            let x = [y[0] * (2.0 * tau.im).sqrt(), y[1] * (2.0 * tau.im).sqrt()];
            let phi = match spec.kernel {
                Kernel::Holomorphic => 0.5 * (sign(b_pair(&a, &c, &x)) - sign(b_pair(&a, &cp, &x))),
                Kernel::Completed => {
                    let e = |v: &[f64]| common::erf_oracle(PI.sqrt() * b_pair(&a, v, &x) / b_pair(&a, v, v).sqrt());
                    0.5 * (e(&c) - e(&cp))
                }
                Kernel::User(_) => unreachable!(),
            };
            if phi == 0.0 {
                continue;
            }
            let q = b_pair(&a, &y, &y);
            let half = [k[0] + spec.b[0] / 2.0, k[1] + spec.b[1] / 2.0];
            let phase = Complex64::new(0.0, PI * b_pair(&a, &k, &p)).exp()
                * (Complex64::new(0.0, -PI) * tau * q).exp()
                * Complex64::new(0.0, 2.0 * PI * b_pair(&a, &spec.c_ell, &half)).exp();
            total += phase * phi;
        }
    }
    total
}

#[test]
fn kernel_phi_examples() {
    let p = pair();
    // B(c,x) = 2x1 + x2, B(c',x) = 5x1
    assert_eq!(kernel_phi(&p, &[-1.0, 3.0]), 1.0);
    assert_eq!(kernel_phi(&p, &[1.0, 1.0]), 0.0);
    assert_eq!(kernel_phi(&p, &[-1.0, 2.0]), 0.5);
}

#[test]
fn completed_kernel_r1_closed_form() {
    let form = BilinearForm::from_rows(&[vec![1, 0], vec![0, -1]]).unwrap();
    let p = ConePair::from_i64_columns(form, &[vec![1, 0]], &[vec![2, 1]]).unwrap();
    let mut rng = common::rng(7);
    for _ in 0..50 {
        let x = common::random_vector(&mut rng, 2, 2.0);
        let e = |c: [f64; 2]| {
            let b = c[0] * x[0] - c[1] * x[1];
            common::erf_oracle(PI.sqrt() * b / (c[0] * c[0] - c[1] * c[1]).sqrt())
        };
        let oracle = 0.5 * (e([1.0, 0.0]) - e([2.0, 1.0]));
        assert!((kernel_phi_hat(&p, &x).unwrap() - oracle).abs() < 1e-12);
    }
    assert_eq!(kernel_phi_hat(&p, &[0.0, 0.0]).unwrap(), 0.0);
}

#[test]
fn completed_kernel_matches_holomorphic_deep_in_cone() {
    let p = pair();
    // x = t(-1, 3): B(c,x) = t, B(c',x) = -5t, far from both walls
    for t in [2.0, 4.0, 8.0] {
        let x = [-t, 3.0 * t];
        let gap = (kernel_phi_hat(&p, &x).unwrap() - kernel_phi(&p, &x)).abs();
        let margin = t * t / 2.0;
        assert!(gap <= (-PI * margin).exp(), "t={t} gap={gap}");
    }
}

#[test]
fn enumeration_matches_direct_count() {
    let spec = generic_spec(Kernel::Holomorphic);
    let plan = ThetaPlan::new(&spec).unwrap();
    let pm = plan.majorant().clone();
    let shift = [0.2 + 1.0 + 0.1, 0.6 + 0.0 + 0.23];
    for radius in [5.0, 8.0, 12.0] {
        let pts = plan.enumerate(radius, 1_000_000).unwrap();
        let mut direct = 0;
        for m0 in -40..=40i64 {
            for m1 in -40..=40i64 {
                let y = nalgebra::DVector::from_vec(vec![m0 as f64 + shift[0], m1 as f64 + shift[1]]);
                if (&pm * &y).dot(&y) <= radius * radius {
                    direct += 1;
                }
            }
        }
        assert_eq!(pts.len(), direct);
        let ratio = pts.len() as f64 / plan.estimated_points(radius);
        assert!((0.5..=2.0).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn zero_user_kernel_gives_zero() {
    let mut spec = generic_spec(Kernel::User(UserKernel { f: Arc::new(|_| 0.0), rate: 1.0, bound: 0.0 }));
    spec.lambda = 2;
    let v = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
    assert_eq!(v.value, Complex64::new(0.0, 0.0));
}

#[test]
fn odd_kernel_cancels() {
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let spec = ThetaSpec::new(pair(), kernel);
        let v = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
        assert!(v.value.norm() < 1e-15, "{:?}", v.value);
    }
}

#[test]
fn symmetric_pair_series_vanishes() {
    let mut spec = ThetaSpec::new(symmetric_pair(), Kernel::Holomorphic);
    spec.mu = vec![rat_frac(2, 5), rat_frac(1, 5)];
    assert!(matches!(q_expansion(&spec, 1, 20_000), Err(ThetaError::ExpansionBudget { found: 0, .. })));
}

#[test]
fn matches_brute_force() {
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let spec = generic_spec(kernel);
        let v = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
        let oracle = brute_force(&spec, 40);
        assert!((v.value - oracle).norm() < 1e-8, "{} {:?} {:?}", spec.kernel.name(), v.value, oracle);
        assert!(v.tail_estimate < 1e-8);
        assert!(v.value.norm() > 1e-5, "{:?}", v.value);
        assert_eq!(v.support_violations, 0);
    }
}

#[test]
fn radius_doubling_is_stable() {
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let spec = generic_spec(kernel);
        let v = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
        let mut previous = v.abs_sum;
        for factor in [2.0, 4.0] {
            let w = eval_theta_at_radius(&spec, v.radius * factor, 10_000_000).unwrap();
            assert!((w.value - v.value).norm() < 1e-9);
            assert!(w.abs_sum >= previous);
            assert!(w.abs_sum - v.abs_sum <= v.tail_estimate + 1e-12);
            previous = w.abs_sum;
        }
        // a truncation below the chosen radius differs by no more than its own tail bound
        let small = eval_theta_at_radius(&spec, v.radius / 2.0, 10_000_000).unwrap();
        assert!((small.value - v.value).norm() <= small.tail_estimate + 1e-12);
    }
}

fn wall_free_integral(spec: &ThetaSpec, n_terms: usize) -> Vec<(Rat, Rat)> {
    let q = q_expansion(spec, n_terms, 1_000_000).unwrap();
    assert_eq!(q.support_violations, 0);
    let distinct: std::collections::BTreeSet<_> = q.terms.iter().map(|t| t.exponent.to_rat().unwrap()).collect();
    assert_eq!(distinct.len(), n_terms);
    for t in &q.terms {
        if !t.wall_hit {
            assert!(t.is_integral(), "{t:?}");
        } else {
            assert!((t.coefficient.to_rat().unwrap() * rat(2)).is_integer());
        }
    }
    q.terms.iter().map(|t| (t.exponent.to_rat().unwrap(), t.coefficient.to_rat().unwrap())).collect()
}

#[test]
fn q_expansion_exact_and_stable() {
    for mu in discriminant_classes(&form()).into_iter().skip(1) {
        let mut spec = ThetaSpec::new(pair(), Kernel::Holomorphic);
        spec.mu = mu;
        let terms = wall_free_integral(&spec, 10);
        let doubled = q_expansion_scaled(&spec, 10, 1_000_000, 2.0).unwrap();
        let doubled: Vec<(Rat, Rat)> = doubled.terms.iter().map(|t| (t.exponent.to_rat().unwrap(), t.coefficient.to_rat().unwrap())).collect();
        assert_eq!(terms, doubled);
    }
}

#[test]
fn q_expansion_leading_exponent() {
    let mut spec = ThetaSpec::new(pair(), Kernel::Holomorphic);
    spec.mu = vec![rat_frac(2, 5), rat_frac(1, 5)];
    let terms = wall_free_integral(&spec, 3);
    // direct minimum of -Q(k)/2 over the support in a large box
    let a = [[2.0, 1.0], [1.0, -2.0]];
    let mut best = f64::INFINITY;
    for m0 in -30..=30i64 {
        for m1 in -30..=30i64 {
            let k = [m0 as f64 + 0.4, m1 as f64 + 0.2];
            let s1 = sign(b_pair(&a, &[1.0, 0.0], &k));
            let s2 = sign(b_pair(&a, &[2.0, 1.0], &k));
            if s1 != s2 {
                best = best.min(-b_pair(&a, &k, &k) / 2.0);
            }
        }
    }
    assert!((rat_to_f64(&terms[0].0) - best).abs() < 1e-12, "{:?} {best}", terms);
    // coefficients agree with the series evaluated at b = c = 0
    let v = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
    let q = q_expansion(&spec, 40, 1_000_000).unwrap();
    let series: f64 = q.terms.iter().map(|t| rat_to_f64(&t.coefficient.to_rat().unwrap()) * (-2.0 * PI * rat_to_f64(&t.exponent.to_rat().unwrap())).exp()).sum();
    assert!((series - v.value.re).abs() < 1e-10);
}

fn phase(angle_over_pi: f64) -> Complex64 {
    Complex64::from_polar(1.0, PI * angle_over_pi)
}

fn b_exact(x: &[f64], y: &[f64]) -> f64 {
    b_pair(&[[2.0, 1.0], [1.0, -2.0]], x, y)
}

#[test]
fn t_law_and_elliptic_laws() {
    let policy = TruncationPolicy::default();
    for kernel in [Kernel::Holomorphic, Kernel::Completed] {
        let spec = generic_spec(kernel);
        let base = eval_theta(&spec, &policy).unwrap().value;
        let offset = [0.2 + 1.0, 0.6];
        let p = [2.0, 0.0];

        let mut shifted = spec.clone();
        shifted.tau += 1.0;
        shifted.c_ell = vec![spec.c_ell[0] + spec.b[0], spec.c_ell[1] + spec.b[1]];
        let t = eval_theta(&shifted, &policy).unwrap().value;
        assert!((t - phase(-b_exact(&offset, &offset)) * base).norm() < 1e-7, "{} T-law", spec.kernel.name());

        let k = [1.0, -2.0];
        let mut bk = spec.clone();
        bk.b = vec![spec.b[0] + k[0], spec.b[1] + k[1]];
        let v = eval_theta(&bk, &policy).unwrap().value;
        let expected = phase(b_exact(&k, &p)) * phase(-b_exact(&spec.c_ell, &k)) * base;
        assert!((v - expected).norm() < 1e-7, "{} b-law", spec.kernel.name());

        let mut ck = spec.clone();
        ck.c_ell = vec![spec.c_ell[0] + k[0], spec.c_ell[1] + k[1]];
        let v = eval_theta(&ck, &policy).unwrap().value;
        let expected = phase(b_exact(&k, &p)) * phase(b_exact(&spec.b, &k)) * base;
        assert!((v - expected).norm() < 1e-7, "{} c-law", spec.kernel.name());
    }
}

#[test]
fn s_law_completed_kernel() {
    let mut spec = ThetaSpec::new(pair(), Kernel::Completed);
    spec.b = vec![0.1, 0.23];
    spec.c_ell = vec![0.07, -0.31];
    let report = s_law_check(&spec, &TruncationPolicy::default()).unwrap();
    assert_eq!(report.classes.len(), 5);
    assert!(report.holds(1e-4), "{report:?}");
    assert!(report.rhs.iter().map(|v| v.norm()).fold(0.0, f64::max) > 1e-2);
}

#[test]
fn summation_is_deterministic_across_thread_counts() {
    let spec = generic_spec(Kernel::Completed);
    let a = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
    std::env::set_var(THREADS_ENV, "1");
    let b = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
    std::env::set_var(THREADS_ENV, "3");
    let c = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
    std::env::remove_var(THREADS_ENV);
    assert_eq!(a.value, b.value);
    assert_eq!(a.value, c.value);
}

#[test]
fn wall_hits_are_reported() {
    let mut spec = ThetaSpec::new(pair(), Kernel::Holomorphic);
    spec.mu = vec![rat_frac(2, 5), rat_frac(1, 5)];
    let v = eval_theta(&spec, &TruncationPolicy::default()).unwrap();
    assert!(!v.wall_hits.is_empty());
    let a = [[2.0, 1.0], [1.0, -2.0]];
    for k in &v.wall_hits {
        let on_wall = b_pair(&a, &[1.0, 0.0], k).abs() < 1e-12 || b_pair(&a, &[2.0, 1.0], k).abs() < 1e-12;
        assert!(on_wall, "{k:?}");
    }
}

#[test]
fn validation_errors() {
    let mut spec = generic_spec(Kernel::Holomorphic);
    spec.p = vec![1, 0];
    assert!(matches!(eval_theta(&spec, &TruncationPolicy::default()), Err(ThetaError::NotCharacteristic { index: 2 })));
    let mut spec = generic_spec(Kernel::Holomorphic);
    spec.tau = Complex64::new(0.0, -1.0);
    assert!(matches!(eval_theta(&spec, &TruncationPolicy::default()), Err(ThetaError::InvalidSpec(_))));
    let mut spec = generic_spec(Kernel::Holomorphic);
    spec.mu = vec![rat_frac(1, 2), rat(0)];
    assert!(matches!(eval_theta(&spec, &TruncationPolicy::default()), Err(ThetaError::InvalidSpec(_))));
    let bad = ConePair::from_i64_columns(form(), &[vec![1, 0]], &[vec![1, 0]]).unwrap();
    assert!(matches!(eval_theta(&ThetaSpec::new(bad, Kernel::Holomorphic), &TruncationPolicy::default()), Err(ThetaError::ConeCheckFailed(_))));
    let spec = generic_spec(Kernel::Completed);
    let tight = TruncationPolicy { tol: 1e-8, initial_radius: 1.0, max_points: 20 };
    assert!(matches!(eval_theta(&spec, &tight), Err(ThetaError::Budget { .. })));
}
