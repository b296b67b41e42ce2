mod common;

use std::time::Instant;

use proptest::prelude::*;
use theta_forge::exact::{rat, rat_frac, RatMatrix};
use theta_forge::verify::{random_frame, random_sign_lemma_instance, run_suite, sign_identity_specialized, sign_lemma_sum, Level, SignLemmaInstance, VerifyError};
use theta_forge::Subset;

#[test]
fn fast_suite_passes_quickly() {
    let start = Instant::now();
    let reports = run_suite(Level::Fast, 7);
    let elapsed = start.elapsed().as_secs_f64();
    for r in &reports {
        println!("{} residual {:.3e} tol {:.1e} pass {} ({})", r.name, r.residual, r.tolerance, r.pass, r.inputs);
    }
    assert!(reports.iter().all(|r| r.pass));
    assert!(reports.windows(2).all(|w| w[0].name < w[1].name));
    assert!(!reports.iter().any(|r| r.name == "theta.s_law"));
    assert!(elapsed < 60.0, "fast suite took {elapsed:.1}s");
}

#[test]
fn suite_is_reproducible() {
    let a: Vec<_> = run_suite(Level::Fast, 3).into_iter().filter(|r| r.name.starts_with("verify") || r.name.starts_with("cones")).collect();
    let b: Vec<_> = run_suite(Level::Fast, 3).into_iter().filter(|r| r.name.starts_with("verify") || r.name.starts_with("cones")).collect();
    assert_eq!(a, b);
}

#[test]
fn three_dimensional_example_by_hand() {
    // G = diag(1,2,4), v = (1,-1,1)
    let g = RatMatrix::from_i64_rows(&[vec![1, 0, 0], vec![0, 2, 0], vec![0, 0, 4]]);
    let inst = SignLemmaInstance::new(g, vec![rat(1), rat(-1), rat(1)]).unwrap();
    assert_eq!(inst.transformed(Subset::from_indices(&[1])), vec![rat_frac(1, 2), rat(1), rat(1)]);
    assert_eq!(sign_lemma_sum(&inst), Ok(0));
}

#[test]
fn nearly_degenerate_point_is_flagged() {
    let mut rng = common::rng(5);
    let f = random_frame(&mut rng, 2);
    let w = f.w_col(0);
    let u = [-w[1] + 1e-13, w[0]];
    let err = sign_identity_specialized(&f, &u, Subset::full(2)).unwrap_err();
    assert!(matches!(err, VerifyError::GenericityViolated { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_lemma_vanishes(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = common::rng(seed);
        let inst = random_sign_lemma_instance(&mut rng, n);
        prop_assert_eq!(sign_lemma_sum(&inst), Ok(0));
    }

    #[test]
    fn specialized_identity_vanishes(seed in any::<u64>(), r in 1usize..=4) {
        let mut rng = common::rng(seed);
        let f = random_frame(&mut rng, r);
        let u = theta_forge::verify::generic_point(&mut rng, &f, 1e-3);
        for n in Subset::all(r).filter(|s| !s.is_empty()) {
            match sign_identity_specialized(&f, &u, n) {
                Ok(s) => prop_assert_eq!(s, 0),
                Err(VerifyError::GenericityViolated { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
