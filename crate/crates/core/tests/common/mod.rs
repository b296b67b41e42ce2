#![allow(dead_code)]

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use theta_forge::ErrorFunctionFrame;

/// erfc from a positive-term series for small x and a continued fraction for large x.
pub fn erfc_oracle(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc_oracle(-x);
    }
    if x < 3.0 {
        return 1.0 - erf_series(x);
    }
    // erfc(x) = exp(-x²)/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = x;
    for n in (1..=400).rev() {
        tail = x + (n as f64 / 2.0) / tail;
    }
    (-x * x).exp() / PI.sqrt() / tail
}

pub fn erf_oracle(x: f64) -> f64 {
    if x < 0.0 {
        return -erf_oracle(-x);
    }
    if x < 3.0 {
        erf_series(x)
    } else {
        1.0 - erfc_oracle(x)
    }
}

// erf(x) = 2/√π exp(-x²) Σ 2^n x^(2n+1) / (1·3·…·(2n+1))
fn erf_series(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    let mut n = 0.0;
    while term > 1e-18 * sum {
        n += 1.0;
        term *= 2.0 * x * x / (2.0 * n + 1.0);
        sum += term;
    }
    2.0 / PI.sqrt() * (-x * x).exp() * sum
}

/// `M_1(1; u) = -sign(u) erfc(√π |u|)`.
pub fn m1_oracle(u: f64) -> f64 {
    -u.signum() * erfc_oracle(PI.sqrt() * u.abs())
}

/// `E_1(1; u) = erf(√π u)`.
pub fn e1_oracle(u: f64) -> f64 {
    erf_oracle(PI.sqrt() * u)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random frame with entries in [-1, 1] and condition number below 20.
pub fn random_frame(rng: &mut ChaCha8Rng, r: usize) -> ErrorFunctionFrame {
    loop {
        let cols: Vec<Vec<f64>> = (0..r).map(|_| (0..r).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let m = nalgebra::DMatrix::from_fn(r, r, |i, j| cols[j][i]);
        let sv = m.clone().singular_values();
        let cond = sv.max() / sv.min();
        if cond < 20.0 {
            return ErrorFunctionFrame::from_columns(&cols).unwrap();
        }
    }
}

/// Point in [-1.5, 1.5]^r at least `margin` (relative to |u|) away from every wall of `frame`.
pub fn generic_point(rng: &mut ChaCha8Rng, frame: &ErrorFunctionFrame, margin: f64) -> Vec<f64> {
    let r = frame.rank();
    loop {
        let u: Vec<f64> = (0..r).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let uv = nalgebra::DVector::from_column_slice(&u);
        let ok = (0..r).all(|j| {
            let w = frame.w_col(j);
            w.dot(&uv).abs() / w.norm() > margin * uv.norm().max(0.1)
        });
        if ok {
            return u;
        }
    }
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Random integral symmetric form on Z^n with the requested signature.
pub fn random_form(rng: &mut ChaCha8Rng, n: usize, positive: usize) -> theta_forge::BilinearForm {
    loop {
        let mut rows = vec![vec![0i64; n]; n];
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-3..=3);
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        if let Ok(f) = theta_forge::BilinearForm::from_rows(&rows) {
            if f.signature() == (positive, n - positive) {
                return f;
            }
        }
    }
}

/// Random cone of `s` columns: mostly in the positive eigenspace of the form, tilted
/// slightly into the negative one, with a well-conditioned Gram matrix.
pub fn random_cone_columns(rng: &mut ChaCha8Rng, form: &theta_forge::BilinearForm, s: usize) -> nalgebra::DMatrix<f64> {
    let n = form.dim();
    let eig = form.matrix_f64().clone().symmetric_eigen();
    let pos: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > 0.0).collect();
    let neg: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] < 0.0).collect();
    assert!(pos.len() >= s);
    loop {
        let mut c = nalgebra::DMatrix::zeros(n, s);
        for j in 0..s {
            for &k in &pos {
                let w = rng.gen_range(-1.0..1.0) / eig.eigenvalues[k].sqrt();
                c.column_mut(j).axpy(w, &eig.eigenvectors.column(k), 1.0);
            }
            for &k in &neg {
                let w = rng.gen_range(-0.3..0.3) / (-eig.eigenvalues[k]).sqrt();
                c.column_mut(j).axpy(w, &eig.eigenvectors.column(k), 1.0);
            }
        }
        let gram = c.transpose() * form.matrix_f64() * &c;
        let ev = gram.symmetric_eigenvalues();
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        let max = ev.iter().copied().fold(0.0, f64::max);
        if min > 0.05 * max && min > 0.05 {
            return c;
        }
    }
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}
