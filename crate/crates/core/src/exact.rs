//! Dense matrices over arbitrary-precision rationals.
//!
//! Only what the cone and sign-lemma engines need: products, determinants,
//! inverses, cofactors and exact inertia of symmetric matrices.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Rat = BigRational;

pub fn rat(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat_frac(num: i64, den: i64) -> Rat {
    Rat::new(BigInt::from(num), BigInt::from(den))
}

/// Exact binary value of a finite float.
pub fn rat_from_f64(x: f64) -> Option<Rat> {
    Rat::from_float(x)
}

pub fn rat_to_f64(x: &Rat) -> f64 {
    x.to_f64().unwrap_or_else(|| {
        // numerator/denominator too large for a direct conversion
        let n = x.numer().to_f64().unwrap_or(f64::NAN);
        let d = x.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Sign of a rational as -1, 0 or 1.
pub fn rat_sign(x: &Rat) -> i32 {
    if x.is_zero() {
        0
    } else if x.is_positive() {
        1
    } else {
        -1
    }
}

/// Inertia of a symmetric matrix: counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Inertia {
    pub fn is_positive_definite(&self) -> bool {
        self.negative == 0 && self.zero == 0
    }

    pub fn is_negative_definite(&self) -> bool {
        self.positive == 0 && self.zero == 0
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct RatMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rat>,
}

impl fmt::Debug for RatMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RatMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "[")?;
            for j in 0..self.cols {
                if j > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{}", self[(i, j)])?;
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

impl Index<(usize, usize)> for RatMatrix {
    type Output = Rat;
    fn index(&self, (i, j): (usize, usize)) -> &Rat {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RatMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Rat {
        &mut self.data[i * self.cols + j]
    }
}

impl RatMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Rat::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Rat::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Rat) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<Rat>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, data: rows.iter().flatten().cloned().collect() }
    }

    pub fn from_i64_rows(rows: &[Vec<i64>]) -> Self {
        let rows: Vec<Vec<Rat>> = rows.iter().map(|r| r.iter().map(|&v| rat(v)).collect()).collect();
        Self::from_rows(&rows)
    }

    /// Matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[Vec<Rat>]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, Vec::len);
        Self::from_fn(r, c, |i, j| cols[j][i].clone())
    }

    pub fn column_vector(v: &[Rat]) -> Self {
        Self { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn column(&self, j: usize) -> Vec<Rat> {
        (0..self.rows).map(|i| self[(i, j)].clone()).collect()
    }

    pub fn row(&self, i: usize) -> Vec<Rat> {
        self.data[i * self.cols..(i + 1) * self.cols].to_vec()
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])].clone())
    }

    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> Self {
        Self::from_fn(rows.len(), cols.len(), |i, j| self[(rows[i], cols[j])].clone())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].clone())
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch in product");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = &self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = &other[(k, j)];
                    if !b.is_zero() {
                        out[(i, j)] += a * b;
                    }
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Rat]) -> Vec<Rat> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut acc = Rat::zero();
                for (j, vj) in v.iter().enumerate() {
                    if !vj.is_zero() {
                        acc += &self[(i, j)] * vj;
                    }
                }
                acc
            })
            .collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |i, j| &self[(i, j)] + &other[(i, j)])
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self::from_fn(self.rows, self.cols, |i, j| &self[(i, j)] - &other[(i, j)])
    }

    pub fn scale(&self, s: &Rat) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| &self[(i, j)] * s)
    }

    pub fn neg(&self) -> Self {
        self.scale(&rat(-1))
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square() && (0..self.rows).all(|i| (0..i).all(|j| self[(i, j)] == self[(j, i)]))
    }

    pub fn is_integral(&self) -> bool {
        self.data.iter().all(|x| x.is_integer())
    }

    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| rat_to_f64(&self[(i, j)]))
    }

    /// Determinant by fraction-carrying Gaussian elimination with nonzero pivoting.
    pub fn det(&self) -> Rat {
        assert!(self.is_square(), "determinant of non-square matrix");
        let n = self.rows;
        if n == 0 {
            return Rat::one();
        }
        let mut m = self.clone();
        let mut det = Rat::one();
        for k in 0..n {
            let Some(p) = (k..n).find(|&i| !m[(i, k)].is_zero()) else {
                return Rat::zero();
            };
            if p != k {
                m.swap_rows(p, k);
                det = -det;
            }
            let pivot = m[(k, k)].clone();
            det *= &pivot;
            for i in k + 1..n {
                if m[(i, k)].is_zero() {
                    continue;
                }
                let f = &m[(i, k)] / &pivot;
                for j in k..n {
                    let t = &f * &m[(k, j)];
                    m[(i, j)] -= t;
                }
            }
        }
        det
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    /// Inverse by Gauss–Jordan elimination; `None` when singular.
    pub fn inverse(&self) -> Option<Self> {
        assert!(self.is_square(), "inverse of non-square matrix");
        let n = self.rows;
        let mut m = self.clone();
        let mut inv = Self::identity(n);
        for k in 0..n {
            let p = (k..n).find(|&i| !m[(i, k)].is_zero())?;
            m.swap_rows(p, k);
            inv.swap_rows(p, k);
            let pivot = m[(k, k)].clone();
            for j in 0..n {
                m[(k, j)] /= &pivot;
                inv[(k, j)] /= &pivot;
            }
            for i in 0..n {
                if i == k || m[(i, k)].is_zero() {
                    continue;
                }
                let f = m[(i, k)].clone();
                for j in 0..n {
                    let t = &f * &m[(k, j)];
                    m[(i, j)] -= t;
                    let t = &f * &inv[(k, j)];
                    inv[(i, j)] -= t;
                }
            }
        }
        Some(inv)
    }

    /// Solves `self * x = b` for square nonsingular `self`.
    pub fn solve(&self, b: &Self) -> Option<Self> {
        Some(self.inverse()?.mul(b))
    }

    /// Signed minor `(-1)^{i+j} det(A without row i, column j)`.
    pub fn cofactor(&self, i: usize, j: usize) -> Rat {
        let n = self.rows;
        let rows: Vec<usize> = (0..n).filter(|&k| k != i).collect();
        let cols: Vec<usize> = (0..n).filter(|&k| k != j).collect();
        let minor = self.submatrix(&rows, &cols).det();
        if (i + j) % 2 == 0 {
            minor
        } else {
            -minor
        }
    }

    /// Full cofactor matrix. Valid for singular matrices as well.
    pub fn cofactor_matrix(&self) -> Self {
        assert!(self.is_square());
        let n = self.rows;
        if n == 1 {
            return Self::identity(1);
        }
        Self::from_fn(n, n, |i, j| self.cofactor(i, j))
    }

    /// Exact inertia of a symmetric matrix via symmetric (congruence) elimination.
    ///
    /// Pivots on a nonzero diagonal entry when one exists; otherwise a nonzero
    /// off-diagonal entry `a_ij` is folded into the diagonal with the congruence
    /// `row_i += row_j, col_i += col_j`, which makes `a_ii = 2 a_ij != 0`.
    pub fn inertia(&self) -> Inertia {
        assert!(self.is_symmetric(), "inertia of non-symmetric matrix");
        let mut m = self.clone();
        let mut active: Vec<usize> = (0..m.rows).collect();
        let mut inertia = Inertia { positive: 0, negative: 0, zero: 0 };
        while !active.is_empty() {
            let pivot = match active.iter().copied().find(|&i| !m[(i, i)].is_zero()) {
                Some(p) => p,
                None => {
                    let pair = active.iter().enumerate().find_map(|(a, &i)| {
                        active[a + 1..].iter().copied().find(|&j| !m[(i, j)].is_zero()).map(|j| (i, j))
                    });
                    match pair {
                        Some((i, j)) => {
                            for &k in &active {
                                let t = m[(j, k)].clone();
                                m[(i, k)] += t;
                            }
                            for &k in &active {
                                let t = m[(k, j)].clone();
                                m[(k, i)] += t;
                            }
                            i
                        }
                        None => {
                            inertia.zero += active.len();
                            break;
                        }
                    }
                }
            };
            let d = m[(pivot, pivot)].clone();
            if d.is_positive() {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            active.retain(|&k| k != pivot);
            for &i in &active {
                if m[(i, pivot)].is_zero() {
                    continue;
                }
                let f = &m[(i, pivot)] / &d;
                for &j in &active {
                    let t = &f * &m[(pivot, j)];
                    m[(i, j)] -= t;
                }
            }
        }
        inertia
    }

    /// Quadratic form `x^T self y`.
    pub fn bilinear(&self, x: &[Rat], y: &[Rat]) -> Rat {
        let ay = self.mul_vec(y);
        x.iter().zip(&ay).fold(Rat::zero(), |acc, (a, b)| acc + a * b)
    }
}

pub fn dot(x: &[Rat], y: &[Rat]) -> Rat {
    x.iter().zip(y).fold(Rat::zero(), |acc, (a, b)| acc + a * b)
}

/// Serializable form of an exact rational: decimal numerator and denominator strings.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RatRepr {
    pub num: String,
    pub den: String,
}

impl From<&Rat> for RatRepr {
    fn from(x: &Rat) -> Self {
        RatRepr { num: x.numer().to_string(), den: x.denom().to_string() }
    }
}

impl RatRepr {
    pub fn to_rat(&self) -> Option<Rat> {
        let n: BigInt = self.num.parse().ok()?;
        let d: BigInt = self.den.parse().ok()?;
        if d.is_zero() {
            return None;
        }
        Some(Rat::new(n, d))
    }
}

/// Row-major serializable copy of a matrix.
pub fn matrix_repr(m: &RatMatrix) -> Vec<Vec<RatRepr>> {
    (0..m.rows()).map(|i| m.row(i).iter().map(RatRepr::from).collect()).collect()
}

/// Parses "a", "-a" or "a/b".
pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: BigInt = n.trim().parse().ok()?;
            let d: BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                None
            } else {
                Some(Rat::new(n, d))
            }
        }
        None => Some(Rat::from_integer(s.parse().ok()?)),
    }
}

pub fn abs(x: &Rat) -> Rat {
    x.abs()
}
