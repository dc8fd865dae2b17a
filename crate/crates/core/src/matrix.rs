//! Small dense complex square matrices.
//!
//! Storage is inline for n ≤ 4, which covers every grid-point matrix the
//! flows touch in practice; larger sizes spill to the heap transparently.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use smallvec::SmallVec;

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: SmallVec<[C64; 16]>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: smallvec::smallvec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = SmallVec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_diag(diag: &[C64]) -> Self {
        let n = diag.len();
        Self::from_fn(n, |i, j| if i == j { diag[i] } else { ZERO })
    }

    /// Row-major construction; panics if `entries.len()` is not a square.
    pub fn from_row_major(entries: &[C64]) -> Self {
        let n = (entries.len() as f64).sqrt().round() as usize;
        assert_eq!(n * n, entries.len(), "entry count is not a perfect square");
        Self {
            n,
            data: SmallVec::from_slice(entries),
        }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        Self::from_fn(n, |i, j| C64::new(rows[i][j], 0.0))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)])
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn real_part(&self) -> Self {
        self.map(|z| C64::new(z.re, 0.0))
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_imag(&self) -> f64 {
        self.data.iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|z| z * s)
    }

    pub fn scale_c(&self, s: C64) -> Self {
        self.map(|z| z * s)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert_eq!(self.n, other.n);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * s;
        }
    }

    /// Commutator `AB − BA` without dimension checks beyond debug builds.
    pub fn comm(&self, other: &Self) -> Self {
        self * other - other * self
    }

    /// Anticommutator `AB + BA`.
    pub fn anticomm(&self, other: &Self) -> Self {
        self * other + other * self
    }

    pub fn distance(&self, other: &Self) -> f64 {
        (self - other).frobenius_norm()
    }

    /// Inverse by Gauss–Jordan with partial pivoting (closed form for 2×2).
    pub fn try_inverse(&self) -> Option<Self> {
        let n = self.n;
        if n == 2 {
            let (a, b, c, d) = (self[(0, 0)], self[(0, 1)], self[(1, 0)], self[(1, 1)]);
            let det = a * d - b * c;
            let r0 = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let r1 = (c.norm_sqr() + d.norm_sqr()).sqrt();
            if det.norm() <= f64::EPSILON * r0 * r1 || !det.is_finite() {
                return None;
            }
            let r = det.inv();
            return Some(Self::from_row_major(&[d * r, -b * r, -c * r, a * r]));
        }
        self.solve(&Self::identity(n))
    }

    /// Solves `self · X = rhs`.
    pub fn solve(&self, rhs: &Self) -> Option<Self> {
        let n = self.n;
        let mut a = self.clone();
        let mut x = rhs.clone();
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[(i, col)].norm().total_cmp(&a[(j, col)].norm()))
                .unwrap();
            if a[(piv, col)].norm() <= 1e-14 * scale {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.data.swap(piv * n + j, col * n + j);
                    x.data.swap(piv * n + j, col * n + j);
                }
            }
            let inv = a[(col, col)].inv();
            for j in 0..n {
                a[(col, j)] *= inv;
                x[(col, j)] *= inv;
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let f = a[(i, col)];
                if f == ZERO {
                    continue;
                }
                for j in 0..n {
                    let (ac, xc) = (a[(col, j)], x[(col, j)]);
                    a[(i, j)] -= f * ac;
                    x[(i, j)] -= f * xc;
                }
            }
        }
        Some(x)
    }

    /// Copy of the `rows × cols` block starting at `(r0, c0)`, row-major.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Vec<C64> {
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(self[(r0 + i, c0 + j)]);
            }
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, rows: usize, cols: usize, vals: &[C64]) {
        for i in 0..rows {
            for j in 0..cols {
                self[(r0 + i, c0 + j)] = vals[i * cols + j];
            }
        }
    }

    pub fn to_nested(&self) -> Vec<Vec<[f64; 2]>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| [self[(i, j)].re, self[(i, j)].im]).collect())
            .collect()
    }

    pub fn from_nested(rows: &[Vec<[f64; 2]>]) -> Result<Self, String> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(format!("matrix rows must all have length {n}"));
        }
        Ok(Self::from_fn(n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
    }
}

impl Index<(usize, usize)> for SquareMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for SquareMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl<'a> Mul<&'a SquareMatrix> for &'a SquareMatrix {
    type Output = SquareMatrix;
    fn mul(self, rhs: &'a SquareMatrix) -> SquareMatrix {
        debug_assert_eq!(self.n, rhs.n);
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for l in 0..n {
                let a = self.data[i * n + l];
                if a == ZERO {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[l * n + j];
                }
            }
        }
        out
    }
}

macro_rules! forward_binop {
    ($tr:ident, $f:ident) => {
        impl $tr<SquareMatrix> for SquareMatrix {
            type Output = SquareMatrix;
            fn $f(self, rhs: SquareMatrix) -> SquareMatrix {
                (&self).$f(&rhs)
            }
        }
        impl<'a> $tr<&'a SquareMatrix> for SquareMatrix {
            type Output = SquareMatrix;
            fn $f(self, rhs: &'a SquareMatrix) -> SquareMatrix {
                (&self).$f(rhs)
            }
        }
        impl<'a> $tr<SquareMatrix> for &'a SquareMatrix {
            type Output = SquareMatrix;
            fn $f(self, rhs: SquareMatrix) -> SquareMatrix {
                self.$f(&rhs)
            }
        }
    };
}

impl<'a> Add<&'a SquareMatrix> for &'a SquareMatrix {
    type Output = SquareMatrix;
    fn add(self, rhs: &'a SquareMatrix) -> SquareMatrix {
        debug_assert_eq!(self.n, rhs.n);
        SquareMatrix {
            n: self.n,
            data: self.data.iter().zip(rhs.data.iter()).map(|(a, b)| a + b).collect(),
        }
    }
}

impl<'a> Sub<&'a SquareMatrix> for &'a SquareMatrix {
    type Output = SquareMatrix;
    fn sub(self, rhs: &'a SquareMatrix) -> SquareMatrix {
        debug_assert_eq!(self.n, rhs.n);
        SquareMatrix {
            n: self.n,
            data: self.data.iter().zip(rhs.data.iter()).map(|(a, b)| a - b).collect(),
        }
    }
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);

impl AddAssign<&SquareMatrix> for SquareMatrix {
    fn add_assign(&mut self, rhs: &SquareMatrix) {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a += b;
        }
    }
}

impl AddAssign<SquareMatrix> for SquareMatrix {
    fn add_assign(&mut self, rhs: SquareMatrix) {
        *self += &rhs;
    }
}

impl SubAssign<&SquareMatrix> for SquareMatrix {
    fn sub_assign(&mut self, rhs: &SquareMatrix) {
        for (a, b) in self.data.iter_mut().zip(rhs.data.iter()) {
            *a -= b;
        }
    }
}

impl SubAssign<SquareMatrix> for SquareMatrix {
    fn sub_assign(&mut self, rhs: SquareMatrix) {
        *self -= &rhs;
    }
}

impl Mul<f64> for &SquareMatrix {
    type Output = SquareMatrix;
    fn mul(self, s: f64) -> SquareMatrix {
        self.scale(s)
    }
}

impl Mul<f64> for SquareMatrix {
    type Output = SquareMatrix;
    fn mul(mut self, s: f64) -> SquareMatrix {
        for z in self.data.iter_mut() {
            *z *= s;
        }
        self
    }
}

impl Mul<C64> for &SquareMatrix {
    type Output = SquareMatrix;
    fn mul(self, s: C64) -> SquareMatrix {
        self.scale_c(s)
    }
}

impl Mul<C64> for SquareMatrix {
    type Output = SquareMatrix;
    fn mul(mut self, s: C64) -> SquareMatrix {
        for z in self.data.iter_mut() {
            *z *= s;
        }
        self
    }
}

impl Neg for SquareMatrix {
    type Output = SquareMatrix;
    fn neg(mut self) -> SquareMatrix {
        for z in self.data.iter_mut() {
            *z = -*z;
        }
        self
    }
}

impl Neg for &SquareMatrix {
    type Output = SquareMatrix;
    fn neg(self) -> SquareMatrix {
        -self.clone()
    }
}

impl Serialize for SquareMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_nested().serialize(s)
    }
}

impl<'de> Deserialize<'de> for SquareMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        Self::from_nested(&rows).map_err(serde::de::Error::custom)
    }
}

/// Product of a chain of matrices, left to right.
pub fn chain(factors: &[&SquareMatrix]) -> SquareMatrix {
    let mut it = factors.iter();
    let first = (*it.next().expect("empty product")).clone();
    it.fold(first, |acc, m| &acc * *m)
}
