//! Matrix-valued fields on a uniform periodic grid: O(h⁴) central
//! differences, periodic quadrature and a trapezoid running integral.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::SquareMatrix;
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid with {n} points is too small for a derivative of order {order} (need {min})")]
    StencilTooSmall { order: usize, n: usize, min: usize },
    #[error("derivative order {0} is not supported (1..=4)")]
    UnsupportedOrder(usize),
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("matrix dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct Grid {
    n: usize,
    length: f64,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "L")]
    length: f64,
}

impl TryFrom<RawGrid> for Grid {
    type Error = FieldError;
    fn try_from(r: RawGrid) -> Result<Self, FieldError> {
        Grid::new(r.n, r.length)
    }
}

impl From<Grid> for RawGrid {
    fn from(g: Grid) -> Self {
        RawGrid {
            n: g.n,
            length: g.length,
        }
    }
}

impl Grid {
    pub fn new(n: usize, length: f64) -> Result<Self, FieldError> {
        if n == 0 {
            return Err(FieldError::InvalidGrid("N must be positive".into()));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(FieldError::InvalidGrid(format!("L must be positive and finite, got {length}")));
        }
        Ok(Self { n, length })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.length / self.n as f64
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.h()
    }

    /// Same length, `factor` times as many points.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            n: self.n * factor,
            length: self.length,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    dim: usize,
    values: Vec<SquareMatrix>,
}

impl MatrixField {
    pub fn new(grid: Grid, values: Vec<SquareMatrix>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let dim = values[0].dim();
        if let Some(bad) = values.iter().find(|m| m.dim() != dim) {
            return Err(FieldError::DimensionMismatch(dim, bad.dim()));
        }
        Ok(Self { grid, dim, values })
    }

    /// Builds a field from a per-point closure, evaluated in parallel.
    pub fn from_fn<F>(grid: Grid, f: F) -> Self
    where
        F: Fn(usize) -> SquareMatrix + Sync + Send,
    {
        let values = par::map_indexed(grid.len(), f);
        let dim = values[0].dim();
        debug_assert!(values.iter().all(|m| m.dim() == dim));
        Self { grid, dim, values }
    }

    pub fn constant(grid: Grid, m: &SquareMatrix) -> Self {
        Self {
            grid,
            dim: m.dim(),
            values: vec![m.clone(); grid.len()],
        }
    }

    pub fn zeros(grid: Grid, dim: usize) -> Self {
        Self::constant(grid, &SquareMatrix::zeros(dim))
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn values(&self) -> &[SquareMatrix] {
        &self.values
    }

    #[inline]
    pub fn at(&self, j: usize) -> &SquareMatrix {
        &self.values[j]
    }

    pub fn into_values(self) -> Vec<SquareMatrix> {
        self.values
    }

    pub fn map<F>(&self, f: F) -> Self
    where
        F: Fn(&SquareMatrix) -> SquareMatrix + Sync + Send,
    {
        Self::from_fn(self.grid, |j| f(&self.values[j]))
    }

    pub fn zip_map<F>(&self, other: &Self, f: F) -> Self
    where
        F: Fn(&SquareMatrix, &SquareMatrix) -> SquareMatrix + Sync + Send,
    {
        debug_assert_eq!(self.grid.len(), other.grid.len());
        Self::from_fn(self.grid, |j| f(&self.values[j], &other.values[j]))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|m| m.scale(s))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, |a, b| a - b)
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        self.zip_map(other, |a, b| {
            let mut c = a.clone();
            c.axpy(s, b);
            c
        })
    }

    /// Largest pointwise Frobenius norm.
    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|m| m.frobenius_norm()).fold(0.0, f64::max)
    }

    pub fn max_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a.distance(b))
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|m| m.is_finite())
    }

    pub fn snapshot(&self) -> FieldSnapshot {
        FieldSnapshot {
            grid: self.grid,
            values: self.values.clone(),
        }
    }

    pub fn from_snapshot(s: FieldSnapshot) -> Result<Self, FieldError> {
        Self::new(s.grid, s.values)
    }
}

/// JSON form of a field: `{"grid": {"N":…, "L":…}, "values": [matrix, …]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub grid: Grid,
    pub values: Vec<SquareMatrix>,
}

/// Offsets and integer weights of each stencil; the divisor is `den·h^order`.
fn stencil(order: usize) -> (&'static [(isize, f64)], f64) {
    match order {
        1 => (&[(-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)], 12.0),
        2 => (&[(-2, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)], 12.0),
        3 => (&[(-3, 1.0), (-2, -8.0), (-1, 13.0), (1, -13.0), (2, 8.0), (3, -1.0)], 8.0),
        4 => (
            &[(-3, -1.0), (-2, 12.0), (-1, -39.0), (0, 56.0), (1, -39.0), (2, 12.0), (3, -1.0)],
            6.0,
        ),
        _ => (&[], 1.0),
    }
}

pub fn min_points(order: usize) -> usize {
    if order <= 2 {
        5
    } else {
        16
    }
}

/// Largest modulus of the Fourier symbol of the order-`order` stencil times
/// `h^order`; this is the amplification factor used in step-size bounds.
pub fn stencil_amplification(order: usize) -> f64 {
    let (weights, den) = stencil(order);
    (0..=2000)
        .map(|i| {
            let theta = std::f64::consts::PI * i as f64 / 2000.0;
            let (mut re, mut im) = (0.0, 0.0);
            for &(s, w) in weights {
                re += w * (s as f64 * theta).cos();
                im += w * (s as f64 * theta).sin();
            }
            (re * re + im * im).sqrt() / den
        })
        .fold(0.0, f64::max)
}

/// Periodic central difference of the given order with O(h⁴) accuracy.
pub fn derivative(f: &MatrixField, order: usize) -> Result<MatrixField, FieldError> {
    if !(1..=4).contains(&order) {
        return Err(FieldError::UnsupportedOrder(order));
    }
    let n = f.grid.len();
    let min = min_points(order);
    if n < min {
        return Err(FieldError::StencilTooSmall { order, n, min });
    }
    let (weights, den) = stencil(order);
    let scale = 1.0 / (den * f.grid.h().powi(order as i32));
    let dim = f.dim;
    Ok(MatrixField::from_fn(f.grid, |j| {
        let mut out = SquareMatrix::zeros(dim);
        for &(s, w) in weights {
            let idx = (j as isize + s).rem_euclid(n as isize) as usize;
            out.axpy(w * scale, &f.values[idx]);
        }
        out
    }))
}

/// `[f, f', …, f^(max_order)]`.
pub fn derivatives(f: &MatrixField, max_order: usize) -> Result<Vec<MatrixField>, FieldError> {
    let mut out = vec![f.clone()];
    for order in 1..=max_order {
        out.push(derivative(f, order)?);
    }
    Ok(out)
}

/// `h·Σ f_j`.
pub fn quadrature(f: &MatrixField) -> SquareMatrix {
    let mut acc = SquareMatrix::zeros(f.dim);
    for m in &f.values {
        acc += m;
    }
    acc.scale(f.grid.h())
}

/// `h·Σ f_j` for a scalar density.
pub fn quadrature_scalar(grid: &Grid, values: &[f64]) -> f64 {
    grid.h() * values.iter().sum::<f64>()
}

/// Trapezoid running integral from x = 0 with no periodic wrap.
pub fn cumulative_integral(f: &MatrixField) -> MatrixField {
    let h = f.grid.h();
    let mut out = Vec::with_capacity(f.values.len());
    let mut acc = SquareMatrix::zeros(f.dim);
    out.push(acc.clone());
    for w in f.values.windows(2) {
        acc.axpy(0.5 * h, &w[0]);
        acc.axpy(0.5 * h, &w[1]);
        out.push(acc.clone());
    }
    MatrixField {
        grid: f.grid,
        dim: f.dim,
        values: out,
    }
}
