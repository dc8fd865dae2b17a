//! The three symmetric Lie algebra families u(n), u(k, n−k) and gl(n, ℝ),
//! each split as g = k ⊕ m by the block structure of σ₃.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::{SquareMatrix, C64, ONE, ZERO};

/// Default tolerance for membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("invalid algebra spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("non-finite matrix entry")]
    NonFinite,
    #[error("singular matrix")]
    Singular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "compact_u")]
    CompactUnitary,
    #[serde(rename = "noncompact_u")]
    NoncompactUnitary,
    #[serde(rename = "para_gl")]
    ParaReal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct AlgebraSpec {
    family: Family,
    n: usize,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct RawSpec {
    family: Family,
    n: usize,
    k: usize,
}

impl TryFrom<RawSpec> for AlgebraSpec {
    type Error = AlgebraError;
    fn try_from(r: RawSpec) -> Result<Self, AlgebraError> {
        AlgebraSpec::new(r.family, r.n, r.k)
    }
}

impl From<AlgebraSpec> for RawSpec {
    fn from(s: AlgebraSpec) -> Self {
        RawSpec {
            family: s.family,
            n: s.n,
            k: s.k,
        }
    }
}

impl AlgebraSpec {
    pub fn new(family: Family, n: usize, k: usize) -> Result<Self, AlgebraError> {
        if n < 2 {
            return Err(AlgebraError::InvalidSpec(format!("n must be at least 2, got {n}")));
        }
        if k < 1 || k >= n {
            return Err(AlgebraError::InvalidSpec(format!("k must satisfy 1 ≤ k ≤ n−1, got k={k}, n={n}")));
        }
        Ok(Self { family, n, k })
    }

    pub fn compact(n: usize, k: usize) -> Self {
        Self::new(Family::CompactUnitary, n, k).expect("valid compact spec")
    }

    pub fn noncompact(n: usize, k: usize) -> Self {
        Self::new(Family::NoncompactUnitary, n, k).expect("valid noncompact spec")
    }

    pub fn para(n: usize, k: usize) -> Self {
        Self::new(Family::ParaReal, n, k).expect("valid para spec")
    }

    pub fn family(&self) -> Family {
        self.family
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_para(&self) -> bool {
        self.family == Family::ParaReal
    }

    /// Eigenvalue c of σ₃ on the first block: i/2, or 1/2 for the para case.
    pub fn sigma3_scale(&self) -> C64 {
        if self.is_para() {
            C64::new(0.5, 0.0)
        } else {
            C64::new(0.0, 0.5)
        }
    }

    /// −1 for u(n) (inner product −tr), +1 otherwise.
    pub fn inner_sign(&self) -> f64 {
        match self.family {
            Family::CompactUnitary => -1.0,
            _ => 1.0,
        }
    }

    /// On the orbit φ⁻¹ = κφ: κ = −4 for the unitary families, +4 for para.
    pub fn kappa(&self) -> f64 {
        if self.is_para() {
            4.0
        } else {
            -4.0
        }
    }

    /// φ² = c²·I on the orbit.
    pub fn involution_value(&self) -> f64 {
        if self.is_para() {
            0.25
        } else {
            -0.25
        }
    }

    /// Sign in front of the quartic trace form of the curvature functional.
    pub fn quartic_sign(&self) -> f64 {
        match self.family {
            Family::NoncompactUnitary => -1.0,
            _ => 1.0,
        }
    }

    /// Sign of the cubic term in the simplified third-order generator.
    pub fn cubic_sign(&self) -> f64 {
        if self.is_para() {
            -1.0
        } else {
            1.0
        }
    }

    /// J = diag(I_k, −I_{n−k}).
    pub fn j_matrix(&self) -> SquareMatrix {
        let d: Vec<C64> = (0..self.n).map(|i| if i < self.k { ONE } else { -ONE }).collect();
        SquareMatrix::from_diag(&d)
    }

    #[inline]
    pub fn in_k_block(&self, i: usize, j: usize) -> bool {
        (i < self.k) == (j < self.k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LieDecomposition {
    pub k_part: SquareMatrix,
    pub m_part: SquareMatrix,
}

pub fn sigma3(spec: &AlgebraSpec) -> SquareMatrix {
    let c = spec.sigma3_scale();
    let d: Vec<C64> = (0..spec.n).map(|i| if i < spec.k { c } else { -c }).collect();
    SquareMatrix::from_diag(&d)
}

pub fn bracket(a: &SquareMatrix, b: &SquareMatrix) -> Result<SquareMatrix, AlgebraError> {
    if a.dim() != b.dim() {
        return Err(AlgebraError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(a.comm(b))
}

/// Re(±tr(AB)) together with the imaginary part of ±tr(AB) as a diagnostic.
pub fn inner_with_residual(spec: &AlgebraSpec, a: &SquareMatrix, b: &SquareMatrix) -> (f64, f64) {
    let n = a.dim();
    let mut t = ZERO;
    for i in 0..n {
        for l in 0..n {
            t += a[(i, l)] * b[(l, i)];
        }
    }
    let s = spec.inner_sign();
    (s * t.re, s * t.im)
}

pub fn inner(spec: &AlgebraSpec, a: &SquareMatrix, b: &SquareMatrix) -> f64 {
    inner_with_residual(spec, a, b).0
}

pub fn membership_residual(spec: &AlgebraSpec, a: &SquareMatrix) -> f64 {
    match spec.family {
        Family::CompactUnitary => (a.adjoint() + a).frobenius_norm(),
        Family::NoncompactUnitary => {
            let j = spec.j_matrix();
            (&a.adjoint() * &j + &j * a).frobenius_norm()
        }
        Family::ParaReal => a.as_slice().iter().map(|z| z.im * z.im).sum::<f64>().sqrt(),
    }
}

pub fn decompose(spec: &AlgebraSpec, a: &SquareMatrix) -> LieDecomposition {
    let n = a.dim();
    let mut k_part = SquareMatrix::zeros(n);
    let mut m_part = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if spec.in_k_block(i, j) {
                k_part[(i, j)] = a[(i, j)];
            } else {
                m_part[(i, j)] = a[(i, j)];
            }
        }
    }
    LieDecomposition { k_part, m_part }
}

pub fn k_part(spec: &AlgebraSpec, a: &SquareMatrix) -> SquareMatrix {
    decompose(spec, a).k_part
}

pub fn m_part(spec: &AlgebraSpec, a: &SquareMatrix) -> SquareMatrix {
    decompose(spec, a).m_part
}

/// Orthogonal projection of an arbitrary complex matrix onto g.
pub fn project(spec: &AlgebraSpec, a: &SquareMatrix) -> SquareMatrix {
    match spec.family {
        Family::CompactUnitary => (a - a.adjoint()) * 0.5,
        Family::NoncompactUnitary => {
            let j = spec.j_matrix();
            (a - &(&j * &a.adjoint()) * &j) * 0.5
        }
        Family::ParaReal => a.real_part(),
    }
}

/// Distance of a frame value from the group: ‖E*E − I‖, ‖E*JE − J‖, or
/// the imaginary contamination for GL(n, ℝ).
pub fn group_residual(spec: &AlgebraSpec, e: &SquareMatrix) -> f64 {
    let n = e.dim();
    match spec.family {
        Family::CompactUnitary => (&e.adjoint() * e - SquareMatrix::identity(n)).frobenius_norm(),
        Family::NoncompactUnitary => {
            let j = spec.j_matrix();
            (&(&e.adjoint() * &j) * e - j).frobenius_norm()
        }
        Family::ParaReal => e.max_abs_imag(),
    }
}

const PADE6: [f64; 7] = [
    1.0,
    0.5,
    5.0 / 44.0,
    1.0 / 66.0,
    1.0 / 792.0,
    1.0 / 15840.0,
    1.0 / 665280.0,
];

/// Matrix exponential by scaling and squaring with the (6,6) Padé approximant.
pub fn exp_map(a: &SquareMatrix) -> Result<SquareMatrix, AlgebraError> {
    exp_map_pair(a).map(|(e, _)| e)
}

/// `(exp(A), exp(−A))`, the second obtained from the same Padé factors so the
/// two are inverse to roundoff.
pub fn exp_map_pair(a: &SquareMatrix) -> Result<(SquareMatrix, SquareMatrix), AlgebraError> {
    if !a.is_finite() {
        return Err(AlgebraError::NonFinite);
    }
    let n = a.dim();
    let norm = a.norm1();
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let x = a.scale(0.5f64.powi(s));
    let mut pow = SquareMatrix::identity(n);
    let mut even = SquareMatrix::zeros(n);
    let mut odd = SquareMatrix::zeros(n);
    for (k, c) in PADE6.iter().enumerate() {
        if k > 0 {
            pow = &pow * &x;
        }
        if k % 2 == 0 {
            even.axpy(*c, &pow);
        } else {
            odd.axpy(*c, &pow);
        }
    }
    let num = &even + &odd;
    let den = &even - &odd;
    let mut e = den.solve(&num).ok_or(AlgebraError::Singular)?;
    let mut einv = num.solve(&den).ok_or(AlgebraError::Singular)?;
    for _ in 0..s {
        e = &e * &e;
        einv = &einv * &einv;
    }
    Ok((e, einv))
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random element of g with i.i.d. Gaussian coordinates times `scale`.
pub fn random_element(spec: &AlgebraSpec, rng: &mut impl Rng, scale: f64) -> SquareMatrix {
    let n = spec.n;
    let raw = if spec.is_para() {
        SquareMatrix::from_fn(n, |_, _| C64::new(normal(rng), 0.0))
    } else {
        SquareMatrix::from_fn(n, |_, _| C64::new(normal(rng), normal(rng)))
    };
    project(spec, &raw).scale(scale)
}

pub fn random_k(spec: &AlgebraSpec, rng: &mut impl Rng, scale: f64) -> SquareMatrix {
    k_part(spec, &random_element(spec, rng, scale))
}

pub fn random_m(spec: &AlgebraSpec, rng: &mut impl Rng, scale: f64) -> SquareMatrix {
    m_part(spec, &random_element(spec, rng, scale))
}

/// Random complex matrix with no structure.
pub fn random_matrix(n: usize, rng: &mut impl Rng, scale: f64) -> SquareMatrix {
    SquareMatrix::from_fn(n, |_, _| C64::new(normal(rng), normal(rng)) * scale)
}
