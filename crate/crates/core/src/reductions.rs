//! The n = 2 pictures of the flows: orbit points as 3-vectors on the sphere,
//! the hyperbolic plane or de Sitter space, and the scalar equations for the
//! potential. Everything here is written out independently of the matrix
//! code and serves as a cross-check on it.
//!
//! Dictionaries (x ↦ φ):
//!
//! * u(2): φ = ½((ix₁, x₂ + ix₃), (−x₂ + ix₃, −ix₁)), on x₁² + x₂² + x₃² = 1;
//! * u(1,1): φ = ½((ix₃, x₁ + ix₂), (x₁ − ix₂, −ix₃)), on x₁² + x₂² − x₃² = −1, x₃ > 0;
//! * gl(2,ℝ): φ = ½((x₁, x₂ + x₃), (x₂ − x₃, −x₁)), on x₁² + x₂² − x₃² = 1.
//!
//! Under these maps the matrix bracket becomes a×b, J(a×b) and −J(a×b)
//! respectively, with J = diag(1, 1, −1).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraSpec, Family};
use crate::fields::{derivatives, FieldError, Grid, MatrixField};
use crate::flows::{self, FlowError, FlowKind, GeneratorForm, StepOptions};
use crate::functionals::FlowParams;
use crate::gauge::{nonlocal_integrand_point, nonlocal_point, potential_local_point, PotentialState};
use crate::matrix::{SquareMatrix, C64, I, ZERO};
use crate::orbit::{OrbitError, OrbitState};
use crate::par;

/// Allowed departure from the quadric when a field enters the dictionary.
pub const QUADRIC_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error("needs a 2×2 algebra with k = 1, got {0}")]
    Dimension(String),
    #[error("point {index} is off the quadric by {residual:.3e}")]
    OffQuadric { index: usize, residual: f64 },
    #[error("{0}")]
    Shape(String),
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Sphere,
    Hyperbolic,
    DeSitter,
}

impl Geometry {
    pub fn of_family(family: Family) -> Self {
        match family {
            Family::CompactUnitary => Self::Sphere,
            Family::NoncompactUnitary => Self::Hyperbolic,
            Family::ParaReal => Self::DeSitter,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Self::Sphere => Family::CompactUnitary,
            Self::Hyperbolic => Family::NoncompactUnitary,
            Self::DeSitter => Family::ParaReal,
        }
    }

    pub fn spec(self) -> AlgebraSpec {
        AlgebraSpec::new(self.family(), 2, 1).expect("n = 2, k = 1 is valid for every family")
    }

    /// Value of ⟨s, s⟩ on the quadric.
    pub fn level(self) -> f64 {
        match self {
            Self::Hyperbolic => -1.0,
            _ => 1.0,
        }
    }

    /// ⟨a, b⟩: Euclidean on the sphere, signature (+, +, −) otherwise.
    pub fn dot(self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        let last = if self == Self::Sphere { 1.0 } else { -1.0 };
        a[0] * b[0] + a[1] * b[1] + last * a[2] * b[2]
    }

    /// The cross product induced by the matrix bracket.
    pub fn cross(self, a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
        let c = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
        match self {
            Self::Sphere => c,
            Self::Hyperbolic => [c[0], c[1], -c[2]],
            Self::DeSitter => [-c[0], -c[1], c[2]],
        }
    }

    /// Sign of the (4γ − 2β) term in the vector equation.
    fn quartic_sign(self) -> f64 {
        match self {
            Self::Hyperbolic => 1.0,
            _ => -1.0,
        }
    }

    /// Linear map from 3-vectors to g.
    pub fn to_matrix(self, x: &[f64; 3]) -> SquareMatrix {
        let c = |re: f64, im: f64| C64::new(0.5 * re, 0.5 * im);
        let e = match self {
            Self::Sphere => [c(0.0, x[0]), c(x[1], x[2]), c(-x[1], x[2]), c(0.0, -x[0])],
            Self::Hyperbolic => [c(0.0, x[2]), c(x[0], x[1]), c(x[0], -x[1]), c(0.0, -x[2])],
            Self::DeSitter => [c(x[0], 0.0), c(x[1] + x[2], 0.0), c(x[1] - x[2], 0.0), c(-x[0], 0.0)],
        };
        SquareMatrix::from_row_major(&e)
    }

    /// Inverse of [`Geometry::to_matrix`] on g; other components are dropped.
    pub fn to_vector(self, m: &SquareMatrix) -> [f64; 3] {
        let (a, b, c) = (m[(0, 0)], m[(0, 1)], m[(1, 0)]);
        match self {
            Self::Sphere => [2.0 * a.im, 2.0 * b.re, 2.0 * b.im],
            Self::Hyperbolic => [2.0 * b.re, 2.0 * b.im, 2.0 * a.im],
            Self::DeSitter => [2.0 * a.re, (b + c).re, (b - c).re],
        }
    }

    /// Pulls `s` back to the quadric along the ray through the origin,
    /// keeping s₃ > 0 on the hyperbolic sheet.
    pub fn normalize(self, s: &[f64; 3]) -> [f64; 3] {
        let q = self.dot(s, s);
        let scale = 1.0 / q.abs().sqrt();
        let sign = if self == Self::Hyperbolic && s[2] < 0.0 { -1.0 } else { 1.0 };
        [s[0] * scale * sign, s[1] * scale * sign, s[2] * scale * sign]
    }
}

/// A field of 3-vectors on one of the quadrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinField {
    pub geometry: Geometry,
    pub grid: Grid,
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub s3: Vec<f64>,
}

impl SpinField {
    pub fn new(geometry: Geometry, grid: Grid, points: &[[f64; 3]]) -> Result<Self, ReductionError> {
        if points.len() != grid.len() {
            return Err(ReductionError::Shape(format!("{} points for a grid of {}", points.len(), grid.len())));
        }
        Ok(Self {
            geometry,
            grid,
            s1: points.iter().map(|p| p[0]).collect(),
            s2: points.iter().map(|p| p[1]).collect(),
            s3: points.iter().map(|p| p[2]).collect(),
        })
    }

    pub fn from_fn(geometry: Geometry, grid: Grid, f: impl Fn(f64) -> [f64; 3]) -> Result<Self, ReductionError> {
        let pts: Vec<[f64; 3]> = (0..grid.len()).map(|j| f(grid.x(j))).collect();
        Self::new(geometry, grid, &pts)
    }

    pub fn len(&self) -> usize {
        self.s1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s1.is_empty()
    }

    pub fn at(&self, j: usize) -> [f64; 3] {
        [self.s1[j], self.s2[j], self.s3[j]]
    }

    pub fn points(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|j| self.at(j)).collect()
    }

    /// Largest |⟨s, s⟩ − level| over the grid, plus a unit penalty for any
    /// point on the lower hyperbolic sheet.
    pub fn quadric_residual(&self) -> f64 {
        (0..self.len()).map(|j| self.point_residual(j)).fold(0.0, f64::max)
    }

    fn point_residual(&self, j: usize) -> f64 {
        let s = self.at(j);
        let mut r = (self.geometry.dot(&s, &s) - self.geometry.level()).abs();
        if self.geometry == Geometry::Hyperbolic && (s[2].is_nan() || s[2] <= 0.0) {
            r += 1.0;
        }
        r
    }

    fn check(&self) -> Result<(), ReductionError> {
        for j in 0..self.len() {
            let r = self.point_residual(j);
            if r.is_nan() || r > QUADRIC_TOL {
                return Err(ReductionError::OffQuadric { index: j, residual: r });
            }
        }
        Ok(())
    }

    pub fn max_distance(&self, other: &Self) -> f64 {
        (0..self.len())
            .map(|j| {
                let (a, b) = (self.at(j), other.at(j));
                (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }
}

fn check_spec(spec: &AlgebraSpec) -> Result<(), ReductionError> {
    if spec.n() == 2 && spec.k() == 1 {
        Ok(())
    } else {
        Err(ReductionError::Dimension(format!("n = {}, k = {}", spec.n(), spec.k())))
    }
}

pub fn phi_to_s(os: &OrbitState) -> Result<SpinField, ReductionError> {
    check_spec(&os.spec)?;
    let g = Geometry::of_family(os.spec.family());
    let pts: Vec<[f64; 3]> = os.phi.values().iter().map(|m| g.to_vector(m)).collect();
    let sf = SpinField::new(g, os.grid(), &pts)?;
    sf.check()?;
    Ok(sf)
}

pub fn s_to_phi(sf: &SpinField) -> Result<OrbitState, ReductionError> {
    sf.check()?;
    let g = sf.geometry;
    let phi = MatrixField::new(sf.grid, sf.points().iter().map(|x| g.to_matrix(x)).collect())?;
    Ok(OrbitState::new(g.spec(), phi, 0.0))
}

/// Maps a g-valued field (a velocity or generator) to 3-vectors.
pub fn matrix_field_to_vectors(geometry: Geometry, f: &MatrixField) -> Vec<[f64; 3]> {
    f.values().iter().map(|m| geometry.to_vector(m)).collect()
}

/// Component jets `[s, s_x, …]` up to `order`.
fn spin_jets(sf: &SpinField, order: usize) -> Result<Vec<Vec<[f64; 3]>>, ReductionError> {
    let comp = |v: &[f64]| {
        MatrixField::new(sf.grid, v.iter().map(|&x| SquareMatrix::from_diag(&[C64::new(x, 0.0)])).collect())
            .and_then(|f| derivatives(&f, order))
    };
    let d = [comp(&sf.s1)?, comp(&sf.s2)?, comp(&sf.s3)?];
    Ok((0..=order)
        .map(|o| (0..sf.len()).map(|j| [d[0][o].at(j)[(0, 0)].re, d[1][o].at(j)[(0, 0)].re, d[2][o].at(j)[(0, 0)].re]).collect())
        .collect())
}

/// s_t = s × (−αs_xx + βs_xxxx ∓ (4γ − 2β)(⟨s_x, s_x⟩s_x)_x) with the
/// geometry's cross product; the minus sign applies on the sphere and de
/// Sitter space.
pub fn spin_rhs(sf: &SpinField, p: &FlowParams) -> Result<Vec<[f64; 3]>, ReductionError> {
    let g = sf.geometry;
    let jet = spin_jets(sf, 4)?;
    let c = g.quartic_sign() * (4.0 * p.gamma - 2.0 * p.beta);
    Ok(par::map_indexed(sf.len(), |j| {
        let (s, a, b, d4) = (jet[0][j], jet[1][j], jet[2][j], jet[4][j]);
        // (⟨a, a⟩a)_x = ⟨a, a⟩b + 2⟨a, b⟩a
        let (aa, ab) = (g.dot(&a, &a), g.dot(&a, &b));
        let w: [f64; 3] = std::array::from_fn(|i| -p.alpha * b[i] + p.beta * d4[i] + c * (aa * b[i] + 2.0 * ab * a[i]));
        g.cross(&s, &w)
    }))
}

/// s_t = s × s_xx, the vector form of the leading-order flow.
pub fn spin_leading_rhs(sf: &SpinField) -> Result<Vec<[f64; 3]>, ReductionError> {
    let g = sf.geometry;
    let jet = spin_jets(sf, 2)?;
    Ok((0..sf.len()).map(|j| g.cross(&jet[0][j], &jet[2][j])).collect())
}

fn spin_rate(sf: &SpinField, p: &FlowParams, kind: FlowKind) -> Result<Vec<[f64; 3]>, ReductionError> {
    match kind {
        FlowKind::ThirdOrder => spin_rhs(sf, p),
        FlowKind::LeadingOrder => spin_leading_rhs(sf),
        FlowKind::SecondOrder => Err(ReductionError::Unsupported("the second-order flow has no spin form here".into())),
    }
}

/// One RK4 step on the spin equation, renormalizing to the quadric after
/// every stage.
pub fn spin_rk4_step(sf: &SpinField, p: &FlowParams, kind: FlowKind, dt: f64) -> Result<SpinField, ReductionError> {
    let g = sf.geometry;
    let base = sf.points();
    let stage = |k: &[[f64; 3]], c: f64| -> Result<SpinField, ReductionError> {
        let pts: Vec<[f64; 3]> = base
            .iter()
            .zip(k)
            .map(|(s, v)| g.normalize(&[s[0] + c * v[0], s[1] + c * v[1], s[2] + c * v[2]]))
            .collect();
        SpinField::new(g, sf.grid, &pts)
    };
    let k1 = spin_rate(sf, p, kind)?;
    let k2 = spin_rate(&stage(&k1, 0.5 * dt)?, p, kind)?;
    let k3 = spin_rate(&stage(&k2, 0.5 * dt)?, p, kind)?;
    let k4 = spin_rate(&stage(&k3, dt)?, p, kind)?;
    let comb: Vec<[f64; 3]> = (0..base.len())
        .map(|j| std::array::from_fn(|i| (k1[j][i] + 2.0 * k2[j][i] + 2.0 * k3[j][i] + k4[j][i]) / 6.0))
        .collect();
    stage(&comb, dt)
}

/// Deviation between the two paths at one output time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckRow {
    pub t: f64,
    pub deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheckReport {
    pub rows: Vec<CrossCheckRow>,
    pub max_deviation: f64,
    pub matrix_final: SpinField,
    pub vector_final: SpinField,
}

/// Evolves `initial` by the matrix flow (Lie-group stepper, simplified
/// generator) and by RK4 on the vector equation, comparing at `samples`
/// equally spaced times in (0, T].
pub fn cross_check_matrix_vs_vector(
    initial: &SpinField,
    p: &FlowParams,
    kind: FlowKind,
    t_end: f64,
    dt: f64,
    samples: usize,
) -> Result<CrossCheckReport, ReductionError> {
    if kind == FlowKind::SecondOrder {
        return Err(ReductionError::Unsupported("the second-order flow has no spin form here".into()));
    }
    let os = s_to_phi(initial)?;
    let outputs: Vec<f64> = if t_end > 0.0 {
        (1..=samples.max(1)).map(|i| t_end * i as f64 / samples.max(1) as f64).collect()
    } else {
        Vec::new()
    };
    let opts = StepOptions {
        form: GeneratorForm::Simplified,
        allow_unstable: false,
    };
    let traj = flows::evolve_with(&os, p, kind, t_end, dt, &outputs, &opts, |_, _| Ok(()))?;
    let mut spin = initial.clone();
    let mut time = 0.0;
    let mut rows = vec![CrossCheckRow { t: 0.0, deviation: phi_to_s(&traj.snapshots[0])?.max_distance(&spin) }];
    for (stop, snap) in outputs.iter().zip(&traj.snapshots[1..]) {
        // Same sub-step sizes as the matrix path.
        let span = stop - time;
        let m = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / m as f64;
        for _ in 0..m {
            spin = spin_rk4_step(&spin, p, kind, h)?;
        }
        time = *stop;
        rows.push(CrossCheckRow {
            t: time,
            deviation: phi_to_s(snap)?.max_distance(&spin),
        });
    }
    let max_deviation = rows.iter().map(|r| r.deviation).fold(0.0, f64::max);
    Ok(CrossCheckReport {
        rows,
        max_deviation,
        matrix_final: phi_to_s(traj.last())?,
        vector_final: spin,
    })
}

/// Which scalar equation: the compact, noncompact or para reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarCase {
    G10,
    G11,
    G12,
}

impl ScalarCase {
    pub fn of_family(family: Family) -> Self {
        match family {
            Family::CompactUnitary => Self::G10,
            Family::NoncompactUnitary => Self::G11,
            Family::ParaReal => Self::G12,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Self::G10 => Family::CompactUnitary,
            Self::G11 => Family::NoncompactUnitary,
            Self::G12 => Family::ParaReal,
        }
    }
}

/// q and r of P = ((0, q), (r, 0)) for n = 2. For the unitary cases r is
/// ∓q̄ and only q is evolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    pub q: Vec<C64>,
    pub r: Vec<C64>,
}

impl ScalarField {
    pub fn of_potential(ps: &PotentialState) -> Result<Self, ReductionError> {
        check_spec(&ps.spec)?;
        let v = ps.potential.values();
        Ok(Self {
            grid: ps.grid(),
            q: v.iter().map(|m| m[(0, 1)]).collect(),
            r: v.iter().map(|m| m[(1, 0)]).collect(),
        })
    }
}

/// Jet `[f, f_x, …, f_xxxx]` of a scalar at one point.
pub type ScalarJet = [C64; 5];

/// (q_t, r_t) of the scalar equations from the jets of q and r. For G10
/// and G11 r is ignored and r_t is returned as ∓conj(q_t).
pub fn scalar_rhs_point(case: ScalarCase, p: &FlowParams, q: &ScalarJet, r: &ScalarJet) -> (C64, C64) {
    let (al, be) = (p.alpha, p.beta);
    let c = p.curvature_coefficient();
    match case {
        ScalarCase::G10 | ScalarCase::G11 => {
            let s = if case == ScalarCase::G10 { 1.0 } else { -1.0 };
            let qb: [C64; 5] = std::array::from_fn(|i| q[i].conj());
            let m2 = q[0] * qb[0];
            let m2_xx = q[2] * qb[0] + 2.0 * q[1] * qb[1] + q[0] * qb[2];
            // (|q|²q)_xx
            let cube_xx = 2.0 * q[1] * q[1] * qb[0] + 2.0 * q[0] * qb[0] * q[2] + 4.0 * q[0] * q[1] * qb[1] + q[0] * q[0] * qb[2];
            let mut z = al * (q[2] + s * 2.0 * m2 * q[0]);
            z -= be * (q[4] + s * 6.0 * (m2 * q[2] + q[1] * q[1] * qb[0]) + (6.0 * m2 * m2 + s * 2.0 * m2_xx) * q[0]);
            z += c * (s * cube_xx + 3.0 * m2 * m2 * q[0]);
            let qt = -I * z;
            let rt = if case == ScalarCase::G10 { -qt.conj() } else { qt.conj() };
            (qt, rt)
        }
        ScalarCase::G12 => {
            let (q0, q1, q2, q4) = (q[0], q[1], q[2], q[4]);
            let (r0, r1, r2, r4) = (r[0], r[1], r[2], r[4]);
            let qrq_xx = 2.0 * q1 * q1 * r0 + 2.0 * q0 * q2 * r0 + 4.0 * q0 * q1 * r1 + q0 * q0 * r2;
            let rqr_xx = 2.0 * r1 * r1 * q0 + 2.0 * r0 * r2 * q0 + 4.0 * r0 * r1 * q1 + r0 * r0 * q2;
            let mut qt = al * (q2 - 2.0 * q0 * q0 * r0);
            qt += be
                * (-q4 + 6.0 * q1 * q1 * r0 + 4.0 * q0 * q1 * r1 + 8.0 * q0 * r0 * q2 + 2.0 * q0 * q0 * r2
                    - 6.0 * q0 * q0 * q0 * r0 * r0);
            qt -= c * (qrq_xx - 3.0 * q0 * q0 * q0 * r0 * r0);
            let mut rt = -al * (r2 - 2.0 * q0 * r0 * r0);
            rt += be
                * (r4 - 6.0 * q0 * r1 * r1 - 4.0 * r0 * q1 * r1 - 8.0 * q0 * r0 * r2 - 2.0 * r0 * r0 * q2
                    + 6.0 * q0 * q0 * r0 * r0 * r0);
            rt += c * (rqr_xx - 3.0 * q0 * q0 * r0 * r0 * r0);
            // The para equations are used with the overall sign that the
            // matrix reduction produces.
            (-qt, -rt)
        }
    }
}

/// Difference (q_t, r_t) between anchoring the nonlocal integral at x = 0
/// and the scalar equations, given ρ(0) = q(0)r(0). It only rotates
/// (unitary) or rescales (para) the potential.
pub fn anchor_correction(case: ScalarCase, p: &FlowParams, rho0: C64, q: C64, r: C64) -> (C64, C64) {
    let c = p.curvature_coefficient() * rho0 * rho0;
    match case {
        ScalarCase::G10 | ScalarCase::G11 => {
            let dq = I * c * q;
            let dr = if case == ScalarCase::G10 { -dq.conj() } else { dq.conj() };
            (dq, dr)
        }
        ScalarCase::G12 => (c * q, -c * r),
    }
}

fn scalar_jets(grid: Grid, v: &[C64]) -> Result<Vec<ScalarJet>, ReductionError> {
    let f = MatrixField::new(grid, v.iter().map(|&z| SquareMatrix::from_diag(&[z])).collect())?;
    let d = derivatives(&f, 4)?;
    Ok((0..grid.len()).map(|j| std::array::from_fn(|o| d[o].at(j)[(0, 0)])).collect())
}

/// Field-level (q_t, r_t) of the scalar equations on difference jets.
pub fn scalar_rhs(sf: &ScalarField, p: &FlowParams, case: ScalarCase) -> Result<(Vec<C64>, Vec<C64>), ReductionError> {
    if sf.q.len() != sf.grid.len() || sf.r.len() != sf.grid.len() {
        return Err(ReductionError::Shape("q and r must match the grid".into()));
    }
    let qj = scalar_jets(sf.grid, &sf.q)?;
    let rj = scalar_jets(sf.grid, &sf.r)?;
    Ok((0..sf.grid.len()).map(|j| scalar_rhs_point(case, p, &qj[j], &rj[j])).unzip())
}

/// Largest pointwise gap between the matrix potential equation and the
/// scalar equation (anchor term included) for scalar trigonometric data with
/// exact derivatives. M is integrated by composite Gauss–Legendre, so the
/// comparison is free of grid error.
pub fn scalar_identity_residual(case: ScalarCase, p: &FlowParams, data: &TrigScalarData, points: &[f64]) -> f64 {
    let spec = Geometry::of_family(case.family()).spec();
    let s3 = crate::algebra::sigma3(&spec);
    let pot = |x: f64, order: usize| data.potential_derivative(case, x, order);
    let mut worst: f64 = 0.0;
    let p0 = pot(0.0, 0);
    let rho0 = p0[(0, 1)] * p0[(1, 0)];
    for &x in points {
        let jet: Vec<SquareMatrix> = (0..5).map(|o| pot(x, o)).collect();
        let m = gauss_legendre(0.0, x, 64, |s| nonlocal_integrand_point(&pot(s, 0), &pot(s, 1)));
        let mut pt = potential_local_point(p, &s3, &jet);
        pt += nonlocal_point(p, &s3, &jet[0], &m);
        let qj: ScalarJet = std::array::from_fn(|o| jet[o][(0, 1)]);
        let rj: ScalarJet = std::array::from_fn(|o| jet[o][(1, 0)]);
        let (qt, rt) = scalar_rhs_point(case, p, &qj, &rj);
        let (dq, dr) = anchor_correction(case, p, rho0, qj[0], rj[0]);
        worst = worst.max((pt[(0, 1)] - qt - dq).norm()).max((pt[(1, 0)] - rt - dr).norm());
        worst = worst.max(pt[(0, 0)].norm()).max(pt[(1, 1)].norm());
    }
    worst
}

fn gauss_legendre(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> SquareMatrix) -> SquareMatrix {
    const NODES: [(f64, f64); 5] = [
        (0.0, 0.568_888_888_888_888_9),
        (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
        (-0.906_179_845_938_664, 0.236_926_885_056_189),
        (0.906_179_845_938_664, 0.236_926_885_056_189),
    ];
    let h = (b - a) / panels as f64;
    let mut acc = SquareMatrix::zeros(2);
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        for (t, w) in NODES {
            acc.axpy(0.5 * h * w, &f(mid + 0.5 * h * t));
        }
    }
    acc
}

/// q(x) = Σ a_m e^{iω_m x} (and r likewise for the para case) with exact
/// derivatives. Unitary cases take r = ∓q̄; para data is real, using
/// a_m cos(ω_m x + θ_m).
#[derive(Clone, Debug, PartialEq)]
pub struct TrigScalarData {
    pub q_modes: Vec<(C64, f64)>,
    pub r_modes: Vec<(C64, f64)>,
}

impl TrigScalarData {
    pub fn random(rng: &mut impl rand::Rng, modes: usize, amplitude: f64) -> Self {
        let mut draw = || {
            (0..modes)
                .map(|m| {
                    let a = C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * (2.0 * amplitude / (m + 1) as f64);
                    let w = (m as f64 + 1.0) * (0.5 + rng.random::<f64>()) * if rng.random::<bool>() { 1.0 } else { -1.0 };
                    (a, w)
                })
                .collect::<Vec<_>>()
        };
        let q_modes = draw();
        let r_modes = draw();
        Self { q_modes, r_modes }
    }

    fn eval(modes: &[(C64, f64)], x: f64, order: usize, real: bool) -> C64 {
        modes
            .iter()
            .map(|&(a, w)| {
                let z = a * (I * w).powu(order as u32) * (I * w * x).exp();
                if real {
                    C64::new(z.re, 0.0)
                } else {
                    z
                }
            })
            .sum()
    }

    /// d^order P / dx^order at x.
    pub fn potential_derivative(&self, case: ScalarCase, x: f64, order: usize) -> SquareMatrix {
        let real = case == ScalarCase::G12;
        let q = Self::eval(&self.q_modes, x, order, real);
        let r = match case {
            ScalarCase::G10 => -q.conj(),
            ScalarCase::G11 => q.conj(),
            ScalarCase::G12 => Self::eval(&self.r_modes, x, order, true),
        };
        SquareMatrix::from_row_major(&[ZERO, q, r, ZERO])
    }
}
