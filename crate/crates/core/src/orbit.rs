//! Adjoint-orbit states, frames and their m-potentials.
//!
//! Unitary families use φ = E⁻¹σ₃E with E_x = P·E; the para family uses
//! φ = Eσ₃E⁻¹ with E_x = E·P. In both cases P takes values in m.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{self, decompose, exp_map, project, sigma3, AlgebraError, AlgebraSpec};
use crate::fields::{derivative, FieldError, Grid, MatrixField};
use crate::matrix::{SquareMatrix, C64};
use crate::par;

/// Eigenvector conditioning above which spectral operations refuse to run.
pub const MAX_SPECTRAL_CONDITION: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrbitError {
    #[error("singular frame entry at grid point {0}")]
    SingularFrame(usize),
    #[error("singular orbit point at grid point {0}")]
    SingularPoint(usize),
    #[error("eigen-solver failed at grid point {0}")]
    EigenSolverFailure(usize),
    #[error("eigenvector condition {cond:.3e} at grid point {point} exceeds the limit")]
    IllConditioned { point: usize, cond: f64 },
    #[error("potential k-part residual {0:.3e} exceeds tolerance")]
    NotGaugeFixed(f64),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitState {
    pub spec: AlgebraSpec,
    pub phi: MatrixField,
    pub time: f64,
    /// Frame with φ = E⁻¹σ₃E (or Eσ₃E⁻¹), carried along by commutator-form
    /// steps when present.
    pub frame: Option<MatrixField>,
    /// How the frame continues past x = L; ignored without a frame.
    pub twist: FrameTwist,
}

impl OrbitState {
    pub fn new(spec: AlgebraSpec, phi: MatrixField, time: f64) -> Self {
        Self {
            spec,
            phi,
            time,
            frame: None,
            twist: FrameTwist::identity(spec.n()),
        }
    }

    pub fn grid(&self) -> Grid {
        self.phi.grid()
    }

    /// Constant state φ ≡ σ₃ with identity frame.
    pub fn base_point(spec: AlgebraSpec, grid: Grid) -> Self {
        Self {
            spec,
            phi: MatrixField::constant(grid, &sigma3(&spec)),
            time: 0.0,
            frame: Some(MatrixField::constant(grid, &SquareMatrix::identity(spec.n()))),
            twist: FrameTwist::identity(spec.n()),
        }
    }

    /// Largest pointwise ‖φ² − c²I‖.
    pub fn involution_residual(&self) -> f64 {
        let target = SquareMatrix::identity(self.spec.n()).scale(self.spec.involution_value());
        self.phi
            .values()
            .iter()
            .map(|p| (p * p - &target).frobenius_norm())
            .fold(0.0, f64::max)
    }

    pub fn snapshot(&self) -> OrbitSnapshot {
        OrbitSnapshot {
            algebra: self.spec,
            time: self.time,
            grid: self.phi.grid(),
            values: self.phi.values().to_vec(),
        }
    }

    pub fn from_snapshot(s: OrbitSnapshot) -> Result<Self, OrbitError> {
        Ok(Self::new(s.algebra, MatrixField::new(s.grid, s.values)?, s.time))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSnapshot {
    pub algebra: AlgebraSpec,
    pub time: f64,
    pub grid: Grid,
    pub values: Vec<SquareMatrix>,
}

/// Continuation of a frame over one period: E(x + L) = left·E(x)·right.
///
/// Gauge-fixed frames pick up a block-diagonal left factor (unitary) or
/// right factor (para); frames integrated from a periodic P pick up the
/// monodromy on the other side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameTwist {
    pub left: SquareMatrix,
    pub right: SquareMatrix,
}

impl FrameTwist {
    pub fn identity(n: usize) -> Self {
        Self {
            left: SquareMatrix::identity(n),
            right: SquareMatrix::identity(n),
        }
    }

    /// Twist of a frame that differs from a periodic one by `h` on the gauge
    /// side: left for unitary families, right for para.
    pub fn gauge(spec: &AlgebraSpec, h: SquareMatrix) -> Self {
        let id = SquareMatrix::identity(spec.n());
        if spec.is_para() {
            Self { left: id, right: h }
        } else {
            Self { left: h, right: id }
        }
    }

    /// Twist carried by a monodromy factor `c` on the non-gauge side. A
    /// scalar factor is moved to the gauge side.
    pub fn monodromy(spec: &AlgebraSpec, c: SquareMatrix) -> Self {
        let id = SquareMatrix::identity(spec.n());
        let scalar = c.clone().scale_c(c[(0, 0)].inv());
        if c[(0, 0)].norm() > 0.0 && scalar.distance(&id) <= 1e-12 * (spec.n() as f64).sqrt() {
            return Self::gauge(spec, SquareMatrix::identity(spec.n()).scale_c(c[(0, 0)]));
        }
        if spec.is_para() {
            Self { left: c, right: id }
        } else {
            Self { left: id, right: c }
        }
    }

    /// E(x + periods·L) from E(x).
    pub fn continue_value(&self, e: &SquareMatrix, periods: i64) -> Option<SquareMatrix> {
        let (l, r) = match periods {
            0 => return Some(e.clone()),
            p if p > 0 => (self.left.clone(), self.right.clone()),
            _ => (self.left.try_inverse()?, self.right.try_inverse()?),
        };
        let mut out = e.clone();
        for _ in 0..periods.unsigned_abs() {
            out = &(&l * &out) * &r;
        }
        Some(out)
    }

    /// Whether pointwise commutator-form updates (E ← E·g unitary,
    /// E ← g·E para, with g periodic) keep this twist unchanged.
    pub fn survives_updates(&self, spec: &AlgebraSpec) -> bool {
        let id = SquareMatrix::identity(spec.n());
        let side = if spec.is_para() { &self.left } else { &self.right };
        side.distance(&id) <= 1e-12
    }

    pub fn is_identity(&self) -> bool {
        let id = SquareMatrix::identity(self.left.dim());
        self.left.distance(&id) <= 1e-12 && self.right.distance(&id) <= 1e-12
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FramedState {
    pub spec: AlgebraSpec,
    pub frame: MatrixField,
    pub potential: MatrixField,
    pub twist: FrameTwist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FramedSnapshot {
    pub algebra: AlgebraSpec,
    pub grid: Grid,
    pub frame: Vec<SquareMatrix>,
    pub potential: Vec<SquareMatrix>,
    pub twist: FrameTwist,
}

impl FramedState {
    /// Largest k-part of the stored potential.
    pub fn k_residual(&self) -> f64 {
        self.potential
            .values()
            .iter()
            .map(|p| decompose(&self.spec, p).k_part.frobenius_norm())
            .fold(0.0, f64::max)
    }

    /// k-part of the connection measured directly from the frame by finite
    /// differences, so it reflects the frame rather than the stored P.
    pub fn measured_k_residual(&self) -> Result<f64, OrbitError> {
        let p = connection_of_frame(&self.spec, &self.frame, &self.twist)?;
        Ok(p.values()
            .iter()
            .map(|p| decompose(&self.spec, p).k_part.frobenius_norm())
            .fold(0.0, f64::max))
    }

    /// ‖E(L) − E(0)‖.
    pub fn monodromy_defect(&self) -> f64 {
        let e0 = self.frame.at(0);
        match self.twist.continue_value(e0, 1) {
            Some(e) => e.distance(e0),
            None => f64::INFINITY,
        }
    }

    pub fn snapshot(&self) -> FramedSnapshot {
        FramedSnapshot {
            algebra: self.spec,
            grid: self.frame.grid(),
            frame: self.frame.values().to_vec(),
            potential: self.potential.values().to_vec(),
            twist: self.twist.clone(),
        }
    }

    pub fn from_snapshot(s: FramedSnapshot) -> Result<Self, OrbitError> {
        Ok(Self {
            spec: s.algebra,
            frame: MatrixField::new(s.grid, s.frame)?,
            potential: MatrixField::new(s.grid, s.potential)?,
            twist: s.twist,
        })
    }
}

/// φ for a single frame value.
pub fn orbit_point(spec: &AlgebraSpec, e: &SquareMatrix) -> Option<SquareMatrix> {
    let inv = e.try_inverse()?;
    let s = sigma3(spec);
    Some(if spec.is_para() { &(e * &s) * &inv } else { &(&inv * &s) * e })
}

/// φ from a periodic frame field.
pub fn orbit_from_frame_field(spec: &AlgebraSpec, frame: &MatrixField, time: f64) -> Result<OrbitState, OrbitError> {
    orbit_from_twisted_frame(spec, frame, &FrameTwist::identity(spec.n()), time)
}

/// φ from a frame field with the given continuation past x = L.
pub fn orbit_from_twisted_frame(
    spec: &AlgebraSpec,
    frame: &MatrixField,
    twist: &FrameTwist,
    time: f64,
) -> Result<OrbitState, OrbitError> {
    let pts: Vec<Option<SquareMatrix>> = par::map_indexed(frame.grid().len(), |j| orbit_point(spec, frame.at(j)));
    let mut vals = Vec::with_capacity(pts.len());
    for (j, p) in pts.into_iter().enumerate() {
        vals.push(p.ok_or(OrbitError::SingularFrame(j))?);
    }
    Ok(OrbitState {
        spec: *spec,
        phi: MatrixField::new(frame.grid(), vals)?,
        time,
        frame: Some(frame.clone()),
        twist: twist.clone(),
    })
}

pub fn orbit_from_frame(fs: &FramedState) -> Result<OrbitState, OrbitError> {
    orbit_from_twisted_frame(&fs.spec, &fs.frame, &fs.twist, 0.0)
}

/// Fourth-order Magnus exponent for one grid interval of y' = A(x)y
/// (`left`) or y' = yA(x), with A at the half step from the four-point cubic
/// interpolant.
fn magnus_step(a: &[SquareMatrix], j: usize, h: f64, left: bool) -> SquareMatrix {
    let n = a.len();
    let at = |i: isize| &a[i.rem_euclid(n as isize) as usize];
    let j = j as isize;
    let (am, a0, a1, a2) = (at(j - 1), at(j), at(j + 1), at(j + 2));
    let mut mid = a0 + a1;
    mid = mid.scale(9.0 / 16.0);
    mid.axpy(-1.0 / 16.0, am);
    mid.axpy(-1.0 / 16.0, a2);
    let mut omega = a0 + a1;
    omega.axpy(4.0, &mid);
    omega = omega.scale(h / 6.0);
    let c = a0.comm(a1).scale(h * h / 12.0);
    if left {
        omega - c
    } else {
        omega + c
    }
}

/// Integrates y' = A(x)y (`left`) or y' = yA(x) over the periodic grid of
/// generator values `a`, starting from `y0` at x = 0.
pub fn march(a: &[SquareMatrix], h: f64, y0: &SquareMatrix, left: bool) -> Result<Vec<SquareMatrix>, AlgebraError> {
    let mut out = Vec::with_capacity(a.len());
    let mut y = y0.clone();
    out.push(y.clone());
    for j in 0..a.len() - 1 {
        let step = exp_map(&magnus_step(a, j, h, left))?;
        y = if left { &step * &y } else { &y * &step };
        out.push(y.clone());
    }
    Ok(out)
}

/// Solves the frame equation for a periodic m-valued potential P with
/// E(0) = E0.
pub fn frame_from_potential(spec: &AlgebraSpec, p: &MatrixField, e0: &SquareMatrix) -> Result<FramedState, OrbitError> {
    let left = !spec.is_para();
    let frame = march(p.values(), p.grid().h(), e0, left)?;
    let n = frame.len();
    let last = exp_map(&magnus_step(p.values(), n - 1, p.grid().h(), left))?;
    let end = if left { &last * &frame[n - 1] } else { &frame[n - 1] * &last };
    let e0inv = e0.try_inverse().ok_or(OrbitError::SingularFrame(0))?;
    let c = if left { &e0inv * &end } else { &end * &e0inv };
    Ok(FramedState {
        spec: *spec,
        frame: MatrixField::new(p.grid(), frame)?,
        potential: p.clone(),
        twist: FrameTwist::monodromy(spec, c),
    })
}

/// First derivative of a frame with the periodic stencil continued through
/// the twist.
pub fn frame_derivative(frame: &MatrixField, twist: &FrameTwist) -> Result<MatrixField, OrbitError> {
    if twist.is_identity() {
        return Ok(derivative(frame, 1)?);
    }
    let grid = frame.grid();
    let n = grid.len();
    let min = crate::fields::min_points(1);
    if n < min {
        return Err(FieldError::StencilTooSmall { order: 1, n, min }.into());
    }
    let ni = n as isize;
    let at = |i: isize| -> Option<SquareMatrix> {
        twist.continue_value(frame.at(i.rem_euclid(ni) as usize), i.div_euclid(ni) as i64)
    };
    let scale = 1.0 / (12.0 * grid.h());
    let rows: Vec<Option<SquareMatrix>> = par::map_indexed(n, |j| {
        let j = j as isize;
        let mut d = (at(j + 1)? - at(j - 1)?).scale(8.0);
        d += &(at(j - 2)? - at(j + 2)?);
        Some(d.scale(scale))
    });
    let vals = rows
        .into_iter()
        .enumerate()
        .map(|(j, r)| r.ok_or(OrbitError::SingularFrame(j)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MatrixField::new(grid, vals)?)
}

/// Raw connection of a frame: E_x E⁻¹ (unitary) or E⁻¹E_x (para).
pub fn connection_of_frame(spec: &AlgebraSpec, frame: &MatrixField, twist: &FrameTwist) -> Result<MatrixField, OrbitError> {
    let ex = frame_derivative(frame, twist)?;
    let inv = invert_field(frame)?;
    Ok(if spec.is_para() {
        inv.zip_map(&ex, |i, d| i * d)
    } else {
        ex.zip_map(&inv, |d, i| d * i)
    })
}

fn invert_field(f: &MatrixField) -> Result<MatrixField, OrbitError> {
    let inv: Vec<Option<SquareMatrix>> = par::map_indexed(f.grid().len(), |j| f.at(j).try_inverse());
    let mut vals = Vec::with_capacity(inv.len());
    for (j, m) in inv.into_iter().enumerate() {
        vals.push(m.ok_or(OrbitError::SingularFrame(j))?);
    }
    Ok(MatrixField::new(f.grid(), vals)?)
}

/// Block-diagonal gauge D with D(0) = I that removes the k-part of the raw
/// connection of a periodic frame. The returned frame is D·rawE (unitary)
/// or rawE·D (para), and its potential is D P̂^(m) D⁻¹ (resp. D⁻¹ P̂^(m) D),
/// exactly m-valued. Both are periodic only up to the holonomy D(L), which
/// is recorded as the frame twist.
pub fn gauge_fix_frame(spec: &AlgebraSpec, raw: &MatrixField) -> Result<FramedState, OrbitError> {
    let grid = raw.grid();
    let n = spec.n();
    // The differenced connection leaves g at O(h⁴); take its nearest element.
    let phat = connection_of_frame(spec, raw, &FrameTwist::identity(n))?.map(|p| project(spec, p));
    let minus_k: Vec<SquareMatrix> = phat.values().iter().map(|p| -decompose(spec, p).k_part).collect();
    let id = SquareMatrix::identity(n);
    // Unitary: D_x = −D·P̂^(k). Para: D_x = −P̂^(k)·D.
    let para = spec.is_para();
    let d = march(&minus_k, grid.h(), &id, para)?;
    let last = exp_map(&magnus_step(&minus_k, grid.len() - 1, grid.h(), para))?;
    let holonomy = if para { &last * &d[grid.len() - 1] } else { &d[grid.len() - 1] * &last };
    let mut frame = Vec::with_capacity(d.len());
    let mut pot = Vec::with_capacity(d.len());
    for (j, dj) in d.iter().enumerate() {
        let dinv = dj.try_inverse().ok_or(OrbitError::SingularFrame(j))?;
        let pm = decompose(spec, phat.at(j)).m_part;
        if para {
            frame.push(raw.at(j) * dj);
            pot.push(&(&dinv * &pm) * dj);
        } else {
            frame.push(dj * raw.at(j));
            pot.push(&(dj * &pm) * &dinv);
        }
    }
    // Block-diagonal conjugation keeps m invariant; strip roundoff.
    let pot = pot.into_iter().map(|p| decompose(spec, &project(spec, &p)).m_part).collect();
    Ok(FramedState {
        spec: *spec,
        frame: MatrixField::new(grid, frame)?,
        potential: MatrixField::new(grid, pot)?,
        twist: FrameTwist::gauge(spec, holonomy),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// φ⁻¹ − κφ
    pub inverse: f64,
    /// φ_x against the frame expression of [σ₃, P]
    pub derivative: f64,
    /// φ_xφ⁻¹ against ∓2·(conjugated P)
    pub right_log: f64,
    /// φ⁻¹φ_x against ±2·(conjugated P)
    pub left_log: f64,
    /// [φ, φ_x] ∓ ½φ_xφ⁻¹
    pub commutator: f64,
    /// φ_x² ∓ ¼(φ_xφ⁻¹)²
    pub square: f64,
}

impl IdentityReport {
    pub fn max(&self) -> f64 {
        [self.inverse, self.derivative, self.right_log, self.left_log, self.commutator, self.square]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("inverse", self.inverse),
            ("derivative", self.derivative),
            ("right_log", self.right_log),
            ("left_log", self.left_log),
            ("commutator", self.commutator),
            ("square", self.square),
        ]
    }
}

/// Max-over-grid residuals of the pointwise orbit identities.
pub fn verify_identities(fs: &FramedState) -> Result<IdentityReport, OrbitError> {
    let spec = fs.spec;
    let os = orbit_from_frame(fs)?;
    let phix = derivative(&os.phi, 1)?;
    let s3 = sigma3(&spec);
    let kappa = spec.kappa();
    let para = spec.is_para();
    let sgn = if para { -1.0 } else { 1.0 };
    let rows: Vec<Option<[f64; 6]>> = par::map_indexed(fs.frame.grid().len(), |j| {
        let e = fs.frame.at(j);
        let einv = e.try_inverse()?;
        let p = fs.potential.at(j);
        let phi = os.phi.at(j);
        let px = phix.at(j);
        let pinv = phi.try_inverse()?;
        // Conjugated potential and derivative expression per convention.
        let (cp, dphi) = if para {
            (&(e * p) * &einv, &(e * &p.comm(&s3)) * &einv)
        } else {
            (&(&einv * p) * e, &(&einv * &s3.comm(p)) * e)
        };
        let r = px * &pinv;
        let l = &pinv * px;
        Some([
            (&pinv - &phi.scale(kappa)).frobenius_norm(),
            (px - &dphi).frobenius_norm(),
            (&r + &cp.scale(2.0 * sgn)).frobenius_norm(),
            (&l - &cp.scale(2.0 * sgn)).frobenius_norm(),
            (phi.comm(px) - r.scale(0.5 * sgn)).frobenius_norm(),
            (px * px - (&r * &r).scale(0.25 * sgn)).frobenius_norm(),
        ])
    });
    let mut rep = IdentityReport::default();
    for (j, row) in rows.into_iter().enumerate() {
        let row = row.ok_or(OrbitError::SingularFrame(j))?;
        rep.inverse = rep.inverse.max(row[0]);
        rep.derivative = rep.derivative.max(row[1]);
        rep.right_log = rep.right_log.max(row[2]);
        rep.left_log = rep.left_log.max(row[3]);
        rep.commutator = rep.commutator.max(row[4]);
        rep.square = rep.square.max(row[5]);
    }
    Ok(rep)
}

/// Eigenvalues of a small complex matrix (closed form for 2×2, complex Schur
/// otherwise).
pub fn eigenvalues(m: &SquareMatrix) -> Option<Vec<C64>> {
    let n = m.dim();
    if !m.is_finite() {
        return None;
    }
    if n == 2 {
        let half_tr = m.trace() * 0.5;
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        let disc = (half_tr * half_tr - det).sqrt();
        return Some(vec![half_tr + disc, half_tr - disc]);
    }
    let dm = DMatrix::from_fn(n, n, |i, j| m[(i, j)]);
    // Repeated eigenvalues can stall the tightest deflation threshold.
    let schur = [1e-15, 1e-13, 1e-12]
        .into_iter()
        .find_map(|eps| nalgebra::linalg::Schur::try_new(dm.clone(), eps, 10_000))?;
    let (_, t) = schur.unpack();
    let scale = m.max_abs().max(1.0);
    for i in 1..n {
        if t[(i, i - 1)].norm() > 1e-10 * scale {
            return None;
        }
    }
    Some((0..n).map(|i| t[(i, i)]).collect())
}

/// Newton iteration for the matrix sign of φ/c. Returns c·sign(φ/c), the
/// nearest orbit point sharing φ's spectral subspaces, and the conditioning
/// of the spectral projectors (1 for orthogonal projectors).
pub fn retract_point(spec: &AlgebraSpec, phi: &SquareMatrix) -> Option<(SquareMatrix, f64)> {
    let c = spec.sigma3_scale();
    let n = spec.n();
    let mut s = phi.scale_c(c.inv());
    for _ in 0..100 {
        let next = (&s + &s.try_inverse()?).scale(0.5);
        let delta = next.distance(&s);
        s = next;
        if delta <= 1e-15 * s.frobenius_norm() {
            break;
        }
    }
    if !s.is_finite() {
        return None;
    }
    let id = SquareMatrix::identity(n);
    let plus = (&id + &s).scale(0.5);
    let minus = (&id - &s).scale(0.5);
    let k = spec.k() as f64;
    let cond = (plus.frobenius_norm() / k.sqrt()).max(minus.frobenius_norm() / (n as f64 - k).sqrt());
    let mut out = s.scale_c(c);
    if spec.is_para() {
        out = out.real_part();
    }
    Some((out, cond))
}

/// Projects every grid value back onto the orbit, refusing ill-conditioned
/// points.
pub fn retract(os: &OrbitState) -> Result<OrbitState, OrbitError> {
    let spec = os.spec;
    let pts: Vec<Option<(SquareMatrix, f64)>> =
        par::map_indexed(os.phi.grid().len(), |j| retract_point(&spec, os.phi.at(j)));
    let mut vals = Vec::with_capacity(pts.len());
    for (j, p) in pts.into_iter().enumerate() {
        let (m, cond) = p.ok_or(OrbitError::EigenSolverFailure(j))?;
        if cond > MAX_SPECTRAL_CONDITION {
            return Err(OrbitError::IllConditioned { point: j, cond });
        }
        vals.push(m);
    }
    Ok(OrbitState {
        spec,
        phi: MatrixField::new(os.phi.grid(), vals)?,
        time: os.time,
        frame: None,
        twist: FrameTwist::identity(spec.n()),
    })
}

/// Max over the grid of the distance between the sorted spectrum of φ_j and
/// {c (k times), −c (n−k times)}.
pub fn spectrum_deviation(os: &OrbitState) -> Result<f64, OrbitError> {
    let spec = os.spec;
    let c = spec.sigma3_scale();
    let n = spec.n();
    let k = spec.k();
    let rows: Vec<Result<f64, OrbitError>> = par::map_indexed(os.phi.grid().len(), |j| {
        let phi = os.phi.at(j);
        if spec.is_para() {
            if let Some((_, cond)) = retract_point(&spec, phi) {
                if cond > MAX_SPECTRAL_CONDITION {
                    return Err(OrbitError::IllConditioned { point: j, cond });
                }
            }
        }
        let mut ev = eigenvalues(phi).ok_or(OrbitError::EigenSolverFailure(j))?;
        // Order by the component along c, largest first.
        let key = |z: &C64| (z * c.conj()).re;
        ev.sort_by(|a, b| key(b).total_cmp(&key(a)));
        Ok(ev
            .iter()
            .enumerate()
            .map(|(i, z)| (z - if i < k { c } else { -c }).norm())
            .fold(0.0, f64::max))
    });
    let mut worst: f64 = 0.0;
    for r in rows {
        worst = worst.max(r?);
    }
    debug_assert!(n >= 2);
    Ok(worst)
}

/// Largest membership residual of the m-potential together with its k-part.
pub fn potential_membership(spec: &AlgebraSpec, p: &MatrixField) -> f64 {
    p.values()
        .iter()
        .map(|m| algebra::membership_residual(spec, m) + decompose(spec, m).k_part.frobenius_norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{inner, random_element, random_m};
    use crate::matrix::{I, ZERO};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot_p(c: f64) -> SquareMatrix {
        SquareMatrix::from_real_rows(&[&[0.0, c], &[-c, 0.0]])
    }

    #[test]
    fn identity_frame_gives_sigma3() {
        let spec = AlgebraSpec::compact(3, 1);
        let g = Grid::new(16, 1.0).unwrap();
        let fs = FramedState {
            spec,
            frame: MatrixField::constant(g, &SquareMatrix::identity(3)),
            potential: MatrixField::zeros(g, 3),
            twist: FrameTwist::identity(3),
        };
        let os = orbit_from_frame(&fs).unwrap();
        assert!(os.phi.values().iter().all(|p| *p == sigma3(&spec)));
    }

    #[test]
    fn constant_potential_frame_matches_exponential() {
        let spec = AlgebraSpec::compact(2, 1);
        let g = Grid::new(64, 3.0).unwrap();
        // One full turn of the frame over the period keeps φ periodic.
        let p = rot_p(2.0 * std::f64::consts::PI / 3.0);
        let fs = frame_from_potential(&spec, &MatrixField::constant(g, &p), &SquareMatrix::identity(2)).unwrap();
        for j in 0..64 {
            let want = exp_map(&p.scale(g.x(j))).unwrap();
            assert!(fs.frame.at(j).distance(&want) < 1e-12);
        }
        let os = orbit_from_frame(&fs).unwrap();
        let phix = derivative(&os.phi, 1).unwrap();
        let e0 = inner(&spec, phix.at(0), phix.at(0));
        for j in 0..64 {
            assert!((inner(&spec, phix.at(j), phix.at(j)) - e0).abs() < 1e-6 * e0);
        }
        let s = spectrum_deviation(&os).unwrap();
        assert!(s < 1e-14, "{s}");
    }

    #[test]
    fn zero_potential_keeps_base_frame() {
        let spec = AlgebraSpec::para(3, 2);
        let g = Grid::new(16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let e0 = exp_map(&random_element(&spec, &mut rng, 0.5)).unwrap();
        let fs = frame_from_potential(&spec, &MatrixField::zeros(g, 3), &e0).unwrap();
        assert!(fs.frame.values().iter().all(|e| *e == e0));
    }

    fn smooth_potential(spec: &AlgebraSpec, g: Grid, seed: u64) -> MatrixField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_m(spec, &mut rng, 0.6);
        let b = random_m(spec, &mut rng, 0.6);
        let l = g.length();
        MatrixField::from_fn(g, |j| {
            let t = 2.0 * std::f64::consts::PI * g.x(j) / l;
            a.scale(t.sin()) + b.scale((2.0 * t).cos())
        })
    }

    #[test]
    fn frame_stays_unitary_over_a_period() {
        let spec = AlgebraSpec::compact(3, 1);
        let g = Grid::new(128, 6.0).unwrap();
        let p = smooth_potential(&spec, g, 1);
        let fs = frame_from_potential(&spec, &p, &SquareMatrix::identity(3)).unwrap();
        let worst = fs.frame.values().iter().map(|e| algebra::group_residual(&spec, e)).fold(0.0, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn gauge_fix_preserves_orbit_and_kills_k_part() {
        for spec in [AlgebraSpec::compact(3, 1), AlgebraSpec::noncompact(2, 1), AlgebraSpec::para(3, 2)] {
            let g = Grid::new(256, 8.0 * std::f64::consts::PI).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let a = random_element(&spec, &mut rng, 0.3);
            let b = random_element(&spec, &mut rng, 0.3);
            let raw = MatrixField::from_fn(g, |j| {
                let t = 2.0 * std::f64::consts::PI * g.x(j) / g.length();
                exp_map(&(a.scale(t.sin()) + b.scale(t.cos()))).unwrap()
            });
            let fs = gauge_fix_frame(&spec, &raw).unwrap();
            assert_eq!(fs.k_residual(), 0.0);
            let measured = fs.measured_k_residual().unwrap();
            assert!(measured < 1e-7, "{:?} {measured}", spec);
            let before = orbit_from_frame_field(&spec, &raw, 0.0).unwrap();
            let after = orbit_from_frame(&fs).unwrap();
            assert!(before.phi.max_distance(&after.phi) < 1e-10, "{:?}", spec);
        }
    }

    #[test]
    fn gauge_fix_leaves_fixed_frames_alone() {
        let spec = AlgebraSpec::compact(2, 1);
        let g = Grid::new(64, 3.0).unwrap();
        let c = 2.0 * std::f64::consts::PI / 3.0;
        let fs = frame_from_potential(&spec, &MatrixField::constant(g, &rot_p(c)), &SquareMatrix::identity(2)).unwrap();
        let again = gauge_fix_frame(&spec, &fs.frame).unwrap();
        // The raw connection is pure m up to O(h⁴), so D stays near I.
        assert!(again.frame.max_distance(&fs.frame) < 1e-6);
        assert!(again.potential.max_distance(&fs.potential) < 1e-5 * c);
    }

    #[test]
    fn identities_hold_and_converge() {
        for spec in [AlgebraSpec::compact(2, 1), AlgebraSpec::noncompact(3, 1), AlgebraSpec::para(2, 1)] {
            let res = |n: usize| {
                let g = Grid::new(n, 8.0 * std::f64::consts::PI).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(2);
                let a = random_element(&spec, &mut rng, 1.0);
                let b = random_element(&spec, &mut rng, 1.0);
                let (a, b) = (a.scale(0.25 / a.frobenius_norm()), b.scale(0.25 / b.frobenius_norm()));
                let raw = MatrixField::from_fn(g, |j| {
                    let t = 2.0 * std::f64::consts::PI * g.x(j) / g.length();
                    exp_map(&(a.scale(t.sin()) + b.scale(t.cos()))).unwrap()
                });
                verify_identities(&gauge_fix_frame(&spec, &raw).unwrap()).unwrap()
            };
            let (a, b) = (res(128), res(256));
            assert!(a.max() < 1e-6, "{:?} {:?}", spec, a);
            assert!((a.derivative / b.derivative).log2() > 3.5);
        }
    }

    #[test]
    fn sigma3_inverse_identity_is_exact() {
        let spec = AlgebraSpec::compact(2, 1);
        let s = sigma3(&spec);
        assert_eq!(s.try_inverse().unwrap(), s.scale(-4.0));
    }

    #[test]
    fn spectrum_detects_perturbation() {
        let spec = AlgebraSpec::compact(2, 1);
        let g = Grid::new(16, 1.0).unwrap();
        let os = OrbitState::base_point(spec, g);
        assert_eq!(spectrum_deviation(&os).unwrap(), 0.0);
        let mut bumped = os.clone();
        let mut v = bumped.phi.values().to_vec();
        v[3][(0, 1)] += C64::new(0.01, 0.0);
        v[5][(0, 0)] += I * 0.001;
        bumped.phi = MatrixField::new(g, v).unwrap();
        assert!(spectrum_deviation(&bumped).unwrap() > 1e-4);
    }

    #[test]
    fn spectrum_for_larger_algebras() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for spec in [AlgebraSpec::compact(4, 1), AlgebraSpec::noncompact(3, 2), AlgebraSpec::para(4, 2)] {
            let e = exp_map(&random_element(&spec, &mut rng, 0.7)).unwrap();
            let phi = orbit_point(&spec, &e).unwrap();
            let os = OrbitState::new(spec, MatrixField::constant(Grid::new(4, 1.0).unwrap(), &phi), 0.0);
            assert!(spectrum_deviation(&os).unwrap() < 1e-10, "{:?}", spec);
        }
    }

    #[test]
    fn retraction_restores_orbit() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for spec in [AlgebraSpec::compact(3, 1), AlgebraSpec::noncompact(2, 1), AlgebraSpec::para(3, 1)] {
            let e = exp_map(&random_element(&spec, &mut rng, 0.5)).unwrap();
            let phi = orbit_point(&spec, &e).unwrap();
            let noisy = &phi + &random_element(&spec, &mut rng, 1e-4);
            let (r, cond) = retract_point(&spec, &noisy).unwrap();
            let target = SquareMatrix::identity(spec.n()).scale(spec.involution_value());
            assert!((&r * &r - target).frobenius_norm() < 1e-13);
            assert!(r.distance(&phi) < 1e-3);
            assert!(cond >= 1.0 - 1e-12);
            assert!(algebra::membership_residual(&spec, &r) < 1e-12);
        }
    }

    #[test]
    fn ill_conditioned_para_point_rejected() {
        let spec = AlgebraSpec::para(2, 1);
        // Eigenvalues ±1/2 with nearly parallel eigenvectors.
        let t = 1e9;
        let phi = SquareMatrix::from_real_rows(&[&[0.5, t], &[0.0, -0.5]]);
        let os = OrbitState::new(spec, MatrixField::constant(Grid::new(2, 1.0).unwrap(), &phi), 0.0);
        assert!(matches!(spectrum_deviation(&os), Err(OrbitError::IllConditioned { .. })));
        assert!(matches!(retract(&os), Err(OrbitError::IllConditioned { .. })));
    }

    #[test]
    fn singular_frame_reported() {
        let spec = AlgebraSpec::compact(2, 1);
        let g = Grid::new(4, 1.0).unwrap();
        let mut v = vec![SquareMatrix::identity(2); 4];
        v[2] = SquareMatrix::zeros(2);
        let f = MatrixField::new(g, v).unwrap();
        assert_eq!(orbit_from_frame_field(&spec, &f, 0.0).unwrap_err(), OrbitError::SingularFrame(2));
        let _ = ZERO;
    }
}
