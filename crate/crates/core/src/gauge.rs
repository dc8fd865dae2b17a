//! Given-curvature representation of the third-order flow and its gauge
//! transform to an m-potential equation, with the integrable reference
//! equations used as oracles.
//!
//! The potential equation is written for the assembled m-potential
//! P = ((0, q), (r, 0)):
//!
//! P_t = X(P)·σ₃ + 4(8γ + β)(P·M + M·P)·σ₃,  M = ∫₀ˣ (P P_s P P + P P P_s P) ds,
//!
//! with X = 2αP_xx − 4αP³ − 2βP_xxxx + 4(β − 8γ)(P²P_xx + P_xxP²)
//! − 4(β + 16γ)(P P_x² + P_x²P) − 32γ P P_xx P + 4(β − 16γ)(P_x P P_x − P⁵).
//! The same expression holds for all three families; they differ only in
//! σ₃ and in how the blocks q, r are coupled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{decompose, sigma3, AlgebraSpec, Family};
use crate::fields::{cumulative_integral, derivative, derivatives, quadrature_scalar, FieldError, Grid, MatrixField};
use crate::flows::{self, FlowError, FlowKind, GeneratorForm, StepOptions, Trajectory};
use crate::functionals::FlowParams;
use crate::matrix::{SquareMatrix, C64};
use crate::orbit::{gauge_fix_frame, orbit_from_frame, FramedState, OrbitError, OrbitState};
use crate::par;

/// Measured k-part of a frame's connection, relative to max(1, ‖P‖∞), above
/// which a frame is not treated as gauge-fixed.
pub const GAUGE_FIX_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaugeError {
    #[error("frame is not gauge-fixed: k-part residual {0:.3e}")]
    NotGaugeFixed(f64),
    #[error("trajectory too sparse: {0}")]
    Sparse(String),
    #[error("{0}")]
    Shape(String),
    #[error("non-finite potential at step {step} (t = {time:.6})")]
    NonFinite { step: usize, time: f64 },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// A = λφ dx + A_t dt at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectionSample {
    pub lambda: f64,
    pub a_x: MatrixField,
    pub a_t: MatrixField,
}

fn jet_at(j: &[MatrixField], i: usize) -> Vec<SquareMatrix> {
    j.iter().map(|f| f.at(i).clone()).collect()
}

fn cube(a: &SquareMatrix) -> SquareMatrix {
    &(a * a) * a
}

/// Pointwise A_t from the jet `[φ, φ_x, φ_xx, φ_xxx]`.
pub fn connection_time_point(spec: &AlgebraSpec, p: &FlowParams, lambda: f64, jet: &[SquareMatrix]) -> SquareMatrix {
    let (phi, a, b, c) = (&jet[0], &jet[1], &jet[2], &jet[3]);
    let (al, be, ga) = (p.alpha, p.beta, p.gamma);
    let para = spec.is_para();
    let sgn = if para { -1.0 } else { 1.0 };
    let a3 = cube(a);
    let sq_phi = &(a * a) * phi;
    let l2 = lambda * lambda;
    let mut out = phi.scale(-l2 * l2 * be);
    out.axpy(-sgn * l2 * lambda * be, &phi.comm(a));
    // λ²: ∓αφ ± β(φ_xx ∓ 6φ_x²φ)
    let mut second = phi.scale(-sgn * al);
    second.axpy(sgn * be, b);
    second.axpy(-6.0 * be, &sq_phi);
    out.axpy(l2, &second);
    let mut inner = a.scale(-al);
    inner.axpy(be, c);
    inner.axpy(sgn * 4.0 * (4.0 * ga - 2.0 * be), &a3);
    let mut first = phi.comm(&inner);
    first.axpy(-be, &a.comm(b));
    out.axpy(lambda, &first);
    out
}

pub fn connection(os: &OrbitState, p: &FlowParams, lambda: f64) -> Result<ConnectionSample, GaugeError> {
    let j = derivatives(&os.phi, 3)?;
    let spec = os.spec;
    let a_t = MatrixField::from_fn(os.grid(), |i| connection_time_point(&spec, p, lambda, &jet_at(&j, i)));
    Ok(ConnectionSample {
        lambda,
        a_x: os.phi.scale(lambda),
        a_t,
    })
}

/// K = −λ²·2(8γ + β)·φ_x³ (the dx∧dt coefficient).
pub fn curvature_target(os: &OrbitState, p: &FlowParams, lambda: f64) -> Result<MatrixField, GaugeError> {
    let a = derivative(&os.phi, 1)?;
    let c = -lambda * lambda * p.curvature_coefficient();
    Ok(a.map(|x| cube(x).scale(c)))
}

/// max‖F_A − K‖ at every snapshot with neighbours on both sides, where
/// F_A = ∂ₓA_t − ∂ₜA_x + [A_x, A_t] and ∂ₜ is a central difference.
pub fn curvature_residual(traj: &Trajectory, p: &FlowParams, lambda: f64) -> Result<Vec<(f64, f64)>, GaugeError> {
    let s = &traj.snapshots;
    if s.len() < 3 {
        return Err(GaugeError::Sparse(format!("{} snapshots, need at least 3", s.len())));
    }
    let mut out = Vec::with_capacity(s.len() - 2);
    for i in 1..s.len() - 1 {
        let (dt1, dt2) = (s[i].time - s[i - 1].time, s[i + 1].time - s[i].time);
        if dt1 <= 0.0 || ((dt1 - dt2) / dt1).abs() > 1e-9 {
            return Err(GaugeError::Sparse("snapshots must be equally spaced in time".into()));
        }
        let conn = connection(&s[i], p, lambda)?;
        let dx_at = derivative(&conn.a_t, 1)?;
        let k = curvature_target(&s[i], p, lambda)?;
        let inv = lambda / (dt1 + dt2);
        let worst = (0..s[i].grid().len())
            .map(|j| {
                let mut f = dx_at.at(j).clone();
                f.axpy(-inv, &(s[i + 1].phi.at(j) - s[i - 1].phi.at(j)));
                f += &conn.a_x.at(j).comm(conn.a_t.at(j));
                f.distance(k.at(j))
            })
            .fold(0.0, f64::max);
        out.push((s[i].time, worst));
    }
    Ok(out)
}

/// An m-potential P = ((0, q), (r, 0)) on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialState {
    pub spec: AlgebraSpec,
    pub potential: MatrixField,
    pub time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialSnapshot {
    pub algebra: AlgebraSpec,
    pub grid: Grid,
    pub time: f64,
    /// Row-major k×(n−k) blocks, one per grid point, as [re, im] pairs.
    pub q: Vec<Vec<[f64; 2]>>,
    /// Row-major (n−k)×k blocks.
    pub r: Vec<Vec<[f64; 2]>>,
}

fn pairs(v: &[C64]) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

fn unpairs(v: &[[f64; 2]]) -> Vec<C64> {
    v.iter().map(|p| C64::new(p[0], p[1])).collect()
}

impl PotentialState {
    pub fn zeros(spec: AlgebraSpec, grid: Grid) -> Self {
        Self {
            spec,
            potential: MatrixField::zeros(grid, spec.n()),
            time: 0.0,
        }
    }

    /// Assembles P from row-major q blocks. `r` is required for the para
    /// family and must be `None` for the unitary ones, where r = ∓q*.
    pub fn from_blocks(spec: AlgebraSpec, grid: Grid, q: &[Vec<C64>], r: Option<&[Vec<C64>]>, time: f64) -> Result<Self, GaugeError> {
        let (n, k) = (spec.n(), spec.k());
        let size = k * (n - k);
        if q.len() != grid.len() || q.iter().any(|b| b.len() != size) {
            return Err(GaugeError::Shape(format!("q needs {} blocks of {k}×{}", grid.len(), n - k)));
        }
        let r = match (spec.family(), r) {
            (Family::ParaReal, Some(r)) => {
                if r.len() != grid.len() || r.iter().any(|b| b.len() != size) {
                    return Err(GaugeError::Shape(format!("r needs {} blocks of {}×{k}", grid.len(), n - k)));
                }
                Some(r)
            }
            (Family::ParaReal, None) => return Err(GaugeError::Shape("the para family needs an independent r".into())),
            (_, Some(_)) => return Err(GaugeError::Shape("r is determined by q for unitary families".into())),
            (_, None) => None,
        };
        let vals = (0..grid.len())
            .map(|j| {
                let mut m = SquareMatrix::zeros(n);
                m.set_block(0, k, k, n - k, &q[j]);
                match r {
                    Some(r) => m.set_block(k, 0, n - k, k, &r[j]),
                    None => {
                        let s = if spec.family() == Family::CompactUnitary { -1.0 } else { 1.0 };
                        for a in 0..k {
                            for b in 0..n - k {
                                m[(k + b, a)] = q[j][a * (n - k) + b].conj() * s;
                            }
                        }
                    }
                }
                m
            })
            .collect();
        let ps = Self {
            spec,
            potential: MatrixField::new(grid, vals)?,
            time,
        };
        let bad = ps.membership_residual();
        if bad > 1e-12 * (1.0 + ps.potential.max_norm()) {
            return Err(GaugeError::Shape(format!("blocks do not form an m-potential (residual {bad:.3e})")));
        }
        Ok(ps)
    }

    /// P = Σ_{m=1..4} sin(2πm x/L + θ_m)·A_m with random A_m ∈ m of norm
    /// `amplitude` and random phases.
    pub fn random_smooth(spec: AlgebraSpec, grid: Grid, seed: u64, amplitude: f64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<SquareMatrix> = (0..4).map(|_| crate::algebra::random_m(&spec, &mut rng, amplitude)).collect();
        let phase: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 6.0).collect();
        let potential = MatrixField::from_fn(grid, |j| {
            let x = grid.x(j) * 2.0 * std::f64::consts::PI / grid.length();
            let mut m = SquareMatrix::zeros(spec.n());
            for (i, a) in modes.iter().enumerate() {
                m.axpy(((i + 1) as f64 * x + phase[i]).sin(), a);
            }
            m
        });
        Self { spec, potential, time: 0.0 }
    }

    pub fn grid(&self) -> Grid {
        self.potential.grid()
    }

    pub fn q_block(&self, j: usize) -> Vec<C64> {
        let (n, k) = (self.spec.n(), self.spec.k());
        self.potential.at(j).block(0, k, k, n - k)
    }

    pub fn r_block(&self, j: usize) -> Vec<C64> {
        let (n, k) = (self.spec.n(), self.spec.k());
        self.potential.at(j).block(k, 0, n - k, k)
    }

    /// ‖q(x_j)‖ (Frobenius), invariant under the unitary K-gauge.
    pub fn q_norms(&self) -> Vec<f64> {
        (0..self.grid().len())
            .map(|j| self.q_block(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }

    /// Re tr(q r) at each point, invariant under every K-gauge.
    pub fn pair_density(&self) -> Vec<f64> {
        let k = self.spec.k();
        self.potential
            .values()
            .iter()
            .map(|p| {
                let p2 = p * p;
                (0..k).map(|i| p2[(i, i)].re).sum()
            })
            .collect()
    }

    /// ∫ tr(q q*) dx.
    pub fn mass(&self) -> f64 {
        let dens: Vec<f64> = self.q_norms().iter().map(|v| v * v).collect();
        quadrature_scalar(&self.grid(), &dens)
    }

    /// Largest deviation of P from m.
    pub fn membership_residual(&self) -> f64 {
        self.potential
            .values()
            .iter()
            .map(|m| crate::algebra::membership_residual(&self.spec, m) + decompose(&self.spec, m).k_part.frobenius_norm())
            .fold(0.0, f64::max)
    }

    pub fn snapshot(&self) -> PotentialSnapshot {
        let n = self.grid().len();
        PotentialSnapshot {
            algebra: self.spec,
            grid: self.grid(),
            time: self.time,
            q: (0..n).map(|j| pairs(&self.q_block(j))).collect(),
            r: (0..n).map(|j| pairs(&self.r_block(j))).collect(),
        }
    }

    pub fn from_snapshot(s: &PotentialSnapshot) -> Result<Self, GaugeError> {
        let q: Vec<Vec<C64>> = s.q.iter().map(|b| unpairs(b)).collect();
        let r: Vec<Vec<C64>> = s.r.iter().map(|b| unpairs(b)).collect();
        let r = if s.algebra.is_para() { Some(r.as_slice()) } else { None };
        Self::from_blocks(s.algebra, s.grid, &q, r, s.time)
    }
}

/// The m-potential of a gauge-fixed frame.
pub fn gauge_transform(fs: &FramedState) -> Result<PotentialState, GaugeError> {
    let scale = fs.potential.max_norm().max(1.0);
    let stored = fs.k_residual();
    if stored > 1e-10 * scale {
        return Err(GaugeError::NotGaugeFixed(stored));
    }
    let measured = fs.measured_k_residual()?;
    if measured > GAUGE_FIX_TOL * scale {
        return Err(GaugeError::NotGaugeFixed(measured));
    }
    Ok(PotentialState {
        spec: fs.spec,
        potential: fs.potential.clone(),
        time: 0.0,
    })
}

/// Gauge-fixes the frame carried by an orbit state and returns its
/// m-potential. The frame must close up over the period.
pub fn potential_of_orbit(os: &OrbitState) -> Result<PotentialState, GaugeError> {
    let frame = os
        .frame
        .as_ref()
        .ok_or_else(|| GaugeError::Unsupported("orbit state carries no frame".into()))?;
    if !os.twist.is_identity() {
        return Err(GaugeError::Unsupported("gauge transform needs a frame that closes up over the period".into()));
    }
    let fs = gauge_fix_frame(&os.spec, frame)?;
    let mut ps = gauge_transform(&fs)?;
    ps.time = os.time;
    Ok(ps)
}

/// Local part X(P)·σ₃ from the jet `[P, P_x, P_xx, P_xxx, P_xxxx]`.
pub fn potential_local_point(p: &FlowParams, s3: &SquareMatrix, jet: &[SquareMatrix]) -> SquareMatrix {
    let (q, q1, q2, q4) = (&jet[0], &jet[1], &jet[2], &jet[4]);
    let (al, be, ga) = (p.alpha, p.beta, p.gamma);
    let q_sq = q * q;
    let q1_sq = q1 * q1;
    let q3 = &q_sq * q;
    let q5 = &q3 * &q_sq;
    let mut x = q2.scale(2.0 * al);
    x.axpy(-4.0 * al, &q3);
    x.axpy(-2.0 * be, q4);
    x.axpy(4.0 * (be - 8.0 * ga), &(&(&q_sq * q2) + &(q2 * &q_sq)));
    x.axpy(-4.0 * (be + 16.0 * ga), &(&(q * &q1_sq) + &(&q1_sq * q)));
    x.axpy(-32.0 * ga, &(&(q * q2) * q));
    x.axpy(4.0 * (be - 16.0 * ga), &(&(&(q1 * q) * q1) - &q5));
    &x * s3
}

/// (P_t local, P_t nonlocal) for the potential equation.
pub fn potential_rhs_parts(ps: &PotentialState, p: &FlowParams) -> Result<(MatrixField, MatrixField), GaugeError> {
    let grid = ps.grid();
    let j = derivatives(&ps.potential, 4)?;
    let s3 = sigma3(&ps.spec);
    let local = MatrixField::new(grid, par::map_indexed(grid.len(), |i| potential_local_point(p, &s3, &jet_at(&j, i))))?;
    let integrand = j[0].zip_map(&j[1], nonlocal_integrand_point);
    let m = cumulative_integral(&integrand);
    let nonlocal = j[0].zip_map(&m, |q, mm| nonlocal_point(p, &s3, q, mm));
    Ok((local, nonlocal))
}

/// P P_x P P + P P P_x P, whose primitive from x = 0 is M.
pub fn nonlocal_integrand_point(q: &SquareMatrix, q1: &SquareMatrix) -> SquareMatrix {
    let q_sq = q * q;
    &(&(q * q1) * &q_sq) + &(&(&q_sq * q1) * q)
}

/// 4(8γ + β)(P M + M P)·σ₃.
pub fn nonlocal_point(p: &FlowParams, s3: &SquareMatrix, q: &SquareMatrix, m: &SquareMatrix) -> SquareMatrix {
    (&(&(q * m) + &(m * q)) * s3).scale(2.0 * p.curvature_coefficient())
}

/// P_t for the potential equation.
pub fn potential_rhs(ps: &PotentialState, p: &FlowParams) -> Result<MatrixField, GaugeError> {
    let (local, nonlocal) = potential_rhs_parts(ps, p)?;
    Ok(local.add(&nonlocal))
}

/// q_t of the fourth-order integrable matrix Schrödinger equation,
/// iq_t + q_xxxx + 4q_xx q*q + 2qq*_xx q + 4qq*q_xx + 2q_x q*_x q
/// + 6q_x q* q_x + 2qq*_x q_x + 6qq*qq*q = 0.
///
/// `q` holds the k×(n−k) unknown in the upper-right block of an n×n field;
/// the result is embedded the same way.
pub fn akns4_rhs(q: &MatrixField) -> Result<MatrixField, GaugeError> {
    let j = derivatives(q, 4)?;
    let grid = q.grid();
    let vals = par::map_indexed(grid.len(), |i| {
        let (u, u1, u2, u4) = (j[0].at(i), j[1].at(i), j[2].at(i), j[4].at(i));
        let (s, s1, s2) = (u.adjoint(), u1.adjoint(), u2.adjoint());
        let t = |a: &SquareMatrix, b: &SquareMatrix, c: &SquareMatrix| &(a * b) * c;
        let mut z = u4.clone();
        z.axpy(4.0, &t(u2, &s, u));
        z.axpy(2.0, &t(u, &s2, u));
        z.axpy(4.0, &t(u, &s, u2));
        z.axpy(2.0, &t(u1, &s1, u));
        z.axpy(6.0, &t(u1, &s, u1));
        z.axpy(2.0, &t(u, &s1, u1));
        z.axpy(6.0, &(&t(u, &s, u) * &(&s * u)));
        z.scale_c(C64::new(0.0, 1.0))
    });
    Ok(MatrixField::new(grid, vals)?)
}

/// Q_t = Q_xxx − 2(Q³)_x − [Q, [Q, Q_x]].
pub fn matrix_kdv_rhs(q: &MatrixField) -> Result<MatrixField, GaugeError> {
    let j = derivatives(q, 3)?;
    let grid = q.grid();
    let vals = par::map_indexed(grid.len(), |i| {
        let (u, u1, u3) = (j[0].at(i), j[1].at(i), j[3].at(i));
        let cube_x = &(&(&(u1 * u) * u) + &(&(u * u1) * u)) + &(&(u * u) * u1);
        let mut out = u3.clone();
        out.axpy(-2.0, &cube_x);
        out -= &u.comm(&u.comm(u1));
        out
    });
    Ok(MatrixField::new(grid, vals)?)
}

/// The coupled matrix KdV system
/// U⁺_t = U⁺_xxx − 3U⁺U⁻U⁺_x − 3U⁺_xU⁻U⁺ and the same with ± exchanged.
pub fn coupled_kdv_rhs(u_plus: &MatrixField, u_minus: &MatrixField) -> Result<(MatrixField, MatrixField), GaugeError> {
    if u_plus.grid() != u_minus.grid() || u_plus.dim() != u_minus.dim() {
        return Err(GaugeError::Shape("U⁺ and U⁻ must share grid and size".into()));
    }
    let a = derivatives(u_plus, 3)?;
    let b = derivatives(u_minus, 3)?;
    let side = |x: &[MatrixField], y: &[MatrixField]| {
        MatrixField::from_fn(x[0].grid(), |i| {
            let (u, u1, u3, v) = (x[0].at(i), x[1].at(i), x[3].at(i), y[0].at(i));
            let mut out = u3.clone();
            out.axpy(-3.0, &(&(u * v) * u1));
            out.axpy(-3.0, &(&(u1 * v) * u));
            out
        })
    };
    Ok((side(&a, &b), side(&b, &a)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialTrajectory {
    pub snapshots: Vec<PotentialState>,
    pub steps: usize,
}

impl PotentialTrajectory {
    pub fn last(&self) -> &PotentialState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }
}

fn output_stops(t0: f64, t_end: f64, output_times: &[f64]) -> Result<Vec<f64>, GaugeError> {
    if t_end.is_nan() || t_end < t0 {
        return Err(GaugeError::Sparse(format!("end time {t_end} precedes start {t0}")));
    }
    let mut stops: Vec<f64> = Vec::new();
    for &t in output_times {
        if t == t0 {
            continue;
        }
        if !(t > t0 && t <= t_end) || stops.last().is_some_and(|&l| t <= l) {
            return Err(GaugeError::Sparse(format!("output time {t} out of order or outside ({t0}, {t_end}]")));
        }
        stops.push(t);
    }
    if t_end > t0 && stops.last().is_none_or(|&l| l < t_end) {
        stops.push(t_end);
    }
    Ok(stops)
}

/// Classical RK4 on P with sub-steps no longer than `dt`, landing exactly on
/// every output time.
pub fn evolve_field_rk4<F>(ps: &PotentialState, t_end: f64, dt: f64, output_times: &[f64], rhs: F) -> Result<PotentialTrajectory, GaugeError>
where
    F: Fn(&PotentialState) -> Result<MatrixField, GaugeError>,
{
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(GaugeError::Sparse(format!("time step {dt} must be positive")));
    }
    let stops = output_stops(ps.time, t_end, output_times)?;
    let mut traj = PotentialTrajectory {
        snapshots: vec![ps.clone()],
        steps: 0,
    };
    let mut state = ps.clone();
    let with = |base: &PotentialState, f: MatrixField| PotentialState {
        spec: base.spec,
        potential: f,
        time: base.time,
    };
    for stop in stops {
        let span = stop - state.time;
        let m = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / m as f64;
        for i in 0..m {
            let p0 = &state.potential;
            let k1 = rhs(&state)?;
            let k2 = rhs(&with(&state, p0.axpy(0.5 * h, &k1)))?;
            let k3 = rhs(&with(&state, p0.axpy(0.5 * h, &k2)))?;
            let k4 = rhs(&with(&state, p0.axpy(h, &k3)))?;
            let next = p0.add(&k1.axpy(2.0, &k2).axpy(2.0, &k3).add(&k4).scale(h / 6.0));
            traj.steps += 1;
            if !next.is_finite() {
                return Err(GaugeError::NonFinite {
                    step: traj.steps,
                    time: state.time,
                });
            }
            state.potential = next;
            state.time = if i + 1 == m { stop } else { state.time + h };
        }
        traj.snapshots.push(state.clone());
    }
    Ok(traj)
}

pub fn evolve_potential(ps: &PotentialState, p: &FlowParams, t_end: f64, dt: f64, output_times: &[f64]) -> Result<PotentialTrajectory, GaugeError> {
    evolve_field_rk4(ps, t_end, dt, output_times, |s| potential_rhs(s, p))
}

pub fn evolve_kdv(ps: &PotentialState, t_end: f64, dt: f64, output_times: &[f64]) -> Result<PotentialTrajectory, GaugeError> {
    evolve_field_rk4(ps, t_end, dt, output_times, |s| matrix_kdv_rhs(&s.potential))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaugeCompareRow {
    pub t: f64,
    /// max over all points of |‖q_matrix‖ − ‖q_gauge‖|.
    pub max_abs_diff: f64,
    /// The same on [0.1L, 0.9L].
    pub interior_linf: f64,
}

/// Difference of ‖q‖ between two potentials, over all points and over the
/// interior [0.1L, 0.9L].
pub fn q_norm_difference(a: &PotentialState, b: &PotentialState) -> (f64, f64) {
    let grid = a.grid();
    let (na, nb) = (a.q_norms(), b.q_norms());
    let l = grid.length();
    let mut all: f64 = 0.0;
    let mut interior: f64 = 0.0;
    for j in 0..grid.len() {
        let d = (na[j] - nb[j]).abs();
        all = all.max(d);
        let x = grid.x(j);
        if x >= 0.1 * l && x <= 0.9 * l {
            interior = interior.max(d);
        }
    }
    (all, interior)
}

/// Evolves framed data once through the third-order φ-flow (gauge-fixing
/// the carried frame at each output) and once through the potential
/// equation, comparing ‖q‖ at every output time.
pub fn gauge_compare(fs: &FramedState, p: &FlowParams, t_end: f64, dt: f64, output_times: &[f64]) -> Result<Vec<GaugeCompareRow>, GaugeError> {
    if !fs.twist.is_identity() {
        return Err(GaugeError::Unsupported("gauge comparison needs initial data whose frame closes up (e.g. two_bump)".into()));
    }
    let os = orbit_from_frame(fs)?;
    let mut matrix_side = Vec::new();
    let opts = StepOptions {
        form: GeneratorForm::Simplified,
        allow_unstable: false,
    };
    flows::evolve_with(&os, p, FlowKind::ThirdOrder, t_end, dt, output_times, &opts, |s, _| {
        matrix_side.push(s.clone());
        Ok(())
    })?;
    let ps0 = gauge_transform(fs)?;
    let direct = evolve_potential(&ps0, p, t_end, dt, output_times)?;
    if direct.snapshots.len() != matrix_side.len() {
        return Err(GaugeError::Sparse("output times differ between the two evolutions".into()));
    }
    matrix_side
        .iter()
        .zip(&direct.snapshots)
        .map(|(m, d)| {
            let pm = potential_of_orbit(m)?;
            let (all, interior) = q_norm_difference(&pm, d);
            Ok(GaugeCompareRow {
                t: m.time,
                max_abs_diff: all,
                interior_linf: interior,
            })
        })
        .collect()
}

/// Stability bound for the potential equation (its leading terms match the
/// simplified third-order generator).
pub fn potential_stability_bound(grid: &Grid, p: &FlowParams) -> f64 {
    flows::stability_bound(grid, p, FlowKind::ThirdOrder, GeneratorForm::Simplified)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{build, InitialData};

    fn random_potential(spec: AlgebraSpec, n: usize, seed: u64) -> PotentialState {
        PotentialState::random_smooth(spec, Grid::new(n, 10.0).unwrap(), seed, 0.3)
    }

    #[test]
    fn zero_potential_is_stationary() {
        let ps = PotentialState::zeros(AlgebraSpec::compact(3, 1), Grid::new(32, 5.0).unwrap());
        let p = FlowParams::new(1.0, 0.5, 0.3).unwrap();
        assert_eq!(potential_rhs(&ps, &p).unwrap().max_norm(), 0.0);
        let t = evolve_potential(&ps, &p, 0.01, 1e-3, &[]).unwrap();
        assert_eq!(t.last().potential.max_norm(), 0.0);
    }

    #[test]
    fn rhs_stays_in_m() {
        for spec in [AlgebraSpec::compact(3, 1), AlgebraSpec::noncompact(3, 2), AlgebraSpec::para(4, 2)] {
            let ps = random_potential(spec, 64, 4);
            let p = FlowParams::new(0.7, 0.3, -0.2).unwrap();
            let rhs = potential_rhs(&ps, &p).unwrap();
            let res = PotentialState {
                spec,
                potential: rhs,
                time: 0.0,
            }
            .membership_residual();
            assert!(res < 1e-12, "{spec:?} {res}");
        }
    }

    #[test]
    fn constant_scalar_rotates_phase() {
        // i q_t = 2α|c|²c − 6β|c|⁴c + 6(8γ+β)|c|⁴c once the phase term
        // 2i(8γ+β)|q(0)|⁴q from anchoring the integral at x = 0 is removed.
        let spec = AlgebraSpec::compact(2, 1);
        let grid = Grid::new(16, 3.0).unwrap();
        let c = C64::new(0.3, -0.4);
        let q: Vec<Vec<C64>> = vec![vec![c]; 16];
        let ps = PotentialState::from_blocks(spec, grid, &q, None, 0.0).unwrap();
        let p = FlowParams::new(0.9, 0.4, -0.1).unwrap();
        let rhs = potential_rhs(&ps, &p).unwrap();
        let m2 = c.norm_sqr();
        let mut expect = (c * (2.0 * p.alpha * m2 - 6.0 * p.beta * m2 * m2 + 6.0 * (8.0 * p.gamma + p.beta) * m2 * m2)) * C64::new(0.0, -1.0);
        expect += c * C64::new(0.0, 2.0 * (8.0 * p.gamma + p.beta) * m2 * m2);
        for j in 0..16 {
            assert!((rhs.at(j)[(0, 1)] - expect).norm() < 1e-11, "{} {}", rhs.at(j)[(0, 1)], expect);
        }
    }

    #[test]
    fn integrable_limit_is_akns4() {
        for n in [2, 3] {
            let spec = AlgebraSpec::compact(n, 1);
            let ps = random_potential(spec, 64, n as u64);
            let p = FlowParams::new(0.0, 1.0, -0.125).unwrap();
            let (local, nonlocal) = potential_rhs_parts(&ps, &p).unwrap();
            assert!(nonlocal.max_norm() == 0.0);
            let k = spec.k();
            let q_only = ps.potential.map(|m| {
                let mut out = SquareMatrix::zeros(n);
                out.set_block(0, k, k, n - k, &m.block(0, k, k, n - k));
                out
            });
            let oracle = akns4_rhs(&q_only).unwrap();
            for j in 0..64 {
                let a = local.at(j).block(0, k, k, n - k);
                let b = oracle.at(j).block(0, k, k, n - k);
                let d = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
                assert!(d < 1e-12, "{d}");
            }
        }
    }

    #[test]
    fn coupled_kdv_matches_block_form() {
        let spec = AlgebraSpec::para(4, 2);
        let ps = random_potential(spec, 64, 9);
        let full = matrix_kdv_rhs(&ps.potential).unwrap();
        let up = ps.potential.map(|m| SquareMatrix::from_row_major(&m.block(0, 2, 2, 2)));
        let um = ps.potential.map(|m| SquareMatrix::from_row_major(&m.block(2, 0, 2, 2)));
        let (tp, tm) = coupled_kdv_rhs(&up, &um).unwrap();
        for j in 0..64 {
            assert!(SquareMatrix::from_row_major(&full.at(j).block(0, 2, 2, 2)).distance(tp.at(j)) < 1e-12);
            assert!(SquareMatrix::from_row_major(&full.at(j).block(2, 0, 2, 2)).distance(tm.at(j)) < 1e-12);
        }
    }

    #[test]
    fn constant_state_has_flat_connection() {
        let spec = AlgebraSpec::compact(2, 1);
        let os = OrbitState::base_point(spec, Grid::new(16, 2.0).unwrap());
        let p = FlowParams::new(1.3, 0.2, 0.1).unwrap();
        let lam = 0.7;
        let c = connection(&os, &p, lam).unwrap();
        let s3 = sigma3(&spec);
        let expect = s3.scale(-lam.powi(4) * p.beta - lam * lam * p.alpha);
        assert!(c.a_t.at(3).distance(&expect) < 1e-12);
        let zero = connection(&os, &p, 0.0).unwrap();
        assert_eq!(zero.a_t.max_norm(), 0.0);
        assert_eq!(zero.a_x.max_norm(), 0.0);
    }

    #[test]
    fn gauge_transform_recovers_two_bump_potential() {
        let spec = AlgebraSpec::compact(2, 1);
        let grid = Grid::new(128, 8.0 * std::f64::consts::PI).unwrap();
        let fs = build(&spec, grid, &InitialData::TwoBump { amplitude: 0.3, width: 3.0 }).unwrap();
        let ps = gauge_transform(&fs).unwrap();
        for j in 0..grid.len() {
            let q = ps.q_block(j)[0];
            let r = ps.r_block(j)[0];
            assert!((r + q.conj()).norm() < 1e-15);
        }
        let os = orbit_from_frame(&fs).unwrap();
        let again = potential_of_orbit(&os).unwrap();
        let (all, _) = q_norm_difference(&ps, &again);
        assert!(all < 1e-5, "{all}");
        assert!(ps.mass() > 0.1);
    }

    #[test]
    fn snapshot_round_trip() {
        let ps = random_potential(AlgebraSpec::para(3, 1), 16, 2);
        let back = PotentialState::from_snapshot(&ps.snapshot()).unwrap();
        assert!(back.potential.max_distance(&ps.potential) == 0.0);
    }
}
