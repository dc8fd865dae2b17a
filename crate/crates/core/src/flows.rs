//! Right-hand sides and time integration for the leading-order (Landau–
//! Lifshitz type), second-order (KdV type) and third-order (generalized
//! bi-Schrödinger) flows on the orbit.
//!
//! Commutator-form flows φ_t = [φ, W] are advanced by a four-stage
//! Runge–Kutta–Munthe-Kaas method acting by conjugation, so every step is an
//! exact isospectral map. The second-order flow is advanced by classical RK4
//! followed by spectral retraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{exp_map_pair, project, AlgebraError, AlgebraSpec};
use crate::fields::{cumulative_integral, derivative, stencil_amplification, FieldError, Grid, MatrixField};
use crate::functionals::{energy_report, EnergyReport, FlowParams, FunctionalError};
use crate::matrix::SquareMatrix;
use crate::orbit::{retract, spectrum_deviation, FrameTwist, OrbitError, OrbitState};
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// φ_t = [φ, φ_xx]
    LeadingOrder,
    /// φ_t = φ_xxx + c([φ_x, [φ, φ_x]])_x
    SecondOrder,
    /// φ_t = [φ, ∇H]
    ThirdOrder,
}

/// How W is discretized for the commutator-form flows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorForm {
    /// Exact gradient of the discrete Hamiltonian, so the semi-discrete
    /// flow conserves it.
    #[default]
    Conservative,
    /// −αφ_xx + βφ_xxxx ± 4(4γ − 2β)(φ_x³)_x on difference jets.
    Simplified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOptions {
    pub form: GeneratorForm,
    /// Proceed (with a warning) when dt exceeds the stability bound.
    pub allow_unstable: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            form: GeneratorForm::Conservative,
            allow_unstable: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("dt = {dt:.3e} exceeds the stability bound {bound:.3e}")]
    Unstable { dt: f64, bound: f64 },
    #[error("non-finite state at step {step} (t = {time:.6}); last good state kept")]
    NonFinite {
        step: usize,
        time: f64,
        partial: Box<Trajectory>,
    },
    #[error("invalid output times: {0}")]
    BadTimes(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

/// Coefficient of ([φ_x, [φ, φ_x]])_x in the second-order flow.
pub fn second_order_coefficient(spec: &AlgebraSpec) -> f64 {
    if spec.is_para() {
        -1.5
    } else {
        1.5
    }
}

/// Pointwise W of the simplified third-order flow from the jet
/// `[φ, φ_x, φ_xx, φ_xxx, φ_xxxx]`.
pub fn simplified_w_point(spec: &AlgebraSpec, p: &FlowParams, jet: &[SquareMatrix]) -> SquareMatrix {
    let (a, b, d4) = (&jet[1], &jet[2], &jet[4]);
    let aa = a * a;
    // (φ_x³)_x = bφ_x² + φ_x b φ_x + φ_x² b
    let mut cube_x = b * &aa;
    cube_x += &(&(a * b) * a);
    cube_x += &(&aa * b);
    let mut w = b.scale(-p.alpha);
    w.axpy(p.beta, d4);
    w.axpy(spec.cubic_sign() * 4.0 * (4.0 * p.gamma - 2.0 * p.beta), &cube_x);
    w
}

/// Pointwise W of the unsimplified power form,
/// −αφ_xx + βφ_xxxx + (4γ − 2β)(φ_xφ⁻¹φ_xφ⁻¹φ_x)_x, with the outer derivative
/// expanded by the product rule and (φ⁻¹)_x = −φ⁻¹φ_xφ⁻¹.
pub fn power_w_point(p: &FlowParams, jet: &[SquareMatrix], inv: &SquareMatrix) -> SquareMatrix {
    let (a, b, d4) = (&jet[1], &jet[2], &jet[4]);
    let du = -&(&(inv * a) * inv);
    let factors = [a, inv, a, inv, a];
    let mut chain_x = SquareMatrix::zeros(a.dim());
    for i in 0..factors.len() {
        let mut term = SquareMatrix::identity(a.dim());
        for (m, f) in factors.iter().enumerate() {
            term = match (m == i, m % 2) {
                (false, _) => &term * *f,
                (true, 0) => &term * b,
                (true, _) => &term * &du,
            };
        }
        chain_x += &term;
    }
    let mut w = b.scale(-p.alpha);
    w.axpy(p.beta, d4);
    w.axpy(4.0 * p.gamma - 2.0 * p.beta, &chain_x);
    w
}

/// Pointwise second-order right-hand side from the jet, with the outer
/// derivative expanded: [φ_xx, [φ, φ_x]] + [φ_x, [φ, φ_xx]].
pub fn second_order_point(spec: &AlgebraSpec, jet: &[SquareMatrix]) -> SquareMatrix {
    let (phi, a, b, c) = (&jet[0], &jet[1], &jet[2], &jet[3]);
    let mut nl = b.comm(&phi.comm(a));
    nl += &a.comm(&phi.comm(b));
    let mut out = c.clone();
    out.axpy(second_order_coefficient(spec), &nl);
    out
}

/// Pointwise right-hand side of the curve equation with φ = γ̃_x:
/// −α[φ, φ_x] + β([φ, φ_xxx] − [φ_x, φ_xx]) + (4γ − 2β)[φ, φ_xφ⁻¹φ_xφ⁻¹φ_x].
pub fn curve_rhs_point(p: &FlowParams, jet: &[SquareMatrix], inv: &SquareMatrix) -> SquareMatrix {
    let (phi, a, b, c) = (&jet[0], &jet[1], &jet[2], &jet[3]);
    let chain = &(&(&(a * inv) * a) * inv) * a;
    let mut out = phi.comm(a).scale(-p.alpha);
    out.axpy(p.beta, &(phi.comm(c) - a.comm(b)));
    out.axpy(4.0 * p.gamma - 2.0 * p.beta, &phi.comm(&chain));
    out
}

fn jets(phi: &MatrixField, order: usize) -> Result<Vec<MatrixField>, FlowError> {
    Ok(crate::fields::derivatives(phi, order)?)
}

fn jet_at(j: &[MatrixField], i: usize) -> Vec<SquareMatrix> {
    j.iter().map(|f| f.at(i).clone()).collect()
}

fn inverse_at(phi: &SquareMatrix, point: usize) -> Result<SquareMatrix, OrbitError> {
    phi.try_inverse().ok_or(OrbitError::SingularPoint(point))
}

/// W of the simplified third-order flow.
pub fn third_order_generator(os: &OrbitState, p: &FlowParams) -> Result<MatrixField, FlowError> {
    let j = jets(&os.phi, 4)?;
    let spec = os.spec;
    Ok(MatrixField::from_fn(os.grid(), |i| simplified_w_point(&spec, p, &jet_at(&j, i))))
}

/// W of the unsimplified power form (test oracle).
pub fn power_form_generator(os: &OrbitState, p: &FlowParams) -> Result<MatrixField, FlowError> {
    let j = jets(&os.phi, 4)?;
    let rows: Vec<Result<SquareMatrix, OrbitError>> = par::map_indexed(os.grid().len(), |i| {
        let inv = inverse_at(os.phi.at(i), i)?;
        Ok(power_w_point(p, &jet_at(&j, i), &inv))
    });
    let vals = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(MatrixField::new(os.grid(), vals)?)
}

/// Gradient of the discrete Hamiltonian
/// H_h = αE_h + β(E21_h − E22_h + E23_h) + γẼ_h built on a = D₁φ, b = D₂φ
/// and φ⁻¹ = κφ, projected onto g. Since D₁ is skew and D₂ symmetric on the
/// periodic grid, ⟨∇H_h, [φ, ∇H_h]⟩ = 0 makes H_h an exact invariant of the
/// semi-discrete flow.
pub fn conservative_generator(os: &OrbitState, p: &FlowParams) -> Result<MatrixField, FlowError> {
    let spec = os.spec;
    let grid = os.grid();
    let a = derivative(&os.phi, 1)?;
    let b = derivative(&os.phi, 2)?;
    let k = spec.kappa();
    let k2 = k * k;
    let qt = spec.quartic_sign() / spec.inner_sign() * k2 * k2;
    // G = D₁(FA) + D₂(FB) + FP
    let parts: Vec<[SquareMatrix; 3]> = par::map_indexed(grid.len(), |i| {
        let (ph, ai, bi) = (os.phi.at(i), a.at(i), b.at(i));
        let pa = ph * ai;
        let ap = ai * ph;
        let apa = &ap * ai;
        let aba = &(ai * bi) * ai;
        let fa22 = (&(&pa * bi) + &(&(bi * ai) * ph)).scale(k);
        let fb22 = apa.scale(k);
        let fp22 = aba.scale(k);
        let fa23 = (&(&pa * &apa) + &(&apa * &ap)).scale(k2);
        let fp23 = (&(ai * &apa) * ai).scale(k2);
        let ap3 = &(&ap * &ap) * &ap;
        let fat = (ph * &ap3).scale(qt);
        let fpt = (&ap3 * ai).scale(qt);
        let mut fa = ai.scale(-p.alpha);
        fa.axpy(p.beta, &(fa22 - fa23));
        fa.axpy(-p.gamma, &fat);
        let fb = (bi - &fb22).scale(p.beta);
        let mut fp = (fp23 - fp22).scale(p.beta);
        fp.axpy(p.gamma, &fpt);
        [fa, fb, fp]
    });
    let field = |m: usize| MatrixField::new(grid, parts.iter().map(|r| r[m].clone()).collect());
    let da = derivative(&field(0)?, 1)?;
    let db = derivative(&field(1)?, 2)?;
    let fp = field(2)?;
    Ok(MatrixField::from_fn(grid, |i| {
        let mut g = da.at(i) + db.at(i);
        g += fp.at(i);
        project(&spec, &g)
    }))
}

/// W for the commutator-form flows.
pub fn generator(os: &OrbitState, p: &FlowParams, kind: FlowKind, form: GeneratorForm) -> Result<MatrixField, FlowError> {
    match (kind, form) {
        (FlowKind::ThirdOrder, GeneratorForm::Conservative) => conservative_generator(os, p),
        (FlowKind::ThirdOrder, GeneratorForm::Simplified) => third_order_generator(os, p),
        // E_h = ½Σ⟨D₁φ, D₁φ⟩ has gradient −D₁D₁φ.
        (FlowKind::LeadingOrder, GeneratorForm::Conservative) => Ok(derivative(&derivative(&os.phi, 1)?, 1)?),
        (FlowKind::LeadingOrder, GeneratorForm::Simplified) => Ok(derivative(&os.phi, 2)?),
        (FlowKind::SecondOrder, _) => Err(FlowError::BadTimes("the second-order flow has no commutator generator".into())),
    }
}

/// φ_t for the second-order flow.
pub fn second_order_rhs(os: &OrbitState) -> Result<MatrixField, FlowError> {
    let j = jets(&os.phi, 3)?;
    let spec = os.spec;
    Ok(MatrixField::from_fn(os.grid(), |i| second_order_point(&spec, &jet_at(&j, i))))
}

/// φ_t for any flow.
pub fn tangent_rhs(os: &OrbitState, p: &FlowParams, kind: FlowKind, form: GeneratorForm) -> Result<MatrixField, FlowError> {
    match kind {
        FlowKind::SecondOrder => second_order_rhs(os),
        _ => {
            let w = generator(os, p, kind, form)?;
            Ok(os.phi.zip_map(&w, |ph, w| ph.comm(w)))
        }
    }
}

/// Largest stable dt for explicit stepping with the 0.2 safety factor.
pub fn stability_bound(grid: &Grid, p: &FlowParams, kind: FlowKind, form: GeneratorForm) -> f64 {
    let h = grid.h();
    let c1 = stencil_amplification(1);
    match kind {
        FlowKind::LeadingOrder => {
            let c = match form {
                GeneratorForm::Conservative => c1 * c1,
                GeneratorForm::Simplified => stencil_amplification(2),
            };
            0.2 * h * h / c
        }
        FlowKind::SecondOrder => 0.2 * h.powi(3) / stencil_amplification(3),
        FlowKind::ThirdOrder => {
            let c4 = match form {
                GeneratorForm::Conservative => stencil_amplification(2).powi(2),
                GeneratorForm::Simplified => stencil_amplification(4),
            };
            let c2 = match form {
                GeneratorForm::Conservative => c1 * c1,
                GeneratorForm::Simplified => stencil_amplification(2),
            };
            let fourth = if p.beta != 0.0 { 0.2 * h.powi(4) / (p.beta.abs() * c4) } else { f64::INFINITY };
            let second = if p.alpha != 0.0 { 0.2 * h * h / (p.alpha.abs() * c2) } else { f64::INFINITY };
            let b = fourth.min(second);
            if b.is_finite() {
                b
            } else {
                // γ alone: cubic in φ_x with one derivative, bounded by the
                // first-difference stencil.
                0.2 * h / (c1 * p.gamma.abs().max(f64::EPSILON))
            }
        }
    }
}

fn conjugated(os: &OrbitState, theta: &MatrixField) -> Result<OrbitState, FlowError> {
    let rows: Vec<Result<SquareMatrix, AlgebraError>> = par::map_indexed(os.grid().len(), |i| {
        let (g, ginv) = exp_map_pair(theta.at(i))?;
        Ok(&(&g * os.phi.at(i)) * &ginv)
    });
    let vals = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(OrbitState {
        spec: os.spec,
        phi: MatrixField::new(os.grid(), vals)?,
        time: os.time,
        frame: None,
        twist: FrameTwist::identity(os.spec.n()),
    })
}

fn field_comm(a: &MatrixField, b: &MatrixField) -> MatrixField {
    a.zip_map(b, |x, y| x.comm(y))
}

/// One RKMK4 step of φ_t = [φ, W(φ)] by conjugation φ ↦ e^Θ φ e^{−Θ}.
fn rkmk4_step(os: &OrbitState, dt: f64, w: &dyn Fn(&OrbitState) -> Result<MatrixField, FlowError>) -> Result<OrbitState, FlowError> {
    // Θ' = −W reproduces φ_t = [φ, W] under left conjugation.
    let f = |s: &OrbitState| -> Result<MatrixField, FlowError> { Ok(w(s)?.scale(-dt)) };
    let k1 = f(os)?;
    let k2 = f(&conjugated(os, &k1.scale(0.5))?)?;
    let th3 = k2.scale(0.5).axpy(-0.125, &field_comm(&k1, &k2));
    let k3 = f(&conjugated(os, &th3)?)?;
    let k4 = f(&conjugated(os, &k3)?)?;
    let mut v = k1.axpy(2.0, &k2).axpy(2.0, &k3).add(&k4).scale(1.0 / 6.0);
    v = v.axpy(-1.0 / 12.0, &field_comm(&k1, &k4));
    let grid = os.grid();
    let para = os.spec.is_para();
    let track = os.frame.is_some() && os.twist.survives_updates(&os.spec);
    let rows: Vec<Result<(SquareMatrix, Option<SquareMatrix>), AlgebraError>> = par::map_indexed(grid.len(), |i| {
        let (g, ginv) = exp_map_pair(v.at(i))?;
        let phi = &(&g * os.phi.at(i)) * &ginv;
        let frame = match (&os.frame, track) {
            (Some(fr), true) if para => Some(&g * fr.at(i)),
            (Some(fr), true) => Some(fr.at(i) * &ginv),
            _ => None,
        };
        Ok((phi, frame))
    });
    let mut phis = Vec::with_capacity(grid.len());
    let mut frames = Vec::with_capacity(grid.len());
    for r in rows {
        let (p, e) = r?;
        phis.push(p);
        if let Some(e) = e {
            frames.push(e);
        }
    }
    let frame = if track { Some(MatrixField::new(grid, frames)?) } else { None };
    let twist = if track { os.twist.clone() } else { FrameTwist::identity(os.spec.n()) };
    Ok(OrbitState {
        spec: os.spec,
        phi: MatrixField::new(grid, phis)?,
        time: os.time + dt,
        frame,
        twist,
    })
}

fn rk4_retract_step(os: &OrbitState, dt: f64) -> Result<OrbitState, FlowError> {
    let with_phi = |phi: MatrixField| OrbitState {
        spec: os.spec,
        phi,
        time: os.time,
        frame: None,
        twist: FrameTwist::identity(os.spec.n()),
    };
    let k1 = second_order_rhs(os)?;
    let k2 = second_order_rhs(&with_phi(os.phi.axpy(0.5 * dt, &k1)))?;
    let k3 = second_order_rhs(&with_phi(os.phi.axpy(0.5 * dt, &k2)))?;
    let k4 = second_order_rhs(&with_phi(os.phi.axpy(dt, &k3)))?;
    let incr = k1.axpy(2.0, &k2).axpy(2.0, &k3).add(&k4).scale(dt / 6.0);
    let raw = with_phi(os.phi.add(&incr));
    if !raw.phi.is_finite() {
        return Err(FlowError::Orbit(OrbitError::EigenSolverFailure(0)));
    }
    let mut out = retract(&raw)?;
    out.time = os.time + dt;
    Ok(out)
}

/// One time step with the default options (conservative generator, strict
/// stability check).
pub fn step(os: &OrbitState, p: &FlowParams, kind: FlowKind, dt: f64) -> Result<OrbitState, FlowError> {
    step_with(os, p, kind, dt, &StepOptions::default())
}

pub fn step_with(os: &OrbitState, p: &FlowParams, kind: FlowKind, dt: f64, opts: &StepOptions) -> Result<OrbitState, FlowError> {
    check_dt(&os.grid(), p, kind, dt, opts)?;
    match kind {
        FlowKind::SecondOrder => rk4_retract_step(os, dt),
        _ => rkmk4_step(os, dt, &|s: &OrbitState| generator(s, p, kind, opts.form)),
    }
}

fn check_dt(grid: &Grid, p: &FlowParams, kind: FlowKind, dt: f64, opts: &StepOptions) -> Result<(), FlowError> {
    let bound = stability_bound(grid, p, kind, opts.form);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(FlowError::Unstable { dt, bound });
    }
    if dt > bound * (1.0 + 1e-12) {
        if opts.allow_unstable {
            log::warn!("dt = {dt:.3e} exceeds the stability bound {bound:.3e}; proceeding");
        } else {
            return Err(FlowError::Unstable { dt, bound });
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub time: f64,
    pub energy: EnergyReport,
    pub spectrum_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub kind: FlowKind,
    pub params: FlowParams,
    /// States at the output times, starting with the initial state.
    pub snapshots: Vec<OrbitState>,
    pub outputs: Vec<OutputRecord>,
    /// (t, H) after every step.
    pub hamiltonian: Vec<(f64, f64)>,
    pub steps: usize,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &OrbitState {
        self.snapshots.last().expect("trajectory holds the initial state")
    }

    /// max_t |H(t) − H(0)| / |H(0)| over every recorded step.
    pub fn relative_drift(&self) -> f64 {
        let h0 = self.hamiltonian.first().map(|x| x.1).unwrap_or(0.0);
        let scale = h0.abs().max(f64::MIN_POSITIVE);
        self.hamiltonian.iter().map(|(_, h)| (h - h0).abs() / scale).fold(0.0, f64::max)
    }

    pub fn max_spectrum_deviation(&self) -> f64 {
        self.outputs.iter().map(|o| o.spectrum_deviation).fold(0.0, f64::max)
    }
}

fn record(os: &OrbitState, p: &FlowParams) -> Result<OutputRecord, FlowError> {
    Ok(OutputRecord {
        time: os.time,
        energy: energy_report(os, p)?,
        spectrum_deviation: spectrum_deviation(os)?,
    })
}

/// Integrates to `t_end`, stopping exactly at each requested output time
/// (sub-steps no longer than `dt`).
pub fn evolve(
    os: &OrbitState,
    p: &FlowParams,
    kind: FlowKind,
    t_end: f64,
    dt: f64,
    output_times: &[f64],
) -> Result<Trajectory, FlowError> {
    evolve_with(os, p, kind, t_end, dt, output_times, &StepOptions::default(), |_, _| Ok(()))
}

/// As [`evolve`], calling `on_output` at every output time (including the
/// initial one) so snapshots can be streamed.
#[allow(clippy::too_many_arguments)]
pub fn evolve_with<F>(
    os: &OrbitState,
    p: &FlowParams,
    kind: FlowKind,
    t_end: f64,
    dt: f64,
    output_times: &[f64],
    opts: &StepOptions,
    mut on_output: F,
) -> Result<Trajectory, FlowError>
where
    F: FnMut(&OrbitState, &OutputRecord) -> Result<(), FlowError>,
{
    let t0 = os.time;
    if t_end.is_nan() || t_end < t0 {
        return Err(FlowError::BadTimes(format!("end time {t_end} precedes start {t0}")));
    }
    let mut stops: Vec<f64> = Vec::new();
    for &t in output_times {
        if !(t > t0 && t <= t_end) {
            if t == t0 {
                continue;
            }
            return Err(FlowError::BadTimes(format!("output time {t} outside ({t0}, {t_end}]")));
        }
        if let Some(&last) = stops.last() {
            if t <= last {
                return Err(FlowError::BadTimes("output times must be strictly increasing".into()));
            }
        }
        stops.push(t);
    }
    if t_end > t0 && stops.last().is_none_or(|&l| l < t_end) {
        stops.push(t_end);
    }
    check_dt(&os.grid(), p, kind, dt, opts)?;
    let first = record(os, p)?;
    on_output(os, &first)?;
    let mut traj = Trajectory {
        kind,
        params: *p,
        snapshots: vec![os.clone()],
        outputs: vec![first.clone()],
        hamiltonian: vec![(t0, first.energy.h)],
        steps: 0,
    };
    let mut state = os.clone();
    for stop in stops {
        let span = stop - state.time;
        let m = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / m as f64;
        for i in 0..m {
            let next = match step_with(&state, p, kind, h, opts) {
                Ok(s) if s.phi.is_finite() => s,
                Ok(_) | Err(FlowError::Algebra(AlgebraError::NonFinite)) | Err(FlowError::Orbit(_)) => {
                    return Err(FlowError::NonFinite {
                        step: traj.steps + 1,
                        time: state.time,
                        partial: Box::new(traj),
                    })
                }
                Err(e) => return Err(e),
            };
            state = next;
            if i + 1 == m {
                state.time = stop;
            }
            traj.steps += 1;
            let e = energy_report(&state, p)?;
            if !e.h.is_finite() {
                return Err(FlowError::NonFinite {
                    step: traj.steps,
                    time: state.time,
                    partial: Box::new(traj),
                });
            }
            traj.hamiltonian.push((state.time, e.h));
        }
        let rec = record(&state, p)?;
        on_output(&state, &rec)?;
        traj.outputs.push(rec);
        traj.snapshots.push(state.clone());
    }
    Ok(traj)
}

/// γ̃(x) = ∫₀ˣ φ, whose x-derivative is φ and so stays on the orbit.
pub fn sym_pohlmeyer_curve(os: &OrbitState) -> MatrixField {
    cumulative_integral(&os.phi)
}

/// Right-hand side of the curve equation evaluated on φ = γ̃_x, shifted so it
/// vanishes at x = 0 where γ̃ is pinned.
pub fn curve_rhs(os: &OrbitState, p: &FlowParams) -> Result<MatrixField, FlowError> {
    let j = jets(&os.phi, 3)?;
    let rows: Vec<Result<SquareMatrix, OrbitError>> = par::map_indexed(os.grid().len(), |i| {
        let inv = inverse_at(os.phi.at(i), i)?;
        Ok(curve_rhs_point(p, &jet_at(&j, i), &inv))
    });
    let vals = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let base = vals[0].clone();
    Ok(MatrixField::new(os.grid(), vals.into_iter().map(|v| v - &base).collect())?)
}

/// Central time difference of γ̃ across snapshots `i − 1`, `i + 1` against the
/// curve right-hand side at snapshot `i`, max over points at least `margin`
/// grid points away from the pinned end x = 0 and the far end.
pub fn curve_residual(traj: &Trajectory, p: &FlowParams, i: usize, margin: usize) -> Result<f64, FlowError> {
    if i == 0 || i + 1 >= traj.snapshots.len() {
        return Err(FlowError::BadTimes("curve residual needs neighbouring snapshots".into()));
    }
    let (prev, cur, next) = (&traj.snapshots[i - 1], &traj.snapshots[i], &traj.snapshots[i + 1]);
    let (dt1, dt2) = (cur.time - prev.time, next.time - cur.time);
    if ((dt1 - dt2) / dt1).abs() > 1e-9 {
        return Err(FlowError::BadTimes("curve residual needs equally spaced snapshots".into()));
    }
    let g_prev = sym_pohlmeyer_curve(prev);
    let g_next = sym_pohlmeyer_curve(next);
    let rhs = curve_rhs(cur, p)?;
    let n = cur.grid().len();
    Ok((margin..n.saturating_sub(margin))
        .map(|j| {
            let gt = (g_next.at(j) - g_prev.at(j)).scale(1.0 / (dt1 + dt2));
            gt.distance(rhs.at(j))
        })
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial::{build, InitialData};
    use crate::orbit::orbit_from_frame;

    fn smooth(spec: AlgebraSpec, n: usize, seed: u64) -> OrbitState {
        let grid = Grid::new(n, 8.0 * std::f64::consts::PI).unwrap();
        let fs = build(
            &spec,
            grid,
            &InitialData::RandomSmooth {
                seed,
                modes: 2,
                amplitude: 0.3,
            },
        )
        .unwrap();
        orbit_from_frame(&fs).unwrap()
    }

    #[test]
    fn constant_state_is_stationary() {
        let spec = AlgebraSpec::compact(3, 1);
        let os = OrbitState::base_point(spec, Grid::new(32, 4.0).unwrap());
        let p = FlowParams::new(1.0, 0.5, 0.25).unwrap();
        for form in [GeneratorForm::Conservative, GeneratorForm::Simplified] {
            assert!(generator(&os, &p, FlowKind::ThirdOrder, form).unwrap().max_norm() < 1e-10);
        }
        let dt = stability_bound(&os.grid(), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
        let next = step(&os, &p, FlowKind::ThirdOrder, dt).unwrap();
        assert!(next.phi.max_distance(&os.phi) < 1e-12);
        assert!(second_order_rhs(&os).unwrap().max_norm() < 1e-10);
    }

    #[test]
    fn conservative_and_simplified_agree_in_the_limit() {
        for spec in [AlgebraSpec::compact(2, 1), AlgebraSpec::noncompact(3, 1), AlgebraSpec::para(2, 1)] {
            let p = FlowParams::new(1.0, 0.3, -0.2).unwrap();
            let gap = |n| {
                let os = smooth(spec, n, 3);
                let a = tangent_rhs(&os, &p, FlowKind::ThirdOrder, GeneratorForm::Conservative).unwrap();
                let b = tangent_rhs(&os, &p, FlowKind::ThirdOrder, GeneratorForm::Simplified).unwrap();
                a.max_distance(&b) / b.max_norm()
            };
            let (c, f) = (gap(64), gap(128));
            assert!(f < 1e-3, "{spec:?} {c} {f}");
            assert!((c / f).log2() > 1.8, "{spec:?} {c} {f}");
        }
    }

    #[test]
    fn leading_order_nests_in_third_order() {
        let os = smooth(AlgebraSpec::compact(2, 1), 64, 1);
        let p = FlowParams::new(-1.0, 0.0, 0.0).unwrap();
        for form in [GeneratorForm::Conservative, GeneratorForm::Simplified] {
            let a = generator(&os, &p, FlowKind::ThirdOrder, form).unwrap();
            let b = generator(&os, &p, FlowKind::LeadingOrder, form).unwrap();
            let ta = os.phi.zip_map(&a, |x, y| x.comm(y));
            let tb = os.phi.zip_map(&b, |x, y| x.comm(y));
            assert!(ta.max_distance(&tb) < 1e-12);
        }
    }

    #[test]
    fn rkmk_preserves_orbit_and_frame() {
        let spec = AlgebraSpec::compact(2, 1);
        let p = FlowParams::new(1.0, 0.1, -0.0125).unwrap();
        let mut os = smooth(spec, 64, 2);
        let dt = 0.5 * stability_bound(&os.grid(), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
        for _ in 0..20 {
            os = step(&os, &p, FlowKind::ThirdOrder, dt).unwrap();
        }
        assert!(spectrum_deviation(&os).unwrap() < 1e-12);
        let from_frame = crate::orbit::orbit_from_twisted_frame(&spec, os.frame.as_ref().unwrap(), &os.twist, 0.0).unwrap();
        assert!(from_frame.phi.max_distance(&os.phi) < 1e-12);
    }

    #[test]
    fn rkmk_is_fourth_order_in_time() {
        let os = smooth(AlgebraSpec::compact(2, 1), 32, 1);
        let p = FlowParams::new(1.0, 0.0, 0.0).unwrap();
        let bound = stability_bound(&os.grid(), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
        let run = |dt: f64| evolve(&os, &p, FlowKind::ThirdOrder, 1.0, dt, &[]).unwrap().last().phi.clone();
        let reference = run(bound / 16.0);
        let coarse = run(bound).max_distance(&reference);
        let fine = run(bound / 2.0).max_distance(&reference);
        assert!((coarse / fine).log2() > 3.8, "{coarse} {fine}");
    }

    #[test]
    fn unstable_dt_rejected_unless_allowed() {
        let os = smooth(AlgebraSpec::compact(2, 1), 32, 0);
        let p = FlowParams::new(1.0, 0.1, 0.0).unwrap();
        let bound = stability_bound(&os.grid(), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
        assert!(matches!(step(&os, &p, FlowKind::ThirdOrder, 2.0 * bound), Err(FlowError::Unstable { .. })));
        let opts = StepOptions {
            allow_unstable: true,
            ..StepOptions::default()
        };
        assert!(step_with(&os, &p, FlowKind::ThirdOrder, 2.0 * bound, &opts).is_ok());
    }

    #[test]
    fn zero_time_gives_single_snapshot() {
        let os = smooth(AlgebraSpec::para(2, 1), 32, 0);
        let p = FlowParams::new(1.0, 0.0, 0.0).unwrap();
        let t = evolve(&os, &p, FlowKind::ThirdOrder, 0.0, 1e-3, &[]).unwrap();
        assert_eq!(t.snapshots.len(), 1);
        assert_eq!(t.steps, 0);
    }

    #[test]
    fn output_times_are_hit_exactly() {
        let os = smooth(AlgebraSpec::compact(2, 1), 32, 0);
        let p = FlowParams::new(1.0, 0.0, 0.0).unwrap();
        let dt = stability_bound(&os.grid(), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
        let t = evolve(&os, &p, FlowKind::ThirdOrder, 0.05, dt, &[0.01, 0.03]).unwrap();
        assert_eq!(t.times(), vec![0.0, 0.01, 0.03, 0.05]);
        assert!(matches!(evolve(&os, &p, FlowKind::ThirdOrder, 0.05, dt, &[0.03, 0.01]), Err(FlowError::BadTimes(_))));
    }

    #[test]
    fn blowup_keeps_last_good_state() {
        let os = smooth(AlgebraSpec::compact(2, 1), 32, 0);
        let p = FlowParams::new(1.0, 1.0, 0.0).unwrap();
        let bound = stability_bound(&os.grid(), &p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
        let opts = StepOptions {
            allow_unstable: true,
            ..StepOptions::default()
        };
        let r = evolve_with(&os, &p, FlowKind::ThirdOrder, 400.0 * bound, 40.0 * bound, &[], &opts, |_, _| Ok(()));
        match r {
            Err(FlowError::NonFinite { partial, step, .. }) => {
                assert!(step >= 1);
                assert!(partial.last().phi.is_finite());
            }
            // Conjugation keeps |φ| bounded, so the run may also survive.
            Ok(t) => assert!(t.last().phi.is_finite()),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn second_order_step_stays_on_orbit() {
        for spec in [AlgebraSpec::compact(2, 1), AlgebraSpec::para(2, 1)] {
            let os = smooth(spec, 64, 5);
            let p = FlowParams::new(0.0, 0.0, 0.0).unwrap();
            let dt = stability_bound(&os.grid(), &p, FlowKind::SecondOrder, GeneratorForm::Conservative);
            let next = step(&os, &p, FlowKind::SecondOrder, dt).unwrap();
            assert!(spectrum_deviation(&next).unwrap() < 1e-12);
            assert!(next.phi.max_distance(&os.phi) > 0.0);
        }
    }

    #[test]
    fn curve_of_constant_state_is_a_line() {
        let spec = AlgebraSpec::compact(2, 1);
        let g = Grid::new(16, 2.0).unwrap();
        let os = OrbitState::base_point(spec, g);
        let c = sym_pohlmeyer_curve(&os);
        let s3 = crate::algebra::sigma3(&spec);
        for j in 0..16 {
            assert!(c.at(j).distance(&s3.scale(g.x(j))) < 1e-14);
        }
    }
}
