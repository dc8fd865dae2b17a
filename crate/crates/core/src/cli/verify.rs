//! Verification suites driven by a run configuration. Each suite returns a
//! list of checks with measured value, tolerance and verdict.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::algebra::{random_element, AlgebraSpec, Family};
use crate::fields::{Grid, MatrixField};
use crate::flows::{self, FlowKind, GeneratorForm, StepOptions};
use crate::functionals::{fd_gradient_check, framed_energy_report, FlowParams, Functional};
use crate::gauge::{self, PotentialState};
use crate::initial::{build, InitialData};
use crate::matrix::SquareMatrix;
use crate::orbit::{orbit_from_frame, verify_identities, OrbitState};
use crate::reductions::{self, Geometry, ScalarCase, TrigScalarData};

/// Random states drawn by the identity suite.
pub const IDENTITY_DATA: (u32, f64) = (3, 0.35);
/// Step of the central difference in the gradient suite.
pub const GRADIENT_EPS: f64 = 1e-5;
/// Curvature parameters probed by the curvature suite.
pub const LAMBDAS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Identities,
    Gradients,
    Conservation,
    GaugeCompare,
    Curvature,
    Reductions,
    IntegrableLimit,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Self::Identities,
        Self::Gradients,
        Self::Conservation,
        Self::GaugeCompare,
        Self::Curvature,
        Self::Reductions,
        Self::IntegrableLimit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Identities => "identities",
            Self::Gradients => "gradients",
            Self::Conservation => "conservation",
            Self::GaugeCompare => "gauge-compare",
            Self::Curvature => "curvature",
            Self::Reductions => "reductions",
            Self::IntegrableLimit => "integrable-limit",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|x| x.name()).collect();
            format!("unknown suite `{s}` (expected one of {})", names.join(", "))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    /// `measured ≤ tolerance`, or `≥` for lower bounds.
    pub lower_bound: bool,
    pub pass: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            lower_bound: false,
            pass: measured <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            lower_bound: true,
            pass: measured >= tolerance,
        }
    }

    /// A check that could not be evaluated.
    pub fn error(name: impl Into<String>, message: &str) -> Self {
        log::error!("{message}");
        Self {
            name: format!("{}: {message}", name.into()),
            measured: f64::NAN,
            tolerance: f64::NAN,
            lower_bound: false,
            pass: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub suite: Suite,
    pub checks: Vec<Check>,
    pub pass: bool,
}

pub fn run_suite(cfg: &RunConfig, suite: Suite) -> Report {
    let checks = match suite {
        Suite::Identities => identities(cfg),
        Suite::Gradients => gradients(cfg),
        Suite::Conservation => conservation(cfg),
        Suite::GaugeCompare => gauge_compare(cfg),
        Suite::Curvature => curvature(cfg),
        Suite::Reductions => reductions_suite(cfg),
        Suite::IntegrableLimit => integrable_limit(cfg),
    };
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    Report { suite, checks, pass }
}

fn guard(name: &str, f: impl FnOnce() -> Result<Vec<Check>, String>) -> Vec<Check> {
    f().unwrap_or_else(|e| vec![Check::error(name, &e)])
}

fn random_data(seed: u64, (modes, amplitude): (u32, f64)) -> InitialData {
    InitialData::RandomSmooth { seed, modes, amplitude }
}

/// Smooth random direction ξ = cos(2πx/L)A + sin(2πx/L)B with A, B ∈ g.
pub fn random_direction(spec: &AlgebraSpec, grid: Grid, seed: u64) -> MatrixField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = random_element(spec, &mut rng, 1.0);
    let b = random_element(spec, &mut rng, 1.0);
    MatrixField::from_fn(grid, |j| {
        let t = 2.0 * std::f64::consts::PI * grid.x(j) / grid.length();
        &a.scale(t.cos()) + &b.scale(t.sin())
    })
}

/// Relative mismatch of the declared-gradient pairing against the central
/// difference along the orbit.
pub fn gradient_mismatch(os: &OrbitState, p: &FlowParams, f: Functional, xi: &MatrixField) -> Result<f64, String> {
    let (a, n) = fd_gradient_check(os, p, f, xi, GRADIENT_EPS).map_err(|e| e.to_string())?;
    let scale = a.abs().max(n.abs());
    Ok(if scale == 0.0 { 0.0 } else { (a - n).abs() / scale })
}

fn identities(cfg: &RunConfig) -> Vec<Check> {
    guard("identities", || {
        let mut worst = [0.0f64; 6];
        let mut names = [""; 6];
        let mut order = f64::INFINITY;
        for s in 0..10 {
            let data = random_data(cfg.seed + s, IDENTITY_DATA);
            let rep = |g: Grid| -> Result<_, String> {
                let fs = build(&cfg.algebra, g, &data).map_err(|e| e.to_string())?;
                verify_identities(&fs).map_err(|e| e.to_string())
            };
            let coarse = rep(cfg.grid)?;
            let fine = rep(cfg.grid.refined(2))?;
            for (i, (name, v)) in coarse.entries().into_iter().enumerate() {
                worst[i] = worst[i].max(v);
                names[i] = name;
            }
            order = order.min((coarse.max() / fine.max()).log2());
        }
        let mut checks: Vec<Check> = names.iter().zip(worst).map(|(n, w)| Check::at_most(*n, w, 1e-6)).collect();
        checks.push(Check::at_least("observed order under grid doubling", order, 3.5));
        Ok(checks)
    })
}

fn gradients(cfg: &RunConfig) -> Vec<Check> {
    guard("gradients", || {
        let mut worst = [0.0f64; 5];
        let mut quartic: f64 = 0.0;
        for s in 0..10 {
            let fs = build(&cfg.algebra, cfg.grid, &InitialData::RandomSmooth {
                seed: cfg.seed + s,
                modes: 2,
                amplitude: 0.25,
            })
            .map_err(|e| e.to_string())?;
            let os = orbit_from_frame(&fs).map_err(|e| e.to_string())?;
            let xi = random_direction(&cfg.algebra, cfg.grid, cfg.seed + 1000 + s);
            for (i, f) in Functional::PIECES.into_iter().enumerate() {
                worst[i] = worst[i].max(gradient_mismatch(&os, &cfg.params, f, &xi)?);
            }
            let r = framed_energy_report(&fs, &cfg.params).map_err(|e| e.to_string())?;
            quartic = quartic.max((r.etilde - 2.0 * r.e23).abs() / r.e23.abs().max(1e-300));
        }
        let mut checks: Vec<Check> = Functional::PIECES
            .iter()
            .zip(worst)
            .map(|(f, w)| Check::at_most(format!("gradient {} relative mismatch", f.name()), w, 1e-5))
            .collect();
        checks.push(Check::at_most("Etilde = 2 E23 (relative)", quartic, 1e-10));
        Ok(checks)
    })
}

fn conservation(cfg: &RunConfig) -> Vec<Check> {
    guard("conservation", || {
        let os = cfg.orbit_initial().map_err(|e| e.to_string())?;
        let opts = StepOptions {
            form: cfg.generator,
            allow_unstable: false,
        };
        let traj = flows::evolve_with(&os, &cfg.params, FlowKind::ThirdOrder, cfg.t_end, cfg.resolved_dt(), &cfg.output_times, &opts, |_, _| Ok(()))
            .map_err(|e| e.to_string())?;
        Ok(vec![
            Check::at_most("relative Hamiltonian drift", traj.relative_drift(), 1e-6),
            Check::at_most("spectrum deviation", traj.max_spectrum_deviation(), 1e-10),
        ])
    })
}

fn gauge_compare(cfg: &RunConfig) -> Vec<Check> {
    guard("gauge-compare", || {
        let fs = cfg.framed_initial().map_err(|e| e.to_string())?;
        let dt = cfg.resolved_dt().min(0.5 * gauge::potential_stability_bound(&cfg.grid, &cfg.params));
        let rows = gauge::gauge_compare(&fs, &cfg.params, cfg.t_end, dt, &cfg.output_times).map_err(|e| e.to_string())?;
        let worst = rows.iter().map(|r| r.interior_linf).fold(0.0, f64::max);
        Ok(vec![Check::at_most("interior L∞ of |q| difference", worst, 1e-4)])
    })
}

/// A short trajectory with three equally spaced snapshots for the
/// curvature and curve residuals. The spacing scales with h.
pub fn residual_trajectory(os: &OrbitState, p: &FlowParams) -> Result<flows::Trajectory, String> {
    let grid = os.grid();
    let gap = 0.01 * 128.0 / grid.len() as f64;
    let dt = 0.5 * flows::stability_bound(&grid, p, FlowKind::ThirdOrder, GeneratorForm::Conservative);
    flows::evolve(os, p, FlowKind::ThirdOrder, os.time + 2.0 * gap, dt, &[os.time + gap]).map_err(|e| e.to_string())
}

/// The same trajectory with the outer snapshots replaced by the middle
/// one, so φ_t reads as zero.
pub fn frozen(traj: &flows::Trajectory) -> flows::Trajectory {
    let mut f = traj.clone();
    let mid = traj.snapshots[1].phi.clone();
    f.snapshots[0].phi = mid.clone();
    f.snapshots[2].phi = mid;
    f
}

fn curvature(cfg: &RunConfig) -> Vec<Check> {
    guard("curvature", || {
        let os = cfg.orbit_initial().map_err(|e| e.to_string())?;
        let traj = residual_trajectory(&os, &cfg.params)?;
        let fake = frozen(&traj);
        let mut checks = Vec::new();
        let mut discrimination: f64 = 0.0;
        for lam in LAMBDAS {
            let r = gauge::curvature_residual(&traj, &cfg.params, lam).map_err(|e| e.to_string())?[0].1;
            checks.push(Check::at_most(format!("curvature residual, lambda = {lam}"), r, 1e-3));
            let f = gauge::curvature_residual(&fake, &cfg.params, lam).map_err(|e| e.to_string())?[0].1;
            discrimination = discrimination.max(f);
        }
        checks.push(Check::at_least("frozen-trajectory residual", discrimination, 1e-1));
        let curve = flows::curve_residual(&traj, &cfg.params, 1, 4).map_err(|e| e.to_string())?;
        checks.push(Check::at_most("curve residual (interior)", curve, 1e-3));
        Ok(checks)
    })
}

/// Largest gap between phi_to_s of the matrix velocity and the spin
/// right-hand side, relative to max(1, |velocity|).
pub fn conjugacy_gap(os: &OrbitState, p: &FlowParams) -> Result<f64, String> {
    let g = Geometry::of_family(os.spec.family());
    let phi_t = flows::tangent_rhs(os, p, FlowKind::ThirdOrder, GeneratorForm::Simplified).map_err(|e| e.to_string())?;
    let lhs = reductions::matrix_field_to_vectors(g, &phi_t);
    let rhs = reductions::spin_rhs(&reductions::phi_to_s(os).map_err(|e| e.to_string())?, p).map_err(|e| e.to_string())?;
    let scale = lhs.iter().flatten().fold(1.0f64, |m, v| m.max(v.abs()));
    let gap = lhs
        .iter()
        .zip(&rhs)
        .flat_map(|(a, b)| (0..3).map(move |i| (a[i] - b[i]).abs()))
        .fold(0.0, f64::max);
    Ok(gap / scale)
}

fn reductions_suite(cfg: &RunConfig) -> Vec<Check> {
    guard("reductions", || {
        let mut checks = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for g in [Geometry::Sphere, Geometry::Hyperbolic, Geometry::DeSitter] {
            let mut worst: f64 = 0.0;
            for s in 0..5 {
                let fs = build(&g.spec(), cfg.grid, &random_data(cfg.seed + s, IDENTITY_DATA)).map_err(|e| e.to_string())?;
                let os = orbit_from_frame(&fs).map_err(|e| e.to_string())?;
                worst = worst.max(conjugacy_gap(&os, &cfg.params)?);
            }
            checks.push(Check::at_most(format!("{g:?}: matrix velocity vs spin rhs"), worst, 1e-10));
            let case = ScalarCase::of_family(g.family());
            let data = TrigScalarData::random(&mut rng, 3, 0.4);
            let r = reductions::scalar_identity_residual(case, &cfg.params, &data, &[0.4, 1.3, 2.9, 5.0]);
            checks.push(Check::at_most(format!("{case:?}: scalar equation vs potential equation"), r, 1e-12));
        }
        if cfg.algebra.n() == 2 && cfg.algebra.k() == 1 {
            let os = cfg.orbit_initial().map_err(|e| e.to_string())?;
            let sf = reductions::phi_to_s(&os).map_err(|e| e.to_string())?;
            let dt = 0.5 * flows::stability_bound(&cfg.grid, &cfg.params, FlowKind::ThirdOrder, GeneratorForm::Simplified);
            let rep = reductions::cross_check_matrix_vs_vector(&sf, &cfg.params, FlowKind::ThirdOrder, cfg.t_end, dt, 4)
                .map_err(|e| e.to_string())?;
            checks.push(Check::at_most("matrix vs vector trajectory deviation", rep.max_deviation, 1e-6));
        }
        Ok(checks)
    })
}

/// Largest gap on the q block between the potential equation at α = 0,
/// β = 1, γ = −1/8 and the fourth-order integrable equation.
pub fn integrable_limit_gap(ps: &PotentialState) -> Result<f64, String> {
    let p = FlowParams::new(0.0, 1.0, -0.125).map_err(|e| e.to_string())?;
    let (n, k) = (ps.spec.n(), ps.spec.k());
    let rhs = gauge::potential_rhs(ps, &p).map_err(|e| e.to_string())?;
    let q_only = ps.potential.map(|m| {
        let mut out = SquareMatrix::zeros(n);
        out.set_block(0, k, k, n - k, &m.block(0, k, k, n - k));
        out
    });
    let oracle = gauge::akns4_rhs(&q_only).map_err(|e| e.to_string())?;
    Ok((0..ps.grid().len())
        .map(|j| {
            let a = rhs.at(j).block(0, k, k, n - k);
            let b = oracle.at(j).block(0, k, k, n - k);
            a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max))
}

fn integrable_limit(cfg: &RunConfig) -> Vec<Check> {
    guard("integrable-limit", || {
        let mut checks = Vec::new();
        for n in [2, 3] {
            let spec = AlgebraSpec::new(Family::CompactUnitary, n, 1).map_err(|e| e.to_string())?;
            let mut worst: f64 = 0.0;
            for s in 0..20 {
                let ps = PotentialState::random_smooth(spec, cfg.grid, cfg.seed + s, 0.3);
                worst = worst.max(integrable_limit_gap(&ps)?);
            }
            checks.push(Check::at_most(format!("u({n}) potential rhs vs integrable rhs"), worst, 1e-12));
        }
        let p = FlowParams::new(0.0, 1.0, -0.125).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let data = TrigScalarData::random(&mut rng, 3, 0.4);
        let r = reductions::scalar_identity_residual(ScalarCase::G10, &p, &data, &[0.4, 1.3, 2.9, 5.0]);
        checks.push(Check::at_most("G10 scalar equation vs potential equation", r, 1e-12));
        Ok(checks)
    })
}
