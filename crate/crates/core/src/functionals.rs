//! The generalized bi-energy H = αE + βE₂ + γẼ, its pieces, their declared
//! gradients, and a finite-difference check of those gradients along
//! orbit-preserving variations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{decompose, exp_map_pair, inner, sigma3, AlgebraSpec};
use crate::fields::{derivative, quadrature_scalar, FieldError, MatrixField};
use crate::matrix::SquareMatrix;
use crate::orbit::{orbit_from_frame, FramedState, OrbitState};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunctionalError {
    #[error("singular orbit point at grid point {0} (state is off the orbit)")]
    SingularPoint(usize),
    #[error("non-finite flow parameter {0}")]
    NonFiniteParameter(&'static str),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl FlowParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, FunctionalError> {
        let p = Self { alpha, beta, gamma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), FunctionalError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() {
                return Err(FunctionalError::NonFiniteParameter(name));
            }
        }
        Ok(())
    }

    /// Coefficient 2(8γ + β) of the curvature target; zero on the
    /// integrable line γ = −β/8.
    pub fn curvature_coefficient(&self) -> f64 {
        2.0 * (8.0 * self.gamma + self.beta)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    #[serde(rename = "E")]
    pub e: f64,
    #[serde(rename = "E21")]
    pub e21: f64,
    #[serde(rename = "E22")]
    pub e22: f64,
    #[serde(rename = "E23")]
    pub e23: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    #[serde(rename = "Etilde")]
    pub etilde: f64,
    #[serde(rename = "H")]
    pub h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Functional {
    #[serde(rename = "E")]
    Energy,
    E21,
    E22,
    E23,
    #[serde(rename = "Etilde")]
    Etilde,
    /// αE + βE₂ + γẼ
    #[serde(rename = "H")]
    Hamiltonian,
}

impl Functional {
    pub const PIECES: [Functional; 5] = [Self::Energy, Self::E21, Self::E22, Self::E23, Self::Etilde];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Energy => "E",
            Self::E21 => "E21",
            Self::E22 => "E22",
            Self::E23 => "E23",
            Self::Etilde => "Etilde",
            Self::Hamiltonian => "H",
        }
    }
}

fn inverses(phi: &MatrixField) -> Result<Vec<SquareMatrix>, FunctionalError> {
    let inv: Vec<Option<SquareMatrix>> = par::map_indexed(phi.grid().len(), |j| phi.at(j).try_inverse());
    inv.into_iter()
        .enumerate()
        .map(|(j, m)| m.ok_or(FunctionalError::SingularPoint(j)))
        .collect()
}

/// ½∫⟨φ_x, φ_x⟩ over one period.
pub fn energy(os: &OrbitState) -> Result<f64, FunctionalError> {
    let px = derivative(&os.phi, 1)?;
    let dens: Vec<f64> = px.values().iter().map(|a| 0.5 * inner(&os.spec, a, a)).collect();
    Ok(quadrature_scalar(&os.grid(), &dens))
}

/// All pieces of the bi-energy with exact pointwise inverses and
/// finite-difference derivatives.
pub fn energy_report(os: &OrbitState, p: &FlowParams) -> Result<EnergyReport, FunctionalError> {
    let px = derivative(&os.phi, 1)?;
    let pxx = derivative(&os.phi, 2)?;
    report_from_jets(&os.spec, &os.phi, &px, &pxx, p)
}

/// Same as [`energy_report`] but with φ_x = E⁻¹[σ₃,P]E (resp. E[P,σ₃]E⁻¹)
/// taken from the frame, so φ_x is tangent to roundoff and the quartic
/// identity Ẽ = 2E23 holds pointwise.
pub fn framed_energy_report(fs: &FramedState, p: &FlowParams) -> Result<EnergyReport, FunctionalError> {
    let os = orbit_from_frame(fs).map_err(|_| FunctionalError::SingularPoint(0))?;
    let s3 = sigma3(&fs.spec);
    let para = fs.spec.is_para();
    let frame = &fs.frame;
    let mut px = Vec::with_capacity(frame.grid().len());
    for j in 0..frame.grid().len() {
        let e = frame.at(j);
        let einv = e.try_inverse().ok_or(FunctionalError::SingularPoint(j))?;
        let pj = fs.potential.at(j);
        px.push(if para {
            &(e * &pj.comm(&s3)) * &einv
        } else {
            &(&einv * &s3.comm(pj)) * e
        });
    }
    let px = MatrixField::new(frame.grid(), px)?;
    let pxx = derivative(&px, 1)?;
    report_from_jets(&fs.spec, &os.phi, &px, &pxx, p)
}

fn report_from_jets(
    spec: &AlgebraSpec,
    phi: &MatrixField,
    px: &MatrixField,
    pxx: &MatrixField,
    p: &FlowParams,
) -> Result<EnergyReport, FunctionalError> {
    let spec = *spec;
    let inv = inverses(phi)?;
    let dens: Vec<[f64; 5]> = par::map_indexed(phi.grid().len(), |j| {
        let a = px.at(j);
        let b = pxx.at(j);
        let y = a * &inv[j];
        let x = &y * a;
        let y2 = &y * &y;
        [
            0.5 * inner(&spec, a, a),
            0.5 * inner(&spec, b, b),
            inner(&spec, b, &x),
            0.5 * inner(&spec, &x, &x),
            spec.quartic_sign() * 0.25 * (&y2 * &y2).trace().re,
        ]
    });
    let g = phi.grid();
    let col = |i: usize| quadrature_scalar(&g, &dens.iter().map(|d| d[i]).collect::<Vec<_>>());
    let (e, e21, e22, e23, etilde) = (col(0), col(1), col(2), col(3), col(4));
    let e2 = e21 - e22 + e23;
    Ok(EnergyReport {
        e,
        e21,
        e22,
        e23,
        e2,
        etilde,
        h: p.alpha * e + p.beta * e2 + p.gamma * etilde,
    })
}

pub fn functional_value(os: &OrbitState, f: Functional, p: &FlowParams) -> Result<f64, FunctionalError> {
    let r = energy_report(os, p)?;
    Ok(match f {
        Functional::Energy => r.e,
        Functional::E21 => r.e21,
        Functional::E22 => r.e22,
        Functional::E23 => r.e23,
        Functional::Etilde => r.etilde,
        Functional::Hamiltonian => r.h,
    })
}

/// −(φ_xx − φ_xφ⁻¹φ_x), the tension field.
pub fn tension(os: &OrbitState) -> Result<MatrixField, FunctionalError> {
    let px = derivative(&os.phi, 1)?;
    let pxx = derivative(&os.phi, 2)?;
    let inv = inverses(&os.phi)?;
    Ok(MatrixField::from_fn(os.grid(), |j| {
        let a = px.at(j);
        &(&(a * &inv[j]) * a) - pxx.at(j)
    }))
}

/// Curvature term R(φ_x, Jφ_x)Jφ_x = [Jφ_x, [φ_x, Jφ_x]] with J = [φ, ·].
pub fn curvature_term(os: &OrbitState) -> Result<MatrixField, FunctionalError> {
    let px = derivative(&os.phi, 1)?;
    Ok(MatrixField::from_fn(os.grid(), |j| {
        let a = px.at(j);
        let ja = os.phi.at(j).comm(a);
        ja.comm(&a.comm(&ja))
    }))
}

/// ∫⟨R(φ_x, Jφ_x)Jφ_x, φ_x⟩, the nested-bracket form of Ẽ.
pub fn etilde_bracket_form(os: &OrbitState) -> Result<f64, FunctionalError> {
    let r = curvature_term(os)?;
    let px = derivative(&os.phi, 1)?;
    let dens: Vec<f64> = (0..os.grid().len()).map(|j| inner(&os.spec, r.at(j), px.at(j))).collect();
    Ok(quadrature_scalar(&os.grid(), &dens))
}

/// Analytic gradient as declared for each piece, without the undetermined
/// terms that commute with φ:
///
/// * ∇E   = −φ_xx + φ_xφ⁻¹φ_x
/// * ∇E21 = φ_xxxx
/// * ∇E22 = ±(φ⁻¹φ_xφ⁻¹φ_xφ⁻¹φ_xφ⁻¹)_x (minus sign for the para family)
/// * ∇E23 = ½∇E22
/// * ∇Ẽ   = 2∇E23
pub fn declared_gradient(os: &OrbitState, f: Functional, p: &FlowParams) -> Result<MatrixField, FunctionalError> {
    let spec = os.spec;
    let grid = os.grid();
    let sgn = if spec.is_para() { -1.0 } else { 1.0 };
    let e22 = || -> Result<MatrixField, FunctionalError> {
        let px = derivative(&os.phi, 1)?;
        let inv = inverses(&os.phi)?;
        let chain = MatrixField::from_fn(grid, |j| {
            let pi = &inv[j];
            let u = pi * px.at(j);
            &(&(&u * &u) * &u) * pi
        });
        Ok(derivative(&chain, 1)?.scale(sgn))
    };
    Ok(match f {
        Functional::Energy => tension(os)?,
        Functional::E21 => derivative(&os.phi, 4)?,
        Functional::E22 => e22()?,
        Functional::E23 => e22()?.scale(0.5),
        Functional::Etilde => e22()?,
        Functional::Hamiltonian => {
            let g22 = e22()?;
            let t = tension(os)?;
            let d4 = derivative(&os.phi, 4)?;
            // α∇E + β(∇E21 − ∇E22 + ½∇E22) + γ∇E22
            let c22 = -0.5 * p.beta + p.gamma;
            MatrixField::from_fn(grid, |j| {
                let mut g = t.at(j).scale(p.alpha);
                g.axpy(p.beta, d4.at(j));
                g.axpy(c22, g22.at(j));
                g
            })
        }
    })
}

/// Pointwise conjugation φ ↦ exp(−εξ)·φ·exp(εξ).
pub fn conjugate_by(os: &OrbitState, xi: &MatrixField, eps: f64) -> OrbitState {
    let phi = MatrixField::from_fn(os.grid(), |j| {
        let (e, einv) = exp_map_pair(&xi.at(j).scale(eps)).expect("finite variation");
        &(&einv * os.phi.at(j)) * &e
    });
    OrbitState {
        spec: os.spec,
        phi,
        time: os.time,
        frame: None,
        twist: os.twist.clone(),
    }
}

/// `(analytic, numeric)` directional derivatives of `f` along δφ = [φ, ξ].
pub fn fd_gradient_check(
    os: &OrbitState,
    p: &FlowParams,
    f: Functional,
    xi: &MatrixField,
    eps: f64,
) -> Result<(f64, f64), FunctionalError> {
    let grad = declared_gradient(os, f, p)?;
    let dens: Vec<f64> = (0..os.grid().len())
        .map(|j| inner(&os.spec, grad.at(j), &os.phi.at(j).comm(xi.at(j))))
        .collect();
    let analytic = quadrature_scalar(&os.grid(), &dens);
    let plus = functional_value(&conjugate_by(os, xi, eps), f, p)?;
    let minus = functional_value(&conjugate_by(os, xi, -eps), f, p)?;
    Ok((analytic, (plus - minus) / (2.0 * eps)))
}

/// Largest |⟨E⁻¹κE, [φ, ξ]⟩| (resp. with Eκ E⁻¹) over random k-valued κ
/// supplied per point: the undetermined gradient terms are invisible to
/// every tangent pairing.
pub fn k_orthogonality(spec: &AlgebraSpec, frame: &MatrixField, phi: &MatrixField, kappa: &MatrixField, xi: &MatrixField) -> f64 {
    (0..frame.grid().len())
        .map(|j| {
            let e = frame.at(j);
            let einv = e.try_inverse().expect("invertible frame");
            let kk = decompose(spec, kappa.at(j)).k_part;
            let lifted = if spec.is_para() { &(e * &kk) * &einv } else { &(&einv * &kk) * e };
            inner(spec, &lifted, &phi.at(j).comm(xi.at(j))).abs()
        })
        .fold(0.0, f64::max)
}
