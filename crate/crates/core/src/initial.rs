//! Named initial data. Every generator returns a framed state whose orbit
//! field is periodic.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{exp_map, exp_map_pair, random_element, sigma3, AlgebraError, AlgebraSpec, Family};
use crate::fields::{FieldError, Grid, MatrixField};
use crate::matrix::{SquareMatrix, C64};
use crate::orbit::{frame_from_potential, gauge_fix_frame, FrameTwist, FramedState, OrbitError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InitialError {
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Orbit(#[from] OrbitError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialData {
    /// φ ≡ σ₃.
    BasePoint,
    /// P = f(x)·M₀ with a periodized Gaussian f normalized so the frame
    /// turns by π·winding in the (0, k) plane.
    GaussianBump { center: f64, width: f64, winding: i32 },
    /// P = f(x)·M₀ with f a zero-mean pair of opposite Gaussians, so the
    /// frame closes up for every family.
    TwoBump { amplitude: f64, width: f64 },
    /// Constant-modulus travelling profile: |q| = amplitude, frame
    /// exp(xA) with A = amplitude·M₀ + t·σ₃ on the (0, k) plane closing
    /// after `mode` turns.
    PlaneWave { amplitude: f64, mode: u32 },
    /// exp(X(x)) with X a random trigonometric polynomial in g whose
    /// mode-m coefficients have norm amplitude/m⁴, then gauge-fixed.
    RandomSmooth {
        #[serde(default)]
        seed: u64,
        modes: u32,
        amplitude: f64,
    },
}

impl Default for InitialData {
    fn default() -> Self {
        Self::RandomSmooth {
            seed: 0,
            modes: 2,
            amplitude: 0.25,
        }
    }
}

/// Off-block generator coupling basis vectors 0 and k: a rotation for the
/// compact and para families, a boost for the noncompact one.
pub fn plane_generator(spec: &AlgebraSpec) -> SquareMatrix {
    let n = spec.n();
    let k = spec.k();
    let mut m = SquareMatrix::zeros(n);
    m[(0, k)] = C64::new(1.0, 0.0);
    m[(k, 0)] = C64::new(if spec.family() == Family::NoncompactUnitary { 1.0 } else { -1.0 }, 0.0);
    m
}

fn periodic_gaussian(grid: &Grid, center: f64, width: f64) -> Vec<f64> {
    let l = grid.length();
    (0..grid.len())
        .map(|j| {
            let x = grid.x(j);
            (-3..=3)
                .map(|w| {
                    let d = (x - center + w as f64 * l) / width;
                    (-d * d).exp()
                })
                .sum()
        })
        .collect()
}

pub fn build(spec: &AlgebraSpec, grid: Grid, data: &InitialData) -> Result<FramedState, InitialError> {
    let n = spec.n();
    match *data {
        InitialData::BasePoint => Ok(FramedState {
            spec: *spec,
            frame: MatrixField::constant(grid, &SquareMatrix::identity(n)),
            potential: MatrixField::zeros(grid, n),
            twist: FrameTwist::identity(n),
        }),
        InitialData::GaussianBump { center, width, winding } => {
            if spec.family() == Family::NoncompactUnitary {
                return Err(InitialError::Unsupported(
                    "gaussian_bump needs a compact rotation plane; use two_bump for noncompact families".into(),
                ));
            }
            check_width(width)?;
            let f = periodic_gaussian(&grid, center, width);
            let total = grid.h() * f.iter().sum::<f64>();
            let m0 = plane_generator(spec);
            let scale = PI * winding as f64 / total;
            let p = MatrixField::new(grid, f.iter().map(|v| m0.scale(v * scale)).collect())?;
            Ok(frame_from_potential(spec, &p, &SquareMatrix::identity(n))?)
        }
        InitialData::TwoBump { amplitude, width } => {
            check_width(width)?;
            let l = grid.length();
            let a = periodic_gaussian(&grid, 0.3 * l, width);
            let b = periodic_gaussian(&grid, 0.7 * l, width);
            let m0 = plane_generator(spec);
            let p = MatrixField::new(grid, a.iter().zip(&b).map(|(u, v)| m0.scale(amplitude * (u - v))).collect())?;
            Ok(frame_from_potential(spec, &p, &SquareMatrix::identity(n))?)
        }
        InitialData::PlaneWave { amplitude, mode } => plane_wave(spec, grid, amplitude, mode),
        InitialData::RandomSmooth { seed, modes, amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut coeffs = Vec::with_capacity(modes as usize);
            for m in 1..=modes {
                let size = amplitude / (m as f64).powi(4);
                let mut unit = || {
                    let a = random_element(spec, &mut rng, 1.0);
                    let norm = a.frobenius_norm();
                    a.scale(size / norm)
                };
                coeffs.push((unit(), unit()));
            }
            let l = grid.length();
            let raw = MatrixField::from_fn(grid, |j| {
                let mut x = SquareMatrix::zeros(n);
                for (i, (a, b)) in coeffs.iter().enumerate() {
                    let t = 2.0 * PI * (i + 1) as f64 * grid.x(j) / l;
                    x.axpy(t.cos(), a);
                    x.axpy(t.sin(), b);
                }
                exp_map(&x).expect("finite exponent")
            });
            Ok(gauge_fix_frame(spec, &raw)?)
        }
    }
}

fn check_width(width: f64) -> Result<(), InitialError> {
    if width > 0.0 && width.is_finite() {
        Ok(())
    } else {
        Err(InitialError::Unsupported(format!("bump width must be positive, got {width}")))
    }
}

/// σ₃ restricted to the (0, k) plane.
fn plane_sigma3(spec: &AlgebraSpec) -> SquareMatrix {
    let s = sigma3(spec);
    let mut out = SquareMatrix::zeros(spec.n());
    out[(0, 0)] = s[(0, 0)];
    let k = spec.k();
    out[(k, k)] = s[(k, k)];
    out
}

/// Frame F = exp(−x t K)·exp(x A) (unitary) or exp(x A)·exp(−x t K) (para)
/// with A = c M₀ + t K, K = σ₃ on the plane and t chosen so that exp(LA) = I.
/// The potential is c M₀ conjugated by exp(∓x t K).
fn plane_wave(spec: &AlgebraSpec, grid: Grid, c: f64, mode: u32) -> Result<FramedState, InitialError> {
    if mode == 0 {
        return Err(InitialError::Unsupported("plane_wave mode must be at least 1".into()));
    }
    let omega = 2.0 * PI * mode as f64 / grid.length();
    // Eigenvalues of A are ±iω exactly when t² takes these values.
    let t2 = match spec.family() {
        Family::CompactUnitary => 4.0 * (omega * omega - c * c),
        Family::NoncompactUnitary => 4.0 * (omega * omega + c * c),
        Family::ParaReal => 4.0 * (c * c - omega * omega),
    };
    if t2 < 0.0 {
        return Err(InitialError::Unsupported(format!(
            "plane_wave needs {} for this family (amplitude {c}, frequency {omega:.4})",
            if spec.is_para() { "amplitude ≥ frequency" } else { "frequency ≥ amplitude" }
        )));
    }
    let t = t2.sqrt();
    let m0 = plane_generator(spec);
    let kk = plane_sigma3(spec);
    let a = &m0.scale(c) + &kk.scale(t);
    let para = spec.is_para();
    let mut frame = Vec::with_capacity(grid.len());
    let mut pot = Vec::with_capacity(grid.len());
    for j in 0..grid.len() {
        let x = grid.x(j);
        let e = exp_map(&a.scale(x))?;
        let (d, dinv) = exp_map_pair(&kk.scale(-x * t))?;
        if para {
            frame.push(&e * &d);
            pot.push(&(&dinv * &m0.scale(c)) * &d);
        } else {
            frame.push(&d * &e);
            pot.push(&(&d * &m0.scale(c)) * &dinv);
        }
    }
    let holonomy = exp_map(&kk.scale(-grid.length() * t))?;
    Ok(FramedState {
        spec: *spec,
        frame: MatrixField::new(grid, frame)?,
        potential: MatrixField::new(grid, pot)?,
        twist: FrameTwist::gauge(spec, holonomy),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::{orbit_from_frame, spectrum_deviation, verify_identities};

    fn families() -> Vec<AlgebraSpec> {
        vec![AlgebraSpec::compact(2, 1), AlgebraSpec::noncompact(3, 1), AlgebraSpec::para(3, 1), AlgebraSpec::para(2, 1)]
    }

    #[test]
    fn generators_give_periodic_consistent_frames() {
        let grid = Grid::new(256, 8.0 * PI).unwrap();
        for spec in families() {
            let mut cases = vec![
                InitialData::BasePoint,
                InitialData::TwoBump { amplitude: 0.3, width: 5.0 },
                InitialData::default(),
            ];
            if spec.family() != Family::NoncompactUnitary {
                cases.push(InitialData::GaussianBump {
                    center: 4.0,
                    width: 5.0,
                    winding: 2,
                });
            }
            let amp = if spec.is_para() { 0.5 } else { 0.2 };
            cases.push(InitialData::PlaneWave { amplitude: amp, mode: 1 });
            for data in cases {
                let fs = build(&spec, grid, &data).unwrap();
                // Bumps are sharper than the trigonometric data; both
                // converge at fourth order.
                let id = verify_identities(&fs).unwrap().max();
                assert!(id < 1e-4, "{spec:?} {data:?} {id}");
                let k = fs.measured_k_residual().unwrap();
                assert!(k < 1e-4, "{spec:?} {data:?} {k}");
                let os = orbit_from_frame(&fs).unwrap();
                assert!(spectrum_deviation(&os).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn plane_wave_has_constant_modulus() {
        let grid = Grid::new(64, 10.0).unwrap();
        let fs = build(&AlgebraSpec::compact(2, 1), grid, &InitialData::PlaneWave { amplitude: 0.3, mode: 1 }).unwrap();
        for p in fs.potential.values() {
            assert!((p[(0, 1)].norm() - 0.3).abs() < 1e-12);
        }
        assert!(fs.twist.survives_updates(&fs.spec));
    }

    #[test]
    fn odd_winding_gives_scalar_twist_on_u2() {
        let grid = Grid::new(64, 10.0).unwrap();
        let data = InitialData::GaussianBump {
            center: 5.0,
            width: 1.0,
            winding: 1,
        };
        let fs = build(&AlgebraSpec::compact(2, 1), grid, &data).unwrap();
        let minus = SquareMatrix::identity(2).scale(-1.0);
        assert!(fs.twist.left.distance(&minus) < 1e-12);
        assert!(fs.twist.survives_updates(&fs.spec));
    }

    #[test]
    fn noncompact_bump_rejected() {
        let grid = Grid::new(64, 10.0).unwrap();
        let data = InitialData::GaussianBump {
            center: 5.0,
            width: 1.0,
            winding: 1,
        };
        assert!(matches!(build(&AlgebraSpec::noncompact(2, 1), grid, &data), Err(InitialError::Unsupported(_))));
    }
}
