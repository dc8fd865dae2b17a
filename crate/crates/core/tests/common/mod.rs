//! Shared helpers for the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use symflow::algebra::{exp_map, random_element, sigma3, AlgebraSpec, Family};
use symflow::fields::Grid;
use symflow::initial::{build, InitialData};
use symflow::matrix::SquareMatrix;
use symflow::orbit::{orbit_from_frame, orbit_point, FramedState, OrbitState};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn all_specs() -> Vec<AlgebraSpec> {
    let mut out = Vec::new();
    for family in [Family::CompactUnitary, Family::NoncompactUnitary, Family::ParaReal] {
        for n in 2..=4 {
            for k in 1..n {
                out.push(AlgebraSpec::new(family, n, k).unwrap());
            }
        }
    }
    out
}

pub fn any_spec() -> impl Strategy<Value = AlgebraSpec> {
    proptest::sample::select(all_specs())
}

pub fn framed(spec: &AlgebraSpec, n: usize, seed: u64, amplitude: f64) -> FramedState {
    build(spec, Grid::new(n, 8.0 * std::f64::consts::PI).unwrap(), &InitialData::RandomSmooth { seed, modes: 3, amplitude }).unwrap()
}

pub fn orbit(spec: &AlgebraSpec, n: usize, seed: u64, amplitude: f64) -> OrbitState {
    orbit_from_frame(&framed(spec, n, seed, amplitude)).unwrap()
}

/// A random point on the orbit of σ₃.
pub fn random_orbit_point(spec: &AlgebraSpec, seed: u64, scale: f64) -> SquareMatrix {
    let mut r = rng(seed);
    let e = exp_map(&random_element(spec, &mut r, scale)).unwrap();
    orbit_point(spec, &e).unwrap()
}

/// Exact jet of φ(x) = e^{−xA}φ₀e^{xA} at x = 0: φ^(k+1) = [φ^(k), A].
pub fn commutator_jet(phi0: &SquareMatrix, a: &SquareMatrix, order: usize) -> Vec<SquareMatrix> {
    let mut jet = vec![phi0.clone()];
    for k in 0..order {
        let next = jet[k].comm(a);
        jet.push(next);
    }
    jet
}

/// Anticommutator residual ‖φv + vφ‖ of a tangent vector v at φ.
pub fn tangency(phi: &SquareMatrix, v: &SquareMatrix) -> f64 {
    phi.anticomm(v).max_abs()
}

pub fn base(spec: &AlgebraSpec) -> SquareMatrix {
    sigma3(spec)
}
