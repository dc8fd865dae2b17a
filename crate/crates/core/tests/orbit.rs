mod common;

use common::{any_spec, base, framed, orbit, random_orbit_point, rng};
use proptest::prelude::*;
use symflow::algebra::random_element;
use symflow::orbit::{eigenvalues, retract_point, verify_identities, FramedState, OrbitState};

fn sorted_spectrum(m: &symflow::matrix::SquareMatrix) -> Vec<(f64, f64)> {
    let mut ev: Vec<(f64, f64)> = eigenvalues(m).unwrap().iter().map(|z| (z.re, z.im)).collect();
    ev.sort_by(|a, b| (a.0 + a.1).total_cmp(&(b.0 + b.1)));
    ev
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn orbit_points_square_to_a_scalar_and_keep_the_spectrum(spec in any_spec(), seed in any::<u64>()) {
        let phi = random_orbit_point(&spec, seed, 0.6);
        let s = base(&spec);
        prop_assert!((&phi * &phi).distance(&(&s * &s)) < 1e-10);
        for (a, b) in sorted_spectrum(&phi).iter().zip(sorted_spectrum(&s)) {
            prop_assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8);
        }
    }

    #[test]
    fn retraction_fixes_orbit_points_and_pulls_back_nearby_ones(spec in any_spec(), seed in any::<u64>(), eps in 1e-8f64..1e-3) {
        let phi = random_orbit_point(&spec, seed, 0.5);
        let (same, _) = retract_point(&spec, &phi).unwrap();
        prop_assert!(same.distance(&phi) < 1e-10);
        let mut r = rng(seed ^ 0x5eed);
        let noisy = &phi + &random_element(&spec, &mut r, eps);
        let (back, _) = retract_point(&spec, &noisy).unwrap();
        let s = base(&spec);
        prop_assert!((&back * &back).distance(&(&s * &s)) < 1e-10);
        // Boosted points are far from normal, which costs a power of their size.
        prop_assert!(back.distance(&phi) < 20.0 * eps * (1.0 + phi.max_abs()).powi(3));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn random_framed_states_satisfy_the_identities(spec in any_spec(), seed in 0u64..1000) {
        let rep = verify_identities(&framed(&spec, 128, seed, 0.35)).unwrap();
        prop_assert!(rep.max() < 1e-6, "{:?}", rep);
    }

    #[test]
    fn snapshots_round_trip_through_json(spec in any_spec(), seed in 0u64..1000) {
        let fs = framed(&spec, 32, seed, 0.2);
        let text = serde_json::to_string(&fs.snapshot()).unwrap();
        let back = FramedState::from_snapshot(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(back.snapshot(), fs.snapshot());
        let os = orbit(&spec, 32, seed, 0.2);
        let text = serde_json::to_string(&os.snapshot()).unwrap();
        let back = OrbitState::from_snapshot(serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(back.phi, os.phi);
    }
}
