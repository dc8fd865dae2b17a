mod common;

use common::{any_spec, rng};
use proptest::prelude::*;
use symflow::algebra::{bracket, decompose, exp_map, group_residual, inner, membership_residual, project, random_element, random_k, random_m, sigma3};
use symflow::matrix::SquareMatrix;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bracket_is_closed_antisymmetric_and_jacobi(spec in any_spec(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b, c) = (random_element(&spec, &mut r, 1.0), random_element(&spec, &mut r, 1.0), random_element(&spec, &mut r, 1.0));
        let ab = bracket(&a, &b).unwrap();
        prop_assert!(membership_residual(&spec, &ab) < 1e-12);
        prop_assert!((&ab + &bracket(&b, &a).unwrap()).max_abs() < 1e-14);
        let jac = &a.comm(&b.comm(&c)) + &(&b.comm(&c.comm(&a)) + &c.comm(&a.comm(&b)));
        prop_assert!(jac.max_abs() < 1e-12);
    }

    #[test]
    fn inner_product_is_symmetric_and_ad_invariant(spec in any_spec(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (a, b, c) = (random_element(&spec, &mut r, 1.0), random_element(&spec, &mut r, 1.0), random_element(&spec, &mut r, 1.0));
        prop_assert!((inner(&spec, &a, &b) - inner(&spec, &b, &a)).abs() < 1e-12);
        let lhs = inner(&spec, &a.comm(&b), &c);
        let rhs = inner(&spec, &b, &a.comm(&c));
        prop_assert!((lhs + rhs).abs() < 1e-11);
    }

    #[test]
    fn symmetric_pair_relations(spec in any_spec(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (k1, k2) = (random_k(&spec, &mut r, 1.0), random_k(&spec, &mut r, 1.0));
        let (m1, m2) = (random_m(&spec, &mut r, 1.0), random_m(&spec, &mut r, 1.0));
        let s = sigma3(&spec);
        // k commutes with σ₃, m anticommutes with it.
        prop_assert!(k1.comm(&s).max_abs() < 1e-13);
        prop_assert!(m1.anticomm(&s).max_abs() < 1e-13);
        let kk = decompose(&spec, &k1.comm(&k2));
        let mm = decompose(&spec, &m1.comm(&m2));
        let km = decompose(&spec, &k1.comm(&m1));
        prop_assert!(kk.m_part.max_abs() < 1e-12);
        prop_assert!(mm.m_part.max_abs() < 1e-12);
        prop_assert!(km.k_part.max_abs() < 1e-12);
        prop_assert!(inner(&spec, &k1, &m1).abs() < 1e-12);
    }

    #[test]
    fn decomposition_and_projection_are_idempotent(spec in any_spec(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_element(&spec, &mut r, 1.0);
        let d = decompose(&spec, &a);
        prop_assert!((&d.k_part + &d.m_part).distance(&a) < 1e-14);
        prop_assert!(project(&spec, &a).distance(&a) < 1e-13);
        let junk = symflow::algebra::random_matrix(spec.n(), &mut r, 1.0);
        let p = project(&spec, &junk);
        prop_assert!(membership_residual(&spec, &p) < 1e-12);
        prop_assert!(project(&spec, &p).distance(&p) < 1e-13);
    }

    #[test]
    fn exponential_lands_in_the_group(spec in any_spec(), seed in any::<u64>(), scale in 0.01f64..2.0) {
        let mut r = rng(seed);
        let a = random_element(&spec, &mut r, scale);
        let e = exp_map(&a).unwrap();
        prop_assert!(group_residual(&spec, &e) < 1e-10);
        let back = exp_map(&a.scale(-1.0)).unwrap();
        prop_assert!((&e * &back).distance(&SquareMatrix::identity(spec.n())) < 1e-10 * (1.0 + e.max_abs().powi(2)));
    }
}
