//! The hierarchy kernel against an independently assembled dense generator.

mod common;

use common::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sfd_deom::bath::{decompose_bath, BathExpansion, BrownianOscillatorBath, PoleScheme};
use sfd_deom::hierarchy::{
    build_dressed_couplings, initial_state, step, DdoState, FieldPair, Generator, HierarchySpace, Rk4,
};
use sfd_deom::model::{AlphaDescriptors, CMatrix, SystemModel};

fn two_state(lambda: f64, theta: f64) -> SystemModel {
    SystemModel::two_state(0.3, 1.0, lambda, theta, 1.0).unwrap()
}

fn three_state() -> SystemModel {
    let mut h = CMatrix::zeros(3, 3);
    h[(0, 1)] = Complex64::new(0.4, 0.2);
    h[(1, 0)] = Complex64::new(0.4, -0.2);
    h[(1, 2)] = c(0.7);
    h[(2, 1)] = c(0.7);
    h[(2, 2)] = c(-0.5);
    let mut q = CMatrix::zeros(3, 3);
    q[(0, 0)] = c(1.0);
    q[(1, 1)] = c(0.5);
    q[(0, 1)] = c(0.2);
    q[(1, 0)] = c(0.2);
    SystemModel::new(
        h,
        q,
        AlphaDescriptors {
            alpha0: 0.1,
            alpha1: -0.6,
            alpha2: -0.2,
        },
    )
    .unwrap()
}

fn single_mode() -> BathExpansion {
    BathExpansion::from_discrete_modes(&[(0.8, 1.3)], 1.0).unwrap()
}

fn check_against_dense(model: &SystemModel, exp: &BathExpansion, level: usize, seed: u64) {
    let space = HierarchySpace::new(exp.len(), level).unwrap();
    let generator = Generator::new(space.clone(), model, exp).unwrap();
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let state = random_state(&space, d, &mut rng);
    let v = Dense::from_vec(space.len() * d * d, 1, flatten(&state, &space));
    let mut out = DdoState::zeros(&space, d);
    for _ in 0..100 {
        let fields = FieldPair::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
        let g = dense_generator(&space, model, exp, fields);
        generator.apply(&state, &build_dressed_couplings(model, fields), &mut out);
        let want = &g * &v;
        let got = flatten(&out, &space);
        let scale = want.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let err = got.iter().zip(want.iter()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * scale, "error {err:e} at scale {scale:e}");
    }
}

#[test]
fn flatten_matches_storage() {
    let space = HierarchySpace::new(2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let state = random_state(&space, 2, &mut rng);
    assert_eq!(flatten(&state, &space), state.as_slice());
}

#[test]
fn two_level_kernel_matches_dense_generator() {
    let exp = single_mode();
    assert_eq!(exp.len(), 2);
    for (lambda, theta) in [(0.1, 1.0), (0.0, 0.8), (0.1, 1.25)] {
        check_against_dense(&two_state(lambda, theta), &exp, 2, 11);
    }
}

#[test]
fn generic_kernel_matches_dense_generator() {
    check_against_dense(&three_state(), &single_mode(), 2, 12);
    let bath = BrownianOscillatorBath::new(1.0, 1.0, 1.0).unwrap();
    let pade = decompose_bath(&bath, PoleScheme::Pade, 1).unwrap();
    check_against_dense(&three_state(), &pade, 2, 13);
    check_against_dense(&two_state(0.1, 1.25), &pade, 3, 14);
}

#[test]
fn rk4_matches_matrix_exponential() {
    let model = two_state(0.1, 1.25);
    let exp = single_mode();
    let space = HierarchySpace::new(exp.len(), 3).unwrap();
    let generator = Generator::new(space.clone(), &model, &exp).unwrap();
    let mut rho0 = CMatrix::zeros(2, 2);
    rho0[(0, 0)] = c(1.0);
    let fields = FieldPair::new(0.7, -0.4);
    let mut state = initial_state(&space, &rho0).unwrap();
    let v0 = Dense::from_vec(state.as_slice().len(), 1, flatten(&state, &space));
    let want = (dense_generator(&space, &model, &exp, fields) * c(0.1)).exp() * v0;
    let couplings = build_dressed_couplings(&model, fields);
    let mut rk4 = Rk4::new(&generator);
    let dt = 1e-3;
    for s in 0..100 {
        rk4.step(&generator, &mut state, &couplings, dt, s as f64 * dt).unwrap();
    }
    let err = flatten(&state, &space)
        .iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "error {err:e}");
    // The allocating wrapper takes the same step.
    let one = step(&generator, &initial_state(&space, &rho0).unwrap(), &model, fields, dt).unwrap();
    let mut two = initial_state(&space, &rho0).unwrap();
    rk4.step(&generator, &mut two, &couplings, dt, 0.0).unwrap();
    assert_eq!(one, two);
}

fn setup(theta: f64) -> (SystemModel, BathExpansion, HierarchySpace, Generator) {
    let model = two_state(0.1, theta);
    let bath = BrownianOscillatorBath::new(1.0, 1.0, 1.0).unwrap();
    let exp = decompose_bath(&bath, PoleScheme::Pade, 2).unwrap();
    let space = HierarchySpace::new(exp.len(), 3).unwrap();
    let generator = Generator::new(space.clone(), &model, &exp).unwrap();
    (model, exp, space, generator)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generator_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0, xi in -20.0f64..20.0, xp in -20.0f64..20.0) {
        let (model, _, space, generator) = setup(1.25);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_state(&space, 2, &mut rng);
        let y = random_state(&space, 2, &mut rng);
        let ca = Complex64::new(a, 0.3);
        let cb = c(b);
        let combo: Vec<Complex64> = x.as_slice().iter().zip(y.as_slice()).map(|(p, q)| ca * p + cb * q).collect();
        let combo = DdoState::from_data(&space, 2, combo).unwrap();
        let cpl = build_dressed_couplings(&model, FieldPair::new(xi, xp));
        let (mut gx, mut gy, mut gc) = (DdoState::zeros(&space, 2), DdoState::zeros(&space, 2), DdoState::zeros(&space, 2));
        generator.apply(&x, &cpl, &mut gx);
        generator.apply(&y, &cpl, &mut gy);
        generator.apply(&combo, &cpl, &mut gc);
        let err = gc.as_slice().iter().zip(gx.as_slice().iter().zip(gy.as_slice()))
            .map(|(z, (p, q))| (z - (ca * p + cb * q)).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-11, "{err:e}");
    }

    #[test]
    fn dagger_commutes_with_swapped_fields(seed in any::<u64>(), theta in prop::sample::select(vec![0.8, 1.25]), xi in -20.0f64..20.0, xp in -20.0f64..20.0) {
        let (model, exp, space, generator) = setup(theta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_state(&space, 2, &mut rng);
        let f = FieldPair::new(xi, xp);
        let mut lhs = DdoState::zeros(&space, 2);
        generator.apply(&x, &build_dressed_couplings(&model, f), &mut lhs);
        let lhs = dagger(&lhs, &space, &exp);
        let mut rhs = DdoState::zeros(&space, 2);
        generator.apply(&dagger(&x, &space, &exp), &build_dressed_couplings(&model, swapped(&model, f)), &mut rhs);
        prop_assert!(max_diff(&lhs, &rhs) < 1e-11);
    }

    #[test]
    fn symmetric_fields_preserve_hermiticity(seed in any::<u64>(), theta in prop::sample::select(vec![0.8, 1.0, 1.25]), xi in -20.0f64..20.0) {
        let (model, exp, space, generator) = setup(theta);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_state(&space, 2, &mut rng);
        let bar = dagger(&raw, &space, &exp);
        let sym: Vec<Complex64> = raw.as_slice().iter().zip(bar.as_slice()).map(|(a, b)| (a + b) * 0.5).collect();
        let x = DdoState::from_data(&space, 2, sym).unwrap();
        prop_assert!(max_diff(&x, &dagger(&x, &space, &exp)) < 1e-14);
        let f = if model.alphas().alpha2 >= 0.0 { FieldPair::new(xi, xi) } else { FieldPair::new(xi, -xi) };
        let mut out = DdoState::zeros(&space, 2);
        generator.apply(&x, &build_dressed_couplings(&model, f), &mut out);
        prop_assert!(max_diff(&out, &dagger(&out, &space, &exp)) < 1e-11);
    }
}
