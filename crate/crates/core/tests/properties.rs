use nalgebra::{DMatrix, SymmetricEigen};
use ntk_core::activations::{covariance_step, ActivationModel};
use ntk_core::dataset::sphere_points;
use ntk_core::gaussmath::{expect2, gauss_hermite};
use ntk_core::kernels::{dense_recursion, ArchKind, Architecture, InputPair};
use ntk_core::phase::InitParams;
use ntk_core::regression::{evolve, predict_row, TrainingState};
use ntk_core::spectral::{eigen_trend, KernelConfig};
use proptest::prelude::*;

fn model(tanh: bool) -> ActivationModel {
    if tanh {
        ActivationModel::tanh()
    } else {
        ActivationModel::relu()
    }
}

fn arch() -> impl Strategy<Value = ArchKind> {
    prop_oneof![Just(ArchKind::Ffnn), Just(ArchKind::ResnetDense)]
}

fn vec_of(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expect2_is_symmetric_in_the_variances(q1 in 0.05..0.6f64, q2 in 0.05..0.6f64, c in -1.0..1.0f64) {
        let rule = gauss_hermite(64).unwrap();
        let a = expect2(f64::tanh, q1, q2, c, &rule).unwrap();
        let b = expect2(f64::tanh, q2, q1, c, &rule).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn covariance_step_keeps_cauchy_schwarz(
        tanh in any::<bool>(),
        sb in 0.0..1.0f64,
        sw in 0.3..2.5f64,
        qx in 0.01..4.0f64,
        qxp in 0.01..4.0f64,
        c in -1.0..1.0f64,
    ) {
        let p = InitParams::new(sb, sw).unwrap();
        let (a, b, cov) = covariance_step(&model(tanh), p, qx, qxp, c * (qx * qxp).sqrt()).unwrap();
        prop_assert!(cov * cov <= a * b + 1e-10);
    }

    #[test]
    fn kernels_are_exactly_swap_symmetric(
        tanh in any::<bool>(),
        kind in arch(),
        sb in 0.0..1.0f64,
        sw in 0.5..1.6f64,
        x in vec_of(4),
        xp in vec_of(4),
        depth in 1usize..20,
    ) {
        let kind = if tanh { ArchKind::Ffnn } else { kind };
        let Ok(pair) = InputPair::new(x, xp) else { return Ok(()) };
        let p = InitParams::new(sb, sw).unwrap();
        let m = model(tanh);
        let arch = Architecture::dense(kind).unwrap();
        let a = dense_recursion(arch, &m, p, pair.first_layer(p), depth).unwrap();
        let b = dense_recursion(arch, &m, p, pair.swapped().first_layer(p), depth).unwrap();
        prop_assert_eq!(a.ntk, b.ntk);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn gram_of_ten_inputs_is_psd(tanh in any::<bool>(), sb in 0.0..1.0f64, sw in 0.5..1.6f64, depth in 1usize..12, seed in 0u64..1000) {
        let xs: Vec<Vec<f64>> = sphere_points(5, 10, seed).unwrap();
        let p = InitParams::new(sb, sw).unwrap();
        let m = model(tanh);
        let arch = Architecture::dense(ArchKind::Ffnn).unwrap();
        let k = |i: usize, j: usize| {
            let pair = InputPair::new(xs[i].clone(), xs[j].clone()).unwrap();
            dense_recursion(arch, &m, p, pair.first_layer(p), depth).unwrap().last_ntk()
        };
        let gram = DMatrix::from_fn(10, 10, |i, j| if i <= j { k(i, j) } else { k(j, i) });
        let eig = SymmetricEigen::new(gram).eigenvalues;
        let max = eig.max();
        prop_assert!(eig.min() >= -1e-8 * max, "min {} max {}", eig.min(), max);
    }

    #[test]
    fn predictions_at_training_points_follow_evolve(seed in 0u64..1000, t in 0.0..50.0f64) {
        let xs = sphere_points(4, 8, seed).unwrap();
        let p = InitParams::relu_eoc();
        let m = ActivationModel::relu();
        let arch = Architecture::dense(ArchKind::Ffnn).unwrap();
        let k = |i: usize, j: usize| {
            let pair = InputPair::new(xs[i].clone(), xs[j].clone()).unwrap();
            dense_recursion(arch, &m, p, pair.first_layer(p), 3).unwrap().last_ntk()
        };
        let gram = DMatrix::from_fn(8, 8, |i, j| if i <= j { k(i, j) } else { k(j, i) });
        let z = DMatrix::from_fn(8, 2, |i, c| if (i + c) % 2 == 0 { 1.0 } else { 0.0 });
        let state = TrainingState::from_gram(gram.clone(), 2, None).unwrap();
        let f = evolve(&state, &z, t).unwrap();
        for i in 0..8 {
            let row: Vec<f64> = gram.row(i).iter().copied().collect();
            let got = predict_row(&state, &z, &row, t, None, false).unwrap();
            for c in 0..2 {
                prop_assert!((got[c] - f[(i, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn evolve_contracts_every_eigen_coordinate(seed in 0u64..1000, t1 in 0.0..20.0f64, dt in 0.0..20.0f64) {
        let xs = sphere_points(4, 6, seed).unwrap();
        let p = InitParams::new(0.3, 1.2).unwrap();
        let m = ActivationModel::relu();
        let arch = Architecture::dense(ArchKind::Ffnn).unwrap();
        let k = |i: usize, j: usize| {
            let pair = InputPair::new(xs[i].clone(), xs[j].clone()).unwrap();
            dense_recursion(arch, &m, p, pair.first_layer(p), 4).unwrap().last_ntk()
        };
        let gram = DMatrix::from_fn(6, 6, |i, j| if i <= j { k(i, j) } else { k(j, i) });
        let z = DMatrix::from_fn(6, 1, |i, _| (i as f64).sin());
        let state = TrainingState::from_gram(gram, 1, None).unwrap();
        let err = |t: f64| state.eigenvectors.transpose() * (evolve(&state, &z, t).unwrap() - &z);
        let (a, b) = (err(t1), err(t1 + dt));
        for i in 0..6 {
            prop_assert!(b[i].abs() <= a[i].abs() + 1e-12);
        }
    }

    #[test]
    fn spectral_coefficients_are_nonnegative(tanh in any::<bool>(), sb in 0.0..0.8f64, sw in 0.5..1.6f64, depth in 1usize..40) {
        let act = if tanh { ntk_core::activations::ActivationKind::Tanh } else { ntk_core::activations::ActivationKind::Relu };
        let cfg = KernelConfig::new(ArchKind::Ffnn, act, InitParams::new(sb, sw).unwrap()).unwrap();
        let dec = eigen_trend(&cfg, 3, &[depth], 24, 96).unwrap().remove(0);
        for mu in &dec.mu {
            prop_assert!(*mu >= -1e-8 * dec.mu[0], "mu {:?}", dec.mu);
        }
    }
}
