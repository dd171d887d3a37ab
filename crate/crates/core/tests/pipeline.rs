use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use gridmanifold_core::attack::{perturb_series, AttackConfig};
use gridmanifold_core::basis::{assemble_lifted_map, eval_basis};
use gridmanifold_core::detect::summarize_bypass;
use gridmanifold_core::estimation::chi2_quantile;
use gridmanifold_core::harness::generate_timeseries;
use gridmanifold_core::models::train_pgae;
use gridmanifold_core::powerflow::{measure, Channel};
use gridmanifold_core::{
    build_basis_spec, bundled, BasisMode, BddConfig, Estimator, MeasurementSchema, Network, NoiseModel, ScenarioConfig, StateVector,
    TrainConfig,
};

fn network(name: &str) -> Network {
    Network::new(bundled::load(name).unwrap()).unwrap()
}

fn state_strategy(n: usize) -> impl Strategy<Value = StateVector> {
    (prop::collection::vec(0.9f64..1.1, n), prop::collection::vec(-0.3f64..0.3, n)).prop_map(|(vm, va)| StateVector { vm, va })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn active_losses_are_non_negative(x in state_strategy(14)) {
        let net = network("case14");
        let schema = MeasurementSchema::new(&net, (0..net.n()).map(Channel::PInj).collect()).unwrap();
        let p = measure(&x, &net, &schema).unwrap();
        prop_assert!(p.sum() >= -1e-12, "total injection {}", p.sum());
    }

    #[test]
    fn lifted_map_matches_measurements(x in state_strategy(30)) {
        let net = network("case30");
        let schema = MeasurementSchema::default_schema(&net);
        let spec = build_basis_spec(&net, BasisMode::Sparse);
        let a = assemble_lifted_map(&net, &schema, &spec).unwrap();
        let h = measure(&x, &net, &schema).unwrap();
        let f = eval_basis(&spec, &x).unwrap();
        prop_assert!((h - a.apply(&f)).amax() <= 1e-9);
    }

    #[test]
    fn bypass_rates_ignore_sample_order(
        res in prop::collection::vec(prop::option::weighted(0.9, 0.0f64..150.0), 1..80),
        seed in any::<u64>(),
    ) {
        let bdd = BddConfig::new(0.05, 56).unwrap();
        let errs: Vec<f64> = (0..res.len()).map(|k| (k * 37 % 11) as f64).collect();
        let a = summarize_bypass(res.clone(), &bdd, Some((&errs, 5.0))).unwrap();
        let mut order: Vec<usize> = (0..res.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let res2: Vec<_> = order.iter().map(|&k| res[k]).collect();
        let errs2: Vec<f64> = order.iter().map(|&k| errs[k]).collect();
        let b = summarize_bypass(res2, &bdd, Some((&errs2, 5.0))).unwrap();
        prop_assert_eq!(a.succ_bdd, b.succ_bdd);
        prop_assert_eq!(a.succ_learn, b.succ_learn);
        prop_assert_eq!(a.median_residual, b.median_residual);
        prop_assert!((a.mean_residual - b.mean_residual).abs() <= 1e-9 * a.mean_residual.abs().max(1.0));
    }

    #[test]
    fn chi2_quantile_matches_reference(dof in 1usize..400, p in 0.5f64..0.999) {
        let q = chi2_quantile(dof, p).unwrap();
        let reference = ChiSquared::new(dof as f64).unwrap().inverse_cdf(p);
        prop_assert!((q - reference).abs() <= 1e-6 * reference, "{q} vs {reference}");
    }
}

#[test]
fn wls_recovers_random_operating_points() {
    let net = network("case14");
    let schema = MeasurementSchema::default_schema(&net);
    let noise = NoiseModel::uniform(schema.len(), 0.01).unwrap();
    let est = Estimator::new(&net, &schema, &noise).unwrap();
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    for _ in 0..20 {
        let mut x = state_strategy(14).new_tree(&mut runner).unwrap().current();
        x.va[net.slack()] = 0.0;
        x.vm.iter_mut().for_each(|v| *v = 0.97 + 0.3 * (*v - 1.0));
        x.va.iter_mut().for_each(|a| *a *= 0.5);
        x.vm[net.slack()] = est.layout().slack_vm();
        let z = measure(&x, &net, &schema).unwrap();
        let r = est.estimate(&z, &est.flat_start()).unwrap();
        assert!(r.converged);
        assert!(r.residual < 1e-12, "{}", r.residual);
        let err = (0..14).map(|i| (r.state_hat.vm[i] - x.vm[i]).abs().max((r.state_hat.va[i] - x.va[i]).abs())).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }
}

#[test]
fn timeseries_is_seeded() {
    let sc = ScenarioConfig { case: "case14".into(), samples: 12, seed: 4, ..ScenarioConfig::default() };
    let a = generate_timeseries(&sc).unwrap();
    let b = generate_timeseries(&sc).unwrap();
    assert_eq!(a.z, b.z);
    let c = generate_timeseries(&ScenarioConfig { seed: 5, ..sc }).unwrap();
    assert_ne!(a.z, c.z);
}

#[test]
fn zero_offset_attack_is_identity_and_shift_grows_with_gamma() {
    let sc = ScenarioConfig { case: "case14".into(), samples: 60, seed: 2, ..ScenarioConfig::default() };
    let data = generate_timeseries(&sc).unwrap();
    let net = sc.network().unwrap();
    let schema = sc.schema.build(&net);
    let spec = build_basis_spec(&net, BasisMode::Sparse);
    let cfg = TrainConfig { epochs: 20, seed: 1, ..TrainConfig::default() };
    let model = train_pgae(&data.z, &net, &schema, &spec, 26, &cfg, Default::default()).unwrap();
    let zero = perturb_series(&model, &data.z, &AttackConfig::uniform(26, 0.0)).unwrap();
    assert!((&zero - &data.z).amax() < 1e-12);
    let shift = |g: f64| -> f64 {
        let za: DMatrix<f64> = perturb_series(&model, &data.z, &AttackConfig::uniform(26, 0.1).with_gamma(g)).unwrap();
        (za - &data.z).norm()
    };
    let (s1, s2) = (shift(0.5), shift(2.0));
    assert!(s1 > 0.0 && s2 > s1, "{s1} {s2}");
}
