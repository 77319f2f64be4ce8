use mfergodic::benchmarks;
use mfergodic::ergodic::{
    greedy_feedback, hamiltonian_f, hjb_residual, lions_derivative, long_run_average, probe_ensembles,
    verification_run, DerivativeField, FiniteDifference, GreedyConfig, PoissonOracle, Probe,
};
use mfergodic::functional::{Mean, SecondMoment, TerminalReward};
use mfergodic::model::{Reward, RewardKind};
use mfergodic::particle::{sample_initial, InitialLaw};
use mfergodic::value::{SimConfig, Start};
use mfergodic::{ActionSet, AffineModel, Dynamics, Ensemble, Estimate, Policy, RngStream};
use proptest::prelude::*;

fn sim(n: usize, r: usize, seed: u64) -> SimConfig {
    SimConfig {
        n_particles: n,
        replicas: r,
        seed,
        ..SimConfig::default()
    }
}

fn zeros(ens: &Ensemble) -> DerivativeField {
    DerivativeField {
        n: ens.len(),
        dim: 1,
        dmu: vec![0.0; ens.len()],
        dxdmu: vec![0.0; ens.len()],
        fd_step: 0.0,
    }
}

fn still(reward: Reward, actions: ActionSet) -> AffineModel {
    AffineModel::new(benchmarks::scalar_spec("still", 0.0, 0.0, 0.0, 0.0, reward, actions)).unwrap()
}

fn action_reward() -> AffineModel {
    let mut spec =
        benchmarks::scalar_spec("paid", 0.0, 0.0, 0.0, 0.0, Reward::constant(0.0), ActionSet::finite_scalars(&[-1.0, 1.0]));
    spec.reward.action_linear = vec![1.0];
    AffineModel::new(spec).unwrap()
}

fn gauss_cloud(n: usize, seed: u64) -> Ensemble {
    sample_initial(&InitialLaw::gaussian(0.0, 1.0), n, RngStream::new(seed, 0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn quadratic_fields_are_exact(seed in 0u64..1000, h in 1e-6f64..1e-3) {
        let e = gauss_cloud(512, seed);
        let f = lions_derivative(&SecondMoment, &e, h).unwrap();
        let g = lions_derivative(&Mean { coord: 0 }, &e, h).unwrap();
        for (i, x) in e.positions().iter().enumerate() {
            prop_assert!((f.dmu[i] - 2.0 * x).abs() < 1e-10);
            prop_assert!((f.dxdmu[i] - 2.0).abs() < 1e-10);
            prop_assert!((g.dmu[i] - 1.0).abs() < 1e-10);
            prop_assert!(g.dxdmu[i].abs() < 1e-10);
        }
    }
}

#[test]
fn trivial_hamiltonians() {
    let e = gauss_cloud(64, 1);
    let c = still(Reward::constant(0.7), ActionSet::finite_scalars(&[0.0]));
    assert!((hamiltonian_f(&c, &e, &zeros(&e), None).unwrap() - 0.7).abs() < 1e-15);
    assert_eq!(hamiltonian_f(&action_reward(), &e, &zeros(&e), None).unwrap(), 1.0);
}

#[test]
fn decay_against_second_moment_field() {
    let model = AffineModel::new(benchmarks::scalar_spec(
        "decay",
        -1.0,
        0.0,
        0.0,
        0.0,
        Reward::constant(0.0),
        ActionSet::finite_scalars(&[0.0]),
    ))
    .unwrap();
    let e = gauss_cloud(256, 2);
    let field = lions_derivative(&SecondMoment, &e, 1e-3).unwrap();
    let sm: f64 = e.positions().iter().map(|x| x * x).sum::<f64>() / 256.0;
    assert!((hamiltonian_f(&model, &e, &field, None).unwrap() + 2.0 * sm).abs() < 1e-10);
}

#[test]
fn greedy_examples() {
    let cfg = GreedyConfig::default();
    let src = PoissonOracle::new(&benchmarks::ou_cos(), &[0.0]).unwrap();
    let g = greedy_feedback(&action_reward(), &src, &cfg).unwrap();
    assert!(g.policy.params().iter().all(|a| *a == 1.0));
    let single = still(Reward::constant(0.0), ActionSet::finite_scalars(&[0.25]));
    let g = greedy_feedback(&single, &src, &cfg).unwrap();
    assert!(g.policy.params().iter().all(|a| *a == 0.25));
}

#[test]
fn constant_reward_residual_vanishes() {
    let model = benchmarks::const_reward();
    let zero = TerminalReward::Zero;
    let src = FiniteDifference::new(&zero, 1e-3);
    let probes = probe_ensembles(
        &[Probe {
            id: "g".into(),
            law: InitialLaw::gaussian(1.0, 2.0),
        }],
        128,
        3,
    )
    .unwrap();
    let r = hjb_residual(&model, Estimate::exact(1.0), &src, &probes, None).unwrap();
    assert_eq!(r.max_abs_residual, 0.0);
}

#[test]
fn clipped_quadratic_residual_with_simulated_lambda() {
    let model = benchmarks::ou_clipped_quadratic();
    let oracle = PoissonOracle::new(&model, &[0.0]).unwrap();
    let law = InitialLaw::dirac(0.0);
    let lr = long_run_average(&model, &benchmarks::stay(&model), Start::Law(&law), 25.0, 5.0, &sim(1024, 8, 4)).unwrap();
    let probes: Vec<Probe> = [(0.0, 0.5), (1.0, 0.25), (-1.5, 1.0), (2.0, 0.1), (0.5, 2.0)]
        .iter()
        .enumerate()
        .map(|(k, (m, v))| Probe {
            id: format!("p{k}"),
            law: InitialLaw::gaussian(*m, *v),
        })
        .collect();
    let ens = probe_ensembles(&probes, 1024, 5).unwrap();
    let r = hjb_residual(&model, lr.estimate, &oracle, &ens, None).unwrap();
    assert!(r.relative() <= 0.05, "{r:?}");
    // the Euler chain's stationary variance is 1/1.99, E min(X², 4) ≈ its variance
    assert!((oracle.lambda() - lr.estimate.value).abs() < 0.02);
}

#[test]
fn tanh_verification() {
    let model = benchmarks::tanh_drive();
    let oracle = PoissonOracle::new(&model, &[1.0]).unwrap();
    let greedy = greedy_feedback(&model, &oracle, &GreedyConfig::default()).unwrap();
    let law = InitialLaw::dirac(0.0);
    let lambda = long_run_average(
        &model,
        &Policy::constant(model.action_set().clone(), vec![1.0]),
        Start::Law(&law),
        30.0,
        5.0,
        &sim(512, 8, 6),
    )
    .unwrap()
    .estimate;
    let s = sim(512, 8, 7);
    let good = verification_run(&model, &greedy.policy, Start::Law(&law), &oracle, lambda, 30.0, 5.0, 20, &s).unwrap();
    assert!((good.long_run.value / oracle.lambda() - 1.0).abs() < 0.03, "{good:?}");
    assert!(good.drift_z() < 3.0, "{good:?}");
    let wrong = Policy::constant(model.action_set().clone(), vec![0.0]);
    let bad = verification_run(&model, &wrong, Start::Law(&law), &oracle, lambda, 30.0, 5.0, 20, &s).unwrap();
    assert!(lambda.value - bad.long_run.value > 3.0 * lambda.stderr.hypot(bad.long_run.stderr));
}

#[test]
fn reward_kinds_have_oracles() {
    for kind in [
        RewardKind::Cos { omega: 2.0 },
        RewardKind::Tanh { scale: 0.5 },
        RewardKind::GaussianBump {
            center: 0.5,
            width: 0.3,
        },
    ] {
        let model = AffineModel::new(benchmarks::scalar_spec(
            "k",
            -1.0,
            0.0,
            0.0,
            1.0,
            Reward::state_term(1.0, kind.clone()),
            ActionSet::finite_scalars(&[0.0]),
        ))
        .unwrap();
        let o = PoissonOracle::new(&model, &[0.0]).unwrap();
        for x in [-1.0, 0.3, 2.0] {
            let lhs = 0.5 * o.d2psi(x) - x * o.dpsi(x);
            assert!((lhs - (o.lambda() - kind.eval(x))).abs() < 1e-6, "{kind:?} at {x}");
        }
    }
}
