use mfergodic::benchmarks;
use mfergodic::ergodic::{
    abelian_tauberian_check, fixed_point_residual, gaussian_w2, long_run_average, vanishing_discount, PoissonOracle,
    TauberianConfig, VanishingConfig,
};
use mfergodic::particle::InitialLaw;
use mfergodic::value::{SimConfig, Start};
use mfergodic::{Dynamics, OptimizerConfig, Policy};

fn sim(n: usize, r: usize, seed: u64) -> SimConfig {
    SimConfig {
        n_particles: n,
        replicas: r,
        seed,
        ..SimConfig::default()
    }
}

fn gauss_expect(f: impl Fn(f64) -> f64, m: f64, v: f64) -> f64 {
    let s = v.sqrt();
    let n = 20_000;
    let h = 24.0 * s / n as f64;
    (0..n)
        .map(|k| {
            let x = m - 12.0 * s + (k as f64 + 0.5) * h;
            f(x) * (-(x - m).powi(2) / (2.0 * v)).exp()
        })
        .sum::<f64>()
        * h
        / (2.0 * std::f64::consts::PI * v).sqrt()
}

fn euler_var(theta: f64, sigma: f64, dt: f64) -> f64 {
    sigma * sigma / (2.0 * theta - theta * theta * dt)
}

/// `φ(δ_x)` for `dX = -X dt + √2 dW`, `f = cos`: the time integral of
/// `E_x cos X_t - E_0 cos X_t`, with `X_t ~ N(x e^{-t}, 1 - e^{-2t})`.
fn ou_cos_phi_dirac(x: f64) -> f64 {
    let n = 200_000;
    let t_max = 40.0;
    let h = t_max / n as f64;
    (0..n)
        .map(|k| {
            let t = (k as f64 + 0.5) * h;
            let v = 1.0 - (-2.0 * t).exp();
            (-0.5 * v).exp() * ((x * (-t).exp()).cos() - 1.0)
        })
        .sum::<f64>()
        * h
}

#[test]
fn constant_reward_pair_is_exact() {
    let model = benchmarks::const_reward();
    let cfg = VanishingConfig {
        probe_means: vec![-1.0, 0.0, 1.0],
        probe_sds: vec![0.0, 1.0],
        probe_particles: 64,
        probe_replicas: 2,
        ..VanishingConfig::default()
    };
    let pair = vanishing_discount(
        &model,
        &cfg,
        &benchmarks::stay(&model),
        &OptimizerConfig::default(),
        &sim(64, 2, 1),
    )
    .unwrap();
    // β v^β = 1 - e^{-βT} ≥ 1 - tol on the truncated horizon, up to the time step
    let tol = SimConfig::default().truncation_tol;
    assert!(pair.lambda.value >= 1.0 - tol - 1e-6 && pair.lambda.value < 1.0, "{:.15}", pair.lambda.value);
    assert!(pair.phi_table.iter().all(|e| e.phi.value == 0.0));
    let table = pair.phi_table_fn();
    assert_eq!(table.at(0.3, 0.7), 0.0);
}

#[test]
fn cosine_long_run_matches_gaussian() {
    let model = benchmarks::ou_cos();
    let s = sim(1024, 8, 2);
    let law = InitialLaw::dirac(0.0);
    let r = long_run_average(&model, &benchmarks::stay(&model), Start::Law(&law), 25.0, 5.0, &s).unwrap();
    let oracle = (-0.5 * euler_var(1.0, 2f64.sqrt(), s.dt)).exp();
    assert!(r.estimate.z_score(&mfergodic::Estimate::exact(oracle)) < 3.0, "{} vs {oracle}", r.estimate);
}

#[test]
fn tanh_long_run_matches_quadrature_for_each_action() {
    let model = benchmarks::tanh_drive();
    let s = sim(1024, 8, 3);
    let law = InitialLaw::dirac(0.0);
    for a in [-1.0, 0.0, 1.0] {
        let p = Policy::constant(model.action_set().clone(), vec![a]);
        let r = long_run_average(&model, &p, Start::Law(&law), 25.0, 5.0, &s).unwrap();
        let oracle = gauss_expect(f64::tanh, a, euler_var(1.0, 1.0, s.dt));
        assert!(r.estimate.z_score(&mfergodic::Estimate::exact(oracle)) < 3.0, "a = {a}: {} vs {oracle}", r.estimate);
    }
}

#[test]
fn constant_reward_routes_agree() {
    let model = benchmarks::const_reward();
    let cfg = TauberianConfig {
        horizon_schedule: vec![2.0, 4.0],
        windows: 2,
        long_run: Some((4.0, 1.0)),
        ..TauberianConfig::default()
    };
    let laws = [InitialLaw::dirac(0.0), InitialLaw::gaussian(2.0, 1.0)];
    let rep = abelian_tauberian_check(
        &model,
        &laws,
        &cfg,
        &benchmarks::stay(&model),
        &OptimizerConfig::default(),
        &SimConfig {
            truncation_tol: 1e-4,
            ..sim(64, 2, 4)
        },
    )
    .unwrap();
    for route in &rep.routes {
        for e in route.estimates() {
            assert!((e.value - 1.0).abs() < 1e-3, "{e}");
        }
    }
    assert!(rep.tauberian_csv().lines().count() == 5);
    assert!(rep.cesaro_csv().starts_with("T,v_T_over_T,stderr\n2,"));
}

#[test]
fn constant_reward_fixed_point() {
    let model = benchmarks::const_reward();
    let cfg = VanishingConfig {
        probe_means: vec![0.0, 1.0],
        probe_sds: vec![0.0, 1.0],
        probe_particles: 64,
        probe_replicas: 2,
        ..VanishingConfig::default()
    };
    let opt = OptimizerConfig::default();
    let fine = SimConfig {
        truncation_tol: 1e-5,
        ..sim(64, 2, 5)
    };
    let pair = vanishing_discount(&model, &cfg, &benchmarks::stay(&model), &opt, &fine).unwrap();
    let r = fixed_point_residual(&model, &pair, &InitialLaw::gaussian(0.5, 0.25), 2.0, 2, &opt, &sim(64, 2, 6)).unwrap();
    assert!(r.relative < 1e-3, "{r:?}");
}

#[test]
fn poisson_oracle_matches_transition_integral() {
    let o = PoissonOracle::new(&benchmarks::ou_cos(), &[0.0]).unwrap();
    for x in [-2.0, -0.5, 1.0, 1.5, 3.0] {
        let want = ou_cos_phi_dirac(x);
        assert!((o.psi(x) - want).abs() < 1e-6, "x = {x}: {} vs {want}", o.psi(x));
    }
}

#[test]
fn point_mass_bias_and_lipschitz_record() {
    let model = benchmarks::ou_cos();
    let cfg = VanishingConfig {
        probe_means: vec![-1.0, 0.0, 1.0],
        probe_sds: vec![0.0, 1.0],
        probe_particles: 512,
        probe_replicas: 8,
        ..VanishingConfig::default()
    };
    let pair = vanishing_discount(
        &model,
        &cfg,
        &benchmarks::stay(&model),
        &OptimizerConfig::default(),
        &sim(512, 4, 7),
    )
    .unwrap();
    for e in pair.phi_table.iter().filter(|e| e.sd == 0.0 && e.mean != 0.0) {
        let want = ou_cos_phi_dirac(e.mean);
        // β = 0.05 keeps a first-order bias of a few percent
        assert!(
            (e.extrapolated - want).abs() < 3.0 * e.phi.stderr + 0.01,
            "{}: {} vs {want}",
            e.id,
            e.extrapolated
        );
    }
    let origin = pair.phi_table.iter().find(|e| e.mean == 0.0 && e.sd == 0.0).unwrap();
    assert_eq!(origin.phi.value, 0.0);
    let l = pair.lipschitz();
    for e in &pair.phi_table {
        assert!(e.phi.value.abs() <= l * gaussian_w2(e.mean, e.sd, 0.0, 0.0) + 3.0 * e.phi.stderr);
    }
    let (l1, l2) = (pair.lipschitz_by_beta[0].1, pair.lipschitz_by_beta[1].1);
    assert!((l1 / l2 - 1.0).abs() < 0.25, "{l1} vs {l2}");
    let back = mfergodic::ergodic::ErgodicPair::from_json(&pair.to_json()).unwrap();
    assert_eq!(back, pair);
}
