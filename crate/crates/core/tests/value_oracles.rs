use mfergodic::benchmarks;
use mfergodic::functional::TerminalReward;
use mfergodic::model::{ActionSet, Reward};
use mfergodic::particle::InitialLaw;
use mfergodic::value::{
    discounted_reward, dpp_residual, finite_horizon_value, value_discounted, windowed_template, SimConfig, Start,
};
use mfergodic::{AffineModel, Dynamics, OptimizerConfig};

fn sim(n: usize, r: usize, seed: u64) -> SimConfig {
    SimConfig {
        n_particles: n,
        replicas: r,
        seed,
        ..SimConfig::default()
    }
}

/// `∫ f dN(m, v)` by a fine midpoint rule over ±12 sd.
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

/// Stationary variance of the Euler chain `x' = (1 - θ dt) x + σ √dt ξ`.
fn euler_var(theta: f64, sigma: f64, dt: f64) -> f64 {
    sigma * sigma / (2.0 * theta - theta * theta * dt)
}

#[test]
fn stationary_cosine_discounted_reward() {
    let model = benchmarks::ou_cos();
    let s = sim(2048, 16, 11);
    let law = InitialLaw::gaussian(0.0, euler_var(1.0, 2f64.sqrt(), s.dt));
    let beta = 0.5;
    let est = discounted_reward(&model, &benchmarks::stay(&model), Start::Law(&law), beta, &s).unwrap();
    let scaled = est.estimate.scaled(beta);
    // β ∫ e^{-βt} dt over the truncated horizon
    let mass = 1.0 - (-beta * est.truncation_t).exp();
    let oracle = mass * (-0.5 * euler_var(1.0, 2f64.sqrt(), s.dt)).exp();
    assert!(
        (scaled.value - oracle).abs() < 3.0 * scaled.stderr + 1e-4,
        "{scaled} vs {oracle}"
    );
    // the plain Gaussian constant is within a percent
    assert!((scaled.value / (-0.5f64).exp() - 1.0).abs() < 0.01);
}

#[test]
fn best_constant_for_tanh_is_one() {
    let model = benchmarks::tanh_drive();
    let s = sim(512, 8, 12);
    let law = InitialLaw::dirac(0.0);
    let v = value_discounted(
        &model,
        Start::Law(&law),
        0.5,
        &benchmarks::stay(&model),
        &OptimizerConfig::default(),
        &s.search_budget(),
        &s,
    )
    .unwrap();
    assert_eq!(v.best_policy.params(), &[1.0]);
}

#[test]
fn scaled_values_respect_reward_bound() {
    let opt = OptimizerConfig::default();
    let s = sim(256, 4, 13);
    let law = InitialLaw::dirac(0.0);
    for name in ["ou_cos", "tanh_drive", "const_reward", "ou_clipped_quadratic"] {
        let model = benchmarks::by_name(name).unwrap();
        let m_f = model.constants().unwrap().reward_bound;
        let v = value_discounted(&model, Start::Law(&law), 1.0, &benchmarks::stay(&model), &opt, &s, &s).unwrap();
        assert!(v.estimate.value <= m_f + 3.0 * v.estimate.stderr, "{name}: {}", v.estimate);
    }
}

#[test]
fn long_finite_horizon_approaches_tanh_lambda() {
    let model = benchmarks::tanh_drive();
    let s = sim(512, 8, 14);
    let t = 40.0;
    let law = InitialLaw::dirac(0.0);
    let v = finite_horizon_value(
        &model,
        Start::Law(&law),
        t,
        &TerminalReward::Zero,
        &windowed_template(&model, t, 4).unwrap(),
        &OptimizerConfig::default(),
        &s.search_budget(),
        &s,
    )
    .unwrap();
    let lambda = gauss_expect(f64::tanh, 1.0, euler_var(1.0, 1.0, s.dt));
    let rel = (v.estimate.value / t - lambda).abs() / lambda;
    assert!(rel < 0.05, "v/T = {}, lambda = {lambda}", v.estimate.value / t);
    assert!(v.best_policy.params().iter().all(|a| *a == 1.0));
}

fn steering_model() -> AffineModel {
    AffineModel::new(benchmarks::scalar_spec(
        "steer",
        -1.0,
        0.0,
        1.0,
        1.0,
        Reward::constant(0.0),
        ActionSet::finite_scalars(&[-1.0, 0.0, 1.0]),
    ))
    .unwrap()
}

#[test]
fn mean_penalty_steers_toward_zero() {
    let model = steering_model();
    let s = sim(512, 8, 15);
    let penalty = TerminalReward::AbsMeanPenalty { weight: 1.0 };
    let template = windowed_template(&model, 1.0, 2).unwrap();
    for (start, want) in [(2.0, -1.0), (-2.0, 1.0)] {
        let law = InitialLaw::dirac(start);
        let v = finite_horizon_value(
            &model,
            Start::Law(&law),
            1.0,
            &penalty,
            &template,
            &OptimizerConfig::default(),
            &s.search_budget(),
            &s,
        )
        .unwrap();
        assert_eq!(*v.best_policy.params().last().unwrap(), want, "start {start}");
    }
}

#[test]
fn dpp_holds_for_fixed_policy() {
    let model = benchmarks::ou_cos();
    let s = sim(512, 8, 16);
    let law = InitialLaw::gaussian(1.0, 0.5);
    let r = dpp_residual(
        &model,
        &law,
        0.5,
        2.0,
        &benchmarks::stay(&model),
        &OptimizerConfig::default(),
        &s.search_budget(),
        &s,
    )
    .unwrap();
    assert!(r.residual.value.abs() <= 3.0 * r.residual.stderr + 1e-3, "{:?}", r.residual);
}

#[test]
fn dpp_on_tanh_by_enumeration() {
    let model = benchmarks::tanh_drive();
    let s = sim(512, 8, 17);
    let law = InitialLaw::dirac(0.0);
    let r = dpp_residual(
        &model,
        &law,
        0.5,
        1.0,
        &benchmarks::stay(&model),
        &OptimizerConfig::default(),
        &s.search_budget(),
        &s,
    )
    .unwrap();
    assert!(r.relative <= 0.05, "{r:?}");
}
