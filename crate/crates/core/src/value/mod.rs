//! Monte Carlo values: discounted, finite horizon, and the dynamic
//! programming residual.
//!
//! Every estimate averages `replicas` independent particle systems. Replica
//! `r` draws its initial cloud and its noise from fixed sub-streams of the
//! run seed, so two runs with the same seed are coupled replica by replica
//! (common random numbers) whatever the policy or initial law.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::MeasureFunctional;
use crate::model::{dissipativity_margin, Dynamics};
use crate::particle::{
    derive_seed, run_path, sample_initial, step_count, steps_covering, Ensemble, InitialLaw, ParticleNoise, RngStream,
};
use crate::policy::{optimize_policy, EvalRequest, Method, OptimizerConfig, Policy};
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Discounted tails are cut where they fall below this fraction of
    /// `M_f / β`.
    pub truncation_tol: f64,
    /// Extra decay rate of the integrand assumed when truncating. Only
    /// meaningful for differences of coupled runs, whose integrand decays
    /// like `e^{-ηt}`; 0 for plain values.
    pub coupled_rate: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_particles: 4096,
            dt: 0.01,
            replicas: 16,
            seed: 0,
            truncation_tol: 1e-3,
            coupled_rate: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::config("n_particles", "need at least 2 particles"));
        }
        if self.replicas < 2 {
            return Err(Error::config("replicas", "need at least 2 replicas for a standard error"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::config("dt", "time step must be positive"));
        }
        if !(self.truncation_tol > 0.0 && self.truncation_tol < 1.0) {
            return Err(Error::config("truncation_tol", "must lie in (0, 1)"));
        }
        if !(self.coupled_rate >= 0.0) || !self.coupled_rate.is_finite() {
            return Err(Error::config("coupled_rate", "must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> SimConfig {
        SimConfig { seed, ..self.clone() }
    }

    /// Smaller budget for searches: `n_particles / 4` particles and
    /// `replicas / 4` replicas (at least 256 and 4).
    pub fn search_budget(&self) -> SimConfig {
        SimConfig {
            n_particles: (self.n_particles / 4).max(256).min(self.n_particles),
            replicas: (self.replicas / 4).max(4).min(self.replicas),
            ..self.clone()
        }
    }
}

/// Where replicas start.
#[derive(Debug, Clone, Copy)]
pub enum Start<'a> {
    /// Fresh draws from a law for every replica.
    Law(&'a InitialLaw),
    /// One given cloud per replica (restarts from terminal ensembles).
    Ensembles(&'a [Ensemble]),
}

const REPLICA_LABEL: u64 = 0x5EED;

/// `(initial draw, noise)` streams of replica `r`.
pub fn replica_streams(seed: u64, r: usize) -> (RngStream, RngStream) {
    let root = RngStream::new(seed, REPLICA_LABEL);
    (root.child(2 * r as u64), root.child(2 * r as u64 + 1))
}

/// Runs `job` on every replica in parallel; results keep replica order.
pub fn run_replicas<T, F>(start: Start<'_>, dim: usize, sim: &SimConfig, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, Ensemble, ParticleNoise) -> Result<T> + Sync,
{
    sim.validate()?;
    if let Start::Ensembles(list) = start {
        if list.len() != sim.replicas {
            return Err(Error::CountMismatch {
                left: sim.replicas,
                right: list.len(),
            });
        }
    }
    (0..sim.replicas)
        .into_par_iter()
        .map(|r| {
            let (init, noise) = replica_streams(sim.seed, r);
            let ens = match start {
                Start::Law(law) => {
                    law.validate(dim)?;
                    sample_initial(law, sim.n_particles, init)?
                }
                Start::Ensembles(list) => {
                    let mut e = list[r].clone();
                    if e.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            context: "restart ensemble".into(),
                            expected: dim,
                            got: e.dim(),
                        });
                    }
                    e.time = 0.0;
                    e
                }
            };
            let n = ens.len();
            job(r, ens, ParticleNoise::new(noise, n))
        })
        .collect()
}

/// `∫_0^{steps·dt} w(t) f̄(t) dt` by the trapezoid rule, and the terminal
/// ensemble.
pub fn weighted_reward_integral<M, W>(
    model: &M,
    policy: &Policy,
    mut ens: Ensemble,
    mut noise: ParticleNoise,
    steps: usize,
    dt: f64,
    weight: W,
) -> Result<(f64, Ensemble)>
where
    M: Dynamics + ?Sized,
    W: Fn(f64) -> f64,
{
    let mut acc = 0.0;
    run_path(model, policy, &mut ens, &mut noise, steps, dt, |p| {
        let end = p.step == 0 || p.step == steps;
        let w = if end { 0.5 } else { 1.0 };
        acc += w * weight(p.time) * p.mean_reward;
    })?;
    Ok((acc * dt, ens))
}

fn reward_bound<M: Dynamics + ?Sized>(model: &M) -> Result<f64> {
    Ok(model.constants()?.reward_bound)
}

/// Number of steps and resulting tail bound for the discounted horizon.
/// With a coupled rate `r` the bound is `M_f e^{-(β+r)T} / (β+r)`.
pub fn truncation<M: Dynamics + ?Sized>(model: &M, beta: f64, sim: &SimConfig) -> Result<(usize, f64, f64)> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::config("beta", "discount rate must be positive"));
    }
    let m_f = reward_bound(model)?;
    let rate = beta + sim.coupled_rate;
    // M_f e^{-rT} / r <= tol · M_f / r  <=>  T >= ln(1/tol) / r
    let t = (1.0 / sim.truncation_tol).ln() / rate;
    let steps = steps_covering(t, sim.dt).max(1);
    let horizon = steps as f64 * sim.dt;
    Ok((steps, horizon, m_f * (-rate * horizon).exp() / rate))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedEstimate {
    pub beta: f64,
    pub estimate: Estimate,
    pub replicas: Vec<f64>,
    pub truncation_t: f64,
    /// `M_f e^{-β T} / β`
    pub truncation_bound: f64,
}

/// `E ∫_0^∞ e^{-βt} f̄(t) dt` for a fixed policy, truncated at the horizon
/// where the tail bound drops below tolerance.
pub fn discounted_reward<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    start: Start<'_>,
    beta: f64,
    sim: &SimConfig,
) -> Result<DiscountedEstimate> {
    let (steps, horizon, bound) = truncation(model, beta, sim)?;
    let replicas = run_replicas(start, model.dim(), sim, |_, ens, noise| {
        weighted_reward_integral(model, policy, ens, noise, steps, sim.dt, |t| (-beta * t).exp()).map(|r| r.0)
    })?;
    Ok(DiscountedEstimate {
        beta,
        estimate: Estimate::from_replicas(&replicas),
        replicas,
        truncation_t: horizon,
        truncation_bound: bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountedValue {
    pub beta: f64,
    pub estimate: Estimate,
    pub replicas: Vec<f64>,
    pub truncation_t: f64,
    pub truncation_bound: f64,
    pub best_policy: Policy,
    pub method: Method,
    pub evaluations: usize,
}

fn warn_if_not_dissipative<M: Dynamics + ?Sized>(model: &M) {
    match dissipativity_margin(model) {
        Ok(r) if !r.passed => log::warn!("model `{}` fails the dissipativity check (eta = {:?})", model.name(), r.eta),
        Err(e) => log::warn!("model `{}`: {e}", model.name()),
        _ => {}
    }
}

/// Search or final budget for an optimizer request, reseeded from it.
pub fn derive_budget(search: &SimConfig, sim: &SimConfig, req: EvalRequest) -> SimConfig {
    let base = if req.final_eval { sim } else { search };
    base.with_seed(derive_seed(sim.seed, req.seed))
}

/// Best in-family discounted value from `start`.
#[allow(clippy::too_many_arguments)]
pub fn value_discounted<M: Dynamics + ?Sized>(
    model: &M,
    start: Start<'_>,
    beta: f64,
    template: &Policy,
    opt: &OptimizerConfig,
    search: &SimConfig,
    sim: &SimConfig,
) -> Result<DiscountedValue> {
    warn_if_not_dissipative(model);
    let (_, horizon, bound) = truncation(model, beta, sim)?;
    let final_run = std::sync::Mutex::new(None);
    let (policy, result) = optimize_policy(
        template,
        |p, req| {
            let est = discounted_reward(model, p, start, beta, &derive_budget(search, sim, req))?;
            let e = est.estimate;
            if req.final_eval {
                *final_run.lock().expect("no poisoning") = Some(est.replicas);
            }
            Ok(e)
        },
        opt,
    )?;
    let replicas = final_run.into_inner().expect("no poisoning").unwrap_or_default();
    Ok(DiscountedValue {
        beta,
        estimate: result.estimate,
        replicas,
        truncation_t: horizon,
        truncation_bound: bound,
        best_policy: policy,
        method: result.method,
        evaluations: result.evaluations,
    })
}

/// `E[∫_0^T f̄ dt + g(μ_T)]` per replica for a fixed policy.
pub fn finite_horizon_reward<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    start: Start<'_>,
    horizon: f64,
    terminal: &dyn MeasureFunctional,
    sim: &SimConfig,
) -> Result<Vec<f64>> {
    if !(horizon > 0.0) {
        return Err(Error::config("horizon", "horizon must be positive"));
    }
    let steps = step_count(horizon, sim.dt)?;
    run_replicas(start, model.dim(), sim, |_, ens, noise| {
        let (running, last) = weighted_reward_integral(model, policy, ens, noise, steps, sim.dt, |_| 1.0)?;
        let g = terminal.value(&last);
        if !g.is_finite() {
            return Err(Error::NonFinite("terminal reward".into()));
        }
        Ok(running + g)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteHorizonValue {
    pub horizon: f64,
    pub estimate: Estimate,
    pub replicas: Vec<f64>,
    pub best_policy: Policy,
    pub method: Method,
    pub evaluations: usize,
}

/// Constant-per-window template with `windows` equal windows on
/// `[0, horizon]`, starting at the first grid action.
pub fn windowed_template<M: Dynamics + ?Sized>(model: &M, horizon: f64, windows: usize) -> Result<Policy> {
    let a = model.action_set().grid().swap_remove(0);
    Policy::windowed_constant(model.action_set().clone(), horizon, windows, &a)
}

/// Best in-family value of `E[∫_0^T f dt + g(μ_T)]`.
#[allow(clippy::too_many_arguments)]
pub fn finite_horizon_value<M: Dynamics + ?Sized>(
    model: &M,
    start: Start<'_>,
    horizon: f64,
    terminal: &dyn MeasureFunctional,
    template: &Policy,
    opt: &OptimizerConfig,
    search: &SimConfig,
    sim: &SimConfig,
) -> Result<FiniteHorizonValue> {
    warn_if_not_dissipative(model);
    let final_run = std::sync::Mutex::new(None);
    let (policy, result) = optimize_policy(
        template,
        |p, req| {
            let reps = finite_horizon_reward(model, p, start, horizon, terminal, &derive_budget(search, sim, req))?;
            let e = Estimate::from_replicas(&reps);
            if req.final_eval {
                *final_run.lock().expect("no poisoning") = Some(reps);
            }
            Ok(e)
        },
        opt,
    )?;
    Ok(FiniteHorizonValue {
        horizon,
        estimate: result.estimate,
        replicas: final_run.into_inner().expect("no poisoning").unwrap_or_default(),
        best_policy: policy,
        method: result.method,
        evaluations: result.evaluations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppResidual {
    pub beta: f64,
    pub t_split: f64,
    /// `v̂^β(μ0)`
    pub lhs: Estimate,
    /// `sup { E ∫_0^s e^{-βt} f dt + e^{-βs} v̂^β(μ̂_s) }`
    pub rhs: Estimate,
    pub residual: Estimate,
    /// `|residual| / (M_f / β)`
    pub relative: f64,
    pub rhs_policy: Policy,
}

/// Discounted prefix on `[0, t_split]` followed by a restart of the
/// discounted problem from each replica's terminal cloud.
#[allow(clippy::too_many_arguments)]
pub fn dpp_residual<M: Dynamics + ?Sized>(
    model: &M,
    law: &InitialLaw,
    beta: f64,
    t_split: f64,
    template: &Policy,
    opt: &OptimizerConfig,
    search: &SimConfig,
    sim: &SimConfig,
) -> Result<DppResidual> {
    if !(t_split > 0.0) {
        return Err(Error::config("t_split", "split time must be positive"));
    }
    let steps = step_count(t_split, sim.dt)?;
    let lhs = value_discounted(model, Start::Law(law), beta, template, opt, search, sim)?;
    let decay = (-beta * t_split).exp();
    let (policy, result) = optimize_policy(
        template,
        |p, req| {
            let s = derive_budget(search, sim, req);
            let prefix = run_replicas(Start::Law(law), model.dim(), &s, |_, ens, noise| {
                weighted_reward_integral(model, p, ens, noise, steps, s.dt, |t| (-beta * t).exp())
            })?;
            let (values, clouds): (Vec<f64>, Vec<Ensemble>) = prefix.into_iter().unzip();
            let inner_sim = s.with_seed(derive_seed(s.seed, 0xDDD));
            let inner_opt = OptimizerConfig {
                seed: derive_seed(opt.seed, 0xDDD),
                ..opt.clone()
            };
            let inner = value_discounted(
                model,
                Start::Ensembles(&clouds),
                beta,
                template,
                &inner_opt,
                &inner_sim,
                &inner_sim,
            )?;
            let total: Vec<f64> = values.iter().zip(&inner.replicas).map(|(a, b)| a + decay * b).collect();
            Ok(Estimate::from_replicas(&total))
        },
        opt,
    )?;
    let rhs = result.estimate;
    let residual = lhs.estimate.minus(&rhs);
    let m_f = reward_bound(model)?;
    let scale = if m_f > 0.0 { m_f / beta } else { 1.0 };
    Ok(DppResidual {
        beta,
        t_split,
        lhs: lhs.estimate,
        rhs,
        residual,
        relative: residual.value.abs() / scale,
        rhs_policy: policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::functional::TerminalReward;

    fn small() -> SimConfig {
        SimConfig {
            n_particles: 256,
            replicas: 4,
            ..SimConfig::default()
        }
    }

    #[test]
    fn constant_reward_discounts_exactly() {
        let m = benchmarks::const_reward();
        let p = benchmarks::stay(&m);
        let law = InitialLaw::dirac(0.0);
        let d = discounted_reward(&m, &p, Start::Law(&law), 0.5, &small()).unwrap();
        assert!((d.estimate.value - 2.0).abs() <= d.truncation_bound + 1e-5);
        assert_eq!(d.estimate.stderr, 0.0);
        assert!(d.truncation_bound <= 1e-3 * 2.0 * (1.0 + 1e-9));
    }

    #[test]
    fn rejects_nonpositive_beta() {
        let m = benchmarks::const_reward();
        let law = InitialLaw::dirac(0.0);
        let r = discounted_reward(&m, &benchmarks::stay(&m), Start::Law(&law), 0.0, &small());
        assert!(matches!(r, Err(Error::Config { .. })));
    }

    #[test]
    fn needs_two_replicas() {
        let s = SimConfig {
            replicas: 1,
            ..small()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn finite_horizon_constant_reward() {
        let m = benchmarks::const_reward();
        let law = InitialLaw::dirac(0.0);
        let t = windowed_template(&m, 3.0, 8).unwrap();
        let v = finite_horizon_value(
            &m,
            Start::Law(&law),
            3.0,
            &TerminalReward::Zero,
            &t,
            &OptimizerConfig::default(),
            &small(),
            &small(),
        )
        .unwrap();
        assert!((v.estimate.value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_value_equals_fixed_policy() {
        let m = benchmarks::ou_cos();
        let law = InitialLaw::gaussian(0.0, 1.0);
        let sim = small();
        let v = value_discounted(
            &m,
            Start::Law(&law),
            1.0,
            &benchmarks::stay(&m),
            &OptimizerConfig::default(),
            &sim.search_budget(),
            &sim,
        )
        .unwrap();
        let seed = derive_seed(sim.seed, derive_seed(0, 0xF1_4A1));
        let d = discounted_reward(&m, &benchmarks::stay(&m), Start::Law(&law), 1.0, &sim.with_seed(seed)).unwrap();
        assert_eq!(v.estimate, d.estimate);
        assert_eq!(v.method, Method::Enumeration);
    }

    #[test]
    fn restart_from_clouds_checks_count() {
        let m = benchmarks::ou_cos();
        let clouds = vec![Ensemble::from_scalars(&[0.0, 1.0]).unwrap(); 3];
        let r = discounted_reward(&m, &benchmarks::stay(&m), Start::Ensembles(&clouds), 1.0, &small());
        assert!(matches!(r, Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn constant_reward_dpp_is_exact() {
        let m = benchmarks::const_reward();
        let law = InitialLaw::dirac(0.0);
        let s = small();
        let r = dpp_residual(&m, &law, 1.0, 1.0, &benchmarks::stay(&m), &OptimizerConfig::default(), &s, &s).unwrap();
        // both sides carry their own truncation error, each below 1e-3 / β
        assert!(r.residual.value.abs() < 2e-3, "{:?}", r.residual);
    }
}
