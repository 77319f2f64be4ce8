//! Explicit Euler–Maruyama for the interacting particle system.
//!
//! One step freezes the empirical measure at the start of the step:
//!
//! ```text
//! μ̂   = (1/N) Σ_j δ_{x_j}
//! a_i = policy(t, x_i, summary(μ̂))
//! x_i ← x_i + b(x_i, μ̂, a_i) dt + σ(x_i, μ̂, a_i) √dt Z_i
//! ```
//!
//! `Z_i` comes from particle `i`'s own stream, which keeps runs bitwise
//! reproducible regardless of how particles are split across threads.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::measure::{Ensemble, MeasureSummary};
use super::rng::{ParticleNoise, RngStream};
use super::wasserstein::w2_distance;
use crate::error::{Error, Result};
use crate::model::Dynamics;
use crate::policy::Policy;

/// Positions beyond this magnitude count as a blow-up.
pub const BLOW_UP_THRESHOLD: f64 = 1e8;

/// Particle counts at or above this are stepped in parallel.
const PARALLEL_PARTICLES: usize = 8192;

/// Number of Euler steps covering `[0, horizon]`; `horizon` must be a
/// multiple of `dt` up to rounding.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::config("dt", "time step must be positive"));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::config("horizon", "horizon must be finite and >= 0"));
    }
    let steps = (horizon / dt).round();
    if (steps * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
        return Err(Error::config(
            "dt",
            format!("dt = {dt} does not divide the horizon {horizon}"),
        ));
    }
    Ok(steps as usize)
}

/// Rounds `horizon` up to a whole number of steps.
pub fn steps_covering(horizon: f64, dt: f64) -> usize {
    ((horizon / dt) - 1e-9).ceil().max(0.0) as usize
}

/// One grid time of a simulated path.
pub struct PathPoint<'a> {
    pub step: usize,
    pub time: f64,
    pub ensemble: &'a Ensemble,
    pub summary: &'a MeasureSummary,
    /// Actions used from this time on, row-major `N x k`.
    pub actions: &'a [f64],
    /// `(1/N) Σ_i f(x_i, μ̂, a_i)`
    pub mean_reward: f64,
}

/// Reusable buffers for stepping one ensemble.
struct Workspace {
    actions: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, k: usize) -> Self {
        Workspace {
            actions: vec![0.0; n * k],
        }
    }
}

/// Fills `actions` for every particle and returns the mean reward.
fn evaluate_controls<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    ens: &Ensemble,
    summary: &MeasureSummary,
    actions: &mut [f64],
) -> f64 {
    let k = policy.action_dim();
    let n = ens.len();
    let t = ens.time;
    if policy.is_state_free(t) {
        policy.evaluate(t, ens.particle(0), summary, &mut actions[..k]);
        let (first, rest) = actions.split_at_mut(k);
        for chunk in rest.chunks_exact_mut(k) {
            chunk.copy_from_slice(first);
        }
    } else {
        for i in 0..n {
            policy.evaluate(t, ens.particle(i), summary, &mut actions[i * k..(i + 1) * k]);
        }
    }
    let total: f64 = (0..n)
        .map(|i| model.reward(ens.particle(i), summary, &actions[i * k..(i + 1) * k]))
        .sum();
    total / n as f64
}

#[inline]
fn move_particle<M: Dynamics + ?Sized>(
    model: &M,
    x: &mut [f64],
    summary: &MeasureSummary,
    a: &[f64],
    dt: f64,
    sqrt_dt: f64,
    rng: &mut ChaCha8Rng,
) {
    let d = x.len();
    if d == 1 {
        let mut b = [0.0];
        let mut s = [0.0];
        model.drift(x, summary, a, &mut b);
        model.diffusion(x, summary, a, &mut s);
        let z: f64 = StandardNormal.sample(rng);
        x[0] += b[0] * dt + s[0] * sqrt_dt * z;
        return;
    }
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * d];
    model.drift(x, summary, a, &mut b);
    model.diffusion(x, summary, a, &mut s);
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    for r in 0..d {
        let noise: f64 = (0..d).map(|c| s[r * d + c] * z[c]).sum();
        x[r] += b[r] * dt + noise * sqrt_dt;
    }
}

fn advance<M: Dynamics + ?Sized>(
    model: &M,
    ens: &mut Ensemble,
    summary: &MeasureSummary,
    actions: &[f64],
    k: usize,
    dt: f64,
    noise: &mut ParticleNoise,
) -> Result<()> {
    let d = ens.dim();
    let t = ens.time;
    let sqrt_dt = dt.sqrt();
    let positions = ens.positions_mut();
    let rngs = noise.generators_mut();
    if positions.len() / d >= PARALLEL_PARTICLES {
        positions
            .par_chunks_mut(d)
            .zip(rngs.par_iter_mut())
            .zip(actions.par_chunks(k))
            .for_each(|((x, rng), a)| move_particle(model, x, summary, a, dt, sqrt_dt, rng));
    } else {
        for ((x, rng), a) in positions.chunks_mut(d).zip(rngs.iter_mut()).zip(actions.chunks(k)) {
            move_particle(model, x, summary, a, dt, sqrt_dt, rng);
        }
    }
    if let Some(idx) = positions
        .iter()
        .position(|v| !v.is_finite() || v.abs() > BLOW_UP_THRESHOLD)
    {
        return Err(Error::BlowUp {
            particle: idx / d,
            time: t + dt,
            value: positions[idx],
        });
    }
    Ok(())
}

fn check_compatible<M: Dynamics + ?Sized>(model: &M, policy: &Policy, ens: &Ensemble, noise: &ParticleNoise) -> Result<()> {
    if ens.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "ensemble vs model".into(),
            expected: model.dim(),
            got: ens.dim(),
        });
    }
    if policy.action_set() != model.action_set() {
        return Err(Error::config("policy.action_set", "policy action set differs from the model's"));
    }
    if noise.len() != ens.len() {
        return Err(Error::CountMismatch {
            left: ens.len(),
            right: noise.len(),
        });
    }
    Ok(())
}

/// Advances `ens` by one Euler–Maruyama step of size `dt`.
pub fn step_euler<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    ens: &mut Ensemble,
    dt: f64,
    noise: &mut ParticleNoise,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::config("dt", "time step must be positive"));
    }
    check_compatible(model, policy, ens, noise)?;
    let k = policy.action_dim();
    let summary = ens.summary();
    let mut ws = Workspace::new(ens.len(), k);
    evaluate_controls(model, policy, ens, &summary, &mut ws.actions);
    advance(model, ens, &summary, &ws.actions, k, dt, noise)?;
    ens.time += dt;
    Ok(())
}

/// Runs `steps` Euler steps, calling `visit` at each of the `steps + 1`
/// grid times (after the controls for that time are fixed).
pub fn run_path<M, F>(
    model: &M,
    policy: &Policy,
    ens: &mut Ensemble,
    noise: &mut ParticleNoise,
    steps: usize,
    dt: f64,
    mut visit: F,
) -> Result<()>
where
    M: Dynamics + ?Sized,
    F: FnMut(&PathPoint<'_>),
{
    check_compatible(model, policy, ens, noise)?;
    let k = policy.action_dim();
    let t0 = ens.time;
    let mut ws = Workspace::new(ens.len(), k);
    for step in 0..=steps {
        let summary = ens.summary();
        let mean_reward = evaluate_controls(model, policy, ens, &summary, &mut ws.actions);
        visit(&PathPoint {
            step,
            time: ens.time,
            ensemble: ens,
            summary: &summary,
            actions: &ws.actions,
            mean_reward,
        });
        if step < steps {
            advance(model, ens, &summary, &ws.actions, k, dt, noise)?;
            ens.time = t0 + (step + 1) as f64 * dt;
        }
    }
    Ok(())
}

pub trait Observer {
    fn observe(&mut self, point: &PathPoint<'_>);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub w2_to_ref: Option<f64>,
    pub running_reward: f64,
}

/// Records moments, distance to a reference cloud and the running reward
/// integral `∫_0^t f̄ ds` (trapezoid on the step grid).
#[derive(Debug, Clone)]
pub struct TrajectoryRecorder {
    stride: usize,
    reference: Option<Ensemble>,
    running: f64,
    last: Option<(f64, f64)>,
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryRecorder {
    pub fn new(stride: usize, reference: Option<Ensemble>) -> Self {
        TrajectoryRecorder {
            stride: stride.max(1),
            reference,
            running: 0.0,
            last: None,
            rows: Vec::new(),
        }
    }

    pub fn running_reward(&self) -> f64 {
        self.running
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,mean,second_moment,w2_to_ref,running_reward\n");
        for r in &self.rows {
            let w2 = r.w2_to_ref.map_or(String::new(), |v| format!("{v}"));
            s.push_str(&format!("{},{},{},{},{}\n", r.time, r.mean, r.second_moment, w2, r.running_reward));
        }
        s
    }
}

impl Observer for TrajectoryRecorder {
    fn observe(&mut self, p: &PathPoint<'_>) {
        if let Some((t, f)) = self.last {
            self.running += 0.5 * (p.time - t) * (f + p.mean_reward);
        }
        self.last = Some((p.time, p.mean_reward));
        if p.step % self.stride == 0 {
            let w2_to_ref = self.reference.as_ref().and_then(|r| {
                w2_distance(p.ensemble.measure(), r.measure()).ok().map(|w| w.value)
            });
            self.rows.push(TrajectoryRow {
                time: p.time,
                mean: p.summary.mean[0],
                second_moment: p.summary.second_moment,
                w2_to_ref,
                running_reward: self.running,
            });
        }
    }
}

/// Simulates `ens0` over `[0, horizon]` with noise from `stream` and feeds
/// every grid time to the observers. Returns the terminal ensemble.
pub fn simulate<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    ens0: &Ensemble,
    horizon: f64,
    dt: f64,
    stream: RngStream,
    observers: &mut [&mut dyn Observer],
) -> Result<Ensemble> {
    if !(horizon > 0.0) {
        return Err(Error::config("horizon", "horizon must be positive"));
    }
    let steps = step_count(horizon, dt)?;
    let mut ens = ens0.clone();
    let mut noise = ParticleNoise::new(stream, ens.len());
    run_path(model, policy, &mut ens, &mut noise, steps, dt, |p| {
        for o in observers.iter_mut() {
            o.observe(p);
        }
    })?;
    Ok(ens)
}
