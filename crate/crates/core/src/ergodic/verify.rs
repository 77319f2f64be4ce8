//! Closed-loop verification of a feedback against the ergodic pair.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::MeasureFunctional;
use crate::model::Dynamics;
use crate::particle::{run_path, step_count};
use crate::policy::Policy;
use crate::stats::{linear_fit, Estimate};
use crate::value::{run_replicas, SimConfig, Start};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Time average of `f̄` over `[burn_in, T]`.
    pub long_run: Estimate,
    /// Slope of `t -> φ̂(μ̂_t) + ∫_0^t f̄ ds` over `[burn_in, T]`.
    pub slope: Estimate,
    pub lambda: Estimate,
    /// `slope - λ̂`; close to 0 for an optimal feedback.
    pub drift: Estimate,
    pub horizon: f64,
    pub burn_in: f64,
}

impl VerificationReport {
    pub fn drift_z(&self) -> f64 {
        self.drift.z_score(&Estimate::exact(0.0))
    }
}

/// Runs `feedback` in closed loop and reports the long-run average and the
/// drift of the compensated process `φ̂(μ̂_t) + ∫_0^t f̄ - λ̂ t`. The slope
/// is fit per replica by least squares on points `stride` steps apart.
#[allow(clippy::too_many_arguments)]
pub fn verification_run<M: Dynamics + ?Sized>(
    model: &M,
    feedback: &Policy,
    start: Start<'_>,
    phi: &dyn MeasureFunctional,
    lambda: Estimate,
    horizon: f64,
    burn_in: f64,
    stride: usize,
    sim: &SimConfig,
) -> Result<VerificationReport> {
    if !(burn_in >= 0.0 && burn_in < horizon) {
        return Err(Error::config("burn_in", "need 0 <= burn_in < T"));
    }
    let steps = step_count(horizon, sim.dt)?;
    let first = step_count(burn_in, sim.dt)?;
    let stride = stride.max(1);
    let dt = sim.dt;
    let per_replica = run_replicas(start, model.dim(), sim, |_, mut ens, mut noise| {
        let mut running = 0.0;
        let mut last = None;
        let mut avg = 0.0;
        let mut ts = Vec::new();
        let mut gs = Vec::new();
        run_path(model, feedback, &mut ens, &mut noise, steps, dt, |p| {
            if let Some(prev) = last {
                running += 0.5 * dt * (prev + p.mean_reward);
            }
            last = Some(p.mean_reward);
            if p.step >= first {
                let w = if p.step == first || p.step == steps { 0.5 } else { 1.0 };
                avg += w * p.mean_reward;
                if (p.step - first) % stride == 0 || p.step == steps {
                    ts.push(p.time);
                    gs.push(phi.value(p.ensemble) + running);
                }
            }
        })?;
        let fit = linear_fit(&ts, &gs, &vec![0.0; ts.len()]).ok_or_else(|| Error::NonFinite("drift slope fit".into()))?;
        Ok((avg / (steps - first) as f64, fit.slope))
    })?;
    let (avgs, slopes): (Vec<f64>, Vec<f64>) = per_replica.into_iter().unzip();
    let slope = Estimate::from_replicas(&slopes);
    Ok(VerificationReport {
        long_run: Estimate::from_replicas(&avgs),
        slope,
        lambda,
        drift: slope.minus(&lambda),
        horizon,
        burn_in,
    })
}
