//! Synchronous coupling and moment curves.

use serde::{Deserialize, Serialize};

use super::measure::Ensemble;
use super::rng::{ParticleNoise, RngStream};
use super::sim::{step_count, step_euler};
use crate::error::{Error, Result};
use crate::model::Dynamics;
use crate::policy::Policy;
use crate::stats::linear_fit;

/// Mean-square gap between two synchronously coupled ensembles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub times: Vec<f64>,
    pub mean_sq_gap: Vec<f64>,
    /// `gap(0) e^{-2ηt}`
    pub reference: Vec<f64>,
    pub eta: f64,
}

impl GapCurve {
    /// Largest `gap / reference` over times with a positive reference.
    pub fn worst_ratio(&self) -> f64 {
        self.mean_sq_gap
            .iter()
            .zip(&self.reference)
            .filter(|(_, r)| **r > 0.0)
            .map(|(g, r)| g / r)
            .fold(0.0, f64::max)
    }

    pub fn within_envelope(&self, slack: f64) -> bool {
        self.mean_sq_gap
            .iter()
            .zip(&self.reference)
            .all(|(g, r)| *g <= r * (1.0 + slack))
    }

    /// Exponential decay rate from a log-linear fit over `[t0, t1]`.
    pub fn decay_rate(&self, t0: f64, t1: f64) -> Option<f64> {
        let (ts, ls): (Vec<f64>, Vec<f64>) = self
            .times
            .iter()
            .zip(&self.mean_sq_gap)
            .filter(|(t, g)| **t >= t0 && **t <= t1 && **g > 0.0)
            .map(|(t, g)| (*t, g.ln()))
            .unzip();
        let zeros = vec![0.0; ts.len()];
        linear_fit(&ts, &ls, &zeros).map(|f| -f.slope)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,gap,envelope\n");
        for ((t, g), r) in self.times.iter().zip(&self.mean_sq_gap).zip(&self.reference) {
            s.push_str(&format!("{t},{g},{r}\n"));
        }
        s
    }
}

fn mean_sq_gap(a: &Ensemble, b: &Ensemble) -> f64 {
    let n = a.len() as f64;
    a.positions()
        .iter()
        .zip(b.positions())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Runs both ensembles with particle `i` of each reading the same noise
/// stream. Each system evaluates the policy on its own state and measure.
pub fn synchronous_coupling_gap<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    ens_a0: &Ensemble,
    ens_b0: &Ensemble,
    horizon: f64,
    dt: f64,
    stream: RngStream,
    eta: f64,
) -> Result<GapCurve> {
    if ens_a0.len() != ens_b0.len() {
        return Err(Error::CountMismatch {
            left: ens_a0.len(),
            right: ens_b0.len(),
        });
    }
    let steps = step_count(horizon, dt)?;
    let mut a = ens_a0.clone();
    let mut b = ens_b0.clone();
    a.time = 0.0;
    b.time = 0.0;
    let mut na = ParticleNoise::new(stream, a.len());
    let mut nb = ParticleNoise::new(stream, b.len());
    let g0 = mean_sq_gap(&a, &b);
    let mut curve = GapCurve {
        times: vec![0.0],
        mean_sq_gap: vec![g0],
        reference: vec![g0],
        eta,
    };
    for k in 1..=steps {
        step_euler(model, policy, &mut a, dt, &mut na)?;
        step_euler(model, policy, &mut b, dt, &mut nb)?;
        let t = k as f64 * dt;
        curve.times.push(t);
        curve.mean_sq_gap.push(mean_sq_gap(&a, &b));
        curve.reference.push(g0 * (-2.0 * eta * t).exp());
    }
    Ok(curve)
}

/// `t ↦ mean |X_t|²` against `E|X_0|² e^{-ηt} + K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve {
    pub times: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub envelope: Vec<f64>,
    pub slack: f64,
    /// Times where `second_moment > envelope (1 + slack)`.
    pub breaches: Vec<f64>,
}

impl MomentCurve {
    pub fn passed(&self) -> bool {
        self.breaches.is_empty()
    }

    /// Largest `second_moment / envelope`.
    pub fn worst_ratio(&self) -> f64 {
        self.second_moment
            .iter()
            .zip(&self.envelope)
            .map(|(m, e)| m / e)
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,second_moment,envelope\n");
        for ((t, m), e) in self.times.iter().zip(&self.second_moment).zip(&self.envelope) {
            s.push_str(&format!("{t},{m},{}\n", e * (1.0 + self.slack)));
        }
        s
    }
}

pub fn second_moment_curve<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    ens0: &Ensemble,
    horizon: f64,
    dt: f64,
    stream: RngStream,
    eta: f64,
    k_ceiling: f64,
    slack: f64,
) -> Result<MomentCurve> {
    let steps = step_count(horizon, dt)?;
    let mut e = ens0.clone();
    e.time = 0.0;
    let mut noise = ParticleNoise::new(stream, e.len());
    let m0 = e.summary().second_moment;
    let mut curve = MomentCurve {
        times: Vec::with_capacity(steps + 1),
        second_moment: Vec::with_capacity(steps + 1),
        envelope: Vec::with_capacity(steps + 1),
        slack,
        breaches: Vec::new(),
    };
    for k in 0..=steps {
        if k > 0 {
            step_euler(model, policy, &mut e, dt, &mut noise)?;
        }
        let t = k as f64 * dt;
        let m2 = e.summary().second_moment;
        let env = m0 * (-eta * t).exp() + k_ceiling;
        if m2 > env * (1.0 + slack) {
            curve.breaches.push(t);
        }
        curve.times.push(t);
        curve.second_moment.push(m2);
        curve.envelope.push(env);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::model::dissipativity_margin;
    use crate::particle::{sample_initial, InitialLaw};

    #[test]
    fn identical_systems_have_zero_gap() {
        let m = benchmarks::mf_ou_cos(1.0);
        let p = benchmarks::stay(&m);
        let e = sample_initial(&InitialLaw::gaussian(0.0, 1.0), 128, RngStream::root(1)).unwrap();
        let c = synchronous_coupling_gap(&m, &p, &e, &e, 1.0, 0.01, RngStream::root(2), 1.0).unwrap();
        assert!(c.mean_sq_gap.iter().all(|g| *g == 0.0));
        assert!(c.to_csv().starts_with("time,gap,envelope\n"));
    }

    #[test]
    fn pure_ou_gap_decays_at_twice_eta() {
        let m = benchmarks::pure_ou();
        let p = benchmarks::stay(&m);
        let a = sample_initial(&InitialLaw::gaussian(0.0, 1.0), 256, RngStream::root(3)).unwrap();
        let b = Ensemble::new(a.positions().iter().map(|x| x + 1.0).collect(), 1, 0.0).unwrap();
        let c = synchronous_coupling_gap(&m, &p, &a, &b, 2.0, 0.01, RngStream::root(4), 2.0).unwrap();
        let rate = c.decay_rate(0.0, 2.0).unwrap();
        assert!(rate >= 2.0 * 2.0 * 0.85, "rate {rate}");
        // independent oracle: the Euler gap is (1 - 2 dt)^{2k} exactly
        let last = *c.mean_sq_gap.last().unwrap();
        assert!((last - 0.98f64.powi(400)).abs() < 1e-12);
    }

    #[test]
    fn mean_field_ou_gap_respects_envelope() {
        let m = benchmarks::mf_ou_cos(1.0);
        let p = benchmarks::stay(&m);
        let a = sample_initial(&InitialLaw::gaussian(0.0, 1.0), 512, RngStream::root(5)).unwrap();
        let b = Ensemble::new(a.positions().iter().map(|x| x + 1.0).collect(), 1, 0.0).unwrap();
        let c = synchronous_coupling_gap(&m, &p, &a, &b, 2.0, 0.01, RngStream::root(6), 1.0).unwrap();
        let at2 = *c.mean_sq_gap.last().unwrap();
        assert!(at2 <= (-4.0f64).exp() * 1.2, "gap {at2}");
        assert!(c.within_envelope(0.2));
    }

    #[test]
    fn deterministic_moment_curve_is_exponential() {
        let m = benchmarks::deterministic_decay(-2.0);
        let p = benchmarks::stay(&m);
        let e = Ensemble::from_scalars(&[1.0, 1.0]).unwrap();
        let c = second_moment_curve(&m, &p, &e, 1.0, 0.001, RngStream::root(0), 2.0, 0.0, 0.1).unwrap();
        for (t, v) in c.times.iter().zip(&c.second_moment) {
            assert!((v - (-4.0 * t).exp()).abs() < 5e-3, "t={t}");
        }
    }

    #[test]
    fn stationary_ou_stays_stationary() {
        let m = benchmarks::ou_cos();
        let p = benchmarks::stay(&m);
        let e = sample_initial(&InitialLaw::gaussian(0.0, 1.0), 8192, RngStream::root(8)).unwrap();
        let c = second_moment_curve(&m, &p, &e, 3.0, 0.01, RngStream::root(9), 1.0, 2.0, 0.0).unwrap();
        assert!(c.second_moment.iter().all(|v| (v - 1.0).abs() < 0.1));
    }

    #[test]
    fn point_mass_start_stays_below_ceiling() {
        let m = benchmarks::mf_ou_cos(1.0);
        let r = dissipativity_margin(&m).unwrap();
        let k = r.k_ceiling.unwrap();
        let e = sample_initial(&InitialLaw::dirac(0.0), 512, RngStream::root(1)).unwrap();
        let c = second_moment_curve(&m, &benchmarks::stay(&m), &e, 5.0, 0.01, RngStream::root(2), r.eta.unwrap(), k, 0.25)
            .unwrap();
        assert!(c.passed());
        assert!(c.second_moment.iter().all(|v| *v <= k * 1.25));
    }
}
