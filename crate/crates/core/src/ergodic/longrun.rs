//! Long-run averages and the relations tying them to the ergodic pair.

use serde::{Deserialize, Serialize};

use super::pair::{discount_extrapolation, ErgodicPair};
use crate::error::{Error, Result};
use crate::functional::TerminalReward;
use crate::model::{dissipativity_margin, Dynamics};
use crate::particle::{run_path, step_count, InitialLaw};
use crate::policy::{optimize_policy, OptimizerConfig, Policy};
use crate::stats::{linear_fit, Estimate};
use crate::value::{derive_budget, finite_horizon_value, run_replicas, windowed_template, SimConfig, Start};

/// `(T, burn-in) = (50/η, 10/η)` rounded up to whole steps.
pub fn default_window<M: Dynamics + ?Sized>(model: &M, dt: f64) -> Result<(f64, f64)> {
    let eta = dissipativity_margin(model)?.eta_or_err()?;
    if !(eta > 0.0) {
        return Err(Error::config("eta", "long-run defaults need a positive dissipativity margin"));
    }
    let round = |t: f64| (t / dt).ceil() * dt;
    Ok((round(50.0 / eta), round(10.0 / eta)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongRunAverage {
    pub estimate: Estimate,
    pub replicas: Vec<f64>,
    pub horizon: f64,
    pub burn_in: f64,
}

/// `(1/(T - b)) ∫_b^T f̄ dt` averaged over replicas.
pub fn long_run_average<M: Dynamics + ?Sized>(
    model: &M,
    policy: &Policy,
    start: Start<'_>,
    horizon: f64,
    burn_in: f64,
    sim: &SimConfig,
) -> Result<LongRunAverage> {
    if !(burn_in >= 0.0 && burn_in < horizon) {
        return Err(Error::config("burn_in", "need 0 <= burn_in < T"));
    }
    let steps = step_count(horizon, sim.dt)?;
    let first = step_count(burn_in, sim.dt)?;
    let replicas = run_replicas(start, model.dim(), sim, |_, mut ens, mut noise| {
        let mut acc = 0.0;
        run_path(model, policy, &mut ens, &mut noise, steps, sim.dt, |p| {
            if p.step >= first {
                let w = if p.step == first || p.step == steps { 0.5 } else { 1.0 };
                acc += w * p.mean_reward;
            }
        })?;
        Ok(acc / (steps - first) as f64)
    })?;
    Ok(LongRunAverage {
        estimate: Estimate::from_replicas(&replicas),
        replicas,
        horizon,
        burn_in,
    })
}

/// Best long-run average over `template`'s family.
pub fn sup_long_run_average<M: Dynamics + ?Sized>(
    model: &M,
    start: Start<'_>,
    horizon: f64,
    burn_in: f64,
    template: &Policy,
    opt: &OptimizerConfig,
    search: &SimConfig,
    sim: &SimConfig,
) -> Result<(Policy, LongRunAverage)> {
    let final_run = std::sync::Mutex::new(None);
    let (policy, _) = optimize_policy(
        template,
        |p, req| {
            let r = long_run_average(model, p, start, horizon, burn_in, &derive_budget(search, sim, req))?;
            let e = r.estimate;
            if req.final_eval {
                *final_run.lock().expect("no poisoning") = Some(r);
            }
            Ok(e)
        },
        opt,
    )?;
    let run = final_run.into_inner().expect("no poisoning").expect("final evaluation ran");
    Ok((policy, run))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TauberianConfig {
    pub beta_schedule: Vec<f64>,
    /// Degree of the polynomial in `β` extrapolated to 0.
    pub fit_degree: usize,
    /// Horizons for `v̂^T / T`.
    pub horizon_schedule: Vec<f64>,
    /// Windows of the time-dependent policies used for `v̂^T`.
    pub windows: usize,
    /// Long-run window; defaults to `(50/η, 10/η)` when absent.
    pub long_run: Option<(f64, f64)>,
}

impl Default for TauberianConfig {
    fn default() -> Self {
        TauberianConfig {
            beta_schedule: vec![0.4, 0.2, 0.1, 0.05],
            fit_degree: 1,
            horizon_schedule: vec![5.0, 10.0, 20.0, 40.0],
            windows: 8,
            long_run: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauberianRoute {
    pub beta_rows: Vec<(f64, Estimate)>,
    pub horizon_rows: Vec<(f64, Estimate)>,
    /// `β v̂^β` extrapolated to `β = 0`.
    pub discount: Estimate,
    /// Intercept of `v̂^T / T` in `1/T`.
    pub horizon: Estimate,
    /// Best long-run average in the family.
    pub long_run: Estimate,
    pub long_run_policy: Policy,
}

impl TauberianRoute {
    pub fn estimates(&self) -> [Estimate; 3] {
        [self.discount, self.horizon, self.long_run]
    }

    /// Largest pairwise relative gap among the three estimates.
    pub fn max_relative_gap(&self) -> f64 {
        let e = self.estimates();
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in i + 1..3 {
                let scale = e[i].value.abs().max(e[j].value.abs());
                if scale > 0.0 {
                    worst = worst.max((e[i].value - e[j].value).abs() / scale);
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauberianReport {
    pub laws: Vec<InitialLaw>,
    pub routes: Vec<TauberianRoute>,
}

impl TauberianReport {
    /// Largest `|Δ| / combined stderr` between laws, route by route.
    pub fn cross_law_z(&self) -> f64 {
        let mut z: f64 = 0.0;
        for a in 0..self.routes.len() {
            for b in a + 1..self.routes.len() {
                for (x, y) in self.routes[a].estimates().iter().zip(self.routes[b].estimates()) {
                    z = z.max(x.z_score(&y));
                }
            }
        }
        z
    }

    /// `(β, β v̂^β)` rows of the first law, in schedule order.
    pub fn tauberian_csv(&self) -> String {
        let mut s = String::from("beta,beta_v_beta,stderr\n");
        if let Some(r) = self.routes.first() {
            for (b, e) in &r.beta_rows {
                s.push_str(&format!("{b},{},{}\n", e.value, e.stderr));
            }
        }
        s
    }

    /// `(T, v̂^T / T)` rows of the first law.
    pub fn cesaro_csv(&self) -> String {
        let mut s = String::from("T,v_T_over_T,stderr\n");
        if let Some(r) = self.routes.first() {
            for (t, e) in &r.horizon_rows {
                s.push_str(&format!("{t},{},{}\n", e.value, e.stderr));
            }
        }
        s
    }
}

/// Three routes to `λ` for every law in `laws`: small discount, long
/// horizon (with `g ≡ 0`), and the long-run average.
pub fn abelian_tauberian_check<M: Dynamics + ?Sized>(
    model: &M,
    laws: &[InitialLaw],
    config: &TauberianConfig,
    template: &Policy,
    opt: &OptimizerConfig,
    sim: &SimConfig,
) -> Result<TauberianReport> {
    if laws.is_empty() || config.horizon_schedule.len() < 2 {
        return Err(Error::config("tauberian", "need at least one law and two points per schedule"));
    }
    let (lr_t, lr_burn) = match config.long_run {
        Some(w) => w,
        None => default_window(model, sim.dt)?,
    };
    let search = sim.search_budget();
    let mut routes = Vec::new();
    for law in laws {
        let start = Start::Law(law);
        let (discount, _, rows) =
            discount_extrapolation(model, start, &config.beta_schedule, config.fit_degree, template, opt, sim)?;
        let beta_rows: Vec<(f64, Estimate)> = rows.iter().map(|r| (r.beta, r.scaled)).collect();
        let mut horizon_rows = Vec::new();
        for &t in &config.horizon_schedule {
            let tmpl = windowed_template(model, t, config.windows)?;
            let v = finite_horizon_value(model, start, t, &TerminalReward::Zero, &tmpl, opt, &search, sim)?;
            horizon_rows.push((t, v.estimate.scaled(1.0 / t)));
        }
        let fit = |rows: &[(f64, Estimate)], x: &dyn Fn(f64) -> f64| -> Result<Estimate> {
            let xs: Vec<f64> = rows.iter().map(|r| x(r.0)).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.1.value).collect();
            let ss: Vec<f64> = rows.iter().map(|r| r.1.stderr).collect();
            let f = linear_fit(&xs, &ys, &ss).ok_or_else(|| Error::config("tauberian", "degenerate schedule"))?;
            Ok(Estimate::new(f.intercept, f.intercept_stderr))
        };
        let horizon = fit(&horizon_rows, &|t| 1.0 / t)?;
        let (long_run_policy, lr) = sup_long_run_average(model, start, lr_t, lr_burn, template, opt, &search, sim)?;
        routes.push(TauberianRoute {
            beta_rows,
            horizon_rows,
            discount,
            horizon,
            long_run: lr.estimate,
            long_run_policy,
        });
    }
    Ok(TauberianReport {
        laws: laws.to_vec(),
        routes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub horizon: f64,
    /// `φ̂(μ) + λ̂ T`
    pub lhs: Estimate,
    /// `sup E[∫_0^T f dt + φ̂(μ̂_T)]`
    pub rhs: Estimate,
    pub residual: Estimate,
    /// `|residual| / |lhs|`
    pub relative: f64,
    /// Terminal summaries that fell outside the φ̂ grid.
    pub extrapolations: usize,
    pub policy: Policy,
}

/// Checks `φ(μ) + λT = sup {E ∫_0^T f dt + φ(P_{X_T})}` with the
/// interpolated `φ̂` as terminal reward.
#[allow(clippy::too_many_arguments)]
pub fn fixed_point_residual<M: Dynamics + ?Sized>(
    model: &M,
    pair: &ErgodicPair,
    law: &InitialLaw,
    horizon: f64,
    windows: usize,
    opt: &OptimizerConfig,
    sim: &SimConfig,
) -> Result<FixedPointReport> {
    let table = pair.phi_table_fn();
    let s = law.summary();
    if !table.covers(s.mean[0], s.sd()) {
        log::warn!("initial law lies outside the phi grid; phi is extrapolated");
    }
    let phi_mu = table.at(s.mean[0], s.sd());
    let lhs = Estimate::new(phi_mu + pair.lambda.value * horizon, pair.lambda.stderr * horizon);
    let template = windowed_template(model, horizon, windows)?;
    let v = finite_horizon_value(model, Start::Law(law), horizon, &table, &template, opt, &sim.search_budget(), sim)?;
    let residual = lhs.minus(&v.estimate);
    let extrapolations = table.extrapolations();
    if extrapolations > 0 {
        log::warn!("{extrapolations} terminal summaries fell outside the phi grid");
    }
    Ok(FixedPointReport {
        horizon,
        lhs,
        rhs: v.estimate,
        residual,
        relative: residual.value.abs() / lhs.value.abs().max(f64::MIN_POSITIVE),
        extrapolations,
        policy: v.best_policy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub horizon: f64,
    pub value: Estimate,
    /// `|v̂^T(0, μ) - φ̂(μ) - λ̂ T|`
    pub gap: f64,
}

/// `|v̂^T(0, μ) - φ̂(μ) - λ̂ T|` along a horizon schedule (`g ≡ 0`).
pub fn horizon_envelope<M: Dynamics + ?Sized>(
    model: &M,
    pair: &ErgodicPair,
    law: &InitialLaw,
    horizons: &[f64],
    windows: usize,
    opt: &OptimizerConfig,
    sim: &SimConfig,
) -> Result<Vec<EnvelopeRow>> {
    let table = pair.phi_table_fn();
    let s = law.summary();
    let phi_mu = table.at(s.mean[0], s.sd());
    horizons
        .iter()
        .map(|&t| {
            let template = windowed_template(model, t, windows)?;
            let v = finite_horizon_value(
                model,
                Start::Law(law),
                t,
                &TerminalReward::Zero,
                &template,
                opt,
                &sim.search_budget(),
                sim,
            )?;
            Ok(EnvelopeRow {
                horizon: t,
                value: v.estimate,
                gap: (v.estimate.value - phi_mu - pair.lambda.value * t).abs(),
            })
        })
        .collect()
}
