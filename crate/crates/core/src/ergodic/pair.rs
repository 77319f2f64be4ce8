//! The ergodic pair `(λ, φ)` by vanishing discount.
//!
//! `λ̂` is the value at `β = 0` of a least-squares polynomial in `β`
//! (degree 1 by default) fitted to `β v̂^β(δ0)`.
//! `φ̂(μ) = v̂^β(μ) - v̂^β(δ0)` is estimated on probe laws at the smallest
//! discount rate, both terms sharing seeds so the difference is coupled
//! replica by replica. A linear extrapolation in `β` from the two smallest
//! rates is kept next to it.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::MeasureFunctional;
use crate::model::{dissipativity_margin, Dynamics};
use crate::particle::{Ensemble, InitialLaw};
use crate::policy::{OptimizerConfig, Policy};
use crate::stats::{poly_fit, Estimate};
use crate::value::{value_discounted, SimConfig, Start};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub law: InitialLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VanishingConfig {
    /// Strictly decreasing, at least three rates.
    pub beta_schedule: Vec<f64>,
    /// Means of the Gaussian probe grid.
    pub probe_means: Vec<f64>,
    /// Standard deviations of the probe grid; 0 gives point masses.
    pub probe_sds: Vec<f64>,
    /// Extra probes reported in the table but not used for interpolation.
    pub named_probes: Vec<Probe>,
    pub probe_particles: usize,
    pub probe_replicas: usize,
    /// Degree of the polynomial in `β` extrapolated to 0 for `λ̂`.
    pub fit_degree: usize,
}

impl Default for VanishingConfig {
    fn default() -> Self {
        VanishingConfig {
            beta_schedule: vec![0.4, 0.2, 0.1, 0.05],
            probe_means: vec![-2.0, -1.0, 0.0, 1.0, 2.0],
            probe_sds: vec![0.0, 0.5, 1.0, 1.5],
            named_probes: vec![],
            probe_particles: 1024,
            probe_replicas: 8,
            fit_degree: 1,
        }
    }
}

impl VanishingConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.beta_schedule;
        if b.len() < 3 {
            return Err(Error::config("beta_schedule", "need at least 3 discount rates"));
        }
        if b.iter().any(|v| !(*v > 0.0)) || b.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("beta_schedule", "rates must be positive and strictly decreasing"));
        }
        if self.fit_degree == 0 || self.fit_degree >= b.len() {
            return Err(Error::config("fit_degree", "must be at least 1 and below the number of rates"));
        }
        let increasing = |v: &[f64]| !v.is_empty() && v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.probe_means) || !self.probe_means.contains(&0.0) {
            return Err(Error::config("probe_means", "must be strictly increasing and contain 0"));
        }
        if !increasing(&self.probe_sds) || self.probe_sds[0] != 0.0 {
            return Err(Error::config("probe_sds", "must be strictly increasing and start at 0"));
        }
        Ok(())
    }
}

fn grid_law(mean: f64, sd: f64) -> InitialLaw {
    if sd == 0.0 {
        InitialLaw::dirac(mean)
    } else {
        InitialLaw::gaussian(mean, sd * sd)
    }
}

/// `W2` between 1-d Gaussians (point masses when `sd = 0`).
pub fn gaussian_w2(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    ((m1 - m2).powi(2) + (s1 - s2).powi(2)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: f64,
    /// `v̂^β(δ0)`
    pub value: Estimate,
    /// `β v̂^β(δ0)`
    pub scaled: Estimate,
    pub truncation_t: f64,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiEntry {
    pub id: String,
    pub mean: f64,
    pub sd: f64,
    /// At the smallest rate.
    pub phi: Estimate,
    /// At the second smallest rate.
    pub phi_previous: Estimate,
    /// Linear extrapolation of the two to `β = 0`.
    pub extrapolated: f64,
    pub on_grid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicPair {
    pub model: String,
    pub lambda: Estimate,
    /// Fitted first-order coefficient `c` in `β v^β ≈ λ + c β`.
    pub slope: f64,
    pub beta_schedule: Vec<f64>,
    pub lambda_by_beta: Vec<BetaRow>,
    pub probe_means: Vec<f64>,
    pub probe_sds: Vec<f64>,
    pub phi_table: Vec<PhiEntry>,
    /// Rate at which `phi` is reported.
    pub phi_beta: f64,
    /// `(β, L)` for the two smallest rates: largest `|Δφ̂| / W2` over probe
    /// pairs.
    pub lipschitz_by_beta: Vec<(f64, f64)>,
    /// Set when `β v̂^β` is non-monotone beyond 3 standard errors.
    pub monotonicity_warning: bool,
}

impl ErgodicPair {
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz_by_beta.iter().map(|x| x.1).fold(0.0, f64::max)
    }

    pub fn phi_table_fn(&self) -> PhiTable {
        let nm = self.probe_means.len();
        let ns = self.probe_sds.len();
        let mut values = vec![f64::NAN; nm * ns];
        for e in self.phi_table.iter().filter(|e| e.on_grid) {
            let i = self.probe_means.iter().position(|m| *m == e.mean);
            let j = self.probe_sds.iter().position(|s| *s == e.sd);
            if let (Some(i), Some(j)) = (i, j) {
                values[i * ns + j] = e.phi.value;
            }
        }
        PhiTable::new(self.probe_means.clone(), self.probe_sds.clone(), values)
            .expect("pair grid is complete")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pair serializes")
    }

    pub fn from_json(s: &str) -> Result<ErgodicPair> {
        serde_json::from_str(s).map_err(|e| Error::config("ergodic_pair", e.to_string()))
    }
}

/// Bilinear interpolation of `φ̂` over the `(mean, sd)` probe grid,
/// evaluated through an ensemble's summary. Outside the grid the nearest
/// edge value is used and the event is counted.
#[derive(Debug)]
pub struct PhiTable {
    means: Vec<f64>,
    sds: Vec<f64>,
    values: Vec<f64>,
    extrapolations: AtomicUsize,
}

impl Clone for PhiTable {
    fn clone(&self) -> Self {
        PhiTable {
            means: self.means.clone(),
            sds: self.sds.clone(),
            values: self.values.clone(),
            extrapolations: AtomicUsize::new(self.extrapolations()),
        }
    }
}

fn bracket(axis: &[f64], v: f64) -> (usize, f64, bool) {
    let n = axis.len();
    if n == 1 {
        return (0, 0.0, v != axis[0]);
    }
    if v <= axis[0] {
        return (0, 0.0, v < axis[0]);
    }
    if v >= axis[n - 1] {
        return (n - 2, 1.0, v > axis[n - 1]);
    }
    let i = axis.partition_point(|a| *a <= v) - 1;
    (i, (v - axis[i]) / (axis[i + 1] - axis[i]), false)
}

impl PhiTable {
    /// `values[i * sds.len() + j]` is `φ̂` at `(means[i], sds[j])`.
    pub fn new(means: Vec<f64>, sds: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if means.is_empty() || sds.is_empty() || values.len() != means.len() * sds.len() {
            return Err(Error::config("phi_table", "grid shape does not match values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("phi table".into()));
        }
        Ok(PhiTable {
            means,
            sds,
            values,
            extrapolations: AtomicUsize::new(0),
        })
    }

    pub fn extrapolations(&self) -> usize {
        self.extrapolations.load(Ordering::Relaxed)
    }

    pub fn covers(&self, mean: f64, sd: f64) -> bool {
        let (lo_m, hi_m) = (self.means[0], *self.means.last().expect("nonempty"));
        let (lo_s, hi_s) = (self.sds[0], *self.sds.last().expect("nonempty"));
        (lo_m..=hi_m).contains(&mean) && (lo_s..=hi_s).contains(&sd)
    }

    pub fn at(&self, mean: f64, sd: f64) -> f64 {
        let (i, u, out_m) = bracket(&self.means, mean);
        let (j, v, out_s) = bracket(&self.sds, sd);
        if out_m || out_s {
            if self.extrapolations.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("phi table queried outside its probe grid at mean {mean}, sd {sd}");
            }
        }
        let ns = self.sds.len();
        let get = |a: usize, b: usize| self.values[a.min(self.means.len() - 1) * ns + b.min(ns - 1)];
        let (i1, j1) = (if self.means.len() > 1 { i + 1 } else { i }, if ns > 1 { j + 1 } else { j });
        (1.0 - u) * (1.0 - v) * get(i, j) + u * (1.0 - v) * get(i1, j) + (1.0 - u) * v * get(i, j1) + u * v * get(i1, j1)
    }
}

impl MeasureFunctional for PhiTable {
    fn value(&self, ens: &Ensemble) -> f64 {
        let s = ens.summary();
        self.at(s.mean[0], s.sd())
    }
}

/// Builds the ergodic pair for a model.
///
/// `β v̂^β(μ)` over `schedule`, and the value at `β = 0` and the slope of a
/// least-squares polynomial of degree `degree` in `β`.
#[allow(clippy::too_many_arguments)]
pub fn discount_extrapolation<M: Dynamics + ?Sized>(
    model: &M,
    start: Start<'_>,
    schedule: &[f64],
    degree: usize,
    template: &Policy,
    opt: &OptimizerConfig,
    sim: &SimConfig,
) -> Result<(Estimate, f64, Vec<BetaRow>)> {
    if degree == 0 || degree >= schedule.len() {
        return Err(Error::config("fit_degree", "must be at least 1 and below the number of rates"));
    }
    let search = sim.search_budget();
    let mut rows = Vec::new();
    for &beta in schedule {
        let v = value_discounted(model, start, beta, template, opt, &search, sim)?;
        log::info!("beta = {beta}: v = {}", v.estimate);
        rows.push(BetaRow {
            beta,
            value: v.estimate,
            scaled: v.estimate.scaled(beta),
            truncation_t: v.truncation_t,
            policy: v.best_policy,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.beta).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.scaled.value).collect();
    let ss: Vec<f64> = rows.iter().map(|r| r.scaled.stderr).collect();
    let fit = poly_fit(&xs, &ys, &ss, degree)
        .ok_or_else(|| Error::config("beta_schedule", "need more discount rates than the fit degree"))?;
    Ok((Estimate::new(fit.coefficients[0], fit.stderr[0]), fit.coefficients[1], rows))
}

/// `sim` is the budget for the `λ` runs (searches use
/// [`SimConfig::search_budget`]); probe runs use the config's smaller
/// particle and replica counts.
pub fn vanishing_discount<M: Dynamics + ?Sized>(
    model: &M,
    config: &VanishingConfig,
    template: &Policy,
    opt: &OptimizerConfig,
    sim: &SimConfig,
) -> Result<ErgodicPair> {
    config.validate()?;
    if model.dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: "vanishing_discount probe grid".into(),
            expected: 1,
            got: model.dim(),
        });
    }
    let origin = InitialLaw::dirac(0.0);
    let (lambda, slope, rows) = discount_extrapolation(
        model,
        Start::Law(&origin),
        &config.beta_schedule,
        config.fit_degree,
        template,
        opt,
        sim,
    )?;
    let monotonicity_warning = non_monotone(&rows);
    if monotonicity_warning {
        log::warn!("beta * v^beta is not monotone in beta beyond 3 stderr; the budget may be too small");
    }

    // probes at the two smallest rates
    // differences of coupled runs forget their start at rate η, so the
    // probe runs stop once e^{-(β+η)t} is below tolerance
    let eta = dissipativity_margin(model).ok().and_then(|r| r.eta).filter(|e| *e > 0.0);
    let probe_sim = SimConfig {
        n_particles: config.probe_particles,
        replicas: config.probe_replicas,
        coupled_rate: eta.unwrap_or(0.0),
        ..sim.clone()
    };
    let probe_search = probe_sim.search_budget();
    let n = config.beta_schedule.len();
    let phi_betas = [config.beta_schedule[n - 1], config.beta_schedule[n - 2]];
    let mut probes: Vec<(String, f64, f64, InitialLaw, bool)> = Vec::new();
    for &m in &config.probe_means {
        for &s in &config.probe_sds {
            probes.push((format!("gauss_m{m}_sd{s}"), m, s, grid_law(m, s), true));
        }
    }
    for p in &config.named_probes {
        let s = p.law.summary();
        probes.push((p.id.clone(), s.mean[0], s.sd(), p.law.clone(), false));
    }
    let phi_at = |beta: f64| -> Result<Vec<Estimate>> {
        let base = value_discounted(model, Start::Law(&origin), beta, template, opt, &probe_search, &probe_sim)?;
        probes
            .iter()
            .map(|(_, m, s, law, _)| {
                if *m == 0.0 && *s == 0.0 {
                    return Ok(Estimate::exact(0.0));
                }
                let v = value_discounted(model, Start::Law(law), beta, template, opt, &probe_search, &probe_sim)?;
                let diffs: Vec<f64> = v.replicas.iter().zip(&base.replicas).map(|(a, b)| a - b).collect();
                Ok(Estimate::from_replicas(&diffs))
            })
            .collect()
    };
    let phi_small = phi_at(phi_betas[0])?;
    let phi_prev = phi_at(phi_betas[1])?;
    let mut lipschitz_by_beta = Vec::new();
    for (beta, phis) in phi_betas.iter().zip([&phi_small, &phi_prev]) {
        let mut l: f64 = 0.0;
        for a in 0..probes.len() {
            for b in a + 1..probes.len() {
                let w = gaussian_w2(probes[a].1, probes[a].2, probes[b].1, probes[b].2);
                if w > 0.0 {
                    l = l.max((phis[a].value - phis[b].value).abs() / w);
                }
            }
        }
        lipschitz_by_beta.push((*beta, l));
    }
    let (b1, b2) = (phi_betas[0], phi_betas[1]);
    let phi_table = probes
        .iter()
        .zip(phi_small.iter().zip(&phi_prev))
        .map(|((id, m, s, _, on_grid), (p1, p2))| PhiEntry {
            id: id.clone(),
            mean: *m,
            sd: *s,
            phi: *p1,
            phi_previous: *p2,
            extrapolated: p1.value - b1 * (p2.value - p1.value) / (b2 - b1),
            on_grid: *on_grid,
        })
        .collect();
    Ok(ErgodicPair {
        model: model.name().to_string(),
        lambda,
        slope,
        beta_schedule: config.beta_schedule.clone(),
        lambda_by_beta: rows,
        probe_means: config.probe_means.clone(),
        probe_sds: config.probe_sds.clone(),
        phi_table,
        phi_beta: b1,
        lipschitz_by_beta,
        monotonicity_warning,
    })
}

fn non_monotone(rows: &[BetaRow]) -> bool {
    let first = rows.first().map_or(0.0, |r| r.scaled.value);
    let last = rows.last().map_or(0.0, |r| r.scaled.value);
    let dir = (last - first).signum();
    rows.windows(2).any(|w| {
        let step = w[1].scaled.value - w[0].scaled.value;
        let tol = 3.0 * w[0].scaled.stderr.hypot(w[1].scaled.stderr);
        dir * step < -tol
    })
}
