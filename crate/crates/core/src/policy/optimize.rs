//! Derivative-free search over policy parameters.
//!
//! Finite action sets with constant (or constant-per-window) policies are
//! searched by enumeration; everything else goes through a cross-entropy
//! method with restarts. Candidates compared in the same round share an
//! evaluation seed (common random numbers). The winner is re-evaluated once
//! with a fresh seed and the final budget, so the reported value carries no
//! selection bias.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Family, Policy};
use crate::error::{Error, Result};
use crate::particle::{derive_seed, RngStream};
use crate::stats::Estimate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    /// Initial standard deviation, relative to the half-width of the action
    /// box when parameters are bounded.
    pub initial_spread: f64,
    /// Weight of the new elite statistics in each update.
    pub smoothing: f64,
    pub restarts: usize,
    /// Coordinate sweeps over windows after enumerating constants.
    pub coordinate_sweeps: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            population: 16,
            elite_fraction: 0.25,
            iterations: 30,
            initial_spread: 1.0,
            smoothing: 0.7,
            restarts: 3,
            coordinate_sweeps: 1,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 8 {
            return Err(Error::config("optimizer.population", "must be at least 8"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 0.5) {
            return Err(Error::config("optimizer.elite_fraction", "must lie in (0, 0.5]"));
        }
        if self.iterations == 0 {
            return Err(Error::config("optimizer.iterations", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("optimizer.restarts", "must be at least 1"));
        }
        if !(self.initial_spread > 0.0) {
            return Err(Error::config("optimizer.initial_spread", "must be positive"));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::config("optimizer.smoothing", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// What the objective is asked for: a seed, and whether this is the final
/// (larger budget) re-evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalRequest {
    pub seed: u64,
    pub final_eval: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Enumeration,
    CoordinateEnumeration,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub restart: usize,
    pub iteration: usize,
    /// Best search value seen so far.
    pub best_value: f64,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub params: Vec<f64>,
    /// Fresh re-evaluation of `params`.
    pub estimate: Estimate,
    /// Value of `params` during the search (selection biased).
    pub search_value: f64,
    pub method: Method,
    pub evaluations: usize,
    pub history: Vec<HistoryEntry>,
}

const FINAL_LABEL: u64 = 0xF1_4A1;
const CEM_LABEL: u64 = 0xCE_4;

fn final_seed(config: &OptimizerConfig) -> u64 {
    derive_seed(config.seed, FINAL_LABEL)
}

/// Evaluates all candidates with one shared seed. Numerical failures and
/// non-finite values become `None` with a warning; config errors abort.
fn evaluate_batch<F>(objective: &F, candidates: &[Vec<f64>], seed: u64) -> Result<Vec<Option<f64>>>
where
    F: Fn(&[f64], EvalRequest) -> Result<Estimate> + Sync,
{
    let req = EvalRequest { seed, final_eval: false };
    let raw: Vec<Result<Estimate>> = candidates.par_iter().map(|p| objective(p, req)).collect();
    let mut out = Vec::with_capacity(raw.len());
    for (p, r) in candidates.iter().zip(raw) {
        match r {
            Ok(e) if e.value.is_finite() => out.push(Some(e.value)),
            Ok(e) => {
                log::warn!("discarding parameters {p:?}: objective returned {}", e.value);
                out.push(None);
            }
            Err(e) if e.is_numerical() => {
                log::warn!("discarding parameters {p:?}: {e}");
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Index of the largest value; the first one wins ties.
fn argmax(values: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            if best.map_or(true, |(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

fn finish<F>(objective: &F, params: Vec<f64>, search_value: f64, method: Method, evaluations: usize, history: Vec<HistoryEntry>, config: &OptimizerConfig) -> Result<OptimizeResult>
where
    F: Fn(&[f64], EvalRequest) -> Result<Estimate> + Sync,
{
    let estimate = objective(
        &params,
        EvalRequest {
            seed: final_seed(config),
            final_eval: true,
        },
    )?;
    if !estimate.value.is_finite() {
        return Err(Error::Optimizer(format!("final evaluation of {params:?} is not finite")));
    }
    Ok(OptimizeResult {
        params,
        estimate,
        search_value,
        method,
        evaluations: evaluations + 1,
        history,
    })
}

/// Exhaustive search over `candidates`.
pub fn enumerate<F>(objective: F, candidates: &[Vec<f64>], config: &OptimizerConfig) -> Result<OptimizeResult>
where
    F: Fn(&[f64], EvalRequest) -> Result<Estimate> + Sync,
{
    if candidates.is_empty() {
        return Err(Error::Optimizer("no candidates to enumerate".into()));
    }
    if candidates.len() == 1 {
        return finish(&objective, candidates[0].clone(), f64::NAN, Method::Enumeration, 0, vec![], config);
    }
    let values = evaluate_batch(&objective, candidates, config.seed)?;
    let best = argmax(&values).ok_or_else(|| Error::Optimizer("every candidate was non-finite".into()))?;
    let history = vec![HistoryEntry {
        restart: 0,
        iteration: 0,
        best_value: values[best].unwrap_or(f64::NAN),
        mean: candidates[best].clone(),
    }];
    finish(
        &objective,
        candidates[best].clone(),
        values[best].unwrap_or(f64::NAN),
        Method::Enumeration,
        candidates.len(),
        history,
        config,
    )
}

/// Enumerates window-constant candidates, then improves one window at a
/// time (last window first) over the action points.
fn coordinate_enumeration<F>(objective: F, points: &[Vec<f64>], windows: usize, config: &OptimizerConfig) -> Result<OptimizeResult>
where
    F: Fn(&[f64], EvalRequest) -> Result<Estimate> + Sync,
{
    let k = points[0].len();
    let constants: Vec<Vec<f64>> = points
        .iter()
        .map(|a| a.iter().copied().cycle().take(k * windows).collect())
        .collect();
    let seed = config.seed;
    let values = evaluate_batch(&objective, &constants, seed)?;
    let best = argmax(&values).ok_or_else(|| Error::Optimizer("every candidate was non-finite".into()))?;
    let mut current = constants[best].clone();
    let mut current_value = values[best].unwrap_or(f64::NAN);
    let mut evaluations = constants.len();
    let mut history = vec![HistoryEntry {
        restart: 0,
        iteration: 0,
        best_value: current_value,
        mean: current.clone(),
    }];
    if points.len() > 1 && windows > 1 {
        for sweep in 0..config.coordinate_sweeps {
            let mut improved = false;
            for w in (0..windows).rev() {
                let trials: Vec<Vec<f64>> = points
                    .iter()
                    .filter(|a| a.as_slice() != &current[w * k..(w + 1) * k])
                    .map(|a| {
                        let mut c = current.clone();
                        c[w * k..(w + 1) * k].copy_from_slice(a);
                        c
                    })
                    .collect();
                let vals = evaluate_batch(&objective, &trials, seed)?;
                evaluations += trials.len();
                if let Some(i) = argmax(&vals) {
                    if vals[i].is_some_and(|v| v > current_value) {
                        current = trials[i].clone();
                        current_value = vals[i].unwrap_or(f64::NAN);
                        improved = true;
                    }
                }
            }
            history.push(HistoryEntry {
                restart: 0,
                iteration: sweep + 1,
                best_value: current_value,
                mean: current.clone(),
            });
            if !improved {
                break;
            }
        }
    }
    finish(&objective, current, current_value, Method::CoordinateEnumeration, evaluations, history, config)
}

/// Cross-entropy search from `init`. `bounds` clip samples coordinatewise.
pub fn cross_entropy<F>(
    objective: F,
    init: &[f64],
    bounds: Option<(&[f64], &[f64])>,
    config: &OptimizerConfig,
) -> Result<OptimizeResult>
where
    F: Fn(&[f64], EvalRequest) -> Result<Estimate> + Sync,
{
    config.validate()?;
    let n = init.len();
    if n == 0 {
        return Err(Error::Optimizer("no parameters to optimize".into()));
    }
    let base_spread: Vec<f64> = match bounds {
        Some((lo, hi)) => lo.iter().zip(hi).map(|(l, h)| config.initial_spread * (0.5 * (h - l)).max(1e-12)).collect(),
        None => vec![config.initial_spread; n],
    };
    let clip = |p: &mut [f64]| {
        if let Some((lo, hi)) = bounds {
            for ((v, l), h) in p.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(*l, *h);
            }
        }
    };
    let n_elite = ((config.population as f64 * config.elite_fraction).ceil() as usize).max(1);
    let alpha = config.smoothing;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut evaluations = 0;
    let mut any_finite = false;
    for restart in 0..config.restarts {
        let mut mean: Vec<f64> = match &best {
            Some((p, _)) => p.clone(),
            None => init.to_vec(),
        };
        clip(&mut mean);
        let mut sd = base_spread.clone();
        let mut rng = RngStream::new(config.seed, CEM_LABEL).child(restart as u64).rng();
        for iteration in 0..config.iterations {
            let mut pop: Vec<Vec<f64>> = (0..config.population)
                .map(|_| {
                    let mut p: Vec<f64> = mean
                        .iter()
                        .zip(&sd)
                        .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    clip(&mut p);
                    p
                })
                .collect();
            // keep the incumbent in the race so the search never forgets it
            pop[0] = mean.clone();
            let seed = derive_seed(config.seed, ((restart as u64) << 32) | iteration as u64);
            let values = evaluate_batch(&objective, &pop, seed)?;
            evaluations += pop.len();
            let mut ranked: Vec<(usize, f64)> = values
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.map(|v| (i, v)))
                .collect();
            if ranked.is_empty() {
                log::warn!("cross-entropy round {iteration} of restart {restart}: no finite samples");
                continue;
            }
            any_finite = true;
            ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let (top, top_value) = ranked[0];
            if best.as_ref().map_or(true, |(_, b)| top_value > *b) {
                best = Some((pop[top].clone(), top_value));
            }
            let elite: Vec<&Vec<f64>> = ranked.iter().take(n_elite).map(|(i, _)| &pop[*i]).collect();
            let ne = elite.len() as f64;
            for j in 0..n {
                let em = elite.iter().map(|p| p[j]).sum::<f64>() / ne;
                let ev = elite.iter().map(|p| (p[j] - em).powi(2)).sum::<f64>() / ne;
                mean[j] = alpha * em + (1.0 - alpha) * mean[j];
                sd[j] = alpha * ev.sqrt() + (1.0 - alpha) * sd[j];
            }
            history.push(HistoryEntry {
                restart,
                iteration,
                best_value: best.as_ref().map_or(f64::NAN, |b| b.1),
                mean: mean.clone(),
            });
        }
    }
    if !any_finite {
        return Err(Error::Optimizer("every sampled parameter gave a non-finite objective".into()));
    }
    let (params, value) = best.expect("finite sample recorded");
    finish(&objective, params, value, Method::CrossEntropy, evaluations, history, config)
}

fn box_bounds(template: &Policy) -> Option<(Vec<f64>, Vec<f64>)> {
    let crate::model::ActionSet::Box { lower, upper, .. } = template.action_set() else {
        return None;
    };
    let reps = match template.family() {
        Family::Constant => 1,
        Family::TabularGrid { x_centers, m_centers } => x_centers.len() * m_centers.len(),
        Family::TimeWindowed { breakpoints, inner } if **inner == Family::Constant => breakpoints.len() + 1,
        _ => return None,
    };
    Some((
        lower.iter().copied().cycle().take(lower.len() * reps).collect(),
        upper.iter().copied().cycle().take(upper.len() * reps).collect(),
    ))
}

/// Maximizes `objective` over policies of `template`'s family.
///
/// Enumeration is used for finite action sets with constant policies
/// (exhaustive) and constant-per-window policies (constants, then
/// window-by-window sweeps); other cases use [`cross_entropy`] started at
/// the template's parameters.
pub fn optimize_policy<F>(template: &Policy, objective: F, config: &OptimizerConfig) -> Result<(Policy, OptimizeResult)>
where
    F: Fn(&Policy, EvalRequest) -> Result<Estimate> + Sync,
{
    config.validate()?;
    let wrapped = |p: &[f64], req: EvalRequest| -> Result<Estimate> {
        let policy = template.with_params(p.to_vec())?;
        objective(&policy, req)
    };
    let result = match (template.action_set(), template.family()) {
        (crate::model::ActionSet::Finite { points }, Family::Constant) => enumerate(wrapped, points, config)?,
        (crate::model::ActionSet::Finite { points }, Family::TimeWindowed { breakpoints, inner })
            if **inner == Family::Constant =>
        {
            coordinate_enumeration(wrapped, points, breakpoints.len() + 1, config)?
        }
        _ => {
            let bounds = box_bounds(template);
            cross_entropy(
                wrapped,
                template.params(),
                bounds.as_ref().map(|(l, u)| (l.as_slice(), u.as_slice())),
                config,
            )?
        }
    };
    let policy = template.with_params(result.params.clone())?;
    Ok((policy, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionSet;

    fn quad(p: &[f64], _: EvalRequest) -> Result<Estimate> {
        Ok(Estimate::exact(-(p[0] - 2.0).powi(2)))
    }

    #[test]
    fn quadratic_argmax() {
        let r = cross_entropy(quad, &[0.0], None, &OptimizerConfig::default()).unwrap();
        assert!((r.params[0] - 2.0).abs() < 0.05, "{:?}", r.params);
        assert_eq!(r.method, Method::CrossEntropy);
    }

    #[test]
    fn more_iterations_never_hurt_much() {
        let short = OptimizerConfig {
            iterations: 5,
            ..OptimizerConfig::default()
        };
        let long = OptimizerConfig {
            iterations: 10,
            ..OptimizerConfig::default()
        };
        let a = cross_entropy(quad, &[-3.0], None, &short).unwrap();
        let b = cross_entropy(quad, &[-3.0], None, &long).unwrap();
        assert!(b.estimate.value >= a.estimate.value - 1e-12);
    }

    #[test]
    fn constant_objective_reports_constant() {
        let r = cross_entropy(|_: &[f64], _| Ok(Estimate::new(5.0, 0.1)), &[0.0, 1.0], None, &OptimizerConfig::default())
            .unwrap();
        assert_eq!(r.estimate.value, 5.0);
    }

    #[test]
    fn enumeration_finds_exact_argmax() {
        let set = ActionSet::finite_scalars(&[-1.0, 0.5, 2.0, 3.0]);
        let template = Policy::constant(set, vec![-1.0]);
        let (p, r) = optimize_policy(
            &template,
            |pol: &Policy, _| Ok(Estimate::exact(-(pol.params()[0] - 1.9).abs())),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(p.params(), &[2.0]);
        assert_eq!(r.method, Method::Enumeration);
        assert_eq!(r.evaluations, 5);
    }

    #[test]
    fn final_evaluation_uses_fresh_seed() {
        let cfg = OptimizerConfig::default();
        let r = enumerate(
            |_: &[f64], req: EvalRequest| Ok(Estimate::exact(if req.final_eval { req.seed as f64 } else { 0.0 })),
            &[vec![0.0], vec![1.0]],
            &cfg,
        )
        .unwrap();
        assert_eq!(r.estimate.value, final_seed(&cfg) as f64);
        assert_ne!(final_seed(&cfg), cfg.seed);
    }

    #[test]
    fn non_finite_samples_are_discarded() {
        let r = cross_entropy(
            |p: &[f64], _| Ok(Estimate::exact(if p[0] > 1.0 { f64::NAN } else { p[0] })),
            &[0.0],
            None,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!(r.params[0] <= 1.0 && r.params[0] > 0.9);
        let all_bad = cross_entropy(|_: &[f64], _| Ok(Estimate::exact(f64::NAN)), &[0.0], None, &OptimizerConfig::default());
        assert!(matches!(all_bad, Err(Error::Optimizer(_))));
    }

    #[test]
    fn windows_are_improved_one_at_a_time() {
        // best is -1 in the first window and +1 in the second
        let set = ActionSet::finite_scalars(&[-1.0, 0.0, 1.0]);
        let template = Policy::windowed_constant(set, 2.0, 2, &[0.0]).unwrap();
        let (p, r) = optimize_policy(
            &template,
            |pol: &Policy, _| Ok(Estimate::exact(-pol.params()[0] + pol.params()[1])),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert_eq!(p.params(), &[-1.0, 1.0]);
        assert_eq!(r.method, Method::CoordinateEnumeration);
    }

    #[test]
    fn box_constant_uses_cross_entropy_within_bounds() {
        let set = ActionSet::interval(-1.0, 1.0, 33);
        let template = Policy::constant(set.clone(), vec![0.0]);
        let (p, _) = optimize_policy(
            &template,
            |pol: &Policy, _| Ok(Estimate::exact(-(pol.params()[0] - 0.4).powi(2))),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((p.params()[0] - 0.4).abs() < 0.05);
        assert!(set.contains(p.params()));
    }

    #[test]
    fn config_validation() {
        let bad = OptimizerConfig {
            population: 4,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = OptimizerConfig {
            elite_fraction: 0.7,
            ..OptimizerConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
