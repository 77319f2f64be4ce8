//! The Hamiltonian functional, ergodic HJB residuals and greedy feedback.
//!
//! Pointwise integrand:
//!
//! ```text
//! h(x, μ, a) = f(x, μ, a) + ⟨b(x, μ, a), ∂_μφ(μ)(x)⟩ + ½ tr(σσᵀ(x, μ, a) ∂_x∂_μφ(μ)(x))
//! ```
//!
//! `F̂(μ̂) = (1/N) Σ_i max_a h(x_i, μ̂, a)` with the maximum taken over the
//! action grid. Among equal maxima the lexicographically smallest action
//! wins.

use serde::{Deserialize, Serialize};

use super::derivative::{DerivativeField, DerivativeSource};
use super::pair::Probe;
use crate::error::{Error, Result};
use crate::model::{ActionSet, Dynamics};
use crate::particle::{sample_initial, Ensemble, MeasureSummary, RngStream};
use crate::policy::Policy;
use crate::stats::Estimate;

/// Action grid in ascending lexicographic order. `resolution` overrides
/// the box resolution.
pub fn action_grid(set: &ActionSet, resolution: Option<usize>) -> Result<Vec<Vec<f64>>> {
    let mut grid = match resolution {
        Some(r) => set.grid_with_resolution(r),
        None => set.grid(),
    };
    if grid.is_empty() {
        return Err(Error::config("action_set", "action grid is empty"));
    }
    grid.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(grid)
}

struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Scratch {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
        }
    }
}

fn integrand<M: Dynamics + ?Sized>(
    model: &M,
    x: &[f64],
    m: &MeasureSummary,
    a: &[f64],
    dmu: &[f64],
    dxdmu: &[f64],
    s: &mut Scratch,
) -> f64 {
    let d = x.len();
    model.drift(x, m, a, &mut s.drift);
    model.diffusion(x, m, a, &mut s.sigma);
    let mut v = model.reward(x, m, a);
    v += s.drift.iter().zip(dmu).map(|(b, g)| b * g).sum::<f64>();
    // tr(σσᵀ H) = Σ_{ijk} σ_ik σ_jk H_ji
    let mut tr = 0.0;
    for i in 0..d {
        for j in 0..d {
            let mut ss = 0.0;
            for k in 0..d {
                ss += s.sigma[i * d + k] * s.sigma[j * d + k];
            }
            tr += ss * dxdmu[j * d + i];
        }
    }
    v + 0.5 * tr
}

/// Best grid action and its integrand value (first maximum wins).
fn argmax<M: Dynamics + ?Sized>(
    model: &M,
    grid: &[Vec<f64>],
    x: &[f64],
    m: &MeasureSummary,
    dmu: &[f64],
    dxdmu: &[f64],
    s: &mut Scratch,
) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, a) in grid.iter().enumerate() {
        let v = integrand(model, x, m, a, dmu, dxdmu, s);
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

fn check_field(ens: &Ensemble, field: &DerivativeField) -> Result<()> {
    if field.n != ens.len() || field.dim != ens.dim() {
        return Err(Error::DimensionMismatch {
            context: "derivative field vs ensemble".into(),
            expected: ens.len() * ens.dim(),
            got: field.n * field.dim,
        });
    }
    Ok(())
}

/// Per-particle maxima of the integrand.
pub fn hamiltonian_terms<M: Dynamics + ?Sized>(
    model: &M,
    ens: &Ensemble,
    field: &DerivativeField,
    resolution: Option<usize>,
) -> Result<Vec<f64>> {
    check_field(ens, field)?;
    if ens.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            context: "ensemble vs model".into(),
            expected: model.dim(),
            got: ens.dim(),
        });
    }
    let grid = action_grid(model.action_set(), resolution)?;
    let summary = ens.summary();
    let mut s = Scratch::new(ens.dim());
    let terms: Vec<f64> = (0..ens.len())
        .map(|i| argmax(model, &grid, ens.particle(i), &summary, field.dmu_at(i), field.dxdmu_at(i), &mut s).1)
        .collect();
    if terms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Hamiltonian integrand".into()));
    }
    Ok(terms)
}

/// `F̂(μ̂)` for the ensemble and derivative field.
pub fn hamiltonian_f<M: Dynamics + ?Sized>(
    model: &M,
    ens: &Ensemble,
    field: &DerivativeField,
    resolution: Option<usize>,
) -> Result<f64> {
    let terms = hamiltonian_terms(model, ens, field, resolution)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbRow {
    pub probe: String,
    pub hamiltonian: f64,
    pub residual: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HjbResidualReport {
    pub lambda: Estimate,
    pub rows: Vec<HjbRow>,
    pub max_abs_residual: f64,
}

impl HjbResidualReport {
    /// `max |residual| / |λ̂|`
    pub fn relative(&self) -> f64 {
        self.max_abs_residual / self.lambda.value.abs()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("probe,residual,stderr\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.probe, r.residual, r.stderr));
        }
        out
    }
}

/// Samples one ensemble of `n` particles per probe law.
pub fn probe_ensembles(probes: &[Probe], n: usize, seed: u64) -> Result<Vec<(String, Ensemble)>> {
    probes
        .iter()
        .enumerate()
        .map(|(k, p)| Ok((p.id.clone(), sample_initial(&p.law, n, RngStream::new(seed, k as u64))?)))
        .collect()
}

/// `λ̂ - F̂(μ)` at every probe ensemble. The stderr combines the stderr of
/// `λ̂` with the particle spread of the integrand.
pub fn hjb_residual<M: Dynamics + ?Sized>(
    model: &M,
    lambda: Estimate,
    source: &dyn DerivativeSource,
    probes: &[(String, Ensemble)],
    resolution: Option<usize>,
) -> Result<HjbResidualReport> {
    if probes.is_empty() {
        return Err(Error::config("probes", "need at least one probe ensemble"));
    }
    let mut rows = Vec::with_capacity(probes.len());
    for (id, ens) in probes {
        let field = source.field(ens)?;
        let terms = hamiltonian_terms(model, ens, &field, resolution)?;
        let f = Estimate::from_replicas(&terms);
        let r = lambda.minus(&f);
        rows.push(HjbRow {
            probe: id.clone(),
            hamiltonian: f.value,
            residual: r.value,
            stderr: r.stderr,
        });
    }
    let max_abs_residual = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    Ok(HjbResidualReport {
        lambda,
        rows,
        max_abs_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GreedyConfig {
    pub x_centers: Vec<f64>,
    pub m_centers: Vec<f64>,
    /// Standard deviation of the measure attached to each mean cell.
    pub reference_sd: f64,
    /// Starting box resolution; the action set's own when absent.
    pub resolution: Option<usize>,
    pub max_refinements: usize,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        let lin = |lo: f64, hi: f64, n: usize| (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        GreedyConfig {
            x_centers: lin(-4.0, 4.0, 33),
            m_centers: lin(-2.0, 2.0, 9),
            reference_sd: 1.0,
            resolution: None,
            max_refinements: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyFeedback {
    pub policy: Policy,
    /// Box resolution of the final table (0 for finite sets).
    pub resolution: usize,
    pub refinements: usize,
    /// Whether the last refinement moved no cell by more than one coarse
    /// grid spacing.
    pub stable: bool,
}

fn greedy_table<M: Dynamics + ?Sized>(
    model: &M,
    source: &dyn DerivativeSource,
    config: &GreedyConfig,
    grid: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut s = Scratch::new(d);
    let mut table = Vec::with_capacity(config.x_centers.len() * config.m_centers.len() * grid[0].len());
    for &xc in &config.x_centers {
        for &mc in &config.m_centers {
            let mut mean = vec![0.0; d];
            mean[0] = mc;
            let mut x = mean.clone();
            x[0] = xc;
            let m = MeasureSummary {
                second_moment: mc * mc + config.reference_sd * config.reference_sd,
                mean,
            };
            let (g, h) = source.at_point(&x, &m)?;
            let (j, v) = argmax(model, grid, &x, &m, &g, &h, &mut s);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("greedy integrand at x = {xc}, m = {mc}")));
            }
            table.extend_from_slice(&grid[j]);
        }
    }
    Ok(table)
}

/// Tabulates the pointwise argmax of the integrand on an `(x, mean)` grid.
///
/// For box action sets the action grid is refined (`r -> 2r - 1`, so the
/// grids nest) until no cell moves by more than one coarse spacing, or
/// `max_refinements` is reached.
pub fn greedy_feedback<M: Dynamics + ?Sized>(
    model: &M,
    source: &dyn DerivativeSource,
    config: &GreedyConfig,
) -> Result<GreedyFeedback> {
    if !(config.reference_sd >= 0.0) {
        return Err(Error::config("greedy.reference_sd", "must be nonnegative"));
    }
    let set = model.action_set();
    let build = |table: Vec<f64>| {
        Policy::tabular(set.clone(), config.x_centers.clone(), config.m_centers.clone(), table)
    };
    match set {
        ActionSet::Finite { .. } => {
            let grid = action_grid(set, None)?;
            let policy = build(greedy_table(model, source, config, &grid)?)?;
            Ok(GreedyFeedback {
                policy,
                resolution: 0,
                refinements: 0,
                stable: true,
            })
        }
        ActionSet::Box {
            lower,
            upper,
            resolution,
        } => {
            let mut r = config.resolution.unwrap_or(*resolution).max(2);
            let mut table = greedy_table(model, source, config, &action_grid(set, Some(r))?)?;
            let mut refinements = 0;
            let mut stable = false;
            while refinements < config.max_refinements {
                let finer = 2 * r - 1;
                let next = greedy_table(model, source, config, &action_grid(set, Some(finer))?)?;
                let k = lower.len();
                let moved = table.iter().zip(&next).enumerate().any(|(i, (a, b))| {
                    let c = i % k;
                    let spacing = (upper[c] - lower[c]) / (r - 1) as f64;
                    (a - b).abs() > spacing + 1e-12
                });
                table = next;
                r = finer;
                refinements += 1;
                if !moved {
                    stable = true;
                    break;
                }
            }
            Ok(GreedyFeedback {
                policy: build(table)?,
                resolution: r,
                refinements,
                stable,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::ergodic::derivative::{lions_derivative, PoissonOracle};
    use crate::functional::SecondMoment;
    use crate::model::{AffineModel, Reward};

    fn zero_field(ens: &Ensemble) -> DerivativeField {
        DerivativeField {
            n: ens.len(),
            dim: 1,
            dmu: vec![0.0; ens.len()],
            dxdmu: vec![0.0; ens.len()],
            fd_step: 0.0,
        }
    }

    fn action_as_reward() -> AffineModel {
        let mut spec = benchmarks::scalar_spec(
            "action_reward",
            0.0,
            0.0,
            0.0,
            0.0,
            Reward::constant(0.0),
            ActionSet::finite_scalars(&[1.0, -1.0]),
        );
        spec.reward.action_linear = vec![1.0];
        AffineModel::new(spec).unwrap()
    }

    #[test]
    fn pointwise_max_over_actions() {
        let m = action_as_reward();
        let e = Ensemble::from_scalars(&[0.0, 1.0, -3.0]).unwrap();
        assert_eq!(hamiltonian_f(&m, &e, &zero_field(&e), None).unwrap(), 1.0);
    }

    #[test]
    fn ties_go_to_the_smallest_action() {
        let grid = action_grid(&ActionSet::finite_scalars(&[1.0, -1.0, 0.0]), None).unwrap();
        assert_eq!(grid, vec![vec![-1.0], vec![0.0], vec![1.0]]);
        // b = σ = f = 0: every action ties
        let spec = benchmarks::scalar_spec(
            "flat",
            0.0,
            0.0,
            0.0,
            0.0,
            Reward::constant(0.0),
            ActionSet::finite_scalars(&[1.0, -1.0, 0.0]),
        );
        let model = AffineModel::new(spec).unwrap();
        let src = PoissonOracle::new(&benchmarks::ou_cos(), &[0.0]).unwrap();
        let g = greedy_feedback(&model, &src, &GreedyConfig::default()).unwrap();
        assert!(g.policy.params().iter().all(|a| *a == -1.0));
    }

    #[test]
    fn quadratic_field_without_noise() {
        let spec = benchmarks::scalar_spec(
            "decay",
            -1.0,
            0.0,
            0.0,
            0.0,
            Reward::constant(0.0),
            ActionSet::finite_scalars(&[0.0]),
        );
        let model = AffineModel::new(spec).unwrap();
        let e = Ensemble::from_scalars(&[0.5, -1.5, 2.0, 0.1]).unwrap();
        let field = lions_derivative(&SecondMoment, &e, 1e-3).unwrap();
        let f = hamiltonian_f(&model, &e, &field, None).unwrap();
        assert!((f + 2.0 * e.summary().second_moment).abs() < 1e-12);
    }

    #[test]
    fn constant_shift_moves_f_exactly() {
        let model = benchmarks::ou_cos();
        let e = Ensemble::from_scalars(&[0.5, -1.5, 2.0]).unwrap();
        let field = lions_derivative(&SecondMoment, &e, 1e-3).unwrap();
        let base = hamiltonian_f(&model, &e, &field, None).unwrap();
        let mut spec = model.spec().clone();
        spec.reward.state.push(crate::model::RewardTerm {
            weight: 0.75,
            coord: 0,
            kind: crate::model::RewardKind::Constant,
        });
        let shifted = hamiltonian_f(&AffineModel::new(spec).unwrap(), &e, &field, None).unwrap();
        assert!((shifted - base - 0.75).abs() < 1e-12);
    }

    #[test]
    fn field_must_match() {
        let e = Ensemble::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        let other = Ensemble::from_scalars(&[0.0, 1.0]).unwrap();
        assert!(hamiltonian_f(&benchmarks::ou_cos(), &e, &zero_field(&other), None).is_err());
    }

    #[test]
    fn oracle_residual_is_small_everywhere() {
        let model = benchmarks::ou_cos();
        let o = PoissonOracle::new(&model, &[0.0]).unwrap();
        let probes = probe_ensembles(
            &[
                Probe {
                    id: "g1".into(),
                    law: crate::particle::InitialLaw::gaussian(1.0, 0.25),
                },
                Probe {
                    id: "d0".into(),
                    law: crate::particle::InitialLaw::dirac(-2.0),
                },
            ],
            200,
            3,
        )
        .unwrap();
        let r = hjb_residual(&model, Estimate::exact(o.lambda()), &o, &probes, None).unwrap();
        assert!(r.max_abs_residual < 1e-6, "{r:?}");
        assert!(r.to_csv().starts_with("probe,residual,stderr\ng1,"));
    }

    #[test]
    fn greedy_on_tanh_pushes_up() {
        let model = benchmarks::tanh_drive();
        let o = PoissonOracle::new(&model, &[1.0]).unwrap();
        let g = greedy_feedback(&model, &o, &GreedyConfig::default()).unwrap();
        assert!(g.policy.params().iter().all(|a| *a == 1.0));
    }

    #[test]
    fn box_refinement_settles() {
        // f = -(a - 0.3)² has its argmax strictly inside [-1, 1]
        let mut spec = benchmarks::scalar_spec(
            "box",
            -1.0,
            0.0,
            0.0,
            1.0,
            Reward::constant(-0.09),
            ActionSet::Box {
                lower: vec![-1.0],
                upper: vec![1.0],
                resolution: 5,
            },
        );
        spec.reward.action_linear = vec![0.6];
        spec.reward.action_quadratic = 1.0;
        let model = AffineModel::new(spec).unwrap();
        let o = PoissonOracle::new(&benchmarks::ou_cos(), &[0.0]).unwrap();
        let g = greedy_feedback(&model, &o, &GreedyConfig::default()).unwrap();
        assert!(g.stable);
        assert!(g.policy.params().iter().all(|a| (a - 0.3).abs() <= 2.0 / (g.resolution - 1) as f64));
    }
}
