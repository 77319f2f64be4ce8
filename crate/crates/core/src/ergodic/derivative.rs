//! Lions derivatives on particle ensembles, and sources of `∂_μ φ`.
//!
//! For the empirical lift `U(x_1, …, x_N) = u((1/N) Σ δ_{x_j})`,
//! `∂_μ u(μ̂)(x_i) ≈ N ∂_{x_i} U`. We take central differences of the lift:
//!
//! ```text
//! dmu[i]   = N (u(x_i + h) - u(x_i - h)) / (2h)
//! dxdmu[i] = N (u(x_i + h) - 2 u + u(x_i - h)) / h²
//! ```
//!
//! The second formula is the diagonal second difference of the lift scaled
//! by `N`. For functionals with a self-interaction term this picks up an
//! extra `O(1/N)` piece: `u = m²` gives `dxdmu = 2/N`, not 0. Off-diagonal
//! entries (`d > 1`) use the four-point mixed difference with the same
//! scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functional::MeasureFunctional;
use crate::model::{AffineModel, Dynamics, RewardKind};
use crate::particle::{Ensemble, MeasureSummary};
use crate::stats::simpson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeField {
    pub n: usize,
    pub dim: usize,
    /// `N x d`
    pub dmu: Vec<f64>,
    /// `N x d x d`
    pub dxdmu: Vec<f64>,
    pub fd_step: f64,
}

impl DerivativeField {
    pub fn dmu_at(&self, i: usize) -> &[f64] {
        &self.dmu[i * self.dim..(i + 1) * self.dim]
    }

    pub fn dxdmu_at(&self, i: usize) -> &[f64] {
        let dd = self.dim * self.dim;
        &self.dxdmu[i * dd..(i + 1) * dd]
    }
}

fn particle_derivative(u: &dyn MeasureFunctional, ens: &Ensemble, i: usize, h: f64, g: &mut [f64], hess: &mut [f64]) {
    let d = ens.dim();
    let n = ens.len() as f64;
    for c in 0..d {
        let (first, second) = u.central_differences(ens, i, c, h);
        g[c] = n * first / (2.0 * h);
        hess[c * d + c] = n * second / (h * h);
    }
    for a in 0..d {
        for b in a + 1..d {
            let shifted = |sa: f64, sb: f64| u.value(&ens.perturbed(i, a, sa).perturbed(i, b, sb));
            let mixed = shifted(h, h) - shifted(h, -h) - shifted(-h, h) + shifted(-h, -h);
            let v = n * mixed / (4.0 * h * h);
            hess[a * d + b] = v;
            hess[b * d + a] = v;
        }
    }
}

/// Finite-difference Lions derivative of `u` at every particle.
pub fn lions_derivative(u: &dyn MeasureFunctional, ens: &Ensemble, fd_step: f64) -> Result<DerivativeField> {
    if !(fd_step > 0.0) || !fd_step.is_finite() {
        return Err(Error::config("fd_step", "finite-difference step must be positive"));
    }
    let d = ens.dim();
    let n = ens.len();
    let mut dmu = vec![0.0; n * d];
    let mut dxdmu = vec![0.0; n * d * d];
    for i in 0..n {
        particle_derivative(
            u,
            ens,
            i,
            fd_step,
            &mut dmu[i * d..(i + 1) * d],
            &mut dxdmu[i * d * d..(i + 1) * d * d],
        );
    }
    if dmu.iter().chain(&dxdmu).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Lions derivative field".into()));
    }
    Ok(DerivativeField {
        n,
        dim: d,
        dmu,
        dxdmu,
        fd_step,
    })
}

/// Supplies `∂_μ φ` and `∂_x ∂_μ φ`.
pub trait DerivativeSource: Send + Sync {
    /// Both derivatives at the point `x` of a measure with summary `m`.
    fn at_point(&self, x: &[f64], m: &MeasureSummary) -> Result<(Vec<f64>, Vec<f64>)>;

    /// The field along an ensemble.
    fn field(&self, ens: &Ensemble) -> Result<DerivativeField> {
        let s = ens.summary();
        let d = ens.dim();
        let n = ens.len();
        let mut dmu = Vec::with_capacity(n * d);
        let mut dxdmu = Vec::with_capacity(n * d * d);
        for i in 0..n {
            let (g, h) = self.at_point(ens.particle(i), &s)?;
            dmu.extend(g);
            dxdmu.extend(h);
        }
        Ok(DerivativeField {
            n,
            dim: d,
            dmu,
            dxdmu,
            fd_step: 0.0,
        })
    }
}

/// Finite differences of a measure functional. Point queries place the
/// point as particle 0 of a fixed reference cloud with the requested mean
/// and standard deviation (d = 1).
pub struct FiniteDifference<'a> {
    pub functional: &'a dyn MeasureFunctional,
    pub fd_step: f64,
    pub reference_size: usize,
}

impl<'a> FiniteDifference<'a> {
    pub fn new(functional: &'a dyn MeasureFunctional, fd_step: f64) -> Self {
        FiniteDifference {
            functional,
            fd_step,
            reference_size: 256,
        }
    }
}

impl DerivativeSource for FiniteDifference<'_> {
    fn at_point(&self, x: &[f64], m: &MeasureSummary) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != 1 {
            return Err(Error::DimensionMismatch {
                context: "finite-difference point query".into(),
                expected: 1,
                got: x.len(),
            });
        }
        let n = self.reference_size.max(2);
        // deterministic quantile cloud of N(m, sd²), particle 0 replaced by x
        let sd = m.sd();
        let mut pts: Vec<f64> = (0..n)
            .map(|k| {
                let p = (k as f64 + 0.5) / n as f64;
                m.mean[0] + sd * normal_quantile(p)
            })
            .collect();
        pts[0] = x[0];
        let ens = Ensemble::from_scalars(&pts)?;
        let mut g = [0.0];
        let mut h = [0.0];
        particle_derivative(self.functional, &ens, 0, self.fd_step, &mut g, &mut h);
        Ok((g.to_vec(), h.to_vec()))
    }

    fn field(&self, ens: &Ensemble) -> Result<DerivativeField> {
        lions_derivative(self.functional, ens, self.fd_step)
    }
}

/// Acklam's rational approximation of the standard normal quantile
/// (relative error below 1.2e-9).
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < 0.02425 {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - 0.02425 {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Exact bias function of a one-dimensional Ornstein–Uhlenbeck model run
/// under a fixed action, with no mean-field coupling.
///
/// With `dX = (c0 + B X) dt + σ dW`, `B < 0`, the stationary law is
/// Gaussian with density `p` and the relative value `ψ` solves
/// `½σ² ψ'' + (c0 + Bx) ψ' = λ - r(x)`. Multiplying by `p` turns the left
/// side into `½σ² (p ψ')'`, so
///
/// ```text
/// ψ'(x) = (2/σ²) ∫_{-∞}^x (p(y)/p(x)) (λ - r(y)) dy
///       = -(2/σ²) ∫_x^∞ (p(y)/p(x)) (λ - r(y)) dy
/// ```
///
/// and we integrate whichever tail keeps `p(y)/p(x) <= 1`. `ψ''` is a
/// central difference of `ψ'`, so the Poisson equation is not used to
/// produce the second derivative. `φ(μ) = ∫ ψ dμ - ψ(0)`.
#[derive(Debug, Clone)]
pub struct PoissonOracle {
    center: f64,
    sd: f64,
    sigma: f64,
    lambda: f64,
    terms: Vec<(f64, RewardKind)>,
    kinks: Vec<f64>,
    constant: f64,
    grid_lo: f64,
    grid_step: f64,
    psi_grid: Vec<f64>,
    dpsi_grid: Vec<f64>,
}

const TAIL_SDS: f64 = 12.0;
const SIMPSON_INTERVALS: usize = 600;
const PSI_GRID: usize = 2001;

impl PoissonOracle {
    pub fn new(model: &AffineModel, action: &[f64]) -> Result<Self> {
        if model.dim() != 1 {
            return Err(Error::config("oracle", "the Poisson oracle is one-dimensional"));
        }
        let spec = model.spec();
        let b = model.drift_state().get(0, 0);
        if !(b < 0.0) {
            return Err(Error::config("oracle", "needs a contracting linear drift (B < 0)"));
        }
        if !model.drift_mean().is_zero() || !model.has_constant_diffusion() || !spec.reward.mean.is_empty() {
            return Err(Error::config(
                "oracle",
                "needs no mean-field coupling and state-independent diffusion",
            ));
        }
        if !model.action_set().contains(action) {
            return Err(Error::config("oracle.action", "action is not in the action set"));
        }
        let mut c0 = model.drift_offset()[0];
        for (g, a) in model.drift_control().as_slice().iter().zip(action) {
            c0 += g * a;
        }
        let sigma = model.diffusion_base().get(0, 0).abs();
        if sigma == 0.0 {
            return Err(Error::config("oracle", "needs nondegenerate noise"));
        }
        let constant = spec.reward.eval(&[0.0], &[0.0], action)
            - spec.reward.state.iter().map(|t| t.weight * t.kind.eval(0.0)).sum::<f64>();
        let terms: Vec<(f64, RewardKind)> = spec.reward.state.iter().map(|t| (t.weight, t.kind.clone())).collect();
        let mut kinks: Vec<f64> = terms
            .iter()
            .filter_map(|(_, k)| match k {
                RewardKind::ClippedQuadratic { clip } if *clip > 0.0 => Some(clip.sqrt()),
                _ => None,
            })
            .flat_map(|r| [-r, r])
            .collect();
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        let center = -c0 / b;
        let sd = sigma / (2.0 * -b).sqrt();
        let mut oracle = PoissonOracle {
            center,
            sd,
            sigma,
            lambda: 0.0,
            terms,
            kinks,
            constant,
            grid_lo: center - 10.0 * sd,
            grid_step: 20.0 * sd / (PSI_GRID - 1) as f64,
            psi_grid: vec![],
            dpsi_grid: vec![],
        };
        let density = |y: f64| (-0.5 * ((y - center) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
        oracle.lambda = oracle.integrate(
            |y| oracle.reward(y) * density(y),
            center - TAIL_SDS * sd,
            center + TAIL_SDS * sd,
            4 * SIMPSON_INTERVALS,
        );
        oracle.tabulate();
        Ok(oracle)
    }

    fn reward(&self, y: f64) -> f64 {
        self.constant + self.terms.iter().map(|(w, k)| w * k.eval(y)).sum::<f64>()
    }

    /// Simpson's rule split at the reward's kinks.
    fn integrate(&self, f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let mut cuts = vec![a];
        cuts.extend(self.kinks.iter().copied().filter(|k| *k > a && *k < b));
        cuts.push(b);
        cuts.windows(2)
            .map(|w| {
                let pieces = ((n as f64 * (w[1] - w[0]) / (b - a)).ceil() as usize).max(8);
                simpson(&f, w[0], w[1], pieces + pieces % 2)
            })
            .sum()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Mean and standard deviation of the stationary law.
    pub fn stationary(&self) -> (f64, f64) {
        (self.center, self.sd)
    }

    pub fn dpsi(&self, x: f64) -> f64 {
        let z = |y: f64| (y - self.center) / self.sd;
        let ratio = |y: f64| (-0.5 * (z(y).powi(2) - z(x).powi(2))).exp();
        let span = TAIL_SDS * self.sd;
        let scale = 2.0 / (self.sigma * self.sigma);
        if x <= self.center {
            scale * self.integrate(|y| ratio(y) * (self.lambda - self.reward(y)), x - span, x, SIMPSON_INTERVALS)
        } else {
            -scale * self.integrate(|y| ratio(y) * (self.lambda - self.reward(y)), x, x + span, SIMPSON_INTERVALS)
        }
    }

    pub fn d2psi(&self, x: f64) -> f64 {
        let h = 1e-3 * self.sd;
        (self.dpsi(x + h) - self.dpsi(x - h)) / (2.0 * h)
    }

    fn tabulate(&mut self) {
        let dpsi: Vec<f64> = (0..PSI_GRID).map(|k| self.dpsi(self.grid_lo + k as f64 * self.grid_step)).collect();
        let d2: Vec<f64> = (0..PSI_GRID).map(|k| self.d2psi(self.grid_lo + k as f64 * self.grid_step)).collect();
        let h = self.grid_step;
        let mut psi = vec![0.0; PSI_GRID];
        for k in 1..PSI_GRID {
            // integral of the cubic Hermite interpolant of ψ'
            psi[k] = psi[k - 1] + 0.5 * h * (dpsi[k - 1] + dpsi[k]) + h * h / 12.0 * (d2[k - 1] - d2[k]);
        }
        self.psi_grid = psi;
        self.dpsi_grid = dpsi;
    }

    /// `ψ` up to an additive constant (cubic Hermite between grid nodes,
    /// linear beyond the grid).
    fn psi_raw(&self, x: f64) -> f64 {
        let last = PSI_GRID - 1;
        let u = (x - self.grid_lo) / self.grid_step;
        if u <= 0.0 {
            return self.psi_grid[0] + (x - self.grid_lo) * self.dpsi_grid[0];
        }
        if u >= last as f64 {
            let hi = self.grid_lo + last as f64 * self.grid_step;
            return self.psi_grid[last] + (x - hi) * self.dpsi_grid[last];
        }
        let k = (u.floor() as usize).min(last - 1);
        let s = u - k as f64;
        let h = self.grid_step;
        let (p0, p1, m0, m1) = (self.psi_grid[k], self.psi_grid[k + 1], self.dpsi_grid[k], self.dpsi_grid[k + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0 + (s3 - 2.0 * s2 + s) * h * m0 + (-2.0 * s3 + 3.0 * s2) * p1 + (s3 - s2) * h * m1
    }

    /// `ψ(x) - ψ(0)`
    pub fn psi(&self, x: f64) -> f64 {
        self.psi_raw(x) - self.psi_raw(0.0)
    }
}

impl DerivativeSource for PoissonOracle {
    fn at_point(&self, x: &[f64], _m: &MeasureSummary) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((vec![self.dpsi(x[0])], vec![self.d2psi(x[0])]))
    }
}

impl MeasureFunctional for PoissonOracle {
    fn value(&self, ens: &Ensemble) -> f64 {
        ens.positions().iter().map(|x| self.psi(*x)).sum::<f64>() / ens.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;
    use crate::functional::{Mean, MeanSquared, SecondMoment};

    fn cloud() -> Ensemble {
        Ensemble::from_scalars(&[0.3, -1.2, 2.0, 0.7, -0.1]).unwrap()
    }

    #[test]
    fn second_moment_field_is_exact() {
        let e = cloud();
        let f = lions_derivative(&SecondMoment, &e, 1e-3).unwrap();
        for i in 0..e.len() {
            assert!((f.dmu[i] - 2.0 * e.positions()[i]).abs() < 1e-12);
            assert!((f.dxdmu[i] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_field_is_exact() {
        let f = lions_derivative(&Mean { coord: 0 }, &cloud(), 1e-4).unwrap();
        assert!(f.dmu.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(f.dxdmu.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mean_squared_shows_the_n_scaling() {
        let e = cloud();
        let n = e.len() as f64;
        let m = e.summary().mean[0];
        let f = lions_derivative(&MeanSquared { coord: 0 }, &e, 1e-3).unwrap();
        for i in 0..e.len() {
            assert!((f.dmu[i] - 2.0 * m).abs() < 1e-12);
            assert!((f.dxdmu[i] - 2.0 / n).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_step() {
        assert!(lions_derivative(&Mean { coord: 0 }, &cloud(), 0.0).is_err());
    }

    #[test]
    fn quantiles() {
        assert!(normal_quantile(0.5).abs() < 1e-12);
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((normal_quantile(0.001) + 3.090_232_306_167_813).abs() < 1e-7);
    }

    #[test]
    fn oracle_lambda_for_cosine() {
        let o = PoissonOracle::new(&benchmarks::ou_cos(), &[0.0]).unwrap();
        assert!((o.lambda() - (-0.5f64).exp()).abs() < 1e-10);
        assert_eq!(o.stationary(), (0.0, 1.0));
    }

    #[test]
    fn oracle_solves_poisson_equation() {
        // cos reward under dX = -X dt + √2 dW: ψ' = -sin-type closed form is
        // not elementary, so check the equation itself at scattered points
        let o = PoissonOracle::new(&benchmarks::ou_cos(), &[0.0]).unwrap();
        for x in [-3.0, -1.1, -0.2, 0.0, 0.4, 1.7, 3.5] {
            let lhs = 0.5 * 2.0 * o.d2psi(x) - x * o.dpsi(x);
            assert!((lhs - (o.lambda() - x.cos())).abs() < 1e-6, "x = {x}");
        }
    }

    #[test]
    fn psi_matches_integral_of_dpsi() {
        let o = PoissonOracle::new(&benchmarks::ou_clipped_quadratic(), &[0.0]).unwrap();
        let direct = simpson(|y| o.dpsi(y), 0.0, 1.3, 200);
        assert!((o.psi(1.3) - direct).abs() < 1e-7, "{} vs {}", o.psi(1.3), direct);
        assert_eq!(o.psi(0.0), 0.0);
    }

    #[test]
    fn oracle_rejects_mean_field_models() {
        assert!(PoissonOracle::new(&benchmarks::mf_ou_cos(1.0), &[0.0]).is_err());
        assert!(PoissonOracle::new(&benchmarks::tanh_drive(), &[5.0]).is_err());
    }

    #[test]
    fn finite_difference_point_query() {
        let fd = FiniteDifference::new(&SecondMoment, 1e-3);
        let (g, h) = fd.at_point(&[0.7], &MeasureSummary { mean: vec![0.0], second_moment: 1.0 }).unwrap();
        assert!((g[0] - 1.4).abs() < 1e-9);
        assert!((h[0] - 2.0).abs() < 1e-9);
    }
}
