//! Controlled mean-field models with analytically known constants.
//!
//! The built-in family is affine in the state and in the mean of the law:
//!
//! ```text
//! b(x, μ, a) = b0 + B x + B̄ m(μ) + G a
//! σ(x, μ, a) = Σ0 + diag(S x + S̄ m(μ))
//! f(x, μ, a) = Σ w r(x_j) + Σ w̄ r̄(m_j) + <ℓ, a> - q |a|²
//! ```
//!
//! with every `r` drawn from a bounded Lipschitz library. Since `μ -> m(μ)`
//! is 1-Lipschitz for W2, all Lipschitz, growth and dissipativity constants
//! are read off the coefficients. Models with arbitrary coefficients plug in
//! through [`CustomModel`] and must bring their own constants.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::particle::{MeasureSummary, RngStream};

/// Action space `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSet {
    /// Finitely many points of `R^k`.
    Finite {
        #[serde(deserialize_with = "crate::serde_util::scalars_or_vecs")]
        points: Vec<Vec<f64>>,
    },
    /// Box `[lower, upper]` in `R^k`, searched on a grid with
    /// `resolution` points per axis.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
        #[serde(default = "default_resolution")]
        resolution: usize,
    },
}

fn default_resolution() -> usize {
    33
}

impl ActionSet {
    pub fn singleton(point: Vec<f64>) -> Self {
        ActionSet::Finite {
            points: vec![point],
        }
    }

    pub fn finite_scalars(values: &[f64]) -> Self {
        ActionSet::Finite {
            points: values.iter().map(|&v| vec![v]).collect(),
        }
    }

    pub fn interval(lower: f64, upper: f64, resolution: usize) -> Self {
        ActionSet::Box {
            lower: vec![lower],
            upper: vec![upper],
            resolution,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionSet::Finite { points } => {
                let Some(first) = points.first() else {
                    return Err(Error::config("action_set.points", "action set is empty"));
                };
                if first.is_empty() {
                    return Err(Error::config("action_set.points", "zero-dimensional action"));
                }
                if points.iter().any(|p| p.len() != first.len()) {
                    return Err(Error::config(
                        "action_set.points",
                        "points have inconsistent dimension",
                    ));
                }
                if points.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::config("action_set.points", "non-finite action"));
                }
            }
            ActionSet::Box {
                lower,
                upper,
                resolution,
            } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::config(
                        "action_set.lower",
                        "box bounds must be nonempty and of equal length",
                    ));
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
                    return Err(Error::config("action_set.upper", "need finite lower <= upper"));
                }
                if *resolution == 0 {
                    return Err(Error::config("action_set.resolution", "grid resolution must be > 0"));
                }
            }
        }
        Ok(())
    }

    /// Action dimension `k`.
    pub fn dim(&self) -> usize {
        match self {
            ActionSet::Finite { points } => points.first().map_or(0, Vec::len),
            ActionSet::Box { lower, .. } => lower.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ActionSet::Finite { .. })
    }

    /// Search grid: the points themselves, or the tensor grid of the box.
    pub fn grid(&self) -> Vec<Vec<f64>> {
        match self {
            ActionSet::Finite { points } => points.clone(),
            ActionSet::Box { resolution, .. } => self.grid_with_resolution(*resolution),
        }
    }

    /// Like [`grid`](Self::grid) but overriding the box resolution.
    /// Grid points are listed in lexicographic ascending order.
    pub fn grid_with_resolution(&self, resolution: usize) -> Vec<Vec<f64>> {
        match self {
            ActionSet::Finite { points } => points.clone(),
            ActionSet::Box { lower, upper, .. } => {
                let axes: Vec<Vec<f64>> = lower
                    .iter()
                    .zip(upper)
                    .map(|(&l, &u)| {
                        if resolution == 1 {
                            vec![0.5 * (l + u)]
                        } else {
                            (0..resolution)
                                .map(|i| {
                                    let s = i as f64 / (resolution - 1) as f64;
                                    // pin the endpoints exactly
                                    if i + 1 == resolution {
                                        u
                                    } else {
                                        l + s * (u - l)
                                    }
                                })
                                .collect()
                        }
                    })
                    .collect();
                cartesian(&axes)
            }
        }
    }

    /// Corners of the box, or the points of a finite set.
    pub fn extreme_points(&self) -> Vec<Vec<f64>> {
        match self {
            ActionSet::Finite { points } => points.clone(),
            ActionSet::Box { lower, upper, .. } => {
                let axes: Vec<Vec<f64>> =
                    lower.iter().zip(upper).map(|(&l, &u)| vec![l, u]).collect();
                cartesian(&axes)
            }
        }
    }

    /// Maps an arbitrary vector into `A`: clamping for boxes, nearest point
    /// (first on ties) for finite sets.
    pub fn project(&self, raw: &[f64], out: &mut [f64]) {
        match self {
            ActionSet::Box { lower, upper, .. } => {
                for ((o, r), (l, u)) in out.iter_mut().zip(raw).zip(lower.iter().zip(upper)) {
                    *o = if r.is_nan() { *l } else { r.clamp(*l, *u) };
                }
            }
            ActionSet::Finite { points } => {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    let d: f64 = p.iter().zip(raw).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                out.copy_from_slice(&points[best]);
            }
        }
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        match self {
            ActionSet::Box { lower, upper, .. } => {
                a.len() == lower.len()
                    && a.iter().zip(lower.iter().zip(upper)).all(|(v, (l, u))| l <= v && v <= u)
            }
            ActionSet::Finite { points } => points.iter().any(|p| p.as_slice() == a),
        }
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::with_capacity(axes.len())];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// Bounded Lipschitz scalar functions used to build rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardKind {
    /// The constant 1.
    Constant,
    /// `cos(ω x)`
    Cos {
        #[serde(default = "one")]
        omega: f64,
    },
    /// `tanh(x / s)`
    Tanh {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `exp(-(x - c)² / (2 w²))`
    GaussianBump {
        #[serde(default)]
        center: f64,
        #[serde(default = "one")]
        width: f64,
    },
    /// `min(x², clip)`
    ClippedQuadratic { clip: f64 },
}

fn one() -> f64 {
    1.0
}

impl RewardKind {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            RewardKind::Constant => 1.0,
            RewardKind::Cos { omega } => (omega * x).cos(),
            RewardKind::Tanh { scale } => (x / scale).tanh(),
            RewardKind::GaussianBump { center, width } => {
                let z = (x - center) / width;
                (-0.5 * z * z).exp()
            }
            RewardKind::ClippedQuadratic { clip } => (x * x).min(clip),
        }
    }

    /// `sup |r|`
    pub fn bound(&self) -> f64 {
        match *self {
            RewardKind::ClippedQuadratic { clip } => clip,
            _ => 1.0,
        }
    }

    /// Lipschitz constant of `r`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            RewardKind::Constant => 0.0,
            RewardKind::Cos { omega } => omega.abs(),
            RewardKind::Tanh { scale } => 1.0 / scale.abs(),
            // max of |z| e^{-z²/2} / w is at |z| = 1
            RewardKind::GaussianBump { width, .. } => (-0.5_f64).exp() / width.abs(),
            RewardKind::ClippedQuadratic { clip } => 2.0 * clip.sqrt(),
        }
    }

    fn validate(&self, key: &str) -> Result<()> {
        let ok = match *self {
            RewardKind::Constant => true,
            RewardKind::Cos { omega } => omega.is_finite(),
            RewardKind::Tanh { scale } => scale.is_finite() && scale != 0.0,
            RewardKind::GaussianBump { center, width } => center.is_finite() && width.is_finite() && width != 0.0,
            RewardKind::ClippedQuadratic { clip } => clip.is_finite() && clip >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(key, format!("invalid reward parameters {self:?}")))
        }
    }
}

/// `weight · r(v[coord])`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTerm {
    #[serde(default = "one")]
    pub weight: f64,
    #[serde(default)]
    pub coord: usize,
    #[serde(flatten)]
    pub kind: RewardKind,
}

impl RewardTerm {
    pub fn new(weight: f64, kind: RewardKind) -> Self {
        RewardTerm {
            weight,
            coord: 0,
            kind,
        }
    }

    #[inline]
    pub fn eval(&self, v: &[f64]) -> f64 {
        self.weight * self.kind.eval(v[self.coord])
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reward {
    /// Terms in the particle position.
    #[serde(default)]
    pub state: Vec<RewardTerm>,
    /// Terms in the mean of the law.
    #[serde(default)]
    pub mean: Vec<RewardTerm>,
    /// `<ℓ, a>`; empty means zero.
    #[serde(default)]
    pub action_linear: Vec<f64>,
    /// `q` in `-q |a|²`; must be nonnegative.
    #[serde(default)]
    pub action_quadratic: f64,
}

impl Reward {
    pub fn constant(c: f64) -> Self {
        Reward {
            state: vec![RewardTerm::new(c, RewardKind::Constant)],
            ..Reward::default()
        }
    }

    pub fn state_term(weight: f64, kind: RewardKind) -> Self {
        Reward {
            state: vec![RewardTerm::new(weight, kind)],
            ..Reward::default()
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], mean: &[f64], a: &[f64]) -> f64 {
        let mut r = 0.0;
        for t in &self.state {
            r += t.eval(x);
        }
        for t in &self.mean {
            r += t.eval(mean);
        }
        if !self.action_linear.is_empty() {
            r += self.action_linear.iter().zip(a).map(|(l, v)| l * v).sum::<f64>();
        }
        if self.action_quadratic != 0.0 {
            r -= self.action_quadratic * a.iter().map(|v| v * v).sum::<f64>();
        }
        r
    }

    fn action_part_bound(&self, actions: &ActionSet) -> f64 {
        if self.action_linear.is_empty() && self.action_quadratic == 0.0 {
            return 0.0;
        }
        match actions {
            ActionSet::Finite { points } => points
                .iter()
                .map(|a| {
                    let lin: f64 = self.action_linear.iter().zip(a).map(|(l, v)| l * v).sum();
                    (lin - self.action_quadratic * a.iter().map(|v| v * v).sum::<f64>()).abs()
                })
                .fold(0.0, f64::max),
            ActionSet::Box { lower, upper, .. } => {
                let radius: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| l.abs().max(u.abs())).collect();
                let lin: f64 = self.action_linear.iter().zip(&radius).map(|(l, r)| l.abs() * r).sum();
                lin + self.action_quadratic * radius.iter().map(|r| r * r).sum::<f64>()
            }
        }
    }

    /// `(M_f, L_f)`
    pub fn constants(&self, actions: &ActionSet) -> (f64, f64) {
        let bound: f64 = self
            .state
            .iter()
            .chain(&self.mean)
            .map(|t| t.weight.abs() * t.kind.bound())
            .sum::<f64>()
            + self.action_part_bound(actions);
        let lip_x: f64 = self.state.iter().map(|t| t.weight.abs() * t.kind.lipschitz()).sum();
        let lip_m: f64 = self.mean.iter().map(|t| t.weight.abs() * t.kind.lipschitz()).sum();
        (bound, lip_x.max(lip_m))
    }

    fn validate(&self, dim: usize, action_dim: usize) -> Result<()> {
        for (i, t) in self.state.iter().enumerate() {
            let key = format!("reward.state[{i}]");
            t.kind.validate(&key)?;
            if t.coord >= dim || !t.weight.is_finite() {
                return Err(Error::config(key, "coordinate out of range or non-finite weight"));
            }
        }
        for (i, t) in self.mean.iter().enumerate() {
            let key = format!("reward.mean[{i}]");
            t.kind.validate(&key)?;
            if t.coord >= dim || !t.weight.is_finite() {
                return Err(Error::config(key, "coordinate out of range or non-finite weight"));
            }
        }
        if !self.action_linear.is_empty() && self.action_linear.len() != action_dim {
            return Err(Error::DimensionMismatch {
                context: "reward.action_linear".into(),
                expected: action_dim,
                got: self.action_linear.len(),
            });
        }
        if !(self.action_quadratic >= 0.0) {
            return Err(Error::config("reward.action_quadratic", "action cost must be nonnegative"));
        }
        Ok(())
    }
}

/// `b0 + B x + B̄ m + G a`; omitted pieces are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineDrift {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub offset: Vec<f64>,
    pub state: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<Matrix>,
}

/// `Σ0 + diag(S x + S̄ m)`; omitted pieces are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineDiffusion {
    pub base: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Matrix>,
}

/// Serializable description of an affine mean-field model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default = "default_dim")]
    pub dim: usize,
    pub drift: AffineDrift,
    pub diffusion: AffineDiffusion,
    pub reward: Reward,
    pub action_set: ActionSet,
    /// Permits `σ ≡ 0`.
    #[serde(default)]
    pub degenerate_diffusion: bool,
}

fn default_dim() -> usize {
    1
}

/// Everything the simulator and the analysis need from a model.
///
/// The measure argument enters only through its [`MeasureSummary`].
/// Noise dimension equals state dimension; `diffusion` writes a row-major
/// `d x d` matrix.
pub trait Dynamics: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn action_set(&self) -> &ActionSet;
    fn drift(&self, x: &[f64], m: &MeasureSummary, a: &[f64], out: &mut [f64]);
    fn diffusion(&self, x: &[f64], m: &MeasureSummary, a: &[f64], out: &mut [f64]);
    fn reward(&self, x: &[f64], m: &MeasureSummary, a: &[f64]) -> f64;
    fn constants(&self) -> Result<LipschitzConstants>;

    /// Largest `γ` with the one-sided contraction inequality in `x`,
    /// when it is known in closed form.
    fn contraction_rate(&self) -> Option<f64> {
        None
    }

    /// User-asserted dissipativity margin, for models without `γ`.
    fn asserted_eta(&self) -> Option<f64> {
        None
    }
}

/// Validated affine model ready for simulation.
#[derive(Debug, Clone)]
pub struct AffineModel {
    spec: ModelSpec,
    b0: Vec<f64>,
    bx: Matrix,
    bm: Matrix,
    g: Matrix,
    s0: Matrix,
    sx: Matrix,
    sm: Matrix,
}

fn shaped(m: &Option<Matrix>, rows: usize, cols: usize, key: &str) -> Result<Matrix> {
    match m {
        None => Ok(Matrix::zeros(rows, cols)),
        Some(m) => check_shape(m, rows, cols, key).map(|_| m.clone()),
    }
}

fn check_shape(m: &Matrix, rows: usize, cols: usize, key: &str) -> Result<()> {
    if m.rows() != rows || m.cols() != cols {
        return Err(Error::config(
            key,
            format!("expected a {rows}x{cols} matrix, got {}x{}", m.rows(), m.cols()),
        ));
    }
    if m.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::config(key, "non-finite coefficient"));
    }
    Ok(())
}

impl AffineModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let d = spec.dim;
        if d == 0 {
            return Err(Error::config("dim", "state dimension must be >= 1"));
        }
        spec.action_set.validate()?;
        let k = spec.action_set.dim();
        let b0 = if spec.drift.offset.is_empty() {
            vec![0.0; d]
        } else if spec.drift.offset.len() == d {
            spec.drift.offset.clone()
        } else {
            return Err(Error::config("drift.offset", format!("expected length {d}")));
        };
        check_shape(&spec.drift.state, d, d, "drift.state")?;
        let bm = shaped(&spec.drift.mean, d, d, "drift.mean")?;
        let g = shaped(&spec.drift.control, d, k, "drift.control")?;
        check_shape(&spec.diffusion.base, d, d, "diffusion.base")?;
        let sx = shaped(&spec.diffusion.state, d, d, "diffusion.state")?;
        let sm = shaped(&spec.diffusion.mean, d, d, "diffusion.mean")?;
        spec.reward.validate(d, k)?;
        let degenerate = spec.diffusion.base.is_zero() && sx.is_zero() && sm.is_zero();
        if degenerate && !spec.degenerate_diffusion {
            return Err(Error::config(
                "diffusion",
                "diffusion is identically zero; set degenerate_diffusion = true to allow it",
            ));
        }
        Ok(AffineModel {
            bx: spec.drift.state.clone(),
            s0: spec.diffusion.base.clone(),
            b0,
            bm,
            g,
            sx,
            sm,
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Diffusion does not depend on the state or the mean.
    pub fn has_constant_diffusion(&self) -> bool {
        self.sx.is_zero() && self.sm.is_zero()
    }

    pub fn drift_state(&self) -> &Matrix {
        &self.bx
    }

    pub fn drift_mean(&self) -> &Matrix {
        &self.bm
    }

    pub fn drift_offset(&self) -> &[f64] {
        &self.b0
    }

    pub fn drift_control(&self) -> &Matrix {
        &self.g
    }

    pub fn diffusion_base(&self) -> &Matrix {
        &self.s0
    }

    pub fn reward_spec(&self) -> &Reward {
        &self.spec.reward
    }
}

impl Dynamics for AffineModel {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn action_set(&self) -> &ActionSet {
        &self.spec.action_set
    }

    #[inline]
    fn drift(&self, x: &[f64], m: &MeasureSummary, a: &[f64], out: &mut [f64]) {
        if out.len() == 1 {
            // scalar fast path
            let mut v = self.b0[0] + self.bx.as_slice()[0] * x[0] + self.bm.as_slice()[0] * m.mean[0];
            for (gj, aj) in self.g.as_slice().iter().zip(a) {
                v += gj * aj;
            }
            out[0] = v;
            return;
        }
        out.copy_from_slice(&self.b0);
        self.bx.mul_add_into(x, out);
        self.bm.mul_add_into(&m.mean, out);
        self.g.mul_add_into(a, out);
    }

    #[inline]
    fn diffusion(&self, x: &[f64], m: &MeasureSummary, _a: &[f64], out: &mut [f64]) {
        let d = self.spec.dim;
        if d == 1 {
            out[0] = self.s0.as_slice()[0] + self.sx.as_slice()[0] * x[0] + self.sm.as_slice()[0] * m.mean[0];
            return;
        }
        out.copy_from_slice(self.s0.as_slice());
        let mut diag = vec![0.0; d];
        self.sx.mul_add_into(x, &mut diag);
        self.sm.mul_add_into(&m.mean, &mut diag);
        for (i, v) in diag.into_iter().enumerate() {
            out[i * d + i] += v;
        }
    }

    #[inline]
    fn reward(&self, x: &[f64], m: &MeasureSummary, a: &[f64]) -> f64 {
        self.spec.reward.eval(x, &m.mean, a)
    }

    fn constants(&self) -> Result<LipschitzConstants> {
        let d = self.spec.dim;
        let sigma0 = self.s0.frobenius_norm();
        let growth = self
            .spec
            .action_set
            .extreme_points()
            .into_iter()
            .chain(self.spec.action_set.grid())
            .map(|a| {
                let mut b = self.b0.clone();
                self.g.mul_add_into(&a, &mut b);
                b.iter().map(|v| v * v).sum::<f64>().sqrt() + sigma0
            })
            .fold(0.0, f64::max);
        let (reward_bound, reward_lipschitz) = self.spec.reward.constants(&self.spec.action_set);
        debug_assert_eq!(self.bx.rows(), d);
        Ok(LipschitzConstants {
            drift_state: self.bx.operator_norm(),
            drift_measure: self.bm.operator_norm(),
            diffusion_state: self.sx.operator_norm(),
            diffusion_measure: self.sm.operator_norm(),
            growth,
            reward_bound,
            reward_lipschitz,
        })
    }

    fn contraction_rate(&self) -> Option<f64> {
        // <B v, v> + |S v|² / 2 <= λ_max(sym(B) + SᵀS / 2) |v|²
        let d = self.spec.dim;
        let sts = self.sx.transpose().matmul(&self.sx);
        let mut q = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                q.set(i, j, 0.5 * (self.bx.get(i, j) + self.bx.get(j, i)) + 0.5 * sts.get(i, j));
            }
        }
        let top = symmetric_eigenvalues(&q).into_iter().fold(f64::NEG_INFINITY, f64::max);
        Some(-top)
    }
}

type VecFn = dyn Fn(&[f64], &MeasureSummary, &[f64], &mut [f64]) + Send + Sync;
type ScalarFn = dyn Fn(&[f64], &MeasureSummary, &[f64]) -> f64 + Send + Sync;

/// Model with arbitrary user-supplied coefficients.
pub struct CustomModel {
    pub name: String,
    pub dim: usize,
    pub action_set: ActionSet,
    pub drift: Box<VecFn>,
    pub diffusion: Box<VecFn>,
    pub reward: Box<ScalarFn>,
    pub constants: Option<LipschitzConstants>,
    /// Dissipativity margin claimed by the user.
    pub eta: Option<f64>,
}

impl std::fmt::Debug for CustomModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomModel")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("constants", &self.constants)
            .field("eta", &self.eta)
            .finish_non_exhaustive()
    }
}

impl Dynamics for CustomModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn dim(&self) -> usize {
        self.dim
    }
    fn action_set(&self) -> &ActionSet {
        &self.action_set
    }
    fn drift(&self, x: &[f64], m: &MeasureSummary, a: &[f64], out: &mut [f64]) {
        (self.drift)(x, m, a, out)
    }
    fn diffusion(&self, x: &[f64], m: &MeasureSummary, a: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, m, a, out)
    }
    fn reward(&self, x: &[f64], m: &MeasureSummary, a: &[f64]) -> f64 {
        (self.reward)(x, m, a)
    }
    fn constants(&self) -> Result<LipschitzConstants> {
        self.action_set.validate()?;
        self.constants
            .clone()
            .ok_or_else(|| Error::MissingConstants(self.name.clone()))
    }
    fn asserted_eta(&self) -> Option<f64> {
        self.eta
    }
}

/// Constants of the standing Lipschitz, growth and reward assumptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConstants {
    /// `L_bx`
    pub drift_state: f64,
    /// `L_bμ`
    pub drift_measure: f64,
    /// `L_σx`
    pub diffusion_state: f64,
    /// `L_σμ`
    pub diffusion_measure: f64,
    /// `M >= |b(0, δ0, a)| + |σ(0, δ0, a)|`
    pub growth: f64,
    /// `M_f`
    pub reward_bound: f64,
    /// `L_f`
    pub reward_lipschitz: f64,
}

/// Returns the model's constants; custom models without supplied constants
/// are rejected.
pub fn lipschitz_constants(model: &dyn Dynamics) -> Result<LipschitzConstants> {
    model.constants()
}

/// Outcome of the Monte Carlo probe of the averaged dissipativity inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledCheck {
    pub n_samples: usize,
    pub particle_count: usize,
    pub eta_used: f64,
    pub violations: usize,
    /// Largest `lhs - rhs` seen; negative when every sample had slack.
    pub worst_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipativityReport {
    pub model: String,
    /// One-sided contraction rate in `x`, when known analytically.
    pub gamma: Option<f64>,
    /// Margin `γ - (L_bμ + L_σx L_σμ + L_σμ²/2)`, or the user's assertion.
    pub eta: Option<f64>,
    /// Second-moment ceiling `K`.
    pub k_ceiling: Option<f64>,
    pub constants: LipschitzConstants,
    pub sampled: Option<SampledCheck>,
    pub passed: bool,
}

impl DissipativityReport {
    pub fn with_samples(mut self, sampled: SampledCheck) -> Self {
        self.passed = self.eta.is_some_and(|e| e > 0.0) && sampled.violations == 0;
        self.sampled = Some(sampled);
        self
    }

    pub fn eta_or_err(&self) -> Result<f64> {
        self.eta
            .ok_or_else(|| Error::config("eta", format!("no dissipativity margin for `{}`", self.model)))
    }

    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"));
        let c = &self.constants;
        let mut s = String::new();
        s.push_str(&format!("model              {}\n", self.model));
        s.push_str(&format!("L_bx               {:.6}\n", c.drift_state));
        s.push_str(&format!("L_bmu              {:.6}\n", c.drift_measure));
        s.push_str(&format!("L_sx               {:.6}\n", c.diffusion_state));
        s.push_str(&format!("L_smu              {:.6}\n", c.diffusion_measure));
        s.push_str(&format!("M                  {:.6}\n", c.growth));
        s.push_str(&format!("M_f                {:.6}\n", c.reward_bound));
        s.push_str(&format!("L_f                {:.6}\n", c.reward_lipschitz));
        s.push_str(&format!("gamma              {}\n", fmt(self.gamma)));
        s.push_str(&format!("eta                {}\n", fmt(self.eta)));
        s.push_str(&format!("K                  {}\n", fmt(self.k_ceiling)));
        if let Some(sm) = &self.sampled {
            s.push_str(&format!(
                "sampled            {} samples x {} particles, {} violations (worst excess {:.3e})\n",
                sm.n_samples, sm.particle_count, sm.violations, sm.worst_excess
            ));
        }
        s.push_str(&format!("status             {}\n", if self.passed { "PASS" } else { "FAIL" }));
        s
    }
}

/// `γ - (L_bμ + L_σx L_σμ + L_σμ² / 2)`
pub fn eta_from_gamma(gamma: f64, c: &LipschitzConstants) -> f64 {
    gamma
        - (c.drift_measure
            + c.diffusion_state * c.diffusion_measure
            + 0.5 * c.diffusion_measure * c.diffusion_measure)
}

/// Second-moment ceiling `K` such that `E|X_t|² <= E|X_0|² e^{-ηt} + K`.
///
/// Along a solution, `y(t) = E|X_t|²` satisfies
/// `y' <= -2η y + 2M(1 + L_σx) E|X| + 2M L_σμ W2(P_X, δ0) + M²`
/// `   <= -2η y + C √y + M²` with `C = 2M(1 + L_σx + L_σμ)`.
/// Young's inequality `C √y <= η y + C² / (4η)` leaves
/// `y' <= -η y + M² + C² / (4η)`, so Gronwall gives the bound with
/// `K = (M² + C² / (4η)) / η`.
pub fn second_moment_ceiling(eta: f64, c: &LipschitzConstants) -> Option<f64> {
    if !(eta > 0.0) {
        return None;
    }
    let m = c.growth;
    let cc = 2.0 * m * (1.0 + c.diffusion_state + c.diffusion_measure);
    Some((m * m + cc * cc / (4.0 * eta)) / eta)
}

/// Analytic part of the dissipativity report.
pub fn dissipativity_margin<M: Dynamics + ?Sized>(model: &M) -> Result<DissipativityReport> {
    let constants = model.constants()?;
    let gamma = model.contraction_rate();
    let eta = match gamma {
        Some(g) => Some(eta_from_gamma(g, &constants)),
        None => model.asserted_eta(),
    };
    let k_ceiling = eta.and_then(|e| second_moment_ceiling(e, &constants));
    Ok(DissipativityReport {
        model: model.name().to_string(),
        gamma,
        eta,
        k_ceiling,
        constants,
        sampled: None,
        passed: eta.is_some_and(|e| e > 0.0),
    })
}

/// Probes the averaged dissipativity inequality on random pairs of
/// equal-weight particle clouds.
///
/// Each sample draws two clouds `ξ, ξ'` of `particle_count` points (paired
/// by index) and one action from the grid, then compares
/// `mean(<b(ξ_i, μ, a) - b(ξ'_i, μ', a), ξ_i - ξ'_i> + |σ(ξ_i) - σ(ξ'_i)|² / 2)`
/// against `-η mean|ξ_i - ξ'_i|²`. Sample `k` uses its own stream, so the
/// result does not depend on how samples are split across threads.
pub fn sample_check_dissipativity(
    model: &dyn Dynamics,
    n_samples: usize,
    particle_count: usize,
    seed: u64,
    eta: Option<f64>,
) -> Result<SampledCheck> {
    if n_samples == 0 {
        return Err(Error::config("n_samples", "need at least one sample"));
    }
    if particle_count == 0 {
        return Err(Error::config("particle_count", "need at least one particle"));
    }
    let eta = match eta {
        Some(e) => e,
        None => dissipativity_margin(model)?.eta_or_err()?,
    };
    let grid = model.action_set().grid();
    let d = model.dim();
    let root = RngStream::new(seed, 0x0d15_51a7);
    let excesses: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = root.child(k as u64).rng();
            let (xi, xi2) = probe_pair(&mut rng, particle_count, d, k % 4);
            let a = &grid[rng.gen_range(0..grid.len())];
            let (lhs, rhs) = dissipativity_sides(model, &xi, &xi2, a, eta);
            let excess = lhs - rhs;
            let tol = 1e-10 * (lhs.abs() + rhs.abs());
            if excess > tol {
                excess
            } else {
                excess.min(0.0)
            }
        })
        .collect();
    let violations = excesses.iter().filter(|&&e| e > 0.0).count();
    let worst_excess = excesses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(SampledCheck {
        n_samples,
        particle_count,
        eta_used: eta,
        violations,
        worst_excess,
    })
}

fn probe_pair<R: Rng>(rng: &mut R, n: usize, d: usize, strategy: usize) -> (Vec<f64>, Vec<f64>) {
    let gauss = |rng: &mut R, mean: f64, scale: f64| -> Vec<f64> {
        (0..n * d)
            .map(|_| mean + scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let m1 = rng.gen_range(-5.0..5.0);
    let s1 = 10f64.powf(rng.gen_range(-1.0..0.7));
    let a = gauss(rng, m1, s1);
    let b = match strategy {
        0 => {
            let m2 = rng.gen_range(-5.0..5.0);
            let s2 = 10f64.powf(rng.gen_range(-1.0..0.7));
            gauss(rng, m2, s2)
        }
        1 => {
            let shift = rng.gen_range(-3.0..3.0);
            a.iter().map(|v| v + shift).collect()
        }
        2 => {
            let eps = 10f64.powf(rng.gen_range(-3.0..0.0));
            let noise = gauss(rng, 0.0, eps);
            a.iter().zip(noise).map(|(v, e)| v + e).collect()
        }
        _ => {
            let c = rng.gen_range(-2.0..2.0);
            a.iter().map(|v| c * v).collect()
        }
    };
    (a, b)
}

/// Both sides of the averaged inequality for clouds paired by index.
pub fn dissipativity_sides(
    model: &dyn Dynamics,
    xi: &[f64],
    xi2: &[f64],
    a: &[f64],
    eta: f64,
) -> (f64, f64) {
    let d = model.dim();
    let n = xi.len() / d;
    let m1 = MeasureSummary::from_points(xi, d);
    let m2 = MeasureSummary::from_points(xi2, d);
    let mut b1 = vec![0.0; d];
    let mut b2 = vec![0.0; d];
    let mut s1 = vec![0.0; d * d];
    let mut s2 = vec![0.0; d * d];
    let mut lhs = 0.0;
    let mut gap = 0.0;
    for i in 0..n {
        let x = &xi[i * d..(i + 1) * d];
        let y = &xi2[i * d..(i + 1) * d];
        model.drift(x, &m1, a, &mut b1);
        model.drift(y, &m2, a, &mut b2);
        model.diffusion(x, &m1, a, &mut s1);
        model.diffusion(y, &m2, a, &mut s2);
        let inner: f64 = (0..d).map(|j| (b1[j] - b2[j]) * (x[j] - y[j])).sum();
        let sig: f64 = s1.iter().zip(&s2).map(|(p, q)| (p - q) * (p - q)).sum();
        lhs += inner + 0.5 * sig;
        gap += (0..d).map(|j| (x[j] - y[j]).powi(2)).sum::<f64>();
    }
    (lhs / n as f64, -eta * gap / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks;

    fn scalar_model(b: f64, bbar: f64, sigma: f64, s: f64, sbar: f64, actions: ActionSet) -> AffineModel {
        AffineModel::new(ModelSpec {
            name: "t".into(),
            dim: 1,
            drift: AffineDrift {
                offset: vec![],
                state: Matrix::scalar(b),
                mean: Some(Matrix::scalar(bbar)),
                control: Some(Matrix::from_rows(&[vec![1.0; actions.dim()]]).unwrap()),
            },
            diffusion: AffineDiffusion {
                base: Matrix::scalar(sigma),
                state: Some(Matrix::scalar(s)),
                mean: Some(Matrix::scalar(sbar)),
            },
            reward: Reward::state_term(1.0, RewardKind::Cos { omega: 1.0 }),
            action_set: actions,
            degenerate_diffusion: true,
        })
        .unwrap()
    }

    #[test]
    fn constants_of_pure_ou() {
        let m = benchmarks::pure_ou();
        let c = lipschitz_constants(&m).unwrap();
        assert_eq!(c.drift_state, 2.0);
        assert_eq!(c.drift_measure, 0.0);
        assert_eq!(c.diffusion_state, 0.0);
        assert_eq!(c.diffusion_measure, 0.0);
        assert_eq!(c.growth, 0.5);
    }

    #[test]
    fn constants_of_controlled_mean_field_drift() {
        // b = -x + 0.5 (m - x) + a, σ = 1, A = [-1, 1]
        let m = scalar_model(-1.5, 0.5, 1.0, 0.0, 0.0, ActionSet::interval(-1.0, 1.0, 33));
        let c = m.constants().unwrap();
        assert_eq!(c.drift_state, 1.5);
        assert_eq!(c.drift_measure, 0.5);
        assert_eq!(c.growth, 2.0);
    }

    #[test]
    fn cos_reward_constants() {
        let r = Reward::state_term(1.0, RewardKind::Cos { omega: 1.0 });
        assert_eq!(r.constants(&ActionSet::singleton(vec![0.0])), (1.0, 1.0));
    }

    #[test]
    fn missing_constants_is_an_error() {
        let custom = CustomModel {
            name: "custom".into(),
            dim: 1,
            action_set: ActionSet::singleton(vec![0.0]),
            drift: Box::new(|x, _, _, out| out[0] = -x[0]),
            diffusion: Box::new(|_, _, _, out| out[0] = 1.0),
            reward: Box::new(|x, _, _| x[0].sin()),
            constants: None,
            eta: None,
        };
        assert!(matches!(lipschitz_constants(&custom), Err(Error::MissingConstants(_))));
    }

    #[test]
    fn eta_examples() {
        let pure = dissipativity_margin(&benchmarks::pure_ou()).unwrap();
        assert_eq!(pure.gamma, Some(2.0));
        assert_eq!(pure.eta, Some(2.0));
        assert!(pure.passed);

        let c = LipschitzConstants {
            drift_state: 0.0,
            drift_measure: 0.5,
            diffusion_state: 0.5,
            diffusion_measure: 1.0,
            growth: 1.0,
            reward_bound: 1.0,
            reward_lipschitz: 1.0,
        };
        assert_eq!(eta_from_gamma(2.0, &c), 0.5);

        let mf = dissipativity_margin(&benchmarks::mf_ou_cos(2f64.sqrt())).unwrap();
        assert_eq!(mf.gamma, Some(1.5));
        assert_eq!(mf.eta, Some(1.0));
    }

    #[test]
    fn gamma_includes_state_dependent_noise() {
        let m = scalar_model(-2.0, 0.0, 1.0, 0.5, 0.0, ActionSet::singleton(vec![0.0]));
        assert_eq!(m.contraction_rate(), Some(2.0 - 0.125));
    }

    #[test]
    fn non_dissipative_model_fails_without_error() {
        let r = dissipativity_margin(&benchmarks::expanding_drift()).unwrap();
        assert!(r.eta.unwrap() <= 0.0);
        assert!(!r.passed);
        assert!(r.k_ceiling.is_none());
    }

    #[test]
    fn k_ceiling_for_mean_field_ou() {
        // M = 1, η = 1, C = 2  =>  K = (1 + 4/4) / 1
        let r = dissipativity_margin(&benchmarks::mf_ou_cos(1.0)).unwrap();
        assert_eq!(r.k_ceiling, Some(2.0));
    }

    #[test]
    fn sampled_check_on_pure_ou_is_clean() {
        let m = benchmarks::pure_ou();
        for seed in 0..3 {
            let s = sample_check_dissipativity(&m, 500, 16, seed, None).unwrap();
            assert_eq!(s.violations, 0);
        }
    }

    #[test]
    fn sampled_check_refutes_expanding_drift() {
        // at ξ = 0, ξ' = 1: lhs = +1 (B = 1, σ const), rhs = -0.1
        let m = benchmarks::expanding_drift();
        let (lhs, rhs) = dissipativity_sides(&m, &[0.0, 0.0], &[1.0, 1.0], &[0.0], 0.1);
        assert_eq!((lhs, rhs), (1.0, -0.1));
        let s = sample_check_dissipativity(&m, 200, 8, 3, Some(0.1)).unwrap();
        assert!(s.violations >= 1);
        assert!(s.worst_excess > 0.0);
    }

    #[test]
    fn identical_clouds_are_not_violations() {
        let m = benchmarks::pure_ou();
        let xi = [0.3, -1.2, 2.0];
        let (lhs, rhs) = dissipativity_sides(&m, &xi, &xi, &[0.0], 2.0);
        assert_eq!(lhs, 0.0);
        assert_eq!(rhs, 0.0);
    }

    #[test]
    fn degenerate_diffusion_needs_flag() {
        let mut spec = benchmarks::pure_ou().spec().clone();
        spec.diffusion.base = Matrix::scalar(0.0);
        spec.degenerate_diffusion = false;
        assert!(AffineModel::new(spec.clone()).is_err());
        spec.degenerate_diffusion = true;
        assert!(AffineModel::new(spec).is_ok());
    }

    #[test]
    fn box_grid_includes_endpoints_and_projects() {
        let a = ActionSet::interval(-1.0, 1.0, 5);
        assert_eq!(a.grid(), vec![vec![-1.0], vec![-0.5], vec![0.0], vec![0.5], vec![1.0]]);
        let mut out = [0.0];
        a.project(&[3.0], &mut out);
        assert_eq!(out, [1.0]);
        let f = ActionSet::finite_scalars(&[-1.0, 0.0, 1.0]);
        f.project(&[0.4], &mut out);
        assert_eq!(out, [0.0]);
        assert!(ActionSet::Box { lower: vec![0.0], upper: vec![1.0], resolution: 0 }
            .validate()
            .is_err());
        assert!(ActionSet::Finite { points: vec![] }.validate().is_err());
    }

    #[test]
    fn multi_dimensional_gamma_and_norms() {
        let spec = ModelSpec {
            name: "2d".into(),
            dim: 2,
            drift: AffineDrift {
                offset: vec![0.0, 0.0],
                state: Matrix::from_rows(&[vec![-2.0, 1.0], vec![0.0, -3.0]]).unwrap(),
                mean: None,
                control: None,
            },
            diffusion: AffineDiffusion {
                base: Matrix::identity(2),
                state: None,
                mean: None,
            },
            reward: Reward::constant(1.0),
            action_set: ActionSet::singleton(vec![0.0]),
            degenerate_diffusion: false,
        };
        let m = AffineModel::new(spec).unwrap();
        // sym(B) = [[-2, .5], [.5, -3]] has top eigenvalue (-5 + sqrt(2))/2
        let expected = -(-5.0 + 2f64.sqrt()) / 2.0;
        assert!((m.contraction_rate().unwrap() - expected).abs() < 1e-12);
        let s = sample_check_dissipativity(&m, 300, 8, 1, None).unwrap();
        assert_eq!(s.violations, 0);
    }
}
