//! Built-in one-dimensional benchmark models.
//!
//! | name | drift | σ | reward | actions |
//! |------|-------|---|--------|---------|
//! | `pure_ou` | `-2x` | 0.5 | `cos x` | `{0}` |
//! | `ou_cos` | `-x` | √2 | `cos x` | `{0}` |
//! | `mf_ou_cos` | `-x + 0.5 (m - x)` | √2 | `cos x` | `{0}` |
//! | `tanh_drive` | `-x + a` | 1 | `tanh x` | `{-1, 0, 1}` |
//! | `const_reward` | `-x` | 1 | `1` | `{0}` |
//! | `ou_clipped_quadratic` | `-x` | 1 | `min(x², 4)` | `{0}` |
//! | `expanding_drift` | `x` | 1 | `cos x` | `{0}` |

use crate::linalg::Matrix;
use crate::model::{ActionSet, AffineDiffusion, AffineDrift, AffineModel, Dynamics, ModelSpec, Reward, RewardKind};
use crate::policy::Policy;

pub const NAMES: [&str; 7] = [
    "pure_ou",
    "ou_cos",
    "mf_ou_cos",
    "tanh_drive",
    "const_reward",
    "ou_clipped_quadratic",
    "expanding_drift",
];

/// Scalar spec `b = b_x x + b_m m + g a`, constant `σ`.
pub fn scalar_spec(
    name: &str,
    b_x: f64,
    b_m: f64,
    g: f64,
    sigma: f64,
    reward: Reward,
    action_set: ActionSet,
) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        dim: 1,
        drift: AffineDrift {
            offset: vec![],
            state: Matrix::scalar(b_x),
            mean: (b_m != 0.0).then(|| Matrix::scalar(b_m)),
            control: (g != 0.0).then(|| Matrix::scalar(g)),
        },
        diffusion: AffineDiffusion {
            base: Matrix::scalar(sigma),
            state: None,
            mean: None,
        },
        reward,
        action_set,
        degenerate_diffusion: sigma == 0.0,
    }
}

fn build(spec: ModelSpec) -> AffineModel {
    AffineModel::new(spec).expect("built-in benchmark is valid")
}

fn cos() -> Reward {
    Reward::state_term(1.0, RewardKind::Cos { omega: 1.0 })
}

fn no_control() -> ActionSet {
    ActionSet::singleton(vec![0.0])
}

pub fn pure_ou() -> AffineModel {
    build(scalar_spec("pure_ou", -2.0, 0.0, 0.0, 0.5, cos(), no_control()))
}

pub fn ou_cos() -> AffineModel {
    build(scalar_spec("ou_cos", -1.0, 0.0, 0.0, 2f64.sqrt(), cos(), no_control()))
}

/// `θ = 1`, `κ = 0.5`: drift `-x + κ (m - x)`.
pub fn mf_ou_cos(sigma: f64) -> AffineModel {
    build(scalar_spec("mf_ou_cos", -1.5, 0.5, 0.0, sigma, cos(), no_control()))
}

pub fn tanh_drive() -> AffineModel {
    build(scalar_spec(
        "tanh_drive",
        -1.0,
        0.0,
        1.0,
        1.0,
        Reward::state_term(1.0, RewardKind::Tanh { scale: 1.0 }),
        ActionSet::finite_scalars(&[-1.0, 0.0, 1.0]),
    ))
}

pub fn const_reward() -> AffineModel {
    build(scalar_spec("const_reward", -1.0, 0.0, 0.0, 1.0, Reward::constant(1.0), no_control()))
}

pub fn ou_clipped_quadratic() -> AffineModel {
    build(scalar_spec(
        "ou_clipped_quadratic",
        -1.0,
        0.0,
        0.0,
        1.0,
        Reward::state_term(1.0, RewardKind::ClippedQuadratic { clip: 4.0 }),
        no_control(),
    ))
}

/// Negative control: fails the dissipativity check.
pub fn expanding_drift() -> AffineModel {
    build(scalar_spec("expanding_drift", 1.0, 0.0, 0.0, 1.0, cos(), no_control()))
}

/// Noiseless `dx = b x dt` with reward 1.
pub fn deterministic_decay(b: f64) -> AffineModel {
    build(scalar_spec("deterministic_decay", b, 0.0, 0.0, 0.0, Reward::constant(1.0), no_control()))
}

pub fn by_name(name: &str) -> Option<AffineModel> {
    Some(match name {
        "pure_ou" => pure_ou(),
        "ou_cos" => ou_cos(),
        "mf_ou_cos" => mf_ou_cos(2f64.sqrt()),
        "tanh_drive" => tanh_drive(),
        "const_reward" => const_reward(),
        "ou_clipped_quadratic" => ou_clipped_quadratic(),
        "expanding_drift" | "expanding_drift_negative_control" => expanding_drift(),
        _ => return None,
    })
}

/// Constant policy at the first point of the model's action grid.
pub fn stay<M: Dynamics + ?Sized>(model: &M) -> Policy {
    let a = model.action_set().grid().swap_remove(0);
    Policy::constant(model.action_set().clone(), a)
}
