//! Parametric feedback policies and a derivative-free optimizer.
//!
//! A policy maps `(t, x, summary(μ))` to an action. Evaluation always
//! projects onto the action set, so any parameter vector is admissible.

mod optimize;

pub use optimize::{
    cross_entropy, enumerate, optimize_policy, EvalRequest, HistoryEntry, Method, OptimizeResult,
    OptimizerConfig,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ActionSet;
use crate::particle::MeasureSummary;

fn one() -> usize {
    1
}

/// Policy shapes. Parameters live in [`Policy::params`]; the layouts are
///
/// - `Constant`: the action `a` (`k` numbers).
/// - `AffineClamped`: per action coordinate `j`, `k0_j`, then `k1_j` (`d`
///   numbers), then `k2_j` (`d` numbers), giving `a_j = k0_j + k1_j·x + k2_j·m`.
/// - `TimeWindowed`: one block of `inner` parameters per window; window `w`
///   covers `[breakpoints[w-1], breakpoints[w])`.
/// - `TabularGrid`: one action per `(x cell, m cell)`, row-major in `x`.
///   Cells are the nearest centers in the first coordinate of `x` and of the
///   mean; inputs beyond the outer centers saturate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    Constant,
    AffineClamped {
        #[serde(default = "one")]
        state_dim: usize,
    },
    TimeWindowed {
        breakpoints: Vec<f64>,
        inner: Box<Family>,
    },
    TabularGrid {
        x_centers: Vec<f64>,
        m_centers: Vec<f64>,
    },
}

impl Family {
    /// Number of parameters for actions in `R^k`.
    pub fn n_params(&self, k: usize) -> usize {
        match self {
            Family::Constant => k,
            Family::AffineClamped { state_dim } => k * (1 + 2 * state_dim),
            Family::TimeWindowed { breakpoints, inner } => (breakpoints.len() + 1) * inner.n_params(k),
            Family::TabularGrid { x_centers, m_centers } => x_centers.len() * m_centers.len() * k,
        }
    }

    fn validate(&self) -> Result<()> {
        let increasing = |v: &[f64]| v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1]);
        match self {
            Family::Constant => Ok(()),
            Family::AffineClamped { state_dim } if *state_dim == 0 => {
                Err(Error::config("policy.state_dim", "must be at least 1"))
            }
            Family::AffineClamped { .. } => Ok(()),
            Family::TimeWindowed { breakpoints, inner } => {
                if !increasing(breakpoints) {
                    return Err(Error::config("policy.breakpoints", "must be finite and strictly increasing"));
                }
                inner.validate()
            }
            Family::TabularGrid { x_centers, m_centers } => {
                if x_centers.is_empty() || m_centers.is_empty() || !increasing(x_centers) || !increasing(m_centers) {
                    return Err(Error::config(
                        "policy.centers",
                        "cell centers must be nonempty, finite and strictly increasing",
                    ));
                }
                Ok(())
            }
        }
    }

    fn is_state_free(&self, t: f64) -> bool {
        match self {
            Family::Constant => true,
            Family::AffineClamped { .. } => false,
            Family::TimeWindowed { inner, .. } => inner.is_state_free(t),
            Family::TabularGrid { x_centers, m_centers } => x_centers.len() == 1 && m_centers.len() == 1,
        }
    }

    fn raw(&self, params: &[f64], t: f64, x: &[f64], m: &MeasureSummary, out: &mut [f64]) {
        let k = out.len();
        match self {
            Family::Constant => out.copy_from_slice(&params[..k]),
            Family::AffineClamped { state_dim } => {
                let d = *state_dim;
                let stride = 1 + 2 * d;
                for (j, o) in out.iter_mut().enumerate() {
                    let p = &params[j * stride..(j + 1) * stride];
                    let mut v = p[0];
                    for c in 0..d.min(x.len()) {
                        v += p[1 + c] * x[c] + p[1 + d + c] * m.mean[c];
                    }
                    *o = v;
                }
            }
            Family::TimeWindowed { breakpoints, inner } => {
                let w = window_index(breakpoints, t);
                let p = inner.n_params(k);
                inner.raw(&params[w * p..(w + 1) * p], t, x, m, out);
            }
            Family::TabularGrid { x_centers, m_centers } => {
                let ix = nearest(x_centers, x[0]);
                let im = nearest(m_centers, m.mean[0]);
                let cell = ix * m_centers.len() + im;
                out.copy_from_slice(&params[cell * k..(cell + 1) * k]);
            }
        }
    }
}

fn window_index(breakpoints: &[f64], t: f64) -> usize {
    breakpoints.partition_point(|b| *b <= t)
}

/// Index of the nearest center; ties go to the lower index.
fn nearest(centers: &[f64], v: f64) -> usize {
    let i = centers.partition_point(|c| *c < v);
    if i == 0 {
        0
    } else if i == centers.len() {
        centers.len() - 1
    } else if v - centers[i - 1] <= centers[i] - v {
        i - 1
    } else {
        i
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr")]
pub struct Policy {
    #[serde(flatten)]
    family: Family,
    params: Vec<f64>,
    action_set: ActionSet,
}

#[derive(Deserialize)]
struct PolicyRepr {
    #[serde(flatten)]
    family: Family,
    params: Vec<f64>,
    action_set: ActionSet,
}

impl TryFrom<PolicyRepr> for Policy {
    type Error = Error;
    fn try_from(r: PolicyRepr) -> Result<Self> {
        Policy::new(r.family, r.params, r.action_set)
    }
}

impl Policy {
    pub fn new(family: Family, params: Vec<f64>, action_set: ActionSet) -> Result<Self> {
        action_set.validate()?;
        family.validate()?;
        let want = family.n_params(action_set.dim());
        if params.len() != want {
            return Err(Error::DimensionMismatch {
                context: "policy.params".into(),
                expected: want,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy parameters".into()));
        }
        Ok(Policy {
            family,
            params,
            action_set,
        })
    }

    /// Panics if `a` has the wrong length or is not finite.
    pub fn constant(action_set: ActionSet, a: Vec<f64>) -> Self {
        Policy::new(Family::Constant, a, action_set).expect("valid constant policy")
    }

    pub fn affine_clamped(action_set: ActionSet, state_dim: usize, params: Vec<f64>) -> Result<Self> {
        Policy::new(Family::AffineClamped { state_dim }, params, action_set)
    }

    /// Constant-per-window policy with `windows` equal windows on
    /// `[0, horizon]`, each starting at `a`.
    pub fn windowed_constant(action_set: ActionSet, horizon: f64, windows: usize, a: &[f64]) -> Result<Self> {
        if windows == 0 || !(horizon > 0.0) {
            return Err(Error::config("policy.windows", "need at least one window on a positive horizon"));
        }
        let breakpoints = (1..windows).map(|w| horizon * w as f64 / windows as f64).collect();
        let params = a.iter().copied().cycle().take(a.len() * windows).collect();
        Policy::new(
            Family::TimeWindowed {
                breakpoints,
                inner: Box::new(Family::Constant),
            },
            params,
            action_set,
        )
    }

    pub fn tabular(action_set: ActionSet, x_centers: Vec<f64>, m_centers: Vec<f64>, actions: Vec<f64>) -> Result<Self> {
        Policy::new(Family::TabularGrid { x_centers, m_centers }, actions, action_set)
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn action_set(&self) -> &ActionSet {
        &self.action_set
    }

    pub fn action_dim(&self) -> usize {
        self.action_set.dim()
    }

    /// Same family and action set with new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Policy> {
        Policy::new(self.family.clone(), params, self.action_set.clone())
    }

    /// True when the action at time `t` ignores `x` and the measure.
    pub fn is_state_free(&self, t: f64) -> bool {
        self.family.is_state_free(t)
    }

    /// Writes the action at `(t, x, m)` into `out`; the result lies in the
    /// action set.
    pub fn evaluate(&self, t: f64, x: &[f64], m: &MeasureSummary, out: &mut [f64]) {
        let k = out.len();
        let mut buf = [0.0; 8];
        if k <= buf.len() {
            self.family.raw(&self.params, t, x, m, &mut buf[..k]);
            self.action_set.project(&buf[..k], out);
        } else {
            let mut raw = vec![0.0; k];
            self.family.raw(&self.params, t, x, m, &mut raw);
            self.action_set.project(&raw, out);
        }
    }

    pub fn action_at(&self, t: f64, x: &[f64], m: &MeasureSummary) -> Vec<f64> {
        let mut out = vec![0.0; self.action_dim()];
        self.evaluate(t, x, m, &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn from_json(s: &str) -> Result<Policy> {
        serde_json::from_str(s).map_err(|e| Error::config("policy", e.to_string()))
    }
}
