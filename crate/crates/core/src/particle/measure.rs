//! Ensembles, empirical measures and their summaries.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::rng::RngStream;
use crate::error::{Error, Result};
use crate::serde_util::{scalar_or_vec, scalars_or_vecs};

/// Moments of an empirical measure; the only way coefficients see the law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub mean: Vec<f64>,
    /// `∫ |x|² dμ`
    pub second_moment: f64,
}

impl MeasureSummary {
    pub fn from_points(points: &[f64], dim: usize) -> Self {
        let n = points.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut sq = 0.0;
        for x in points.chunks_exact(dim) {
            for (m, v) in mean.iter_mut().zip(x) {
                *m += v;
                sq += v * v;
            }
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        MeasureSummary {
            mean,
            second_moment: sq * inv,
        }
    }

    /// Summary of a point mass.
    pub fn at(mean: Vec<f64>) -> Self {
        let second_moment = mean.iter().map(|v| v * v).sum();
        MeasureSummary { mean, second_moment }
    }

    /// Total variance `E|X - m|²`.
    pub fn variance(&self) -> f64 {
        (self.second_moment - self.mean.iter().map(|v| v * v).sum::<f64>()).max(0.0)
    }

    pub fn sd(&self) -> f64 {
        self.variance().sqrt()
    }
}

/// `N` particles in `R^d` at a time stamp. Positions are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    positions: Vec<f64>,
    dim: usize,
    pub time: f64,
}

impl Ensemble {
    pub fn new(positions: Vec<f64>, dim: usize, time: f64) -> Result<Self> {
        if dim == 0 || positions.len() % dim != 0 {
            return Err(Error::config("ensemble", "positions do not divide into the dimension"));
        }
        if positions.len() / dim < 2 {
            return Err(Error::config("n_particles", "an ensemble needs at least 2 particles"));
        }
        if let Some(i) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("initial position of particle {}", i / dim)));
        }
        Ok(Ensemble {
            positions,
            dim,
            time,
        })
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Ensemble::new(xs.to_vec(), 1, 0.0)
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub(crate) fn positions_mut(&mut self) -> &mut [f64] {
        &mut self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn summary(&self) -> MeasureSummary {
        MeasureSummary::from_points(&self.positions, self.dim)
    }

    pub fn measure(&self) -> EmpiricalMeasure<'_> {
        EmpiricalMeasure {
            points: &self.positions,
            dim: self.dim,
        }
    }

    /// Copy with particle `i`'s coordinate `coord` moved by `h`.
    pub fn perturbed(&self, i: usize, coord: usize, h: f64) -> Ensemble {
        let mut e = self.clone();
        e.positions[i * self.dim + coord] += h;
        e
    }
}

/// Equal-weight measure on a set of points.
#[derive(Debug, Clone, Copy)]
pub struct EmpiricalMeasure<'a> {
    pub points: &'a [f64],
    pub dim: usize,
}

impl<'a> EmpiricalMeasure<'a> {
    pub fn new(points: &'a [f64], dim: usize) -> Self {
        EmpiricalMeasure { points, dim }
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn summary(&self) -> MeasureSummary {
        MeasureSummary::from_points(self.points, self.dim)
    }
}

/// Named initial laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum InitialLaw {
    PointMass {
        #[serde(deserialize_with = "scalar_or_vec")]
        at: Vec<f64>,
    },
    /// Isotropic Gaussian `N(mean, var I)`.
    Gaussian {
        #[serde(deserialize_with = "scalar_or_vec")]
        mean: Vec<f64>,
        var: f64,
    },
    /// Uniform on the box `[low, high]`.
    Uniform {
        #[serde(deserialize_with = "scalar_or_vec")]
        low: Vec<f64>,
        #[serde(deserialize_with = "scalar_or_vec")]
        high: Vec<f64>,
    },
    /// Explicit points, tiled cyclically when `N` exceeds the list.
    Points {
        #[serde(deserialize_with = "scalars_or_vecs")]
        points: Vec<Vec<f64>>,
    },
}

impl InitialLaw {
    pub fn dirac(x: f64) -> Self {
        InitialLaw::PointMass { at: vec![x] }
    }

    pub fn gaussian(mean: f64, var: f64) -> Self {
        InitialLaw::Gaussian {
            mean: vec![mean],
            var,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::PointMass { at } => at.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Uniform { low, .. } => low.len(),
            InitialLaw::Points { points } => points.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                context: "initial law".into(),
                expected: dim,
                got: self.dim(),
            });
        }
        match self {
            InitialLaw::Gaussian { var, .. } if !(*var >= 0.0) => {
                Err(Error::config("initial.var", "variance must be >= 0"))
            }
            InitialLaw::Uniform { low, high } if low.len() != high.len() || low.iter().zip(high).any(|(l, h)| !(l <= h)) => {
                Err(Error::config("initial.high", "need low <= high coordinatewise"))
            }
            InitialLaw::Points { points } if points.iter().any(|p| p.len() != dim) => {
                Err(Error::config("initial.points", "points have inconsistent dimension"))
            }
            _ => Ok(()),
        }
    }

    /// Exact `(mean, second moment)` of the law (for `Points`, of the
    /// listed points).
    pub fn summary(&self) -> MeasureSummary {
        match self {
            InitialLaw::PointMass { at } => MeasureSummary::at(at.clone()),
            InitialLaw::Gaussian { mean, var } => {
                let m2: f64 = mean.iter().map(|v| v * v).sum::<f64>() + var * mean.len() as f64;
                MeasureSummary {
                    mean: mean.clone(),
                    second_moment: m2,
                }
            }
            InitialLaw::Uniform { low, high } => {
                let mean: Vec<f64> = low.iter().zip(high).map(|(l, h)| 0.5 * (l + h)).collect();
                let var: f64 = low.iter().zip(high).map(|(l, h)| (h - l).powi(2) / 12.0).sum();
                let m2 = mean.iter().map(|v| v * v).sum::<f64>() + var;
                MeasureSummary {
                    mean,
                    second_moment: m2,
                }
            }
            InitialLaw::Points { points } => {
                let dim = points.first().map_or(1, Vec::len);
                let flat: Vec<f64> = points.iter().flatten().copied().collect();
                MeasureSummary::from_points(&flat, dim)
            }
        }
    }
}

/// Draws `n` particles from `law`. Particle `i` uses `stream.child(i)`, so
/// Gaussian laws with the same seed are coupled monotonically by index.
pub fn sample_initial(law: &InitialLaw, n: usize, stream: RngStream) -> Result<Ensemble> {
    let dim = law.dim();
    law.validate(dim)?;
    if n < 2 {
        return Err(Error::config("n_particles", "an ensemble needs at least 2 particles"));
    }
    let mut positions = Vec::with_capacity(n * dim);
    match law {
        InitialLaw::PointMass { at } => {
            for _ in 0..n {
                positions.extend_from_slice(at);
            }
        }
        InitialLaw::Gaussian { mean, var } => {
            let sd = var.sqrt();
            for i in 0..n {
                let mut rng = stream.child(i as u64).rng();
                for m in mean {
                    let z: f64 = rng.sample(StandardNormal);
                    positions.push(m + sd * z);
                }
            }
        }
        InitialLaw::Uniform { low, high } => {
            for i in 0..n {
                let mut rng = stream.child(i as u64).rng();
                for (l, h) in low.iter().zip(high) {
                    let u: f64 = rng.gen();
                    positions.push(l + u * (h - l));
                }
            }
        }
        InitialLaw::Points { points } => {
            for i in 0..n {
                positions.extend_from_slice(&points[i % points.len()]);
            }
        }
    }
    Ensemble::new(positions, dim, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_is_constant() {
        let e = sample_initial(&InitialLaw::dirac(0.0), 4, RngStream::root(5)).unwrap();
        assert_eq!(e.positions(), &[0.0; 4]);
    }

    #[test]
    fn gaussian_moments() {
        let n = 10_000;
        let e = sample_initial(&InitialLaw::gaussian(0.0, 1.0), n, RngStream::root(11)).unwrap();
        let s = e.summary();
        assert!(s.mean[0].abs() < 4.0 / (n as f64).sqrt());
        assert!((s.variance() - 1.0).abs() < 0.1);
    }

    #[test]
    fn explicit_points_pass_through() {
        let law = InitialLaw::Points {
            points: vec![vec![-1.0], vec![1.0]],
        };
        let e = sample_initial(&law, 2, RngStream::root(0)).unwrap();
        assert_eq!(e.positions(), &[-1.0, 1.0]);
    }

    #[test]
    fn unknown_law_is_rejected() {
        let r: std::result::Result<InitialLaw, _> = serde_json::from_str(r#"{"law": "cauchy", "loc": 0.0}"#);
        assert!(r.is_err());
        let ok: InitialLaw = serde_json::from_str(r#"{"law": "gaussian", "mean": 2.0, "var": 1.0}"#).unwrap();
        assert_eq!(ok, InitialLaw::gaussian(2.0, 1.0));
    }

    #[test]
    fn invalid_inputs() {
        assert!(sample_initial(&InitialLaw::gaussian(0.0, -1.0), 4, RngStream::root(0)).is_err());
        assert!(sample_initial(&InitialLaw::dirac(0.0), 1, RngStream::root(0)).is_err());
    }

    #[test]
    fn gaussian_probes_share_draws() {
        let s = RngStream::root(3);
        let a = sample_initial(&InitialLaw::gaussian(0.0, 1.0), 8, s).unwrap();
        let b = sample_initial(&InitialLaw::gaussian(2.0, 4.0), 8, s).unwrap();
        for (x, y) in a.positions().iter().zip(b.positions()) {
            assert!((y - (2.0 + 2.0 * x)).abs() < 1e-12);
        }
    }
}
