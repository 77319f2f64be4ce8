//! Functions of a measure, evaluated on particle ensembles.
//!
//! A functional sees the ensemble as the empirical measure; perturbing one
//! particle by `h` perturbs the measure by `h/N` in that particle's mass.
//! Moment functionals report their central increments in closed form so
//! finite-difference derivatives are free of cancellation.

use serde::{Deserialize, Serialize};

use crate::model::RewardTerm;
use crate::particle::Ensemble;

pub trait MeasureFunctional: Send + Sync {
    fn value(&self, ens: &Ensemble) -> f64;

    /// `(u⁺ - u⁻, u⁺ - 2u + u⁻)` where `u±` moves coordinate `coord` of
    /// particle `i` by `±h`.
    fn central_differences(&self, ens: &Ensemble, i: usize, coord: usize, h: f64) -> (f64, f64) {
        let up = self.value(&ens.perturbed(i, coord, h));
        let mid = self.value(ens);
        let down = self.value(&ens.perturbed(i, coord, -h));
        (up - down, up - 2.0 * mid + down)
    }
}

/// `u(μ) = ∫ p(x_c) dμ` with `p(y) = Σ_k c_k y^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialMoment {
    pub coefficients: Vec<f64>,
    #[serde(default)]
    pub coord: usize,
}

impl PolynomialMoment {
    pub fn new(coefficients: Vec<f64>) -> Self {
        PolynomialMoment { coefficients, coord: 0 }
    }

    fn poly(&self, y: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * y + c)
    }

    /// `p(y + h) - p(y - h)` and `p(y + h) - 2p(y) + p(y - h)` by the
    /// binomial expansion: odd powers of `h` in the first, even in the second.
    fn increments(&self, y: f64, h: f64) -> (f64, f64) {
        let mut odd = 0.0;
        let mut even = 0.0;
        for (k, c) in self.coefficients.iter().enumerate() {
            let mut binom = 1.0;
            for j in 1..=k {
                binom = binom * (k + 1 - j) as f64 / j as f64;
                let term = c * binom * y.powi((k - j) as i32) * h.powi(j as i32);
                if j % 2 == 1 {
                    odd += term;
                } else {
                    even += term;
                }
            }
        }
        (2.0 * odd, 2.0 * even)
    }
}

impl MeasureFunctional for PolynomialMoment {
    fn value(&self, ens: &Ensemble) -> f64 {
        let d = ens.dim();
        let n = ens.len();
        ens.positions().chunks_exact(d).map(|x| self.poly(x[self.coord])).sum::<f64>() / n as f64
    }

    fn central_differences(&self, ens: &Ensemble, i: usize, coord: usize, h: f64) -> (f64, f64) {
        if coord != self.coord {
            return (0.0, 0.0);
        }
        let n = ens.len() as f64;
        let (a, b) = self.increments(ens.particle(i)[coord], h);
        (a / n, b / n)
    }
}

/// `∫ |x|² dμ`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondMoment;

impl MeasureFunctional for SecondMoment {
    fn value(&self, ens: &Ensemble) -> f64 {
        ens.summary().second_moment
    }

    fn central_differences(&self, ens: &Ensemble, i: usize, coord: usize, h: f64) -> (f64, f64) {
        let n = ens.len() as f64;
        (4.0 * ens.particle(i)[coord] * h / n, 2.0 * h * h / n)
    }
}

/// `m_c(μ)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub coord: usize,
}

impl MeasureFunctional for Mean {
    fn value(&self, ens: &Ensemble) -> f64 {
        ens.summary().mean[self.coord]
    }

    fn central_differences(&self, ens: &Ensemble, _i: usize, coord: usize, h: f64) -> (f64, f64) {
        if coord != self.coord {
            return (0.0, 0.0);
        }
        (2.0 * h / ens.len() as f64, 0.0)
    }
}

/// `m_c(μ)²`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSquared {
    pub coord: usize,
}

impl MeasureFunctional for MeanSquared {
    fn value(&self, ens: &Ensemble) -> f64 {
        ens.summary().mean[self.coord].powi(2)
    }

    fn central_differences(&self, ens: &Ensemble, _i: usize, coord: usize, h: f64) -> (f64, f64) {
        if coord != self.coord {
            return (0.0, 0.0);
        }
        let n = ens.len() as f64;
        let m = ens.summary().mean[coord];
        (4.0 * m * h / n, 2.0 * h * h / (n * n))
    }
}

/// Terminal rewards `g` for finite-horizon problems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalReward {
    Zero,
    /// `∫ w r(x_c) dμ` for a library term.
    State { term: RewardTerm },
    /// `-w |m_0(μ)|`
    AbsMeanPenalty { weight: f64 },
}

impl MeasureFunctional for TerminalReward {
    fn value(&self, ens: &Ensemble) -> f64 {
        match self {
            TerminalReward::Zero => 0.0,
            TerminalReward::State { term } => {
                let d = ens.dim();
                ens.positions().chunks_exact(d).map(|x| term.eval(x)).sum::<f64>() / ens.len() as f64
            }
            TerminalReward::AbsMeanPenalty { weight } => -weight * ens.summary().mean[0].abs(),
        }
    }
}
