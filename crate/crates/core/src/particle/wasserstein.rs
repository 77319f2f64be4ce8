//! Wasserstein-2 distance between equal-size empirical measures.
//!
//! In one dimension the optimal coupling pairs order statistics, so the
//! distance is exact. In higher dimension we average the squared 1-d
//! distance over fixed random directions (sliced W2) and flag the result
//! as approximate.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::measure::EmpiricalMeasure;
use super::rng::RngStream;
use crate::error::{Error, Result};

pub const SLICED_PROJECTIONS: usize = 64;
const SLICE_SEED: u64 = 0x51_1ced;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Distance {
    pub value: f64,
    /// False for the sliced approximation.
    pub exact: bool,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_unstable_by(f64::total_cmp);
    v
}

fn w2_sorted_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub fn w2_distance(a: EmpiricalMeasure<'_>, b: EmpiricalMeasure<'_>) -> Result<W2Distance> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch {
            context: "w2_distance".into(),
            expected: a.dim,
            got: b.dim,
        });
    }
    if a.len() != b.len() {
        return Err(Error::CountMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.dim == 1 {
        let sa = sorted(a.points.to_vec());
        let sb = sorted(b.points.to_vec());
        return Ok(W2Distance {
            value: w2_sorted_sq(&sa, &sb).sqrt(),
            exact: true,
        });
    }
    let d = a.dim;
    let mut rng = RngStream::root(SLICE_SEED).child(d as u64).rng();
    let mut acc = 0.0;
    for _ in 0..SLICED_PROJECTIONS {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let project = |pts: &[f64]| -> Vec<f64> {
            sorted(
                pts.chunks_exact(d)
                    .map(|x| x.iter().zip(&dir).map(|(p, q)| p * q).sum())
                    .collect(),
            )
        };
        acc += w2_sorted_sq(&project(a.points), &project(b.points));
    }
    Ok(W2Distance {
        value: (acc / SLICED_PROJECTIONS as f64).sqrt(),
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w2(a: &[f64], b: &[f64]) -> f64 {
        w2_distance(EmpiricalMeasure::new(a, 1), EmpiricalMeasure::new(b, 1))
            .unwrap()
            .value
    }

    #[test]
    fn examples() {
        let a = [0.3, -1.0, 2.5];
        assert_eq!(w2(&a, &a), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 1.5).collect();
        assert!((w2(&a, &shifted) - 1.5).abs() < 1e-12);
        assert_eq!(w2(&[0.0, 2.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn mismatched_counts() {
        let r = w2_distance(EmpiricalMeasure::new(&[0.0, 1.0], 1), EmpiricalMeasure::new(&[0.0], 1));
        assert!(matches!(r, Err(Error::CountMismatch { .. })));
    }

    #[test]
    fn sliced_is_flagged_and_translation_exact() {
        let a = [0.0, 0.0, 1.0, 0.5, -1.0, 2.0];
        let b: Vec<f64> = a.chunks(2).flat_map(|p| [p[0] + 3.0, p[1] + 4.0]).collect();
        let r = w2_distance(EmpiricalMeasure::new(&a, 2), EmpiricalMeasure::new(&b, 2)).unwrap();
        assert!(!r.exact);
        // a translation by c projects to <c, u>; the average of <c,u>² is |c|²/d
        assert!(r.value > 0.0 && r.value <= 5.0 + 1e-12);
    }

    proptest! {
        #[test]
        fn symmetric_and_triangle(
            a in prop::collection::vec(-10.0..10.0f64, 7),
            b in prop::collection::vec(-10.0..10.0f64, 7),
            c in prop::collection::vec(-10.0..10.0f64, 7),
        ) {
            let ab = w2(&a, &b);
            prop_assert!((ab - w2(&b, &a)).abs() < 1e-12);
            prop_assert!(ab <= w2(&a, &c) + w2(&c, &b) + 1e-9);
        }

        #[test]
        fn zero_iff_same_multiset(a in prop::collection::vec(-10.0..10.0f64, 6)) {
            let mut rev = a.clone();
            rev.reverse();
            prop_assert_eq!(w2(&a, &rev), 0.0);
            let mut moved = a.clone();
            moved[0] += 0.5;
            prop_assert!(w2(&a, &moved) > 0.0);
        }
    }
}
