//! Monte Carlo summaries and small regression helpers.

use serde::{Deserialize, Serialize};

/// A point estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(value: f64, stderr: f64) -> Self {
        Estimate { value, stderr }
    }

    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: 0.0 }
    }

    /// Mean of independent replicas and the standard error of that mean.
    pub fn from_replicas(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        if xs.len() < 2 {
            return Estimate::new(mean, 0.0);
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Estimate::new(mean, (var / n).sqrt())
    }

    /// Difference of two independent estimates.
    pub fn minus(&self, other: &Estimate) -> Estimate {
        Estimate::new(self.value - other.value, self.stderr.hypot(other.stderr))
    }

    pub fn scaled(&self, c: f64) -> Estimate {
        Estimate::new(c * self.value, c.abs() * self.stderr)
    }

    /// `|self - other| / hypot(stderr)`; infinite when both are exact and
    /// differ.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let d = (self.value - other.value).abs();
        let s = self.stderr.hypot(other.stderr);
        if d == 0.0 {
            0.0
        } else if s == 0.0 {
            f64::INFINITY
        } else {
            d / s
        }
    }
}

impl std::fmt::Display for Estimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.6} ± {:.2e}", self.value, self.stderr)
    }
}

/// Ordinary least squares fit of `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard errors propagated from per-point standard errors (zero when
    /// all inputs are exact).
    pub intercept_stderr: f64,
    pub slope_stderr: f64,
}

/// Unweighted least squares; `sy` are the standard errors of the
/// independent ordinates and are propagated linearly.
pub fn linear_fit(x: &[f64], y: &[f64], sy: &[f64]) -> Option<LinearFit> {
    let n = x.len();
    if n < 2 || y.len() != n || sy.len() != n {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let my = y.iter().sum::<f64>() / nf;
    let slope = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    let intercept = my - slope * mx;
    // both coefficients are linear in y: w_i y_i
    let mut vi = 0.0;
    let mut vs = 0.0;
    for (xi, s) in x.iter().zip(sy) {
        let ws = (xi - mx) / sxx;
        let wi = 1.0 / nf - mx * ws;
        vi += (wi * s).powi(2);
        vs += (ws * s).powi(2);
    }
    Some(LinearFit {
        intercept,
        slope,
        intercept_stderr: vi.sqrt(),
        slope_stderr: vs.sqrt(),
    })
}

/// Least squares polynomial `y = Σ_k c_k x^k`, coefficients lowest degree
/// first, with linearly propagated standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    pub coefficients: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Unweighted polynomial least squares of the given degree. Degree 1
/// agrees with [`linear_fit`].
pub fn poly_fit(x: &[f64], y: &[f64], sy: &[f64], degree: usize) -> Option<PolyFit> {
    let n = x.len();
    let p = degree + 1;
    if n < p || y.len() != n || sy.len() != n {
        return None;
    }
    // Gauss-Jordan inverse of the normal matrix
    let mut a = vec![0.0; p * 2 * p];
    for i in 0..p {
        for j in 0..p {
            a[i * 2 * p + j] = x.iter().map(|v| v.powi((i + j) as i32)).sum();
        }
        a[i * 2 * p + p + i] = 1.0;
    }
    for c in 0..p {
        let piv = (c..p).max_by(|&r, &q| a[r * 2 * p + c].abs().total_cmp(&a[q * 2 * p + c].abs()))?;
        if a[piv * 2 * p + c].abs() < 1e-300 {
            return None;
        }
        for k in 0..2 * p {
            a.swap(c * 2 * p + k, piv * 2 * p + k);
        }
        let d = a[c * 2 * p + c];
        for k in 0..2 * p {
            a[c * 2 * p + k] /= d;
        }
        for r in (0..p).filter(|&r| r != c) {
            let f = a[r * 2 * p + c];
            if f != 0.0 {
                for k in 0..2 * p {
                    a[r * 2 * p + k] -= f * a[c * 2 * p + k];
                }
            }
        }
    }
    let inv = |i: usize, j: usize| a[i * 2 * p + p + j];
    let mut coefficients = vec![0.0; p];
    let mut var = vec![0.0; p];
    for ((xi, yi), si) in x.iter().zip(y).zip(sy) {
        for (j, (c, v)) in coefficients.iter_mut().zip(var.iter_mut()).enumerate() {
            // weight of y_i in coefficient j
            let w: f64 = (0..p).map(|k| inv(j, k) * xi.powi(k as i32)).sum();
            *c += w * yi;
            *v += (w * si).powi(2);
        }
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return None;
    }
    Some(PolyFit {
        coefficients,
        stderr: var.into_iter().map(f64::sqrt).collect(),
    })
}

/// Composite Simpson rule with `n` (rounded up to even) intervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let n = (n.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_fit_recovers_cubic_and_matches_linear() {
        let x = [0.4, 0.2, 0.1, 0.05, 0.3];
        let y: Vec<f64> = x.iter().map(|v| 0.6 - 0.5 * v + 0.25 * v * v - v * v * v).collect();
        let s = [1e-3, 2e-3, 3e-3, 1e-3, 0.0];
        let f = poly_fit(&x, &y, &s, 3).unwrap();
        for (c, want) in f.coefficients.iter().zip([0.6, -0.5, 0.25, -1.0]) {
            assert!((c - want).abs() < 1e-9, "{f:?}");
        }
        let l = linear_fit(&x, &y, &s).unwrap();
        let p = poly_fit(&x, &y, &s, 1).unwrap();
        assert!((l.intercept - p.coefficients[0]).abs() < 1e-12);
        assert!((l.slope - p.coefficients[1]).abs() < 1e-12);
        assert!((l.intercept_stderr - p.stderr[0]).abs() < 1e-12);
        assert!(poly_fit(&x[..3], &y[..3], &s[..3], 3).is_none());
    }

    #[test]
    fn replicas() {
        let e = Estimate::from_replicas(&[1.0, 2.0, 3.0]);
        assert_eq!(e.value, 2.0);
        assert!((e.stderr - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::from_replicas(&[4.0, 4.0]).stderr, 0.0);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [0.4, 0.2, 0.1, 0.05];
        let y: Vec<f64> = x.iter().map(|v| 0.6 - 0.3 * v).collect();
        let f = linear_fit(&x, &y, &[0.0; 4]).unwrap();
        assert!((f.intercept - 0.6).abs() < 1e-14);
        assert!((f.slope + 0.3).abs() < 1e-14);
        assert_eq!(f.intercept_stderr, 0.0);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0], &[0.0; 2]).is_none());
    }

    #[test]
    fn fit_stderr_matches_single_point_limit() {
        // two points at x = 0 and 1: intercept is y0 exactly
        let f = linear_fit(&[0.0, 1.0], &[1.0, 3.0], &[0.1, 0.2]).unwrap();
        assert!((f.intercept_stderr - 0.1).abs() < 1e-15);
        assert!((f.slope_stderr - 0.1f64.hypot(0.2)).abs() < 1e-15);
    }

    #[test]
    fn simpson_exact_on_cubics() {
        let v = simpson(|x| x * x * x - x + 1.0, -1.0, 2.0, 4);
        assert!((v - (15.0 / 4.0 - 1.5 + 3.0)).abs() < 1e-13);
    }
}
