//! Closed-form curve models and quadrature.
//!
//! Characteristics are supplied as closed-form builders (Gaussian / Lorentzian /
//! polynomial / sinusoid) plus an interpolated-table variant for arbitrary user
//! data. All models are immutable and evaluate as pure functions of the stimulus
//! level.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A scalar curve y(E) on the stimulus scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveModel {
    /// Identically zero.
    Zero,
    /// c0 + c1*E + c2*E^2 + ... (coefficients in ascending degree).
    Polynomial { coeffs: Vec<f64> },
    /// amplitude * exp(-(E-center)^2 / (2 sigma^2)).
    Gaussian { center: f64, sigma: f64, amplitude: f64 },
    /// amplitude * gamma^2 / ((E-center)^2 + gamma^2); gamma is the HWHM.
    Lorentzian { center: f64, gamma: f64, amplitude: f64 },
    /// amplitude * sin(frequency*E + phase).
    Sinusoid { frequency: f64, amplitude: f64, phase: f64 },
    /// Monotone-cubic (Fritsch-Carlson) interpolation of tabulated samples.
    Table { points: Vec<(f64, f64)> },
}

impl CurveModel {
    /// Validate shape parameters; table abscissae must strictly increase.
    pub fn validate(&self) -> Result<()> {
        match self {
            CurveModel::Gaussian { sigma, .. } if *sigma <= 0.0 => {
                Err(Error::Argument(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            CurveModel::Lorentzian { gamma, .. } if *gamma <= 0.0 => {
                Err(Error::Argument(format!("lorentzian gamma must be > 0, got {gamma}")))
            }
            CurveModel::Table { points } => {
                if points.len() < 2 {
                    return Err(Error::Argument("table needs at least 2 points".into()));
                }
                for w in points.windows(2) {
                    if w[1].0 <= w[0].0 {
                        return Err(Error::Argument(format!(
                            "table abscissae must strictly increase near E = {}",
                            w[0].0
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Evaluate the curve at stimulus level `e`.
    pub fn eval(&self, e: f64) -> f64 {
        match self {
            CurveModel::Zero => 0.0,
            CurveModel::Polynomial { coeffs } => {
                // Horner, highest degree first.
                coeffs.iter().rev().fold(0.0, |acc, &c| acc * e + c)
            }
            CurveModel::Gaussian { center, sigma, amplitude } => {
                let z = (e - center) / sigma;
                amplitude * (-0.5 * z * z).exp()
            }
            CurveModel::Lorentzian { center, gamma, amplitude } => {
                let d = e - center;
                amplitude * gamma * gamma / (d * d + gamma * gamma)
            }
            CurveModel::Sinusoid { frequency, amplitude, phase } => {
                amplitude * (frequency * e + phase).sin()
            }
            CurveModel::Table { points } => eval_monotone_cubic(points, e),
        }
    }

    /// Analytic derivative dy/dE (closed forms; centered difference for tables).
    pub fn deriv(&self, e: f64) -> f64 {
        match self {
            CurveModel::Zero => 0.0,
            CurveModel::Polynomial { coeffs } => {
                let mut acc = 0.0;
                for (k, &c) in coeffs.iter().enumerate().skip(1) {
                    acc += k as f64 * c * e.powi(k as i32 - 1);
                }
                acc
            }
            CurveModel::Gaussian { center, sigma, amplitude } => {
                let z = (e - center) / sigma;
                -amplitude * z / sigma * (-0.5 * z * z).exp()
            }
            CurveModel::Lorentzian { center, gamma, amplitude } => {
                let d = e - center;
                let den = d * d + gamma * gamma;
                -2.0 * amplitude * gamma * gamma * d / (den * den)
            }
            CurveModel::Sinusoid { frequency, amplitude, phase } => {
                amplitude * frequency * (frequency * e + phase).cos()
            }
            CurveModel::Table { points } => {
                let h = 1e-6 * (points[points.len() - 1].0 - points[0].0);
                (self.eval(e + h) - self.eval(e - h)) / (2.0 * h)
            }
        }
    }

    /// Largest |y| among a few characteristic points; used to scale tolerances.
    pub fn magnitude_scale(&self, lo: f64, hi: f64) -> f64 {
        let n = 64;
        (0..=n)
            .map(|i| {
                let e = lo + (hi - lo) * i as f64 / n as f64;
                self.eval(e).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// Fritsch-Carlson monotone cubic interpolation; clamps outside the table.
fn eval_monotone_cubic(points: &[(f64, f64)], x: f64) -> f64 {
    let n = points.len();
    if x <= points[0].0 {
        return points[0].1;
    }
    if x >= points[n - 1].0 {
        return points[n - 1].1;
    }
    // Segment secants.
    let seg = match points.binary_search_by(|p| p.0.partial_cmp(&x).unwrap()) {
        Ok(i) => return points[i].1,
        Err(i) => i - 1,
    };
    let h = points[seg + 1].0 - points[seg].0;
    let delta = (points[seg + 1].1 - points[seg].1) / h;
    let m0 = tangent(points, seg);
    let m1 = tangent(points, seg + 1);
    // Limit tangents so the interpolant stays monotone on the segment.
    let (m0, m1) = limit_tangents(m0, m1, delta);
    let t = (x - points[seg].0) / h;
    let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    let h10 = t * (1.0 - t) * (1.0 - t);
    let h01 = t * t * (3.0 - 2.0 * t);
    let h11 = t * t * (t - 1.0);
    h00 * points[seg].1 + h10 * h * m0 + h01 * points[seg + 1].1 + h11 * h * m1
}

fn tangent(points: &[(f64, f64)], i: usize) -> f64 {
    let n = points.len();
    let secant = |a: usize, b: usize| (points[b].1 - points[a].1) / (points[b].0 - points[a].0);
    if i == 0 {
        secant(0, 1)
    } else if i == n - 1 {
        secant(n - 2, n - 1)
    } else {
        0.5 * (secant(i - 1, i) + secant(i, i + 1))
    }
}

fn limit_tangents(m0: f64, m1: f64, delta: f64) -> (f64, f64) {
    if delta == 0.0 {
        return (0.0, 0.0);
    }
    let a = m0 / delta;
    let b = m1 / delta;
    if a < 0.0 || b < 0.0 {
        // Local extremum at the knot: flatten.
        return (if a < 0.0 { 0.0 } else { m0 }, if b < 0.0 { 0.0 } else { m1 });
    }
    let s = a * a + b * b;
    if s > 9.0 {
        let t = 3.0 / s.sqrt();
        (t * a * delta, t * b * delta)
    } else {
        (m0, m1)
    }
}

// ---------- quadrature ----------

/// Adaptive Simpson integration with absolute tolerance `tol`.
///
/// The recursion uses the standard Richardson acceptance test (error estimate
/// |S_left + S_right - S| / 15) and a depth cap that keeps pathological
/// integrands from recursing forever.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol.max(f64::MIN_POSITIVE), 52)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        left + right + err / 15.0
    } else {
        adaptive(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + adaptive(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_horner() {
        let c = CurveModel::Polynomial { coeffs: vec![2.0, -1.0, 0.5] };
        assert_relative_eq!(c.eval(3.0), 2.0 - 3.0 + 0.5 * 9.0);
    }

    #[test]
    fn gaussian_peak_value() {
        let c = CurveModel::Gaussian { center: 100.0, sigma: 2.0, amplitude: 1e-9 };
        assert_relative_eq!(c.eval(100.0), 1e-9);
        assert!(c.eval(100.0 + 12.0) < 1e-9 * 1e-6);
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let f = |x: f64| (-0.5 * x * x).exp();
        let v = integrate(&f, -40.0, 40.0, 1e-13);
        assert_relative_eq!(v, (2.0 * PI).sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn simpson_exact_for_cubics() {
        let f = |x: f64| 3.0 * x * x * x - x + 2.0;
        let v = integrate(&f, -1.0, 2.0, 1e-14);
        // Antiderivative: 3x^4/4 - x^2/2 + 2x.
        let exact = |x: f64| 0.75 * x.powi(4) - 0.5 * x * x + 2.0 * x;
        assert_relative_eq!(v, exact(2.0) - exact(-1.0), max_relative = 1e-13);
    }

    #[test]
    fn table_interpolation_is_monotone() {
        let pts: Vec<(f64, f64)> = vec![(0.0, 0.0), (1.0, 0.1), (2.0, 0.15), (3.0, 4.0), (4.0, 4.1)];
        let c = CurveModel::Table { points: pts.clone() };
        c.validate().unwrap();
        let mut last = f64::NEG_INFINITY;
        for i in 0..=400 {
            let x = 4.0 * i as f64 / 400.0;
            let y = c.eval(x);
            assert!(y >= last - 1e-12, "not monotone at x={x}: {y} < {last}");
            last = y;
        }
        // Knots reproduced exactly.
        for (x, y) in pts {
            assert_relative_eq!(c.eval(x), y);
        }
    }

    #[test]
    fn table_rejects_unsorted() {
        let c = CurveModel::Table { points: vec![(0.0, 1.0), (0.0, 2.0)] };
        assert!(matches!(c.validate(), Err(Error::Argument(_))));
    }
}
