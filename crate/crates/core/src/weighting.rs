//! Weighting functions: the kernels that define the measured functional and
//! reject the background.
//!
//! A weighting is either a finite set of weighted levels (discrete form), a
//! piecewise-continuous profile plus explicit delta components (continuous
//! form), or a weighted grid (2-D form). Delta components are always carried as
//! (location, mass) pairs, never as narrow numeric spikes: the example
//! weightings and the dwell-time formulas are exact in delta form.

use serde::{Deserialize, Serialize};

use crate::curve::integrate;
use crate::error::{Error, Result};

/// One weighted level of a discrete weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightNode {
    pub level: f64,
    pub weight: f64,
}

/// Discrete weighting: weighted delta comb at strictly increasing levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteWeighting {
    pub nodes: Vec<WeightNode>,
    /// Level the estimate refers to; shifting moves nodes and center together.
    pub center: f64,
}

impl DiscreteWeighting {
    pub fn new(nodes: Vec<WeightNode>, center: f64) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Argument("weighting needs at least one node".into()));
        }
        for w in nodes.windows(2) {
            if w[1].level <= w[0].level {
                return Err(Error::Argument(format!(
                    "levels must strictly increase: {} then {}",
                    w[0].level, w[1].level
                )));
            }
        }
        if nodes.iter().all(|n| n.weight == 0.0) {
            return Err(Error::Argument("all weights are zero".into()));
        }
        Ok(Self { nodes, center })
    }

    /// Sum of |W_i|; the dwell-time normalization and the variance scale.
    pub fn total_weight(&self) -> f64 {
        self.nodes.iter().map(|n| n.weight.abs()).sum()
    }

    /// Translate every level and the center by `delta`; weights are untouched.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            nodes: self
                .nodes
                .iter()
                .map(|n| WeightNode { level: n.level + delta, weight: n.weight })
                .collect(),
            center: self.center + delta,
        }
    }

    /// Node levels relative to the center (what schedules are built from).
    pub fn levels_relative(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.level - self.center).collect()
    }

    /// Integral of `background` against the weighting: sum of W_i * b(E_i).
    pub fn residual_against<F: Fn(f64) -> f64>(&self, background: F) -> f64 {
        self.nodes.iter().map(|n| n.weight * background(n.level)).sum()
    }

    /// The weighted functional applied to an arbitrary curve (same sum).
    pub fn apply_to<F: Fn(f64) -> f64>(&self, curve: F) -> f64 {
        self.residual_against(curve)
    }
}

/// A delta component of a continuous weighting, relative to the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaComponent {
    /// Location relative to the weighting center.
    pub location: f64,
    /// Signed mass of the delta.
    pub mass: f64,
}

/// Profile of the continuous part of a weighting, on [-range/2, range/2]
/// relative to the center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// Constant value across the whole support.
    Uniform { value: f64 },
    /// Piecewise-constant: breaks.len() == values.len() + 1, strictly increasing.
    PiecewiseConstant { breaks: Vec<f64>, values: Vec<f64> },
    /// intercept + slope * x.
    Linear { intercept: f64, slope: f64 },
    /// Piecewise-linear interpolation of (x, K) samples.
    Table { xs: Vec<f64>, ks: Vec<f64> },
}

/// One exactly-linear piece of a profile: K(x) = k0 + (k1-k0)*(x-x0)/(x1-x0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearPiece {
    pub x0: f64,
    pub x1: f64,
    pub k0: f64,
    pub k1: f64,
}

impl LinearPiece {
    pub fn eval(&self, x: f64) -> f64 {
        if self.x1 == self.x0 {
            return self.k0;
        }
        self.k0 + (self.k1 - self.k0) * (x - self.x0) / (self.x1 - self.x0)
    }

    /// Exact integral of |K| over the piece (splits at an interior zero).
    pub fn abs_integral(&self) -> f64 {
        let w = self.x1 - self.x0;
        if w <= 0.0 {
            return 0.0;
        }
        if self.k0 == 0.0 && self.k1 == 0.0 {
            return 0.0;
        }
        if self.k0 * self.k1 >= 0.0 {
            return 0.5 * (self.k0.abs() + self.k1.abs()) * w;
        }
        // Sign change inside: split at the zero of the linear function.
        let t = self.k0 / (self.k0 - self.k1); // in (0,1)
        0.5 * (self.k0.abs() * t + self.k1.abs() * (1.0 - t)) * w
    }

    /// Zero crossing position if the sign changes strictly inside the piece.
    pub fn interior_zero(&self) -> Option<f64> {
        if self.k0 * self.k1 < 0.0 {
            let t = self.k0 / (self.k0 - self.k1);
            Some(self.x0 + t * (self.x1 - self.x0))
        } else {
            None
        }
    }
}

impl Profile {
    /// Reduce the profile to exactly-linear pieces covering [-range/2, range/2].
    pub fn pieces(&self, range: f64) -> Vec<LinearPiece> {
        let half = 0.5 * range;
        match self {
            Profile::Uniform { value } => {
                vec![LinearPiece { x0: -half, x1: half, k0: *value, k1: *value }]
            }
            Profile::Linear { intercept, slope } => vec![LinearPiece {
                x0: -half,
                x1: half,
                k0: intercept - slope * half,
                k1: intercept + slope * half,
            }],
            Profile::PiecewiseConstant { breaks, values } => breaks
                .windows(2)
                .zip(values.iter())
                .map(|(w, &v)| LinearPiece { x0: w[0], x1: w[1], k0: v, k1: v })
                .collect(),
            Profile::Table { xs, ks } => xs
                .windows(2)
                .zip(ks.windows(2))
                .map(|(x, k)| LinearPiece { x0: x[0], x1: x[1], k0: k[0], k1: k[1] })
                .collect(),
        }
    }

    pub fn validate(&self, range: f64) -> Result<()> {
        if !(range > 0.0) {
            return Err(Error::Argument(format!("range must be > 0, got {range}")));
        }
        match self {
            Profile::PiecewiseConstant { breaks, values } => {
                if breaks.len() != values.len() + 1 {
                    return Err(Error::Argument(
                        "piecewise profile needs breaks.len() == values.len() + 1".into(),
                    ));
                }
                for w in breaks.windows(2) {
                    if w[1] <= w[0] {
                        return Err(Error::Argument("profile breaks must strictly increase".into()));
                    }
                }
                Ok(())
            }
            Profile::Table { xs, ks } => {
                if xs.len() != ks.len() || xs.len() < 2 {
                    return Err(Error::Argument("profile table needs matching xs/ks, len >= 2".into()));
                }
                for w in xs.windows(2) {
                    if w[1] <= w[0] {
                        return Err(Error::Argument("profile xs must strictly increase".into()));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Continuous weighting: profile on [-range/2, range/2] relative to `center`,
/// plus explicit delta components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousWeighting {
    pub profile: Profile,
    /// Stimulus span E_m of the continuous support.
    pub range: f64,
    pub deltas: Vec<DeltaComponent>,
    pub center: f64,
}

impl ContinuousWeighting {
    pub fn new(profile: Profile, range: f64, deltas: Vec<DeltaComponent>, center: f64) -> Result<Self> {
        profile.validate(range)?;
        for d in &deltas {
            if d.location.abs() > 0.5 * range + 1e-12 * range {
                return Err(Error::Argument(format!(
                    "delta at {} outside support half-range {}",
                    d.location,
                    0.5 * range
                )));
            }
        }
        Ok(Self { profile, range, deltas, center })
    }

    /// Profile value at position `x` relative to the center.
    pub fn eval_rel(&self, x: f64) -> f64 {
        if x.abs() > 0.5 * self.range {
            return 0.0;
        }
        for p in self.profile.pieces(self.range) {
            if x >= p.x0 && x <= p.x1 {
                return p.eval(x);
            }
        }
        0.0
    }

    /// Total absolute weight: integral of |profile| plus delta masses.
    pub fn total_weight(&self) -> f64 {
        let smooth: f64 = self.profile.pieces(self.range).iter().map(|p| p.abs_integral()).sum();
        let lumps: f64 = self.deltas.iter().map(|d| d.mass.abs()).sum();
        smooth + lumps
    }

    pub fn shifted(&self, delta: f64) -> Self {
        Self { center: self.center + delta, ..self.clone() }
    }

    /// Integral of `background` (absolute coordinates) against the weighting.
    ///
    /// The plateau part is integrated by adaptive quadrature piece by piece;
    /// delta components are evaluated directly. Exact zero is never forced.
    pub fn residual_against<F: Fn(f64) -> f64>(&self, background: F) -> f64 {
        let scale = {
            let mut m = 0.0f64;
            for i in 0..=32 {
                let x = -0.5 * self.range + self.range * i as f64 / 32.0;
                m = m.max(background(self.center + x).abs());
            }
            m.max(1e-300)
        };
        let mut acc = 0.0;
        for p in self.profile.pieces(self.range) {
            let f = |x: f64| p.eval(x) * background(self.center + x);
            acc += integrate(&f, p.x0, p.x1, 1e-13 * scale * self.range.max(1.0));
        }
        for d in &self.deltas {
            acc += d.mass * background(self.center + d.location);
        }
        acc
    }

    /// The weighted functional applied to an arbitrary curve.
    pub fn apply_to<F: Fn(f64) -> f64>(&self, curve: F) -> f64 {
        self.residual_against(curve)
    }
}

/// 2-D weighting on a rectangular grid of (x_i, y_j) nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weighting2D {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Row-major: weights[i * ys.len() + j] belongs to (xs[i], ys[j]).
    pub weights: Vec<f64>,
}

impl Weighting2D {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::Argument("2-D weighting grid must be nonempty".into()));
        }
        if weights.len() != xs.len() * ys.len() {
            return Err(Error::Argument(format!(
                "weights length {} does not match {}x{} grid",
                weights.len(),
                xs.len(),
                ys.len()
            )));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Argument("all grid weights are zero".into()));
        }
        Ok(Self { xs, ys, weights })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.ys.len() + j]
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().map(|w| w.abs()).sum()
    }

    pub fn residual_against<F: Fn(f64, f64) -> f64>(&self, background: F) -> f64 {
        let mut acc = 0.0;
        for (i, &x) in self.xs.iter().enumerate() {
            for (j, &y) in self.ys.iter().enumerate() {
                acc += self.at(i, j) * background(x, y);
            }
        }
        acc
    }
}

/// Any weighting, for serialization and generic plumbing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnyWeighting {
    Discrete(DiscreteWeighting),
    Continuous(ContinuousWeighting),
    Grid2d(Weighting2D),
}

// ---------- constructors from the worked examples ----------

/// The boxcar-with-end-deltas weighting: unit plateau on [e_l, e_h] plus a
/// delta of mass 0.5*(e_l - e_h) at each boundary. Annihilates every affine
/// background a + b*E exactly.
pub fn boxcar_with_end_deltas(e_l: f64, e_h: f64) -> Result<ContinuousWeighting> {
    if !(e_l < e_h) {
        return Err(Error::Argument(format!("bounds inverted: [{e_l}, {e_h}]")));
    }
    let center = 0.5 * (e_l + e_h);
    let range = e_h - e_l;
    let mass = 0.5 * (e_l - e_h); // negative
    ContinuousWeighting::new(
        Profile::Uniform { value: 1.0 },
        range,
        vec![
            DeltaComponent { location: -0.5 * range, mass },
            DeltaComponent { location: 0.5 * range, mass },
        ],
        center,
    )
}

/// Delta-minus-comb weighting: +1 at `e_c`, -a_i at each comb node.
pub fn delta_minus_comb(e_c: f64, comb_nodes: &[f64], coefficients: &[f64]) -> Result<DiscreteWeighting> {
    if comb_nodes.len() != coefficients.len() {
        return Err(Error::Argument(format!(
            "{} comb nodes but {} coefficients",
            comb_nodes.len(),
            coefficients.len()
        )));
    }
    let mut nodes: Vec<WeightNode> = comb_nodes
        .iter()
        .zip(coefficients.iter())
        .map(|(&e, &a)| WeightNode { level: e, weight: -a })
        .collect();
    nodes.push(WeightNode { level: e_c, weight: 1.0 });
    nodes.sort_by(|a, b| a.level.partial_cmp(&b.level).unwrap());
    for w in nodes.windows(2) {
        if w[1].level == w[0].level {
            return Err(Error::Argument(format!("duplicate node at E = {}", w[0].level)));
        }
    }
    DiscreteWeighting::new(nodes, e_c)
}

/// Minimum-norm discrete weighting that annihilates all polynomial backgrounds
/// of degree <= `kill_degree` and is normalized by sum W_i E_i^(d+1) = 1.
///
/// Realizes "choose coefficients to minimize the impact of a background" for
/// polynomial background families: the moment constraints are exact, and among
/// all valid weight vectors the one with the smallest sum of squares is chosen.
pub fn moment_design(nodes: &[f64], kill_degree: usize) -> Result<DiscreteWeighting> {
    let m = nodes.len();
    let rows = kill_degree + 2;
    if m < rows {
        return Err(Error::Design(format!(
            "need at least {rows} nodes to kill moments up to degree {kill_degree}, got {m}"
        )));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for w in sorted.windows(2) {
        if w[1] == w[0] {
            return Err(Error::Argument(format!("duplicate node at E = {}", w[0])));
        }
    }
    // Center for conditioning; the solution is shift-invariant because the
    // killed moments span all lower-degree terms of the binomial expansion.
    let mean: f64 = sorted.iter().sum::<f64>() / m as f64;
    let a: Vec<Vec<f64>> = (0..rows)
        .map(|k| sorted.iter().map(|&e| (e - mean).powi(k as i32)).collect())
        .collect();
    // Min-norm solution W = A^T (A A^T)^-1 b with b = e_{d+1}.
    let mut gram = vec![vec![0.0; rows]; rows];
    for r in 0..rows {
        for c in 0..rows {
            gram[r][c] = (0..m).map(|i| a[r][i] * a[c][i]).sum();
        }
    }
    let mut rhs = vec![0.0; rows];
    rhs[rows - 1] = 1.0;
    let x = solve_dense(&mut gram, &mut rhs)?;
    let weights: Vec<f64> = (0..m).map(|i| (0..rows).map(|r| x[r] * a[r][i]).sum()).collect();
    DiscreteWeighting::new(
        sorted
            .iter()
            .zip(weights.iter())
            .map(|(&level, &weight)| WeightNode { level, weight })
            .collect(),
        mean,
    )
}

/// Gaussian elimination with partial pivoting; reports the elimination step of
/// a vanishing pivot as the deficient moment degree.
fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flat_map(|row| row.iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot <= 1e-13 * scale {
            return Err(Error::SingularMoments { degree: col });
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Dolph-Chebyshev window coefficients: `n` taps with all spectral sidelobes
/// `attenuation_db` below the mainlobe, built from the Chebyshev-polynomial
/// frequency samples and normalized to a unit peak.
pub fn dolph_chebyshev(n: usize, attenuation_db: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Argument(format!("window needs n >= 2 taps, got {n}")));
    }
    if !(attenuation_db > 0.0) {
        return Err(Error::Argument("attenuation must be positive dB".into()));
    }
    let order = (n - 1) as f64;
    let r = 10f64.powf(attenuation_db / 20.0);
    let beta = ((r.acosh()) / order).cosh();
    let cheb = |x: f64| -> f64 {
        if x.abs() <= 1.0 {
            (order * x.acos()).cos()
        } else if x > 1.0 {
            (order * x.acosh()).cosh()
        } else {
            let sign = if (n - 1) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (order * (-x).acosh()).cosh()
        }
    };
    let freq: Vec<f64> = (0..n)
        .map(|k| cheb(beta * (std::f64::consts::PI * k as f64 / n as f64).cos()))
        .collect();
    // Real inverse DFT with the linear-phase shift that centers the window.
    let mut w = vec![0.0; n];
    for (j, wj) in w.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &fk) in freq.iter().enumerate() {
            let phase =
                2.0 * std::f64::consts::PI * k as f64 * (j as f64 - 0.5 * (n as f64 - 1.0)) / n as f64;
            acc += fk * phase.cos();
        }
        *wj = acc / n as f64;
    }
    let peak = w.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    for v in &mut w {
        *v /= peak;
    }
    Ok(w)
}

/// Discrete weighting whose weights are the Dolph-Chebyshev window over `n`
/// equispaced levels spanning `range` around `center`.
pub fn dolph_chebyshev_weighting(
    n: usize,
    attenuation_db: f64,
    center: f64,
    range: f64,
) -> Result<DiscreteWeighting> {
    let w = dolph_chebyshev(n, attenuation_db)?;
    let nodes = w
        .iter()
        .enumerate()
        .map(|(i, &weight)| WeightNode {
            level: center - 0.5 * range + range * i as f64 / (n - 1) as f64,
            weight,
        })
        .collect();
    DiscreteWeighting::new(nodes, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn boxcar_rejects_constant_background() {
        let w = boxcar_with_end_deltas(-2.0, 3.0).unwrap();
        let r = w.residual_against(|_| 1.0);
        // Plateau gives (e_h - e_l); the two deltas give 2 * 0.5*(e_l - e_h).
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn boxcar_rejects_linear_background() {
        // Symbolic oracle: plateau integral of E is (e_h^2 - e_l^2)/2; the
        // deltas contribute 0.5*(e_l - e_h)*(e_l + e_h). The sum cancels.
        let (e_l, e_h) = (-1.0, 4.0);
        let w = boxcar_with_end_deltas(e_l, e_h).unwrap();
        let plateau = 0.5 * (e_h * e_h - e_l * e_l);
        let deltas = 0.5 * (e_l - e_h) * (e_l + e_h);
        assert_abs_diff_eq!(plateau + deltas, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.residual_against(|e| e), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn boxcar_quadratic_residual_not_zeroed() {
        // Symbolic oracle for I_b = E^2 over [e_l, e_h] = [-1, 1]:
        // plateau (e_h^3 - e_l^3)/3 = 2/3, deltas 0.5*(-2)*(1 + 1) = -2.
        // Residual = 2/3 - 2 = -4/3 = -(e_h - e_l)^3 / 6.
        let w = boxcar_with_end_deltas(-1.0, 1.0).unwrap();
        let r = w.residual_against(|e| e * e);
        assert_relative_eq!(r, -(2.0f64).powi(3) / 6.0, max_relative = 1e-9);
    }

    #[test]
    fn boxcar_affine_mix() {
        let w = boxcar_with_end_deltas(3.0, 9.0).unwrap();
        let r = w.residual_against(|e| 3.0 + 2.0 * e);
        let scale = (3.0f64 + 2.0 * 9.0).abs();
        assert!(r.abs() < 1e-10 * scale, "residual {r}");
    }

    #[test]
    fn comb_single_node_kills_constants() {
        let w = delta_minus_comb(0.0, &[1.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(w.residual_against(|_| 5.0), 0.0);
    }

    #[test]
    fn comb_symmetric_pair_kills_affine() {
        // Oracle: solve the 2x2 moment system for nodes E_c +/- d with a = (1/2, 1/2):
        // moment 0: 1 - 1/2 - 1/2 = 0; moment 1: E_c - (E_c-d)/2 - (E_c+d)/2 = 0.
        let ec = 2.0;
        let d = 0.7;
        let w = delta_minus_comb(ec, &[ec - d, ec + d], &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(w.residual_against(|_| 1.0), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(w.residual_against(|e| e), 0.0, epsilon = 1e-13);
    }

    #[test]
    fn comb_rejects_duplicates() {
        assert!(delta_minus_comb(0.0, &[1.0, 1.0], &[0.5, 0.5]).is_err());
        assert!(delta_minus_comb(1.0, &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn moment_design_second_difference() {
        // Hand-solved 3x3 system: W = (1/2, -1, 1/2), proportional to (1, -2, 1).
        let w = moment_design(&[-1.0, 0.0, 1.0], 1).unwrap();
        let ws: Vec<f64> = w.nodes.iter().map(|n| n.weight).collect();
        assert_relative_eq!(ws[0], 0.5, max_relative = 1e-12);
        assert_relative_eq!(ws[1], -1.0, max_relative = 1e-12);
        assert_relative_eq!(ws[2], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn moment_design_two_nodes() {
        let w = moment_design(&[-1.0, 1.0], 0).unwrap();
        let ws: Vec<f64> = w.nodes.iter().map(|n| n.weight).collect();
        assert_relative_eq!(ws[0], -0.5, max_relative = 1e-12);
        assert_relative_eq!(ws[1], 0.5, max_relative = 1e-12);
    }

    #[test]
    fn moment_design_underdetermined() {
        assert!(matches!(moment_design(&[0.0, 1.0], 1), Err(Error::Design(_))));
    }

    #[test]
    fn moment_design_kills_polynomials() {
        let w = moment_design(&[-2.0, -0.5, 0.3, 1.1, 2.0], 2).unwrap();
        for coeffs in [[3.0, -1.0, 0.7], [0.0, 10.0, -10.0], [-4.2, 0.0, 1.0]] {
            let r = w.residual_against(|e| coeffs[0] + coeffs[1] * e + coeffs[2] * e * e);
            let scale = w.total_weight() * 50.0;
            assert!(r.abs() <= 1e-10 * scale, "residual {r} for {coeffs:?}");
        }
    }

    #[test]
    fn derivative_stencil_kills_constants() {
        let h = 0.5;
        let w = DiscreteWeighting::new(
            vec![
                WeightNode { level: -h, weight: -0.5 / h },
                WeightNode { level: 0.0, weight: 0.0 },
                WeightNode { level: h, weight: 0.5 / h },
            ],
            0.0,
        )
        .unwrap();
        assert_abs_diff_eq!(w.residual_against(|_| 7.0), 0.0);
    }

    #[test]
    fn any_weighting_zero_background() {
        let w = boxcar_with_end_deltas(0.0, 1.0).unwrap();
        assert_eq!(w.residual_against(|_| 0.0), 0.0);
        let d = moment_design(&[-1.0, 0.0, 1.0], 1).unwrap();
        assert_eq!(d.residual_against(|_| 0.0), 0.0);
    }

    #[test]
    fn shift_keeps_weights() {
        let w = moment_design(&[-1.0, 0.0, 1.0], 1).unwrap();
        let s = w.shifted(10.0);
        for (a, b) in w.nodes.iter().zip(s.nodes.iter()) {
            assert_eq!(a.weight, b.weight);
            assert_relative_eq!(b.level, a.level + 10.0);
        }
        assert_relative_eq!(s.center, w.center + 10.0);
    }

    #[test]
    fn chebyshev_window_is_symmetric_unit_peak() {
        let w = dolph_chebyshev(5, 30.0).unwrap();
        assert_eq!(w.len(), 5);
        assert_relative_eq!(w[0], w[4], max_relative = 1e-12);
        assert_relative_eq!(w[1], w[3], max_relative = 1e-12);
        assert_relative_eq!(w[2], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn chebyshev_window_sidelobes_are_equiripple() {
        // Direct evaluation of the window spectrum: all sidelobe maxima must sit
        // at the designed attenuation below the mainlobe.
        let att = 30.0;
        let n = 5;
        let w = dolph_chebyshev(n, att).unwrap();
        let spectrum = |theta: f64| -> f64 {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, &wj) in w.iter().enumerate() {
                re += wj * (theta * j as f64).cos();
                im -= wj * (theta * j as f64).sin();
            }
            (re * re + im * im).sqrt()
        };
        let mainlobe = spectrum(0.0);
        let target = mainlobe * 10f64.powf(-att / 20.0);
        // The mainlobe peaks at theta = 0, so every interior local maximum of
        // |W(theta)| on (0, pi] is a sidelobe.
        let grid = 200_000;
        let mut sidelobes = Vec::new();
        let mut prev = spectrum(std::f64::consts::PI / grid as f64);
        let mut rising = false;
        for i in 2..=grid {
            let theta = std::f64::consts::PI * i as f64 / grid as f64;
            let v = spectrum(theta);
            if v > prev {
                rising = true;
            } else if rising {
                sidelobes.push(prev);
                rising = false;
            }
            prev = v;
        }
        if rising {
            sidelobes.push(prev); // maximum at theta = pi
        }
        assert_eq!(sidelobes.len(), (n - 1) / 2, "sidelobe count for n = {n}");
        for s in &sidelobes {
            assert_relative_eq!(*s, target, max_relative = 1e-3);
        }
    }

    #[test]
    fn weighting_json_round_trip_is_exact() {
        let w = AnyWeighting::Continuous(boxcar_with_end_deltas(-1.5, 2.5).unwrap());
        let s = serde_json::to_string(&w).unwrap();
        let back: AnyWeighting = serde_json::from_str(&s).unwrap();
        assert_eq!(w, back);
        let d = AnyWeighting::Discrete(moment_design(&[-1.0, 0.1, 1.3], 1).unwrap());
        let s = serde_json::to_string(&d).unwrap();
        let back: AnyWeighting = serde_json::from_str(&s).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn grid2d_accessors() {
        let w = Weighting2D::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        assert_eq!(w.at(0, 1), -1.0);
        assert_eq!(w.total_weight(), 4.0);
        assert_abs_diff_eq!(w.residual_against(|_, _| 3.0), 0.0);
    }
}
