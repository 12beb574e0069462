//! Synthetic devices under test.
//!
//! A device produces I(E, t) = I_c(E) + I_b(E) + noise: an informative
//! characteristic on top of a deterministic background. This module carries the
//! deterministic part only; noise is added by the measurement channel. Builders
//! cover the two motivating scenarios: an Auger electron spectrum (localized
//! peak over a secondary-electron background) and a nano-device I-V curve
//! (small nonlinearity over an ohmic line).

use std::sync::Arc;

use rustfft::{num_complex::Complex64, FftPlanner};

use crate::curve::{integrate, CurveModel};
use crate::error::{Error, Result};

/// 1-D device characteristic: informative curve + background over a closed domain.
#[derive(Debug, Clone)]
pub struct Characteristic1D {
    pub informative: CurveModel,
    pub background: CurveModel,
    /// Closed stimulus interval [lo, hi].
    pub domain: (f64, f64),
    /// Upper cut-off frequency of I(E) on the stimulus scale (rad per E-unit).
    pub bandwidth: f64,
}

impl Characteristic1D {
    pub fn new(
        informative: CurveModel,
        background: CurveModel,
        domain: (f64, f64),
        bandwidth: f64,
    ) -> Result<Self> {
        informative.validate()?;
        background.validate()?;
        if !(domain.0 < domain.1) {
            return Err(Error::Argument(format!(
                "domain must satisfy lo < hi, got [{}, {}]",
                domain.0, domain.1
            )));
        }
        if !(bandwidth > 0.0) {
            return Err(Error::Argument(format!("bandwidth must be > 0, got {bandwidth}")));
        }
        let dut = Self { informative, background, domain, bandwidth };
        for i in 0..=256 {
            let e = domain.0 + (domain.1 - domain.0) * i as f64 / 256.0;
            let v = dut.informative.eval(e) + dut.background.eval(e);
            if !v.is_finite() {
                return Err(Error::Argument(format!("characteristic not finite at E = {e}")));
            }
        }
        Ok(dut)
    }

    pub fn contains(&self, e: f64) -> bool {
        e >= self.domain.0 && e <= self.domain.1
    }

    /// Deterministic response I_c(E) + I_b(E); noise is added elsewhere.
    pub fn sample_response(&self, stimulus_level: f64) -> Result<f64> {
        if !self.contains(stimulus_level) {
            return Err(Error::Domain {
                level: stimulus_level,
                lo: self.domain.0,
                hi: self.domain.1,
            });
        }
        Ok(self.informative.eval(stimulus_level) + self.background.eval(stimulus_level))
    }

    /// Informative curve alone (what background-rejecting weightings recover).
    pub fn informative_at(&self, e: f64) -> f64 {
        self.informative.eval(e)
    }

    /// Analytic derivative of the full response (informative + background).
    pub fn response_deriv(&self, e: f64) -> f64 {
        self.informative.deriv(e) + self.background.deriv(e)
    }

    /// Ground-truth integral of the informative curve over [e_lo, e_hi].
    ///
    /// Adaptive Simpson with an absolute tolerance of 1e-12 of the peak scale,
    /// so the oracle error is far below every measurement error under test.
    pub fn full_current(&self, e_lo: f64, e_hi: f64) -> Result<f64> {
        if !(e_lo < e_hi) {
            return Err(Error::Argument(format!("bounds inverted: [{e_lo}, {e_hi}]")));
        }
        if !self.contains(e_lo) || !self.contains(e_hi) {
            return Err(Error::Domain {
                level: if self.contains(e_lo) { e_hi } else { e_lo },
                lo: self.domain.0,
                hi: self.domain.1,
            });
        }
        let scale = self.informative.magnitude_scale(e_lo, e_hi).max(f64::MIN_POSITIVE);
        let f = |e: f64| self.informative.eval(e);
        Ok(integrate(&f, e_lo, e_hi, 1e-12 * scale * (e_hi - e_lo).max(1.0)))
    }

    /// Estimate the cut-off frequency of I(E) = I_c + I_b on the stimulus scale.
    ///
    /// Samples the full response on a uniform grid, removes the best affine fit
    /// (a straight line carries no spectral content beyond DC, but its
    /// period-wrap discontinuity would leak energy across the whole DFT), takes
    /// the spectrum magnitude of the residual and returns the smallest
    /// frequency beyond which the cumulative spectral energy exceeds
    /// `threshold` (default 0.999) of the total.
    pub fn estimate_bandwidth(&self, grid_points: usize, threshold: Option<f64>) -> Result<f64> {
        if grid_points < 64 {
            return Err(Error::Argument(format!(
                "bandwidth estimation needs >= 64 grid points, got {grid_points}"
            )));
        }
        let threshold = threshold.unwrap_or(0.999);
        if !(0.0 < threshold && threshold < 1.0) {
            return Err(Error::Argument(format!("threshold must be in (0,1), got {threshold}")));
        }
        let (lo, hi) = self.domain;
        let span = hi - lo;
        let n = grid_points;
        let lowest = 2.0 * std::f64::consts::PI / span;
        let mut samples: Vec<f64> = (0..n)
            .map(|i| {
                let e = lo + span * i as f64 / n as f64;
                self.informative.eval(e) + self.background.eval(e)
            })
            .collect();
        let scale = samples.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        // Least-squares affine detrend against the centered index.
        let mean: f64 = samples.iter().sum::<f64>() / n as f64;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, &y) in samples.iter().enumerate() {
            let x = i as f64 - 0.5 * (n as f64 - 1.0);
            sxy += x * (y - mean);
            sxx += x * x;
        }
        let slope = sxy / sxx;
        for (i, y) in samples.iter_mut().enumerate() {
            let x = i as f64 - 0.5 * (n as f64 - 1.0);
            *y -= mean + slope * x;
        }
        let residual_energy: f64 = samples.iter().map(|v| v * v).sum();
        if residual_energy <= (1e-10 * scale).powi(2) * n as f64 {
            // Affine (or zero) characteristic: spectrum concentrated at DC.
            return Ok(lowest);
        }
        let mut buf: Vec<Complex64> =
            samples.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        fft.process(&mut buf);
        // One-sided energy; bins k and n-k carry conjugate pairs.
        let half = n / 2;
        let mut energy = vec![0.0; half + 1];
        energy[0] = buf[0].norm_sqr();
        for (k, e) in energy.iter_mut().enumerate().skip(1) {
            *e = buf[k].norm_sqr();
            if k != n - k {
                *e += buf[n - k].norm_sqr();
            }
        }
        let total: f64 = energy.iter().sum();
        let mut cum = 0.0;
        for (k, e) in energy.iter().enumerate() {
            cum += e;
            if cum >= threshold * total {
                let k = k.max(1); // never report exactly zero bandwidth
                return Ok(lowest * k as f64);
            }
        }
        Ok(lowest * half as f64)
    }
}

// ---------- builders ----------

/// Peak shape for the Auger spectrum builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeakShape {
    Gaussian,
    Lorentzian,
}

/// Builder for an Auger current-energy characteristic: a localized peak over a
/// polynomial secondary-electron background.
#[derive(Debug, Clone)]
pub struct AugerSpectrumModel {
    pub peak_center: f64,
    pub peak_width: f64,
    pub peak_amplitude: f64,
    pub peak_shape: PeakShape,
    /// Background polynomial coefficients, ascending degree, degree <= 3.
    pub background: Vec<f64>,
    pub domain: (f64, f64),
}

impl AugerSpectrumModel {
    pub fn build(&self) -> Result<Characteristic1D> {
        if !(self.peak_width > 0.0) {
            return Err(Error::Argument(format!(
                "peak width must be > 0, got {}",
                self.peak_width
            )));
        }
        if self.background.len() > 4 {
            return Err(Error::Argument("background degree must be <= 3".into()));
        }
        let (lo, hi) = self.domain;
        if self.peak_center - 3.0 * self.peak_width < lo
            || self.peak_center + 3.0 * self.peak_width > hi
        {
            return Err(Error::Argument(
                "domain must contain [center - 3w, center + 3w]".into(),
            ));
        }
        let informative = match self.peak_shape {
            PeakShape::Gaussian => CurveModel::Gaussian {
                center: self.peak_center,
                sigma: self.peak_width,
                amplitude: self.peak_amplitude,
            },
            PeakShape::Lorentzian => CurveModel::Lorentzian {
                center: self.peak_center,
                gamma: self.peak_width,
                amplitude: self.peak_amplitude,
            },
        };
        let background = if self.background.is_empty() {
            CurveModel::Zero
        } else {
            CurveModel::Polynomial { coeffs: self.background.clone() }
        };
        // Gaussian peak of width sigma: spectral energy density exp(-w^2 s^2);
        // 99.9% cumulative energy sits below ~2.33/sigma. Round up generously so
        // the stored figure is a usable default rather than a tight bound.
        let bandwidth = 4.0 / self.peak_width;
        Characteristic1D::new(informative, background, self.domain, bandwidth)
    }
}

/// Builder for a nano-device I-V characteristic: ohmic line (background) plus a
/// small nonlinear deviation (informative signal).
#[derive(Debug, Clone)]
pub struct NanoIvModel {
    /// Ohmic conductance (siemens); the ohm-law line g*E is the background.
    pub ohmic_conductance: f64,
    /// Informative deviation from the ohmic line.
    pub nonlinear: CurveModel,
    pub domain: (f64, f64),
    /// Maximum allowed |nonlinear| / |ohmic| ratio on the domain (default 0.1).
    pub max_ratio: Option<f64>,
}

impl NanoIvModel {
    pub fn build(&self) -> Result<Characteristic1D> {
        let max_ratio = self.max_ratio.unwrap_or(0.1);
        let (lo, hi) = self.domain;
        let ohmic_scale = self.ohmic_conductance.abs() * lo.abs().max(hi.abs());
        let nl_scale = self.nonlinear.magnitude_scale(lo, hi);
        if ohmic_scale > 0.0 && nl_scale > max_ratio * ohmic_scale {
            return Err(Error::Argument(format!(
                "nonlinear term magnitude {nl_scale:.3e} exceeds {max_ratio} x ohmic scale {ohmic_scale:.3e}"
            )));
        }
        let background = CurveModel::Polynomial { coeffs: vec![0.0, self.ohmic_conductance] };
        // An ohmic line concentrates its spectrum near DC; the informative
        // deviation sets the useful default bandwidth.
        let char1d = Characteristic1D::new(
            self.nonlinear.clone(),
            background,
            self.domain,
            2.0 * std::f64::consts::PI / (hi - lo) * 8.0,
        )?;
        Ok(char1d)
    }
}

// ---------- 2-D and dynamic devices ----------

/// Spatial characteristic map: informative + background over a rectangle.
#[derive(Clone)]
pub struct CharacteristicMap2D {
    pub informative: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    pub background: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// ((x_lo, x_hi), (y_lo, y_hi)).
    pub domain: ((f64, f64), (f64, f64)),
}

impl CharacteristicMap2D {
    pub fn sample_response(&self, x: f64, y: f64) -> Result<f64> {
        let ((xl, xh), (yl, yh)) = self.domain;
        if x < xl || x > xh {
            return Err(Error::Domain { level: x, lo: xl, hi: xh });
        }
        if y < yl || y > yh {
            return Err(Error::Domain { level: y, lo: yl, hi: yh });
        }
        let v = (self.informative)(x, y) + (self.background)(x, y);
        if !v.is_finite() {
            return Err(Error::Argument(format!("map not finite at ({x}, {y})")));
        }
        Ok(v)
    }
}

impl std::fmt::Debug for CharacteristicMap2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CharacteristicMap2D").field("domain", &self.domain).finish()
    }
}

/// Rate-dependent device: response is a function of the stimulus level and of
/// its time derivative.
#[derive(Clone)]
pub struct DynamicDut {
    pub response: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
    /// ((E_lo, E_hi), (rate_lo, rate_hi)) scan area.
    pub area: ((f64, f64), (f64, f64)),
}

impl DynamicDut {
    pub fn sample_response(&self, level: f64, rate: f64) -> Result<f64> {
        let ((el, eh), (rl, rh)) = self.area;
        if level < el || level > eh {
            return Err(Error::Domain { level, lo: el, hi: eh });
        }
        if rate < rl || rate > rh {
            return Err(Error::Domain { level: rate, lo: rl, hi: rh });
        }
        let v = (self.response)(level, rate);
        if !v.is_finite() {
            return Err(Error::Argument(format!("response not finite at ({level}, {rate})")));
        }
        Ok(v)
    }
}

impl std::fmt::Debug for DynamicDut {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DynamicDut").field("area", &self.area).finish()
    }
}
