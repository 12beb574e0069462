//! The simulated measurement channel: stimulus application, correlation with
//! the reference, cross-period filtering, control sweeps under the aliasing
//! limit, slot-mode integration and the self-test calibrator path.
//!
//! Per period the meter forms gain * integral(I[E(t)] + noise) * u(t) dt; the
//! gain carried by the schedule puts the result in weighted-integral units, so
//! the noiseless estimate of a synthesized schedule equals the weighting
//! functional applied to the device characteristic.
//!
//! Stepwise schedules under white noise use the slot path: one response value
//! and one exact slot-mean noise draw per segment (the continuous-time limit,
//! free of discretization bias). Everything else is sampled: midpoint samples
//! per segment for white noise, a uniform grid with a spectrally shaped stream
//! for colored noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dut::{Characteristic1D, CharacteristicMap2D};
use crate::error::{Error, Result};
use crate::mc;
use crate::noise::{NoiseKind, NoiseModel};
use crate::schedule::{ReferenceWaveform, ScanSchedule2D, StimulusSchedule};
use crate::weighting::AnyWeighting;

/// Cross-period filtration of the per-period estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Filter {
    /// Plain average over the configured number of periods (the default; it
    /// keeps the correlation estimate equal to the weighted-integral form).
    BoxcarPeriods,
    /// Single-pole low-pass stepped once per period.
    SinglePole { cutoff_hz: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    /// Periods to average (N_p >= 1).
    pub periods: usize,
    /// Sample rate for the sampled integration paths.
    pub sample_rate: f64,
    pub filter: Filter,
    /// Prefer per-segment averaging for stepwise schedules.
    pub slot_mode: bool,
    /// Apply the schedule gain (weighted-integral units) or report raw.
    pub apply_gain: bool,
}

impl MeasurementConfig {
    pub fn validate(&self, schedule: &StimulusSchedule) -> Result<()> {
        if self.periods == 0 {
            return Err(Error::Argument("periods must be >= 1".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Argument("sample_rate must be > 0".into()));
        }
        let per_shortest = self.sample_rate * schedule.min_dwell();
        if per_shortest < 2.0 {
            return Err(Error::Argument(format!(
                "sample_rate x shortest segment = {per_shortest:.3} < 2 samples"
            )));
        }
        Ok(())
    }
}

impl Default for MeasurementConfig {
    fn default() -> Self {
        Self {
            periods: 1,
            sample_rate: 4096.0,
            filter: Filter::BoxcarPeriods,
            slot_mode: true,
            apply_gain: true,
        }
    }
}

/// Outcome of one measurement run at a fixed control level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    /// Filtered estimate across the configured periods.
    pub estimate: f64,
    /// Per-period estimates (gain applied when configured).
    pub per_period: Vec<f64>,
    /// Unbiased sample variance of the per-period estimates.
    pub sample_variance: f64,
    pub n_periods: usize,
    pub seed: u64,
    /// Gain that was applied (1.0 when reporting raw).
    pub gain_applied: f64,
}

// ---------- sample plan and slot integration ----------

/// Midpoint sampling plan aligned to segment boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePlan {
    /// (samples, dt) per segment.
    pub per_segment: Vec<(usize, f64)>,
    pub total_samples: usize,
}

impl SamplePlan {
    pub fn new(schedule: &StimulusSchedule, sample_rate: f64) -> Self {
        let mut per_segment = Vec::with_capacity(schedule.segments.len());
        let mut total = 0usize;
        for s in &schedule.segments {
            let n = ((sample_rate * s.dwell).round() as usize).max(2);
            per_segment.push((n, s.dwell / n as f64));
            total += n;
        }
        Self { per_segment, total_samples: total }
    }
}

/// Per-segment means of a full-rate sample stream (slot measurement mode).
/// Slot boundaries must coincide with the plan's segment boundaries.
pub fn slot_integrate(samples: &[f64], plan: &SamplePlan) -> Result<Vec<f64>> {
    if samples.len() != plan.total_samples {
        return Err(Error::Alignment(format!(
            "{} samples do not fill the plan's {}",
            samples.len(),
            plan.total_samples
        )));
    }
    let mut means = Vec::with_capacity(plan.per_segment.len());
    let mut idx = 0;
    for &(n, _) in &plan.per_segment {
        let slice = &samples[idx..idx + n];
        means.push(slice.iter().sum::<f64>() / n as f64);
        idx += n;
    }
    Ok(means)
}

/// Recombine slot means into the raw correlation: sum of mean * u * dwell.
pub fn correlate_slots(
    means: &[f64],
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
) -> Result<f64> {
    if means.len() != schedule.segments.len() {
        return Err(Error::Alignment(format!(
            "{} slot means for {} segments",
            means.len(),
            schedule.segments.len()
        )));
    }
    reference.validate_alignment(schedule)?;
    Ok(means
        .iter()
        .zip(schedule.segments.iter())
        .enumerate()
        .map(|(i, (&m, seg))| m * reference.value_at(i, 0.5 * seg.dwell) * seg.dwell)
        .collect::<Vec<_>>()
        .iter()
        .sum())
}

// ---------- the measurement core ----------

fn domain_precheck(dut: &Characteristic1D, schedule: &StimulusSchedule, e_c: f64) -> Result<()> {
    for s in &schedule.segments {
        let (lo, hi) = s.shape.level_span(s.dwell);
        for level in [lo + e_c, hi + e_c] {
            if !dut.contains(level) {
                return Err(Error::Domain { level, lo: dut.domain.0, hi: dut.domain.1 });
            }
        }
    }
    Ok(())
}

/// One raw per-period correlation, slot path (stepwise schedule, white noise).
fn period_slots(
    dut: &Characteristic1D,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    density: f64,
    e_c: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut raw = 0.0;
    for (i, seg) in schedule.segments.iter().enumerate() {
        let level = match seg.shape {
            crate::schedule::SegmentShape::Hold { level } => level,
            _ => unreachable!("slot path requires stepwise schedules"),
        };
        let resp = dut.sample_response(e_c + level).expect("domain pre-checked");
        // Signal couples to the time integral of u over the slot; the noise
        // correlation over the slot is exactly Gaussian with variance
        // density * integral(u^2) dt.
        let u_dt = reference_time_integral(reference, i, seg.dwell);
        let u_sq_dt = reference.mean_square(i, seg.dwell) * seg.dwell;
        let noise = if density > 0.0 {
            (density * u_sq_dt).sqrt()
                * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        } else {
            0.0
        };
        raw += resp * u_dt + noise;
    }
    raw
}

fn reference_time_integral(reference: &ReferenceWaveform, seg: usize, dwell: f64) -> f64 {
    match reference {
        ReferenceWaveform::Bilevel { signs } => signs[seg] * dwell,
        ReferenceWaveform::Stepwise { values } => values[seg] * dwell,
        ReferenceWaveform::Harmonic { amplitude, omega, signs } => {
            signs[seg] * amplitude * (1.0 - (omega * dwell).cos()) / omega
        }
    }
}

/// One raw per-period correlation, midpoint-sampled path with white noise.
fn period_sampled_white(
    dut: &Characteristic1D,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    plan: &SamplePlan,
    density: f64,
    e_c: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut raw = 0.0;
    for (i, seg) in schedule.segments.iter().enumerate() {
        let (n, dt) = plan.per_segment[i];
        let sigma = if density > 0.0 { (density / dt).sqrt() } else { 0.0 };
        for j in 0..n {
            let t_local = (j as f64 + 0.5) * dt;
            let level = seg.shape.level_at(t_local / seg.dwell, seg.dwell);
            let resp = dut.sample_response(e_c + level).expect("domain pre-checked");
            let u = reference.value_at(i, t_local);
            let noise = if sigma > 0.0 {
                sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            raw += (resp + noise) * u * dt;
        }
    }
    raw
}

/// One raw per-period correlation on a uniform grid against a noise slice.
fn period_sampled_stream(
    dut: &Characteristic1D,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    offsets: &[f64],
    stream: &[f64],
    dt: f64,
    e_c: f64,
) -> f64 {
    let mut raw = 0.0;
    for (j, &noise) in stream.iter().enumerate() {
        let t = (j as f64 + 0.5) * dt;
        // Locate the segment containing t.
        let mut seg = schedule.segments.len() - 1;
        for (i, &off) in offsets.iter().enumerate() {
            if t < off + schedule.segments[i].dwell {
                seg = i;
                break;
            }
        }
        let t_local = t - offsets[seg];
        let level = schedule.segments[seg]
            .shape
            .level_at(t_local / schedule.segments[seg].dwell, schedule.segments[seg].dwell);
        let resp = dut.sample_response(e_c + level).expect("domain pre-checked");
        let u = reference.value_at(seg, t_local);
        raw += (resp + noise) * u * dt;
    }
    raw
}

fn filter_periods(per_period: &[f64], filter: Filter, period: f64) -> f64 {
    match filter {
        Filter::BoxcarPeriods => mc::mean(per_period),
        Filter::SinglePole { cutoff_hz } => {
            let alpha = 1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz * period).exp();
            let mut y = per_period[0];
            for &x in &per_period[1..] {
                y += alpha * (x - y);
            }
            y
        }
    }
}

/// Correlate the device response with the reference over the configured
/// periods at control level `e_c`, with the given RNG driving the noise.
pub fn measure_with_rng(
    dut: &Characteristic1D,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    noise: &NoiseModel,
    config: &MeasurementConfig,
    e_c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MeasurementResult> {
    schedule.validate()?;
    reference.validate_alignment(schedule)?;
    config.validate(schedule)?;
    domain_precheck(dut, schedule, e_c)?;
    let gain = if config.apply_gain { schedule.gain } else { 1.0 };
    let use_slots = config.slot_mode
        && schedule.is_stepwise()
        && matches!(noise.kind, NoiseKind::White { .. });
    let mut per_period = Vec::with_capacity(config.periods);
    match (&noise.kind, use_slots) {
        (NoiseKind::White { density }, true) => {
            for _ in 0..config.periods {
                per_period.push(gain * period_slots(dut, schedule, reference, *density, e_c, rng));
            }
        }
        (NoiseKind::White { density }, false) => {
            let plan = SamplePlan::new(schedule, config.sample_rate);
            for _ in 0..config.periods {
                per_period.push(
                    gain * period_sampled_white(dut, schedule, reference, &plan, *density, e_c, rng),
                );
            }
        }
        (NoiseKind::Colored { .. }, _) => {
            let n_per = ((config.sample_rate * schedule.period).round() as usize).max(2);
            let dt = schedule.period / n_per as f64;
            let omega0 = 2.0 * std::f64::consts::PI / schedule.period;
            let duration = config.periods as f64 * schedule.period;
            let stream = noise.generate(duration, 1.0 / dt, omega0, rng)?;
            let offsets = schedule.segment_offsets();
            for p in 0..config.periods {
                let slice = &stream[p * n_per..(p + 1) * n_per];
                per_period.push(
                    gain * period_sampled_stream(dut, schedule, reference, &offsets, slice, dt, e_c),
                );
            }
        }
    }
    let estimate = filter_periods(&per_period, config.filter, schedule.period);
    let sample_variance =
        if per_period.len() > 1 { mc::sample_variance(&per_period) } else { 0.0 };
    Ok(MeasurementResult {
        estimate,
        per_period,
        sample_variance,
        n_periods: config.periods,
        seed: 0,
        gain_applied: gain,
    })
}

/// Seeded wrapper around [`measure_with_rng`].
pub fn measure(
    dut: &Characteristic1D,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    noise: &NoiseModel,
    config: &MeasurementConfig,
    e_c: f64,
    seed: u64,
) -> Result<MeasurementResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = measure_with_rng(dut, schedule, reference, noise, config, e_c, &mut rng)?;
    r.seed = seed;
    Ok(r)
}

// ---------- control sweep ----------

/// Slow control-component sweep: waypoints and the aliasing safety margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSweep {
    pub waypoints: Vec<f64>,
    /// Fraction (<= 1) of the aliasing limit the sweep rate may use.
    pub aliasing_margin: f64,
}

/// Reconstructed characteristic over the sweep waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub waypoints: Vec<f64>,
    pub estimates: Vec<f64>,
    pub variances: Vec<f64>,
    pub n_periods: usize,
    pub seed: u64,
}

/// Measure at every waypoint with the weighting recentered there (levels are
/// stored relative to the center, so recentering is adding E_c).
///
/// The sweep rate (waypoint spacing over the dwell per point) must respect
/// margin * pi / (T * omega_B); the error names the raw limit.
pub fn sweep(
    dut: &Characteristic1D,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    noise: &NoiseModel,
    config: &MeasurementConfig,
    control: &ControlSweep,
    seed: u64,
) -> Result<SweepResult> {
    if control.waypoints.is_empty() {
        return Err(Error::Argument("sweep needs at least one waypoint".into()));
    }
    if !(control.aliasing_margin > 0.0 && control.aliasing_margin <= 1.0) {
        return Err(Error::Argument(format!(
            "aliasing margin must be in (0, 1], got {}",
            control.aliasing_margin
        )));
    }
    let limit = std::f64::consts::PI / (schedule.period * dut.bandwidth);
    let dwell_per_point = config.periods as f64 * schedule.period;
    let max_step = control
        .waypoints
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let rate = max_step / dwell_per_point;
    if rate > control.aliasing_margin * limit * (1.0 + 1e-12) {
        return Err(Error::Aliasing { rate, limit });
    }
    let mut estimates = Vec::with_capacity(control.waypoints.len());
    let mut variances = Vec::with_capacity(control.waypoints.len());
    for (i, &wp) in control.waypoints.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let r = measure_with_rng(dut, schedule, reference, noise, config, wp, &mut rng)?;
        estimates.push(r.estimate);
        variances.push(r.sample_variance);
    }
    Ok(SweepResult {
        waypoints: control.waypoints.clone(),
        estimates,
        variances,
        n_periods: config.periods,
        seed,
    })
}

// ---------- dual-channel measurement ----------

/// Joint result of the curve and derivative channels over a shared stimulus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualMeasurement {
    pub estimate_c: f64,
    pub estimate_d: f64,
    pub variance_c: f64,
    pub variance_d: f64,
    pub per_period_c: Vec<f64>,
    pub per_period_d: Vec<f64>,
}

/// Correlate one shared response stream against both channel references.
pub fn measure_dual(
    dut: &Characteristic1D,
    dual: &crate::schedule::DualChannelSchedule,
    noise: &NoiseModel,
    config: &MeasurementConfig,
    e_c: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DualMeasurement> {
    let schedule = &dual.schedule;
    schedule.validate()?;
    dual.reference_c.validate_alignment(schedule)?;
    dual.reference_d.validate_alignment(schedule)?;
    config.validate(schedule)?;
    domain_precheck(dut, schedule, e_c)?;
    let density = noise.white_density().ok_or_else(|| {
        Error::Argument("dual-channel measurement currently models white noise".into())
    })?;
    let gain = if config.apply_gain { schedule.gain } else { 1.0 };
    let mut per_c = Vec::with_capacity(config.periods);
    let mut per_d = Vec::with_capacity(config.periods);
    for _ in 0..config.periods {
        let (mut raw_c, mut raw_d) = (0.0, 0.0);
        for (i, seg) in schedule.segments.iter().enumerate() {
            let level = match seg.shape {
                crate::schedule::SegmentShape::Hold { level } => level,
                _ => {
                    return Err(Error::Argument(
                        "dual-channel schedules are stepwise by construction".into(),
                    ))
                }
            };
            let resp = dut.sample_response(e_c + level).expect("domain pre-checked");
            // Shared physical signal: one slot-mean noise draw feeds both
            // correlators, exactly as one ADC stream would.
            let slot_noise = if density > 0.0 {
                (density / seg.dwell).sqrt()
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            let sample = resp + slot_noise;
            raw_c += sample * dual.reference_c.value_at(i, 0.0) * seg.dwell;
            raw_d += sample * dual.reference_d.value_at(i, 0.0) * seg.dwell;
        }
        per_c.push(gain * raw_c);
        per_d.push(gain * raw_d);
    }
    Ok(DualMeasurement {
        estimate_c: mc::mean(&per_c),
        estimate_d: mc::mean(&per_d),
        variance_c: if per_c.len() > 1 { mc::sample_variance(&per_c) } else { 0.0 },
        variance_d: if per_d.len() > 1 { mc::sample_variance(&per_d) } else { 0.0 },
        per_period_c: per_c,
        per_period_d: per_d,
    })
}

// ---------- self test ----------

/// Verification of a schedule against the analytically known weighted integral
/// of a closed-form calibrator curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestReport {
    pub measured: f64,
    pub expected: f64,
    pub deviation: f64,
    /// measured / expected when the expected value is nonzero.
    pub factor: Option<f64>,
    pub pass: bool,
}

/// Replace the DUT by a known calibrator, run the meter with zero noise, and
/// compare against the weighting functional evaluated by quadrature.
pub fn self_test(
    calibrator: &Characteristic1D,
    weighting: &AnyWeighting,
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    config: &MeasurementConfig,
) -> Result<SelfTestReport> {
    let (expected, center, scale) = match weighting {
        AnyWeighting::Discrete(w) => {
            let f = |e: f64| calibrator.sample_response(e).unwrap_or(0.0);
            (w.apply_to(f), w.center, w.total_weight())
        }
        AnyWeighting::Continuous(w) => {
            let f = |e: f64| calibrator.sample_response(e).unwrap_or(0.0);
            (w.apply_to(f), w.center, w.total_weight())
        }
        AnyWeighting::Grid2d(_) => {
            return Err(Error::Argument("self test verifies 1-D weightings".into()))
        }
    };
    let zero = NoiseModel::white(0.0, 0)?;
    let r = measure(calibrator, schedule, reference, &zero, config, center, 0)?;
    let resp_scale = (0..=64)
        .map(|i| {
            let e = calibrator.domain.0
                + (calibrator.domain.1 - calibrator.domain.0) * i as f64 / 64.0;
            calibrator.sample_response(e).unwrap_or(0.0).abs()
        })
        .fold(0.0, f64::max);
    let tol_scale = expected.abs().max(scale * resp_scale).max(f64::MIN_POSITIVE);
    let deviation = (r.estimate - expected).abs() / tol_scale;
    Ok(SelfTestReport {
        measured: r.estimate,
        expected,
        deviation,
        factor: if expected != 0.0 { Some(r.estimate / expected) } else { None },
        pass: deviation < 1e-9,
    })
}

// ---------- 2-D map measurement ----------

/// Weighted raster-scan estimate over a 2-D characteristic map (slot mode,
/// white noise): gain * sum of (response + slot noise) * sign * dwell.
pub fn measure_map2d(
    map: &CharacteristicMap2D,
    scan: &ScanSchedule2D,
    noise: &NoiseModel,
    periods: usize,
    rng: &mut ChaCha8Rng,
) -> Result<MeasurementResult> {
    if periods == 0 {
        return Err(Error::Argument("periods must be >= 1".into()));
    }
    let density = noise
        .white_density()
        .ok_or_else(|| Error::Argument("map measurement models white noise".into()))?;
    for v in &scan.visits {
        map.sample_response(v.x, v.y)?; // domain pre-check
    }
    let mut per_period = Vec::with_capacity(periods);
    for _ in 0..periods {
        let mut raw = 0.0;
        for v in &scan.visits {
            let resp = map.sample_response(v.x, v.y).expect("pre-checked");
            let slot_noise = if density > 0.0 {
                (density / v.dwell).sqrt()
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            } else {
                0.0
            };
            raw += (resp + slot_noise) * v.reference * v.dwell;
        }
        per_period.push(scan.gain * raw);
    }
    Ok(MeasurementResult {
        estimate: mc::mean(&per_period),
        sample_variance: if periods > 1 { mc::sample_variance(&per_period) } else { 0.0 },
        per_period,
        n_periods: periods,
        seed: 0,
        gain_applied: scan.gain,
    })
}
