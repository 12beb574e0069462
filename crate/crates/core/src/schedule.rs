//! Stimulus schedules and reference waveforms.
//!
//! A schedule describes one period of the fast modulating component: an ordered
//! list of contiguous segments (held levels, constant-slope ramps, or sampled
//! monotone sweeps) whose dwells sum to the period. The paired reference
//! waveform carries one value (or one harmonic lobe sign) per segment. Levels
//! are stored relative to the weighting center; the control component E_c is
//! added at measurement time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a segment's level evolves over its dwell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SegmentShape {
    /// Constant level for the whole dwell.
    Hold { level: f64 },
    /// Linear ramp from `start` at the given slope (level units per second).
    Ramp { start: f64, slope: f64 },
    /// Sampled monotone sweep: level at normalized local time x in [0, 1].
    Sweep { table: Vec<(f64, f64)> },
}

impl SegmentShape {
    /// Level at normalized local time `x` in [0, 1]; `dwell` scales ramps.
    pub fn level_at(&self, x: f64, dwell: f64) -> f64 {
        match self {
            SegmentShape::Hold { level } => *level,
            SegmentShape::Ramp { start, slope } => start + slope * x * dwell,
            SegmentShape::Sweep { table } => {
                let n = table.len();
                if x <= table[0].0 {
                    return table[0].1;
                }
                if x >= table[n - 1].0 {
                    return table[n - 1].1;
                }
                let i = match table.binary_search_by(|p| p.0.partial_cmp(&x).unwrap()) {
                    Ok(i) => return table[i].1,
                    Err(i) => i - 1,
                };
                let (x0, e0) = table[i];
                let (x1, e1) = table[i + 1];
                e0 + (e1 - e0) * (x - x0) / (x1 - x0)
            }
        }
    }

    /// Lowest and highest level the segment reaches.
    pub fn level_span(&self, dwell: f64) -> (f64, f64) {
        match self {
            SegmentShape::Hold { level } => (*level, *level),
            SegmentShape::Ramp { start, slope } => {
                let end = start + slope * dwell;
                (start.min(end), start.max(end))
            }
            SegmentShape::Sweep { table } => table
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, e)| (lo.min(e), hi.max(e))),
        }
    }
}

/// One contiguous piece of the modulation period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub dwell: f64,
    #[serde(flatten)]
    pub shape: SegmentShape,
}

/// Schedule family; decides verification tolerances and measurement strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Stepwise,
    Continuous,
    Narrowband,
    Dynamic,
}

/// Periodic modulating signal plus the calibration gain of its estimator.
///
/// `gain` is the factor that turns the raw per-period correlation
/// integral(I * u dt) into the weighted-integral units of the estimator
/// definition; for bilevel schedules it equals total_weight / period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSchedule {
    pub period: f64,
    pub gain: f64,
    /// Stimulus span E_m: all levels lie within [-range/2, range/2].
    pub range: f64,
    pub kind: ScheduleKind,
    pub segments: Vec<Segment>,
}

impl StimulusSchedule {
    /// Validate dwell positivity and the dwell-sum invariant.
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::Argument(format!("period must be > 0, got {}", self.period)));
        }
        if self.segments.is_empty() {
            return Err(Error::Design("schedule has no segments".into()));
        }
        let mut sum = 0.0;
        for s in &self.segments {
            if !(s.dwell > 0.0) {
                return Err(Error::Argument(format!("dwell must be > 0, got {}", s.dwell)));
            }
            sum += s.dwell;
        }
        let ulps = (self.segments.len() as f64) * f64::EPSILON * self.period;
        if (sum - self.period).abs() > ulps.max(f64::EPSILON * self.period) {
            return Err(Error::Argument(format!(
                "segment dwells sum to {sum}, period is {}",
                self.period
            )));
        }
        let half = 0.5 * self.range + 1e-9 * self.range.max(1.0);
        for s in &self.segments {
            let (lo, hi) = s.shape.level_span(s.dwell);
            if lo < -half || hi > half {
                return Err(Error::Argument(format!(
                    "segment reaches [{lo}, {hi}] outside +/-{}",
                    0.5 * self.range
                )));
            }
        }
        Ok(())
    }

    /// Start time of each segment within the period.
    pub fn segment_offsets(&self) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.segments.len());
        let mut t = 0.0;
        for s in &self.segments {
            offsets.push(t);
            t += s.dwell;
        }
        offsets
    }

    /// Modulation level at time `t` within [0, period) (periodic extension).
    pub fn level_at(&self, t: f64) -> f64 {
        let t = t.rem_euclid(self.period);
        let mut acc = 0.0;
        for s in &self.segments {
            if t < acc + s.dwell || std::ptr::eq(s, self.segments.last().unwrap()) {
                let x = ((t - acc) / s.dwell).clamp(0.0, 1.0);
                return s.shape.level_at(x, s.dwell);
            }
            acc += s.dwell;
        }
        unreachable!("segments cover the period");
    }

    /// Shortest segment dwell; bounds the usable sample rate.
    pub fn min_dwell(&self) -> f64 {
        self.segments.iter().map(|s| s.dwell).fold(f64::INFINITY, f64::min)
    }

    /// True when every segment holds a constant level.
    pub fn is_stepwise(&self) -> bool {
        self.segments.iter().all(|s| matches!(s.shape, SegmentShape::Hold { .. }))
    }

    /// Uniformly sampled (t, E_M) waveform over one period, for plotting.
    pub fn sample_waveform(&self, samples: usize) -> Vec<(f64, f64)> {
        (0..samples)
            .map(|i| {
                let t = self.period * i as f64 / samples as f64;
                (t, self.level_at(t))
            })
            .collect()
    }

    /// Reverse the segment order (the estimator is order-invariant per period).
    pub fn reversed(&self) -> Self {
        let segments: Vec<Segment> = self
            .segments
            .iter()
            .rev()
            .map(|s| Segment {
                dwell: s.dwell,
                shape: match &s.shape {
                    SegmentShape::Hold { level } => SegmentShape::Hold { level: *level },
                    SegmentShape::Ramp { start, slope } => SegmentShape::Ramp {
                        start: start + slope * s.dwell,
                        slope: -slope,
                    },
                    SegmentShape::Sweep { table } => SegmentShape::Sweep {
                        table: table.iter().rev().map(|&(x, e)| (1.0 - x, e)).collect(),
                    },
                },
            })
            .collect();
        Self { segments, ..self.clone() }
    }
}

/// Reference waveform of the correlation meter, aligned one entry per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceWaveform {
    /// Values in {-1, +1}, one per segment (the white-noise optimum).
    Bilevel { signs: Vec<f64> },
    /// General per-segment constants (dual-channel references).
    Stepwise { values: Vec<f64> },
    /// Half-sine lobes: u = sign_k * amplitude * sin(omega * t_local) on
    /// segment k, each segment exactly one half-period (pi / omega) long.
    Harmonic { amplitude: f64, omega: f64, signs: Vec<f64> },
}

impl ReferenceWaveform {
    pub fn len(&self) -> usize {
        match self {
            ReferenceWaveform::Bilevel { signs } => signs.len(),
            ReferenceWaveform::Stepwise { values } => values.len(),
            ReferenceWaveform::Harmonic { signs, .. } => signs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reference value on segment `seg` at local time `t_local` from its start.
    pub fn value_at(&self, seg: usize, t_local: f64) -> f64 {
        match self {
            ReferenceWaveform::Bilevel { signs } => signs[seg],
            ReferenceWaveform::Stepwise { values } => values[seg],
            ReferenceWaveform::Harmonic { amplitude, omega, signs } => {
                signs[seg] * amplitude * (omega * t_local).sin()
            }
        }
    }

    /// Mean of u^2 over a segment of length `dwell` (for variance budgets).
    pub fn mean_square(&self, seg: usize, _dwell: f64) -> f64 {
        match self {
            ReferenceWaveform::Bilevel { signs } => signs[seg] * signs[seg],
            ReferenceWaveform::Stepwise { values } => values[seg] * values[seg],
            ReferenceWaveform::Harmonic { amplitude, .. } => 0.5 * amplitude * amplitude,
        }
    }

    pub fn validate_alignment(&self, schedule: &StimulusSchedule) -> Result<()> {
        if self.len() != schedule.segments.len() {
            return Err(Error::Alignment(format!(
                "{} reference entries for {} segments",
                self.len(),
                schedule.segments.len()
            )));
        }
        if let ReferenceWaveform::Bilevel { signs } = self {
            for &s in signs {
                if s != 1.0 && s != -1.0 {
                    return Err(Error::Argument(format!("bilevel value {s} not in {{-1, +1}}")));
                }
            }
        }
        if let ReferenceWaveform::Harmonic { omega, .. } = self {
            let half = std::f64::consts::PI / omega;
            for s in &schedule.segments {
                if (s.dwell - half).abs() > 1e-9 * half {
                    return Err(Error::Alignment(format!(
                        "harmonic reference needs half-period segments ({half}), got {}",
                        s.dwell
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Shared stimulus with two correlation channels balanced by (mu_c, mu_d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualChannelSchedule {
    pub schedule: StimulusSchedule,
    pub reference_c: ReferenceWaveform,
    pub reference_d: ReferenceWaveform,
    pub balance: (f64, f64),
}

/// One dwell of a 2-D raster scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanVisit {
    pub x: f64,
    pub y: f64,
    pub dwell: f64,
    /// Bilevel reference value during the visit.
    pub reference: f64,
}

/// 2-D scan schedule: ordered visits whose dwells sum to the period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanSchedule2D {
    pub period: f64,
    pub gain: f64,
    pub visits: Vec<ScanVisit>,
}

// ---------- JSON document form ----------

/// Wire form of a (schedule, reference) pair:
/// `{period, gain, kind, reference, segments: [{level|slope|table, dwell, ref}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDocument {
    pub period: f64,
    pub gain: f64,
    pub range: f64,
    pub kind: ScheduleKind,
    pub reference: ReferenceMeta,
    pub segments: Vec<SegmentDocument>,
}

/// Reference kind and harmonic parameters (per-segment values live in `ref`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceMeta {
    Bilevel,
    Stepwise,
    Harmonic { amplitude: f64, omega: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentDocument {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<(f64, f64)>>,
    pub dwell: f64,
    #[serde(rename = "ref")]
    pub reference: f64,
}

impl ScheduleDocument {
    pub fn from_parts(schedule: &StimulusSchedule, reference: &ReferenceWaveform) -> Result<Self> {
        reference.validate_alignment(schedule)?;
        let meta = match reference {
            ReferenceWaveform::Bilevel { .. } => ReferenceMeta::Bilevel,
            ReferenceWaveform::Stepwise { .. } => ReferenceMeta::Stepwise,
            ReferenceWaveform::Harmonic { amplitude, omega, .. } => {
                ReferenceMeta::Harmonic { amplitude: *amplitude, omega: *omega }
            }
        };
        let segments = schedule
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let r = match reference {
                    ReferenceWaveform::Bilevel { signs } => signs[i],
                    ReferenceWaveform::Stepwise { values } => values[i],
                    ReferenceWaveform::Harmonic { signs, .. } => signs[i],
                };
                let mut doc = SegmentDocument {
                    level: None,
                    slope: None,
                    start: None,
                    table: None,
                    dwell: s.dwell,
                    reference: r,
                };
                match &s.shape {
                    SegmentShape::Hold { level } => doc.level = Some(*level),
                    SegmentShape::Ramp { start, slope } => {
                        doc.start = Some(*start);
                        doc.slope = Some(*slope);
                    }
                    SegmentShape::Sweep { table } => doc.table = Some(table.clone()),
                }
                doc
            })
            .collect();
        Ok(Self {
            period: schedule.period,
            gain: schedule.gain,
            range: schedule.range,
            kind: schedule.kind,
            reference: meta,
            segments,
        })
    }

    pub fn into_parts(self) -> Result<(StimulusSchedule, ReferenceWaveform)> {
        let mut segments = Vec::with_capacity(self.segments.len());
        let mut refs = Vec::with_capacity(self.segments.len());
        for d in self.segments {
            let shape = if let Some(level) = d.level {
                SegmentShape::Hold { level }
            } else if let (Some(start), Some(slope)) = (d.start, d.slope) {
                SegmentShape::Ramp { start, slope }
            } else if let Some(table) = d.table {
                SegmentShape::Sweep { table }
            } else {
                return Err(Error::Argument("segment needs level, slope+start or table".into()));
            };
            segments.push(Segment { dwell: d.dwell, shape });
            refs.push(d.reference);
        }
        let schedule = StimulusSchedule {
            period: self.period,
            gain: self.gain,
            range: self.range,
            kind: self.kind,
            segments,
        };
        let reference = match self.reference {
            ReferenceMeta::Bilevel => ReferenceWaveform::Bilevel { signs: refs },
            ReferenceMeta::Stepwise => ReferenceWaveform::Stepwise { values: refs },
            ReferenceMeta::Harmonic { amplitude, omega } => {
                ReferenceWaveform::Harmonic { amplitude, omega, signs: refs }
            }
        };
        schedule.validate()?;
        reference.validate_alignment(&schedule)?;
        Ok((schedule, reference))
    }
}
