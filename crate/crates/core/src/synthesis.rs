//! Co-synthesis of modulating and reference signals from a weighting function.
//!
//! The constructive results implemented here:
//! - discrete weightings: stepwise stimulus with dwell tau_i = T |W_i| / sum|W|
//!   and a bilevel reference sign(W_i);
//! - continuous weightings: the cumulative-absolute-weight inversion law
//!   (the stimulus spends time in proportion to local |K_w|), bilevel reference
//!   sign(K_w(E_M(t)));
//! - dual-channel: shared stimulus with root-mean dwells and per-segment
//!   references W(E_i)/tau_i that make both channels exact simultaneously;
//! - narrowband: harmonic (half-sine lobe) reference with sign agreement and
//!   half-period dwell quantization;
//! - 2-D raster scans and dynamic (level, rate) trajectories under the
//!   balanced-packing condition.
//!
//! Every synthesized schedule carries gain = total_weight / period so the
//! correlation meter reports estimates in weighted-integral units.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::{
    ReferenceWaveform, ScanSchedule2D, ScanVisit, ScheduleKind, Segment, SegmentShape,
    StimulusSchedule,
};
use crate::weighting::{AnyWeighting, ContinuousWeighting, DiscreteWeighting, Weighting2D};

/// Segment ordering of synthesized stepwise schedules. The weighted estimate
/// integrates over whole periods, so the order is a free choice; it matters
/// only for noise-spectrum studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentOrder {
    Ascending,
    Descending,
    Randomized { seed: u64 },
}

impl Default for SegmentOrder {
    fn default() -> Self {
        SegmentOrder::Ascending
    }
}

// ---------- cumulative absolute weight ----------

/// One maximal span of the cumulative measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRun {
    /// Linear |K| over [x0, x1] with constant sign; gamma grows by the exact
    /// integral of |K|.
    Smooth { x0: f64, x1: f64, k0: f64, k1: f64, gamma0: f64, gamma1: f64, sign: f64 },
    /// Delta component: gamma jumps by |mass| at a fixed position.
    Lump { x: f64, mass: f64, gamma0: f64, gamma1: f64 },
}

impl GammaRun {
    pub fn gamma_span(&self) -> (f64, f64) {
        match self {
            GammaRun::Smooth { gamma0, gamma1, .. } => (*gamma0, *gamma1),
            GammaRun::Lump { gamma0, gamma1, .. } => (*gamma0, *gamma1),
        }
    }

    pub fn sign(&self) -> f64 {
        match self {
            GammaRun::Smooth { sign, .. } => *sign,
            GammaRun::Lump { mass, .. } => mass.signum(),
        }
    }
}

/// Cumulative function Gamma(E) = integral of |K_w| from the left support edge,
/// including delta masses, in coordinates relative to the weighting center.
///
/// Profiles are piecewise linear, so both the forward map and its inverse are
/// evaluated in closed form (quadratic segments), with the left-continuous
/// convention at plateaus and jumps.
#[derive(Debug, Clone)]
pub struct CumulativeWeight {
    runs: Vec<GammaRun>,
    total: f64,
}

impl CumulativeWeight {
    pub fn from_weighting(w: &ContinuousWeighting) -> Result<Self> {
        // Events along x: linear pieces split at interior zeros, plus lumps.
        let mut pieces = Vec::new();
        for p in w.profile.pieces(w.range) {
            if let Some(z) = p.interior_zero() {
                let kz = 0.0;
                pieces.push((p.x0, z, p.k0, kz));
                pieces.push((z, p.x1, kz, p.k1));
            } else {
                pieces.push((p.x0, p.x1, p.k0, p.k1));
            }
        }
        // Split pieces at delta locations so lumps sit between smooth spans.
        let mut lump_xs: Vec<(f64, f64)> = w.deltas.iter().map(|d| (d.location, d.mass)).collect();
        lump_xs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for &(x, _) in &lump_xs {
            let mut split = Vec::with_capacity(pieces.len() + 1);
            for &(x0, x1, k0, k1) in &pieces {
                if x > x0 && x < x1 {
                    let frac = (x - x0) / (x1 - x0);
                    let kx = k0 + (k1 - k0) * frac;
                    split.push((x0, x, k0, kx));
                    split.push((x, x1, kx, k1));
                } else {
                    split.push((x0, x1, k0, k1));
                }
            }
            pieces = split;
        }
        // Assemble runs in x order, interleaving lumps at their positions.
        let mut runs = Vec::new();
        let mut gamma = 0.0;
        let mut lump_iter = lump_xs.into_iter().peekable();
        let mut push_lumps_before = |x_limit: f64, gamma: &mut f64, runs: &mut Vec<GammaRun>| {
            while let Some(&(lx, mass)) = lump_iter.peek() {
                if lx <= x_limit {
                    let g0 = *gamma;
                    *gamma += mass.abs();
                    runs.push(GammaRun::Lump { x: lx, mass, gamma0: g0, gamma1: *gamma });
                    lump_iter.next();
                } else {
                    break;
                }
            }
        };
        for (x0, x1, k0, k1) in pieces {
            push_lumps_before(x0, &mut gamma, &mut runs);
            let piece = crate::weighting::LinearPiece { x0, x1, k0, k1 };
            let dg = piece.abs_integral();
            let sign = (0.5 * (k0 + k1)).signum() * if k0 == 0.0 && k1 == 0.0 { 0.0 } else { 1.0 };
            runs.push(GammaRun::Smooth {
                x0,
                x1,
                k0,
                k1,
                gamma0: gamma,
                gamma1: gamma + dg,
                sign,
            });
            gamma += dg;
        }
        push_lumps_before(f64::INFINITY, &mut gamma, &mut runs);
        Ok(Self { runs, total: gamma })
    }

    /// Total absolute weight (the variance scale of the optimal estimator).
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn runs(&self) -> &[GammaRun] {
        &self.runs
    }

    /// Forward map: cumulative gamma at position x (right-continuous at jumps).
    pub fn forward(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for run in &self.runs {
            match run {
                GammaRun::Lump { x: lx, gamma1, .. } => {
                    if x >= *lx {
                        acc = *gamma1;
                    } else {
                        return acc;
                    }
                }
                GammaRun::Smooth { x0, x1, k0, k1, gamma0, gamma1, .. } => {
                    if x >= *x1 {
                        acc = *gamma1;
                    } else if x <= *x0 {
                        return acc;
                    } else {
                        let u = x - x0;
                        let width = x1 - x0;
                        let slope = (k1.abs() - k0.abs()) / width;
                        return gamma0 + k0.abs() * u + 0.5 * slope * u * u;
                    }
                }
            }
        }
        acc
    }

    /// Left-continuous inverse: the position where the cumulative weight
    /// reaches `gamma`. Plateaus and jumps map to their left edge.
    pub fn invert(&self, gamma: f64) -> f64 {
        let g = gamma.clamp(0.0, self.total);
        // First run whose gamma1 reaches g and whose span is non-degenerate.
        for run in &self.runs {
            let (g0, g1) = run.gamma_span();
            if g1 < g || g1 == g0 {
                continue;
            }
            match run {
                GammaRun::Lump { x, .. } => return *x,
                GammaRun::Smooth { x0, x1, k0, k1, gamma0, .. } => {
                    let width = x1 - x0;
                    let a0 = k0.abs();
                    let slope = (k1.abs() - a0) / width;
                    let dg = (g - gamma0).max(0.0);
                    // Solve a0*u + slope*u^2/2 = dg, stable for slope -> 0.
                    let disc = (a0 * a0 + 2.0 * slope * dg).max(0.0).sqrt();
                    let u = if a0 + disc > 0.0 { 2.0 * dg / (a0 + disc) } else { 0.0 };
                    return (x0 + u).min(*x1);
                }
            }
        }
        // gamma == total: right edge of the last non-degenerate run.
        for run in self.runs.iter().rev() {
            let (g0, g1) = run.gamma_span();
            if g1 > g0 {
                return match run {
                    GammaRun::Lump { x, .. } => *x,
                    GammaRun::Smooth { x1, .. } => *x1,
                };
            }
        }
        0.0
    }

    /// Consecutive same-sign intervals of the measure (zero-measure spans are
    /// neutral and attach to nothing).
    pub fn sign_intervals(&self) -> Vec<SignInterval> {
        let mut out: Vec<SignInterval> = Vec::new();
        for run in &self.runs {
            let (g0, g1) = run.gamma_span();
            if g1 <= g0 {
                continue;
            }
            let sign = run.sign();
            if sign == 0.0 {
                continue;
            }
            match out.last_mut() {
                Some(last) if last.sign == sign && last.gamma1 == g0 => last.gamma1 = g1,
                _ => out.push(SignInterval { sign, gamma0: g0, gamma1: g1 }),
            }
        }
        out
    }
}

/// A maximal constant-sign stretch of the weighting, in gamma coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignInterval {
    pub sign: f64,
    pub gamma0: f64,
    pub gamma1: f64,
}

impl SignInterval {
    pub fn mass(&self) -> f64 {
        self.gamma1 - self.gamma0
    }
}

// ---------- helpers ----------

/// Nudge the largest dwell so the sum is bit-exactly the period.
fn fix_dwell_sum(dwells: &mut [f64], period: f64) {
    for _ in 0..4 {
        let sum: f64 = dwells.iter().sum();
        if sum == period {
            return;
        }
        let idx = dwells
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        dwells[idx] += period - sum;
    }
}

// ---------- discrete synthesis ----------

/// Stepwise stimulus and bilevel reference from a discrete weighting (default
/// ascending level order).
pub fn synthesize_discrete(
    w: &DiscreteWeighting,
    period: f64,
) -> Result<(StimulusSchedule, ReferenceWaveform)> {
    synthesize_discrete_ordered(w, period, SegmentOrder::Ascending)
}

/// Stepwise synthesis with an explicit segment ordering.
pub fn synthesize_discrete_ordered(
    w: &DiscreteWeighting,
    period: f64,
    order: SegmentOrder,
) -> Result<(StimulusSchedule, ReferenceWaveform)> {
    if !(period > 0.0) {
        return Err(Error::Argument(format!("period must be > 0, got {period}")));
    }
    let total = w.total_weight();
    if total <= 0.0 {
        return Err(Error::Design("all weights are zero".into()));
    }
    // Zero-weight levels get zero dwell and are omitted.
    let mut kept: Vec<(f64, f64)> = w
        .nodes
        .iter()
        .filter(|n| n.weight != 0.0)
        .map(|n| (n.level - w.center, n.weight))
        .collect();
    match order {
        SegmentOrder::Ascending => {}
        SegmentOrder::Descending => kept.reverse(),
        SegmentOrder::Randomized { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            kept.shuffle(&mut rng);
        }
    }
    let mut dwells: Vec<f64> = kept.iter().map(|(_, wt)| period * wt.abs() / total).collect();
    fix_dwell_sum(&mut dwells, period);
    let range = 2.0 * kept.iter().map(|(l, _)| l.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let segments = kept
        .iter()
        .zip(dwells.iter())
        .map(|(&(level, _), &dwell)| Segment { dwell, shape: SegmentShape::Hold { level } })
        .collect();
    let signs = kept.iter().map(|(_, wt)| wt.signum()).collect();
    let schedule = StimulusSchedule {
        period,
        gain: total / period,
        range,
        kind: ScheduleKind::Stepwise,
        segments,
    };
    schedule.validate()?;
    let reference = ReferenceWaveform::Bilevel { signs };
    reference.validate_alignment(&schedule)?;
    Ok((schedule, reference))
}

// ---------- continuous synthesis ----------

/// Continuous stimulus from the cumulative-weight inversion law: the level
/// E_M(t) advances so the cumulative |K_w| grows linearly in time, delta
/// components become dwell pauses, and the bilevel reference tracks the sign
/// of the weighting at the current level.
pub fn synthesize_continuous(
    w: &ContinuousWeighting,
    period: f64,
    samples: usize,
) -> Result<(StimulusSchedule, ReferenceWaveform)> {
    if !(period > 0.0) {
        return Err(Error::Argument(format!("period must be > 0, got {period}")));
    }
    if samples < 64 {
        return Err(Error::Argument(format!("need >= 64 samples, got {samples}")));
    }
    let cum = CumulativeWeight::from_weighting(w)?;
    let total = cum.total();
    if total <= 0.0 {
        return Err(Error::Design("weighting profile is identically zero".into()));
    }
    let mut segments = Vec::new();
    let mut signs = Vec::new();
    let mut dwells = Vec::new();
    for run in cum.runs() {
        let (g0, g1) = run.gamma_span();
        let mass = g1 - g0;
        if mass <= 0.0 {
            continue; // zero-weight stretch: no time allocated, level jumps
        }
        let dwell = period * mass / total;
        match run {
            GammaRun::Lump { x, mass, .. } => {
                segments.push(SegmentShape::Hold { level: *x });
                signs.push(mass.signum());
            }
            GammaRun::Smooth { sign, .. } => {
                let n = ((samples as f64 * mass / total).ceil() as usize).max(8);
                let table: Vec<(f64, f64)> = (0..=n)
                    .map(|j| {
                        let s = j as f64 / n as f64;
                        (s, cum.invert(g0 + mass * s))
                    })
                    .collect();
                segments.push(SegmentShape::Sweep { table });
                signs.push(if *sign == 0.0 { 1.0 } else { *sign });
            }
        }
        dwells.push(dwell);
    }
    if segments.is_empty() {
        return Err(Error::Design("weighting has no measure".into()));
    }
    fix_dwell_sum(&mut dwells, period);
    let schedule = StimulusSchedule {
        period,
        gain: total / period,
        range: w.range,
        kind: ScheduleKind::Continuous,
        segments: dwells
            .iter()
            .zip(segments)
            .map(|(&dwell, shape)| Segment { dwell, shape })
            .collect(),
    };
    schedule.validate()?;
    let reference = ReferenceWaveform::Bilevel { signs };
    reference.validate_alignment(&schedule)?;
    Ok((schedule, reference))
}

// ---------- dual-channel synthesis ----------

/// Shared stimulus for simultaneous curve and derivative channels.
///
/// Dwells follow the root-mean formula over the balance (mu_c, mu_d); each
/// channel's reference is W(E_i)/tau_i, so the per-segment products
/// u * tau recover the exact weighted sums with unit gain.
pub fn synthesize_dual(
    w_c: &DiscreteWeighting,
    w_d: &DiscreteWeighting,
    balance: (f64, f64),
    period: f64,
) -> Result<crate::schedule::DualChannelSchedule> {
    let (mu_c, mu_d) = balance;
    if !(mu_c >= 0.0 && mu_d >= 0.0 && (mu_c + mu_d - 1.0).abs() <= 1e-12) {
        return Err(Error::Argument(format!(
            "balance must satisfy mu_c, mu_d >= 0 and mu_c + mu_d = 1, got ({mu_c}, {mu_d})"
        )));
    }
    if !(period > 0.0) {
        return Err(Error::Argument(format!("period must be > 0, got {period}")));
    }
    if w_c.nodes.len() != w_d.nodes.len()
        || w_c
            .nodes
            .iter()
            .zip(w_d.nodes.iter())
            .any(|(a, b)| a.level != b.level)
    {
        return Err(Error::Argument("channel weightings must share the node set".into()));
    }
    let center = w_c.center;
    let mut kept: Vec<(f64, f64, f64, f64)> = Vec::new(); // (level, wc, wd, r)
    for (nc, nd) in w_c.nodes.iter().zip(w_d.nodes.iter()) {
        let r = (mu_c * nc.weight * nc.weight + mu_d * nd.weight * nd.weight).sqrt();
        if r > 0.0 {
            kept.push((nc.level - center, nc.weight, nd.weight, r));
        }
    }
    if kept.is_empty() {
        return Err(Error::Design("all balanced weights are zero".into()));
    }
    let norm: f64 = kept.iter().map(|k| k.3).sum();
    let mut dwells: Vec<f64> = kept.iter().map(|k| period * k.3 / norm).collect();
    fix_dwell_sum(&mut dwells, period);
    let range = 2.0 * kept.iter().map(|k| k.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let segments = kept
        .iter()
        .zip(dwells.iter())
        .map(|(&(level, ..), &dwell)| Segment { dwell, shape: SegmentShape::Hold { level } })
        .collect();
    let schedule = StimulusSchedule {
        period,
        gain: 1.0, // u = W/tau already carries the weighting units
        range,
        kind: ScheduleKind::Stepwise,
        segments,
    };
    schedule.validate()?;
    let values_c = kept.iter().zip(dwells.iter()).map(|(k, &t)| k.1 / t).collect();
    let values_d = kept.iter().zip(dwells.iter()).map(|(k, &t)| k.2 / t).collect();
    let reference_c = ReferenceWaveform::Stepwise { values: values_c };
    let reference_d = ReferenceWaveform::Stepwise { values: values_d };
    reference_c.validate_alignment(&schedule)?;
    reference_d.validate_alignment(&schedule)?;
    Ok(crate::schedule::DualChannelSchedule { schedule, reference_c, reference_d, balance })
}

/// Closed-form random-error scale of both dual channels, in variance x time
/// units: D = P_n * (sum W^2 / tau) * T = P_n * (sum W^2/r) * (sum r).
pub fn dual_variance_scales(
    w_c: &DiscreteWeighting,
    w_d: &DiscreteWeighting,
    balance: (f64, f64),
) -> Result<(f64, f64)> {
    let dual = synthesize_dual(w_c, w_d, balance, 1.0)?;
    let (mut dc, mut dd) = (0.0, 0.0);
    for (i, seg) in dual.schedule.segments.iter().enumerate() {
        let uc = match &dual.reference_c {
            ReferenceWaveform::Stepwise { values } => values[i],
            _ => unreachable!(),
        };
        let ud = match &dual.reference_d {
            ReferenceWaveform::Stepwise { values } => values[i],
            _ => unreachable!(),
        };
        dc += uc * uc * seg.dwell;
        dd += ud * ud * seg.dwell;
    }
    Ok((dc, dd)) // period = 1, so variance x time = sum u^2 tau
}

// ---------- narrowband synthesis ----------

/// Result of narrowband synthesis: the schedule/reference pair plus the
/// realized dwell quantization report.
#[derive(Debug, Clone)]
pub struct NarrowbandSynthesis {
    pub schedule: StimulusSchedule,
    pub reference: ReferenceWaveform,
    pub report: NarrowbandReport,
}

/// Quantization report: ideal vs realized dwell fractions per sign interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NarrowbandReport {
    pub period: f64,
    pub half_period: f64,
    pub slots: usize,
    /// (ideal mass fraction, slots allocated) per sign interval.
    pub intervals: Vec<(f64, usize)>,
    /// Largest relative deviation of realized from ideal dwell fractions.
    pub max_distortion: f64,
}

/// Narrowband synthesis: harmonic reference at `omega0` with per-half-period
/// sign agreement, dwells quantized to whole half-periods.
///
/// The target period is coerced to the nearest whole number of half-periods;
/// each constant-sign interval of the weighting receives its mass share of
/// the slots (largest-remainder apportionment, at least one slot each). Within
/// a slot the sweep follows the cumulative-weight law warped by the integrated
/// half-sine, which keeps the effective weighting proportional to K_w exactly.
pub fn synthesize_narrowband(
    w: &ContinuousWeighting,
    omega0: f64,
    amplitude: f64,
    target_period: f64,
) -> Result<NarrowbandSynthesis> {
    if !(omega0 > 0.0) {
        return Err(Error::Argument(format!("omega0 must be > 0, got {omega0}")));
    }
    if !(amplitude > 0.0) {
        return Err(Error::Argument(format!("amplitude must be > 0, got {amplitude}")));
    }
    let half = std::f64::consts::PI / omega0;
    let cum = CumulativeWeight::from_weighting(w)?;
    let total = cum.total();
    if total <= 0.0 {
        return Err(Error::Design("weighting profile is identically zero".into()));
    }
    let intervals = cum.sign_intervals();
    let slots_target = (target_period / half).round() as i64;
    if slots_target < intervals.len() as i64 {
        return Err(Error::Resolution(format!(
            "period {target_period} holds {slots_target} half-periods but the weighting has {} sign intervals; increase the period or omega0",
            intervals.len()
        )));
    }
    let n_slots = slots_target as usize;
    // Quotas in slots; an interval that would round to zero is unresolvable.
    let quotas: Vec<f64> =
        intervals.iter().map(|iv| n_slots as f64 * iv.mass() / total).collect();
    if let Some((i, q)) = quotas.iter().enumerate().find(|(_, &q)| q < 0.5) {
        return Err(Error::Resolution(format!(
            "sign interval {i} needs {q:.3} half-periods (< 0.5); increase the period or omega0"
        )));
    }
    let mut alloc: Vec<usize> = quotas.iter().map(|&q| q.round().max(1.0) as usize).collect();
    // Restore the exact slot count, moving slots where the rounding hurt least.
    loop {
        let sum: usize = alloc.iter().sum();
        if sum == n_slots {
            break;
        }
        if sum > n_slots {
            let i = (0..alloc.len())
                .filter(|&i| alloc[i] >= 2)
                .max_by(|&a, &b| {
                    (alloc[a] as f64 - quotas[a]).partial_cmp(&(alloc[b] as f64 - quotas[b])).unwrap()
                })
                .ok_or_else(|| {
                    Error::Resolution("cannot shrink allocation below one slot per interval".into())
                })?;
            alloc[i] -= 1;
        } else {
            let i = (0..alloc.len())
                .max_by(|&a, &b| {
                    (quotas[a] - alloc[a] as f64).partial_cmp(&(quotas[b] - alloc[b] as f64)).unwrap()
                })
                .unwrap();
            alloc[i] += 1;
        }
    }
    let period = n_slots as f64 * half;
    // Build one sweep segment per half-period slot; the in-slot law follows
    // gamma(t) = gamma_slot0 + slot_mass * (1 - cos(omega0 t_local)) / 2.
    let mut segments = Vec::with_capacity(n_slots);
    let mut signs = Vec::with_capacity(n_slots);
    let pts_per_slot = 32usize;
    for (iv, &n_l) in intervals.iter().zip(alloc.iter()) {
        let slot_mass = iv.mass() / n_l as f64;
        for s in 0..n_l {
            let g_start = iv.gamma0 + slot_mass * s as f64;
            let table: Vec<(f64, f64)> = (0..=pts_per_slot)
                .map(|j| {
                    let frac = j as f64 / pts_per_slot as f64;
                    let warped = 0.5 * (1.0 - (std::f64::consts::PI * frac).cos());
                    (frac, cum.invert(g_start + slot_mass * warped))
                })
                .collect();
            let constant = table.iter().all(|&(_, e)| e == table[0].1);
            let shape = if constant {
                SegmentShape::Hold { level: table[0].1 }
            } else {
                SegmentShape::Sweep { table }
            };
            segments.push(Segment { dwell: half, shape });
            signs.push(iv.sign);
        }
    }
    let mut dwells: Vec<f64> = segments.iter().map(|s| s.dwell).collect();
    fix_dwell_sum(&mut dwells, period);
    for (seg, &d) in segments.iter_mut().zip(dwells.iter()) {
        seg.dwell = d;
    }
    let gain = std::f64::consts::PI * total / (2.0 * amplitude * period);
    let schedule = StimulusSchedule {
        period,
        gain,
        range: w.range,
        kind: ScheduleKind::Narrowband,
        segments,
    };
    schedule.validate()?;
    let reference = ReferenceWaveform::Harmonic { amplitude, omega: omega0, signs };
    reference.validate_alignment(&schedule)?;
    let max_distortion = intervals
        .iter()
        .zip(alloc.iter())
        .map(|(iv, &n)| {
            let ideal = iv.mass() / total;
            let realized = n as f64 / n_slots as f64;
            ((realized - ideal) / ideal).abs()
        })
        .fold(0.0, f64::max);
    let report = NarrowbandReport {
        period,
        half_period: half,
        slots: n_slots,
        intervals: intervals
            .iter()
            .zip(alloc.iter())
            .map(|(iv, &n)| (iv.mass() / total, n))
            .collect(),
        max_distortion,
    };
    Ok(NarrowbandSynthesis { schedule, reference, report })
}

// ---------- 2-D and dynamic synthesis ----------

/// Raster scan over a 2-D weighting grid: dwell proportional to |W|,
/// boustrophedon visiting order, bilevel reference.
pub fn synthesize_2d(w: &Weighting2D, period: f64) -> Result<ScanSchedule2D> {
    if !(period > 0.0) {
        return Err(Error::Argument(format!("period must be > 0, got {period}")));
    }
    let total = w.total_weight();
    if total <= 0.0 {
        return Err(Error::Design("all grid weights are zero".into()));
    }
    let mut visits = Vec::new();
    for (i, &x) in w.xs.iter().enumerate() {
        let ys: Vec<usize> = if i % 2 == 0 {
            (0..w.ys.len()).collect()
        } else {
            (0..w.ys.len()).rev().collect()
        };
        for j in ys {
            let weight = w.at(i, j);
            if weight == 0.0 {
                continue;
            }
            visits.push(ScanVisit {
                x,
                y: w.ys[j],
                dwell: period * weight.abs() / total,
                reference: weight.signum(),
            });
        }
    }
    let mut dwells: Vec<f64> = visits.iter().map(|v| v.dwell).collect();
    fix_dwell_sum(&mut dwells, period);
    for (v, &d) in visits.iter_mut().zip(dwells.iter()) {
        v.dwell = d;
    }
    Ok(ScanSchedule2D { period, gain: total / period, visits })
}

/// The two balanced-packing sums of a (level, rate) weighting: weighted rise
/// and fall distances that a closed trajectory must equalize.
pub fn packing_sums(w: &Weighting2D) -> (f64, f64) {
    let mut rise = 0.0;
    let mut fall = 0.0;
    for (i, _) in w.xs.iter().enumerate() {
        for (j, &rate) in w.ys.iter().enumerate() {
            let mass = w.at(i, j).abs();
            if rate > 0.0 {
                rise += rate * mass;
            } else if rate < 0.0 {
                fall += -rate * mass;
            }
        }
    }
    (rise, fall)
}

/// Stimulus for a rate-dependent device: one constant-slope segment per
/// (level, rate) node, ordered rising-then-falling so the periodic trajectory
/// closes. Requires the balanced-packing equality to 1e-9 relative.
pub fn synthesize_dynamic(
    w: &Weighting2D,
    period: f64,
) -> Result<(StimulusSchedule, ReferenceWaveform)> {
    if !(period > 0.0) {
        return Err(Error::Argument(format!("period must be > 0, got {period}")));
    }
    let total = w.total_weight();
    if total <= 0.0 {
        return Err(Error::Design("all grid weights are zero".into()));
    }
    for (j, &rate) in w.ys.iter().enumerate() {
        for i in 0..w.xs.len() {
            if w.at(i, j) != 0.0 && rate == 0.0 {
                return Err(Error::Argument(format!(
                    "node ({}, {rate}) has weight but zero scanning rate",
                    w.xs[i]
                )));
            }
        }
    }
    let (rise, fall) = packing_sums(w);
    if (rise - fall).abs() > 1e-9 * rise.max(fall).max(f64::MIN_POSITIVE) {
        return Err(Error::Packing { rise, fall });
    }
    // (level, rate, dwell, sign); rising sorted by level ascending, falling by
    // level descending, so the sweep walks up then back down.
    let mut rising = Vec::new();
    let mut falling = Vec::new();
    for (i, &level) in w.xs.iter().enumerate() {
        for (j, &rate) in w.ys.iter().enumerate() {
            let weight = w.at(i, j);
            if weight == 0.0 {
                continue;
            }
            let dwell = period * weight.abs() / total;
            if rate > 0.0 {
                rising.push((level, rate, dwell, weight.signum()));
            } else {
                falling.push((level, rate, dwell, weight.signum()));
            }
        }
    }
    rising.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    falling.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let ordered: Vec<(f64, f64, f64, f64)> = rising.into_iter().chain(falling).collect();
    let mut dwells: Vec<f64> = ordered.iter().map(|o| o.2).collect();
    fix_dwell_sum(&mut dwells, period);
    // Chain the segments, then center the trajectory around zero.
    let mut starts = Vec::with_capacity(ordered.len());
    let mut level = 0.0f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (o, &d) in ordered.iter().zip(dwells.iter()) {
        starts.push(level);
        let next = level + o.1 * d;
        lo = lo.min(level.min(next));
        hi = hi.max(level.max(next));
        level = next;
    }
    let mid = 0.5 * (lo + hi);
    let range = (hi - lo).max(f64::MIN_POSITIVE);
    let segments: Vec<Segment> = ordered
        .iter()
        .zip(starts.iter())
        .zip(dwells.iter())
        .map(|((o, &start), &dwell)| Segment {
            dwell,
            shape: SegmentShape::Ramp { start: start - mid, slope: o.1 },
        })
        .collect();
    let signs = ordered.iter().map(|o| o.3).collect();
    let schedule = StimulusSchedule {
        period,
        gain: total / period,
        range,
        kind: ScheduleKind::Dynamic,
        segments,
    };
    schedule.validate()?;
    let reference = ReferenceWaveform::Bilevel { signs };
    reference.validate_alignment(&schedule)?;
    Ok((schedule, reference))
}

// ---------- effective weighting and verification ----------

/// What the schedule/reference pair actually measures, split into discrete
/// masses (held levels) and a density sampled on a probe grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveWeighting {
    /// (level, u-time-integral / T) for every held level, merged by level.
    pub masses: Vec<(f64, f64)>,
    /// (probe level, T^-1 sum of u/|dE/dt| over visits) for sweeping segments.
    pub density: Vec<(f64, f64)>,
}

/// Evaluate the consistency-constraint sum for the pair: per held level the
/// reduced u*tau/T masses, per probe level the visit sum over sweeping
/// segments.
pub fn effective_weighting(
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    grid: &[f64],
) -> Result<EffectiveWeighting> {
    reference.validate_alignment(schedule)?;
    let t_total = schedule.period;
    let mut masses: Vec<(f64, f64)> = Vec::new();
    // Piecewise-linear (t_local, E) tables per sweeping segment.
    let mut tables: Vec<(usize, f64, Vec<(f64, f64)>)> = Vec::new();
    for (si, seg) in schedule.segments.iter().enumerate() {
        match &seg.shape {
            SegmentShape::Hold { level } => {
                masses.push((*level, reference_time_integral(reference, si, 0.0, seg.dwell) / t_total));
            }
            SegmentShape::Ramp { start, slope } => {
                let e1 = start + slope * seg.dwell;
                tables.push((si, seg.dwell, vec![(0.0, *start), (1.0, e1)]));
            }
            SegmentShape::Sweep { table } => {
                // Flat stretches are pauses and carry discrete mass.
                for cell in table.windows(2) {
                    let (s0, e0) = cell[0];
                    let (s1, e1) = cell[1];
                    if e1 == e0 {
                        let t0 = s0 * seg.dwell;
                        let t1 = s1 * seg.dwell;
                        masses.push((e0, reference_time_integral(reference, si, t0, t1) / t_total));
                    }
                }
                tables.push((si, seg.dwell, table.clone()));
            }
        }
    }
    merge_masses(&mut masses, schedule.range);
    let mut density = Vec::with_capacity(grid.len());
    for &e in grid {
        let mut acc = 0.0;
        for (si, dwell, table) in &tables {
            acc += table_visit_sum(table, *dwell, *si, reference, e);
        }
        density.push((e, acc / t_total));
    }
    Ok(EffectiveWeighting { masses, density })
}

/// Sum of u / |dE/dt| over the visits of level `e` within one segment table.
///
/// The local speed at a crossing is estimated by interpolating the secant
/// slopes of neighboring cells at their midpoints (second-order on smooth
/// sweeps, and exact for linear ones); flat cells are pauses, skipped here.
fn table_visit_sum(
    table: &[(f64, f64)],
    dwell: f64,
    seg: usize,
    reference: &ReferenceWaveform,
    e: f64,
) -> f64 {
    let cells = table.len() - 1;
    let secant = |j: usize| -> f64 {
        let (s0, e0) = table[j];
        let (s1, e1) = table[j + 1];
        (e1 - e0) / ((s1 - s0) * dwell)
    };
    let midpoint = |j: usize| -> f64 { 0.5 * (table[j].0 + table[j + 1].0) * dwell };
    let mut acc = 0.0;
    for j in 0..cells {
        let (s0, e0) = table[j];
        let (s1, e1) = table[j + 1];
        if e0 == e1 {
            continue;
        }
        let (lo, hi) = (e0.min(e1), e0.max(e1));
        if e < lo || e > hi {
            continue;
        }
        let frac = (e - e0) / (e1 - e0);
        if frac >= 1.0 && j + 1 < cells && table[j + 2].1 != table[j + 1].1 {
            continue; // the next cell counts this shared-boundary visit
        }
        let t_star = (s0 + frac * (s1 - s0)) * dwell;
        let m_own = secant(j);
        // Blend with the same-direction neighbor whose midpoint brackets t*.
        let mid = midpoint(j);
        let neighbor = if t_star < mid && j > 0 {
            Some(j - 1)
        } else if t_star > mid && j + 1 < cells {
            Some(j + 1)
        } else {
            None
        };
        let slope = match neighbor {
            Some(k) => {
                let m_k = secant(k);
                if m_k == 0.0 || m_k.signum() != m_own.signum() {
                    m_own
                } else {
                    let mid_k = midpoint(k);
                    m_own + (m_k - m_own) * (t_star - mid) / (mid_k - mid)
                }
            }
            None => m_own,
        };
        acc += reference.value_at(seg, t_star) / slope.abs();
    }
    acc
}

/// Time integral of the reference over [t0, t1] local to segment `seg`.
fn reference_time_integral(reference: &ReferenceWaveform, seg: usize, t0: f64, t1: f64) -> f64 {
    match reference {
        ReferenceWaveform::Bilevel { signs } => signs[seg] * (t1 - t0),
        ReferenceWaveform::Stepwise { values } => values[seg] * (t1 - t0),
        ReferenceWaveform::Harmonic { amplitude, omega, signs } => {
            signs[seg] * amplitude * ((omega * t0).cos() - (omega * t1).cos()) / omega
        }
    }
}

fn merge_masses(masses: &mut Vec<(f64, f64)>, range: f64) {
    masses.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let tol = 1e-9 * range.max(1.0);
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(masses.len());
    for &(level, mass) in masses.iter() {
        match merged.last_mut() {
            Some(last) if (level - last.0).abs() <= tol => last.1 += mass,
            _ => merged.push((level, mass)),
        }
    }
    *masses = merged;
}

/// Residual report of a synthesis verification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub max_residual: f64,
    pub l2_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Check that the pair realizes the target weighting: the effective weighting
/// times gain*T must reproduce the weights (discrete) or the profile density
/// and delta masses (continuous). Residuals are relative to the largest target
/// weight. Stepwise synthesis must be exact (1e-9); sampled synthesis is
/// interpolation-limited (1e-4).
pub fn verify_synthesis(
    schedule: &StimulusSchedule,
    reference: &ReferenceWaveform,
    target: &AnyWeighting,
) -> Result<SynthesisReport> {
    let calibration = schedule.gain * schedule.period;
    let tolerance = if schedule.is_stepwise() { 1e-9 } else { 1e-4 };
    let mut residuals: Vec<f64> = Vec::new();
    match target {
        AnyWeighting::Discrete(w) => {
            let eff = effective_weighting(schedule, reference, &[])?;
            let scale = w.nodes.iter().map(|n| n.weight.abs()).fold(0.0, f64::max);
            let tol_level = 1e-9 * schedule.range.max(1.0);
            for node in &w.nodes {
                let level = node.level - w.center;
                let measured = eff
                    .masses
                    .iter()
                    .find(|(l, _)| (l - level).abs() <= tol_level)
                    .map(|(_, m)| *m)
                    .unwrap_or(0.0);
                residuals.push((measured * calibration - node.weight).abs() / scale);
            }
            // Mass at levels the weighting does not name is an error too.
            for (level, m) in &eff.masses {
                let known = w
                    .nodes
                    .iter()
                    .any(|n| ((n.level - w.center) - level).abs() <= tol_level);
                if !known {
                    residuals.push((m * calibration).abs() / scale);
                }
            }
        }
        AnyWeighting::Continuous(w) => {
            let pieces = w.profile.pieces(w.range);
            let peak = pieces
                .iter()
                .flat_map(|p| [p.k0.abs(), p.k1.abs()])
                .fold(0.0f64, f64::max)
                .max(w.deltas.iter().map(|d| d.mass.abs()).fold(0.0, f64::max) / w.range);
            // Probe cell midpoints, skipping cells near deltas or sign flips.
            let cells = 512usize;
            let half = 0.5 * w.range;
            let width = w.range / cells as f64;
            let mut skip_points: Vec<f64> =
                w.deltas.iter().map(|d| d.location).collect();
            for p in &pieces {
                if let Some(z) = p.interior_zero() {
                    skip_points.push(z);
                }
                skip_points.push(p.x0);
                skip_points.push(p.x1);
            }
            let grid: Vec<f64> = (0..cells)
                .map(|i| -half + width * (i as f64 + 0.5))
                .filter(|&x| skip_points.iter().all(|&s| (x - s).abs() > 2.0 * width))
                .collect();
            let eff = effective_weighting(schedule, reference, &grid)?;
            for (x, d) in &eff.density {
                residuals.push((d * calibration - w.eval_rel(*x)).abs() / peak);
            }
            // Delta components must appear as matching masses.
            let tol_level = 1e-9 * schedule.range.max(1.0);
            for delta in &w.deltas {
                let measured = eff
                    .masses
                    .iter()
                    .find(|(l, _)| (l - delta.location).abs() <= tol_level)
                    .map(|(_, m)| *m)
                    .unwrap_or(0.0);
                residuals.push((measured * calibration - delta.mass).abs() / (peak * w.range));
            }
        }
        AnyWeighting::Grid2d(_) => {
            return Err(Error::Argument(
                "2-D scan verification uses dwell proportionality, not the 1-D constraint".into(),
            ));
        }
    }
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    let l2 = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len().max(1) as f64).sqrt();
    Ok(SynthesisReport { max_residual, l2_residual: l2, tolerance, pass: max_residual < tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weighting::{boxcar_with_end_deltas, DiscreteWeighting, Profile, WeightNode};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn second_difference() -> DiscreteWeighting {
        DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: 1.0 },
                WeightNode { level: 0.0, weight: -2.0 },
                WeightNode { level: 1.0, weight: 1.0 },
            ],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn discrete_dwells_and_signs() {
        let (s, r) = synthesize_discrete(&second_difference(), 1.0).unwrap();
        let dwells: Vec<f64> = s.segments.iter().map(|x| x.dwell).collect();
        assert_eq!(dwells, vec![0.25, 0.5, 0.25]);
        match r {
            ReferenceWaveform::Bilevel { signs } => assert_eq!(signs, vec![1.0, -1.0, 1.0]),
            _ => panic!("expected bilevel"),
        }
        assert_relative_eq!(s.gain, 4.0);
    }

    #[test]
    fn discrete_two_nodes() {
        let w = DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: -1.0 },
                WeightNode { level: 1.0, weight: 1.0 },
            ],
            0.0,
        )
        .unwrap();
        let (s, r) = synthesize_discrete(&w, 2.0).unwrap();
        let dwells: Vec<f64> = s.segments.iter().map(|x| x.dwell).collect();
        assert_eq!(dwells, vec![1.0, 1.0]);
        match r {
            ReferenceWaveform::Bilevel { signs } => assert_eq!(signs, vec![-1.0, 1.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn discrete_single_node() {
        let w = DiscreteWeighting::new(vec![WeightNode { level: 0.5, weight: 5.0 }], 0.0).unwrap();
        let (s, r) = synthesize_discrete(&w, 3.0).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].dwell, 3.0);
        match r {
            ReferenceWaveform::Bilevel { signs } => assert_eq!(signs, vec![1.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn discrete_drops_zero_weights() {
        let w = DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: 1.0 },
                WeightNode { level: 0.0, weight: 0.0 },
                WeightNode { level: 1.0, weight: 1.0 },
            ],
            0.0,
        )
        .unwrap();
        let (s, _) = synthesize_discrete(&w, 1.0).unwrap();
        assert_eq!(s.segments.len(), 2);
    }

    #[test]
    fn uniform_profile_gives_linear_ramp() {
        let w = ContinuousWeighting::new(Profile::Uniform { value: 1.0 }, 2.0, vec![], 0.0).unwrap();
        let (s, r) = synthesize_continuous(&w, 1.0, 256).unwrap();
        // Single sweep segment, linear from -1 to 1.
        assert_eq!(s.segments.len(), 1);
        for i in 0..=10 {
            let t = i as f64 / 10.0 * 0.9999;
            assert_relative_eq!(s.level_at(t), -1.0 + 2.0 * t, epsilon = 1e-9);
        }
        match r {
            ReferenceWaveform::Bilevel { signs } => assert_eq!(signs, vec![1.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn odd_profile_satisfies_inversion_law() {
        // K(E) = E on [-1, 1]: recompute Gamma(E_M(t)) and check linearity in t.
        let w = ContinuousWeighting::new(
            Profile::Linear { intercept: 0.0, slope: 1.0 },
            2.0,
            vec![],
            0.0,
        )
        .unwrap();
        let cum = CumulativeWeight::from_weighting(&w).unwrap();
        let total = cum.total();
        assert_relative_eq!(total, 1.0); // integral of |E| over [-1, 1]
        let (s, r) = synthesize_continuous(&w, 1.0, 4096).unwrap();
        for i in 1..100 {
            let t = i as f64 / 100.0;
            let gamma = cum.forward(s.level_at(t));
            assert_relative_eq!(gamma, total * t, epsilon = 1e-6);
        }
        // Sign flips exactly once, where the level crosses zero.
        match r {
            ReferenceWaveform::Bilevel { signs } => assert_eq!(signs, vec![-1.0, 1.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn continuous_rejects_zero_profile() {
        let w = ContinuousWeighting::new(Profile::Uniform { value: 0.0 }, 1.0, vec![], 0.0).unwrap();
        assert!(matches!(synthesize_continuous(&w, 1.0, 64), Err(Error::Design(_))));
    }

    #[test]
    fn boxcar_lumps_become_pauses() {
        let w = boxcar_with_end_deltas(-1.0, 1.0).unwrap();
        let (s, r) = synthesize_continuous(&w, 1.0, 512).unwrap();
        // Pause (mass 1), sweep (mass 2), pause (mass 1): dwell 0.25/0.5/0.25.
        assert_eq!(s.segments.len(), 3);
        assert_relative_eq!(s.segments[0].dwell, 0.25);
        assert_relative_eq!(s.segments[1].dwell, 0.5);
        assert_relative_eq!(s.segments[2].dwell, 0.25);
        match &s.segments[0].shape {
            SegmentShape::Hold { level } => assert_relative_eq!(*level, -1.0),
            _ => panic!("expected pause"),
        }
        match r {
            ReferenceWaveform::Bilevel { signs } => assert_eq!(signs, vec![-1.0, 1.0, -1.0]),
            _ => panic!(),
        }
    }

    #[test]
    fn effective_weights_recover_discrete() {
        let w = second_difference();
        let (s, r) = synthesize_discrete(&w, 1.0).unwrap();
        let eff = effective_weighting(&s, &r, &[]).unwrap();
        let expected = [(-1.0, 0.25), (0.0, -0.5), (1.0, 0.25)];
        assert_eq!(eff.masses.len(), 3);
        for ((l, m), (el, em)) in eff.masses.iter().zip(expected.iter()) {
            assert_relative_eq!(l, el);
            assert_relative_eq!(m, em, epsilon = 1e-15);
        }
    }

    #[test]
    fn triangle_wave_density_is_flat() {
        // Triangle E_M with u = +1: every interior level is visited twice with
        // equal |slope|, so the effective density is constant.
        let s = StimulusSchedule {
            period: 2.0,
            gain: 1.0,
            range: 2.0,
            kind: ScheduleKind::Dynamic,
            segments: vec![
                Segment { dwell: 1.0, shape: SegmentShape::Ramp { start: -1.0, slope: 2.0 } },
                Segment { dwell: 1.0, shape: SegmentShape::Ramp { start: 1.0, slope: -2.0 } },
            ],
        };
        let r = ReferenceWaveform::Bilevel { signs: vec![1.0, 1.0] };
        let grid = [-0.7, -0.2, 0.3, 0.8];
        let eff = effective_weighting(&s, &r, &grid).unwrap();
        for (_, d) in eff.density {
            assert_relative_eq!(d, 0.5, epsilon = 1e-12); // 2 visits / (|2| * 2s)
        }
    }

    #[test]
    fn verify_discrete_is_exact() {
        let w = second_difference();
        let (s, r) = synthesize_discrete(&w, 1.0).unwrap();
        let report = verify_synthesis(&s, &r, &AnyWeighting::Discrete(w)).unwrap();
        assert_eq!(report.max_residual, 0.0);
        assert!(report.pass);
    }

    #[test]
    fn verify_flags_perturbed_dwell() {
        let w = second_difference();
        let (mut s, r) = synthesize_discrete(&w, 1.0).unwrap();
        s.segments[1].dwell *= 1.1;
        s.period = s.segments.iter().map(|x| x.dwell).sum();
        let report = verify_synthesis(&s, &r, &AnyWeighting::Discrete(w)).unwrap();
        assert!(!report.pass, "perturbed schedule must fail, residual {}", report.max_residual);
    }

    #[test]
    fn verify_continuous_smooth_profile() {
        let w = ContinuousWeighting::new(
            Profile::Table {
                xs: (0..=64).map(|i| -1.0 + 2.0 * i as f64 / 64.0).collect(),
                ks: (0..=64)
                    .map(|i| {
                        let x = -1.0 + 2.0 * i as f64 / 64.0;
                        1.2 + (3.0 * x).sin()
                    })
                    .collect(),
            },
            2.0,
            vec![],
            0.0,
        )
        .unwrap();
        let (s, r) = synthesize_continuous(&w, 1.0, 4096).unwrap();
        let report = verify_synthesis(&s, &r, &AnyWeighting::Continuous(w)).unwrap();
        assert!(report.pass, "max residual {}", report.max_residual);
    }

    #[test]
    fn dual_limit_recovers_single_channel() {
        let wc = second_difference();
        let wd = DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: -0.5 },
                WeightNode { level: 0.0, weight: 0.0 },
                WeightNode { level: 1.0, weight: 0.5 },
            ],
            0.0,
        )
        .unwrap();
        let dual = synthesize_dual(&wc, &wd, (1.0, 0.0), 1.0).unwrap();
        let (single, _) = synthesize_discrete(&wc, 1.0).unwrap();
        assert_eq!(dual.schedule.segments.len(), single.segments.len());
        for (a, b) in dual.schedule.segments.iter().zip(single.segments.iter()) {
            assert_eq!(a.dwell, b.dwell); // |W| = sqrt(W^2) exactly in IEEE
        }
        // u_c = W_c / tau is bilevel up to the constant gain sum|W|/T.
        if let ReferenceWaveform::Stepwise { values } = &dual.reference_c {
            for (v, seg) in values.iter().zip(dual.schedule.segments.iter()) {
                let level = match seg.shape {
                    SegmentShape::Hold { level } => level,
                    _ => panic!(),
                };
                let w = wc.nodes.iter().find(|n| n.level == level).unwrap().weight;
                assert_relative_eq!(*v, w.signum() * 4.0, max_relative = 1e-12);
            }
        } else {
            panic!("expected stepwise reference");
        }
    }

    #[test]
    fn dual_symmetric_two_node_case() {
        // mu = (1/2, 1/2), W_c = (1, 1), W_d = (-1, 1): r_i = 1 at both nodes,
        // so tau = T/2 each and u = W / tau = +/- 2/T.
        let wc = DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: 1.0 },
                WeightNode { level: 1.0, weight: 1.0 },
            ],
            0.0,
        )
        .unwrap();
        let wd = DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: -1.0 },
                WeightNode { level: 1.0, weight: 1.0 },
            ],
            0.0,
        )
        .unwrap();
        let dual = synthesize_dual(&wc, &wd, (0.5, 0.5), 2.0).unwrap();
        for seg in &dual.schedule.segments {
            assert_relative_eq!(seg.dwell, 1.0);
        }
        if let ReferenceWaveform::Stepwise { values } = &dual.reference_c {
            assert_relative_eq!(values[0], 1.0);
            assert_relative_eq!(values[1], 1.0);
        }
        if let ReferenceWaveform::Stepwise { values } = &dual.reference_d {
            assert_relative_eq!(values[0], -1.0);
            assert_relative_eq!(values[1], 1.0);
        }
    }

    #[test]
    fn dual_rejects_node_mismatch() {
        let wc = second_difference();
        let wd = DiscreteWeighting::new(
            vec![
                WeightNode { level: -1.0, weight: 1.0 },
                WeightNode { level: 2.0, weight: 1.0 },
            ],
            0.0,
        )
        .unwrap();
        assert!(synthesize_dual(&wc, &wd, (0.5, 0.5), 1.0).is_err());
        assert!(synthesize_dual(&wc, &wc, (0.7, 0.7), 1.0).is_err());
    }

    #[test]
    fn narrowband_balanced_masses() {
        // Piecewise profile (+1, -1, +1) with masses (1/4, 1/2, 1/4) of the
        // total; 8 half-periods split as (2, 4, 2).
        let w = ContinuousWeighting::new(
            Profile::PiecewiseConstant {
                breaks: vec![-1.0, -0.5, 0.5, 1.0],
                values: vec![1.0, -1.0, 1.0],
            },
            2.0,
            vec![],
            0.0,
        )
        .unwrap();
        let omega0 = 2.0 * std::f64::consts::PI; // half-period 0.5
        let nb = synthesize_narrowband(&w, omega0, 1.0, 4.0).unwrap();
        assert_eq!(nb.report.slots, 8);
        let alloc: Vec<usize> = nb.report.intervals.iter().map(|(_, n)| *n).collect();
        assert_eq!(alloc, vec![2, 4, 2]);
        assert_relative_eq!(nb.schedule.period, 4.0);
        assert_abs_diff_eq!(nb.report.max_distortion, 0.0);
        // Sign agreement: reference sign equals weighting sign along the sweep.
        let signs = match &nb.reference {
            ReferenceWaveform::Harmonic { signs, .. } => signs.clone(),
            _ => panic!(),
        };
        assert_eq!(signs, vec![1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0]);
        for (i, seg) in nb.schedule.segments.iter().enumerate() {
            for frac in [0.1, 0.5, 0.9] {
                let level = seg.shape.level_at(frac, seg.dwell);
                let k = w.eval_rel(level);
                if k != 0.0 {
                    assert_eq!(k.signum(), signs[i], "segment {i} level {level}");
                }
            }
        }
    }

    #[test]
    fn narrowband_single_sign_change_splits_evenly() {
        let w = ContinuousWeighting::new(
            Profile::PiecewiseConstant { breaks: vec![-1.0, 0.0, 1.0], values: vec![1.0, -1.0] },
            2.0,
            vec![],
            0.0,
        )
        .unwrap();
        let nb = synthesize_narrowband(&w, std::f64::consts::PI, 1.0, 4.0).unwrap();
        let alloc: Vec<usize> = nb.report.intervals.iter().map(|(_, n)| *n).collect();
        assert_eq!(alloc, vec![2, 2]);
    }

    #[test]
    fn narrowband_all_positive_single_interval() {
        let w = ContinuousWeighting::new(Profile::Uniform { value: 2.0 }, 2.0, vec![], 0.0).unwrap();
        let nb = synthesize_narrowband(&w, std::f64::consts::PI, 1.0, 2.0).unwrap();
        assert_eq!(nb.report.intervals.len(), 1);
        assert_eq!(nb.report.slots, 2);
        let signs = match &nb.reference {
            ReferenceWaveform::Harmonic { signs, .. } => signs.clone(),
            _ => panic!(),
        };
        assert!(signs.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn narrowband_resolution_error() {
        // Tiny first interval: rounds to zero half-periods.
        let w = ContinuousWeighting::new(
            Profile::PiecewiseConstant {
                breaks: vec![-1.0, -0.99, 1.0],
                values: vec![1.0, -1.0],
            },
            2.0,
            vec![],
            0.0,
        )
        .unwrap();
        let r = synthesize_narrowband(&w, std::f64::consts::PI, 1.0, 4.0);
        assert!(matches!(r, Err(Error::Resolution(_))), "{r:?}");
    }

    #[test]
    fn scan2d_uniform_grid() {
        let w = Weighting2D::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let s = synthesize_2d(&w, 4.0).unwrap();
        assert_eq!(s.visits.len(), 4);
        for v in &s.visits {
            assert_relative_eq!(v.dwell, 1.0);
            assert_eq!(v.reference, 1.0);
        }
        // Boustrophedon: second row visits y in reverse.
        assert_eq!((s.visits[2].x, s.visits[2].y), (1.0, 1.0));
    }

    #[test]
    fn scan2d_alternating_signs() {
        let w =
            Weighting2D::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        let s = synthesize_2d(&w, 4.0).unwrap();
        let refs: Vec<f64> = s.visits.iter().map(|v| v.reference).collect();
        assert_eq!(refs, vec![1.0, -1.0, 1.0, -1.0]); // boustrophedon order
        let total: f64 = s.visits.iter().map(|v| v.dwell).sum();
        assert_eq!(total, 4.0);
    }

    #[test]
    fn dynamic_symmetric_pair_is_triangle() {
        let w = Weighting2D::new(vec![0.0], vec![-1.0, 1.0], vec![1.0, 1.0]).unwrap();
        let (s, _) = synthesize_dynamic(&w, 2.0).unwrap();
        assert_eq!(s.segments.len(), 2);
        assert_relative_eq!(s.segments[0].dwell, 1.0);
        // Rise then fall, closed: E(0) = E(T).
        assert_relative_eq!(s.level_at(0.0), s.level_at(2.0 - 1e-12), epsilon = 1e-9);
        let peak = s.level_at(1.0);
        assert_relative_eq!(peak.abs(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dynamic_unbalanced_rejected() {
        let w = Weighting2D::new(vec![0.0], vec![-1.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(matches!(synthesize_dynamic(&w, 1.0), Err(Error::Packing { .. })));
    }

    #[test]
    fn dynamic_asymmetric_closes() {
        // Up-mass twice the down-mass at half the speed: sawtooth-like, closed.
        let w = Weighting2D::new(vec![0.0], vec![-1.0, 0.5], vec![1.0, 2.0]).unwrap();
        let (s, _) = synthesize_dynamic(&w, 3.0).unwrap();
        let start = s.level_at(0.0);
        let mut end = start;
        for seg in &s.segments {
            if let SegmentShape::Ramp { slope, .. } = seg.shape {
                end += slope * seg.dwell;
            }
        }
        let first = match s.segments[0].shape {
            SegmentShape::Ramp { start, .. } => start,
            _ => panic!(),
        };
        assert_abs_diff_eq!(end - first, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn time_reversal_preserves_effective_weighting() {
        let w = second_difference();
        let (s, r) = synthesize_discrete(&w, 1.0).unwrap();
        let rev_s = s.reversed();
        let rev_r = match &r {
            ReferenceWaveform::Bilevel { signs } => {
                ReferenceWaveform::Bilevel { signs: signs.iter().rev().cloned().collect() }
            }
            _ => panic!(),
        };
        let a = effective_weighting(&s, &r, &[]).unwrap();
        let b = effective_weighting(&rev_s, &rev_r, &[]).unwrap();
        assert_eq!(a.masses, b.masses);
    }

    #[test]
    fn cumulative_weight_forward_inverse_consistency() {
        let w = boxcar_with_end_deltas(-1.0, 1.0).unwrap();
        let cum = CumulativeWeight::from_weighting(&w).unwrap();
        assert_relative_eq!(cum.total(), 4.0); // plateau 2 + two lumps of 1
        for g in [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0] {
            let x = cum.invert(g);
            assert!((-1.0..=1.0).contains(&x));
        }
        // Mid-plateau: gamma 2.0 corresponds to x = 0.
        assert_relative_eq!(cum.invert(2.0), 0.0, epsilon = 1e-12);
    }
}
