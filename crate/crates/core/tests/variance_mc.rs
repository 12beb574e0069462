//! Monte-Carlo consistency of the closed-form variance predictions.
//!
//! The full acceptance runs live in the CLI crate's acceptance suite; these
//! are the module-level checks at reduced trial counts: spectral (Parseval)
//! consistency for white and colored noise, and the white-noise optimum for
//! the second-difference weighting.

use corrsynth_core::curve::CurveModel;
use corrsynth_core::dut::Characteristic1D;
use corrsynth_core::mc;
use corrsynth_core::meter::{measure_with_rng, MeasurementConfig};
use corrsynth_core::noise::{
    predict_variance_optimum, predict_variance_spectral, HarmonicPower, NoiseModel,
};
use corrsynth_core::synthesis::synthesize_discrete;
use corrsynth_core::weighting::{moment_design, AnyWeighting};

fn flat_dut() -> Characteristic1D {
    Characteristic1D::new(CurveModel::Zero, CurveModel::Zero, (-10.0, 10.0), 1.0).unwrap()
}

/// Variance x time of the per-period estimates over Monte-Carlo trials.
fn mc_variance_scale(
    dut: &Characteristic1D,
    schedule: &corrsynth_core::schedule::StimulusSchedule,
    reference: &corrsynth_core::schedule::ReferenceWaveform,
    noise: &NoiseModel,
    config: &MeasurementConfig,
    trials: usize,
    seed: u64,
) -> f64 {
    let estimates = mc::run_trials(trials, seed, |_, rng| {
        measure_with_rng(dut, schedule, reference, noise, config, 0.0, rng)
            .unwrap()
            .estimate
    });
    mc::sample_variance(&estimates) * (config.periods as f64 * schedule.period)
}

#[test]
fn optimum_prediction_matches_monte_carlo() {
    let w = moment_design(&[-1.0, 0.0, 1.0], 1).unwrap(); // (1/2, -1, 1/2): total 2
    let density = 0.8;
    let predicted = predict_variance_optimum(&AnyWeighting::Discrete(w.clone()), density).variance;
    let (s, r) = synthesize_discrete(&w, 1.0).unwrap();
    let noise = NoiseModel::white(density, 0).unwrap();
    let measured = mc_variance_scale(
        &flat_dut(),
        &s,
        &r,
        &noise,
        &MeasurementConfig::default(),
        4000,
        101,
    );
    let rel = (measured - predicted).abs() / predicted;
    assert!(rel < 0.1, "measured {measured}, predicted {predicted}, rel {rel}");
}

#[test]
fn spectral_prediction_parseval_white() {
    let w = moment_design(&[-1.0, -0.2, 0.5, 1.0], 1).unwrap();
    let (s, r) = synthesize_discrete(&w, 2.0).unwrap();
    let noise = NoiseModel::white(0.3, 0).unwrap();
    let predicted = predict_variance_spectral(&s, &r, &noise, None).unwrap().variance;
    // White spectral prediction equals the optimum closed form.
    let optimum = predict_variance_optimum(&AnyWeighting::Discrete(w), 0.3).variance;
    assert!(
        (predicted - optimum).abs() <= 1e-6 * optimum,
        "spectral {predicted} vs optimum {optimum}"
    );
    let measured = mc_variance_scale(
        &flat_dut(),
        &s,
        &r,
        &noise,
        &MeasurementConfig::default(),
        4000,
        7,
    );
    let rel = (measured - predicted).abs() / predicted;
    assert!(rel < 0.1, "measured {measured}, predicted {predicted}, rel {rel}");
}

#[test]
fn spectral_prediction_parseval_colored() {
    // Segment boundaries commensurate with the sample grid keep the sampled
    // correlation exact; 10% tolerance covers the Monte-Carlo error.
    let w = moment_design(&[-1.0, 0.0, 1.0], 1).unwrap();
    let (s, r) = synthesize_discrete(&w, 1.0).unwrap();
    let table = (1..=32)
        .map(|l| HarmonicPower {
            harmonic: l,
            power: if l < 6 { 0.5 } else { 0.05 },
        })
        .collect();
    let noise = NoiseModel::colored(table, 0).unwrap();
    let predicted = predict_variance_spectral(&s, &r, &noise, None).unwrap().variance;
    let config = MeasurementConfig {
        periods: 1,
        sample_rate: 512.0,
        slot_mode: false,
        ..Default::default()
    };
    let measured = mc_variance_scale(&flat_dut(), &s, &r, &noise, &config, 4000, 13);
    let rel = (measured - predicted).abs() / predicted;
    assert!(rel < 0.1, "measured {measured}, predicted {predicted}, rel {rel}");
}

#[test]
fn averaging_periods_scales_variance_down() {
    // D = var x total time is invariant: averaging N periods divides the
    // variance by N.
    let w = moment_design(&[-1.0, 0.0, 1.0], 1).unwrap();
    let (s, r) = synthesize_discrete(&w, 1.0).unwrap();
    let noise = NoiseModel::white(1.0, 0).unwrap();
    let one = MeasurementConfig { periods: 1, ..Default::default() };
    let eight = MeasurementConfig { periods: 8, ..Default::default() };
    let d1 = mc_variance_scale(&flat_dut(), &s, &r, &noise, &one, 3000, 3);
    let d8 = mc_variance_scale(&flat_dut(), &s, &r, &noise, &eight, 3000, 4);
    let rel = (d1 - d8).abs() / d1;
    assert!(rel < 0.15, "d1 {d1}, d8 {d8}");
}
