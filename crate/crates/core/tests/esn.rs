//! Echo-state property probes and the figure-eight trainability runs.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tribody_core::esn::{advance, fit_readout, forecast, init_reservoir, EsnConfig, EsnSequence};
use tribody_core::fixtures;
use tribody_core::integrators::{integrate, IntegratorConfig, Method};

fn figure8_states(span: f64) -> Vec<Vec<f64>> {
    let state = fixtures::figure8();
    let config = IntegratorConfig {
        method: Method::BulirschStoer,
        tolerance: 1e-10,
        dt_sample: 0.1,
        ..Default::default()
    };
    integrate(&state, state.time + span, &config)
        .unwrap()
        .states
        .iter()
        .map(|s| s.to_flat())
        .collect()
}

/// Distance between two reservoir states driven by the same input stream.
fn contraction_curve(rho: f64, inputs: &[Vec<f64>]) -> Vec<f64> {
    let config = EsnConfig {
        spectral_radius: rho,
        seed: 17,
        ..Default::default()
    };
    let model = init_reservoir(&config, inputs[0].len()).unwrap();
    let n = config.reservoir_size;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ha = DVector::zeros(n);
    let mut hb = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
    let mut curve = Vec::with_capacity(inputs.len());
    for x in inputs {
        ha = advance(&model, &ha, x);
        hb = advance(&model, &hb, x);
        curve.push((&ha - &hb).norm());
    }
    curve
}

#[test]
fn echo_state_contraction_holds_below_unit_radius() {
    let inputs = figure8_states(20.0);
    for rho in [0.5, 0.9] {
        let curve = contraction_curve(rho, &inputs[..200]);
        let end = curve[199];
        assert!(
            end < 1e-6,
            "rho = {rho}: initial-state distance {end:e} after 200 steps"
        );
    }
}

#[test]
fn echo_state_contraction_fails_above_unit_radius() {
    // Zero-input probe: the origin is an unstable fixed point at rho = 1.5,
    // so a zero start and a generic start never reconcile.
    let inputs = vec![vec![0.0; 12]; 200];
    let curve = contraction_curve(1.5, &inputs);
    let min_after_transient = curve[20..]
        .iter()
        .fold(f64::INFINITY, |acc, d| acc.min(*d));
    assert!(
        min_after_transient > 1e-3,
        "rho = 1.5 unexpectedly contracted to {min_after_transient:e}"
    );
}

#[test]
fn figure8_one_step_training_mse() {
    let states = figure8_states(30.0);
    let model = init_reservoir(&EsnConfig::default(), states[0].len()).unwrap();
    let trained = fit_readout(&model, &[EsnSequence::next_state(&states)]).unwrap();
    let mse = trained.train_mse.unwrap();
    assert!(mse < 1e-4, "one-step training MSE {mse:e}");
}

#[test]
fn figure8_forecast_stays_close_for_a_time_unit() {
    let states = figure8_states(30.0);
    let model = init_reservoir(&EsnConfig::default(), states[0].len()).unwrap();
    let trained = fit_readout(&model, &[EsnSequence::next_state(&states)]).unwrap();

    // Warm up on the first 60 samples, then forecast 10 steps (1 time unit)
    // and compare positions against the ground truth.
    let warmup = &states[..60];
    let predictions = forecast(&trained, warmup, 10).unwrap();
    for (k, pred) in predictions.iter().enumerate() {
        let truth = &states[60 + k];
        let mae: f64 = pred[..6]
            .iter()
            .zip(truth[..6].iter())
            .map(|(p, t)| (p - t).abs())
            .sum::<f64>()
            / 6.0;
        assert!(
            mae <= 0.1,
            "position MAE {mae:.3} at forecast step {} exceeds 0.1",
            k + 1
        );
    }
}

#[test]
fn fit_is_deterministic_given_inputs() {
    let states = figure8_states(15.0);
    let model = init_reservoir(&EsnConfig::default(), states[0].len()).unwrap();
    let a = fit_readout(&model, &[EsnSequence::next_state(&states)]).unwrap();
    let b = fit_readout(&model, &[EsnSequence::next_state(&states)]).unwrap();
    assert_eq!(a.w_out, b.w_out);
    assert_eq!(a.train_mse, b.train_mse);
}
