//! Shared fixtures for the criterion benches.

use tribody_core::fixtures;
use tribody_core::integrators::{integrate, IntegratorConfig, Trajectory};

/// A figure-eight reference trajectory reused across benches.
pub fn figure8_trajectory(span: f64) -> Trajectory {
    let state = fixtures::figure8();
    let config = IntegratorConfig {
        tolerance: 1e-10,
        ..Default::default()
    };
    integrate(&state, state.time + span, &config).expect("fixture integrates")
}
