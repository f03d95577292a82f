//! Reference initial conditions used by tests and the CLI.

use crate::dynamics::{Dim, SystemState, Vec3};

/// Period of the equal-mass figure-eight orbit below. Found by minimizing
/// the return distance of a tolerance-1e-13 Bulirsch-Stoer integration over
/// the candidate interval (return distance 8e-10 per coordinate); the
/// periodicity acceptance test re-verifies it on every build.
pub const FIGURE8_PERIOD: f64 = 6.325914011952;

/// Equal-mass figure-eight choreography (Moore's orbit, refined by Chenciner
/// and Montgomery). Zero total momentum by construction.
pub fn figure8() -> SystemState {
    let x = Vec3::new(0.97000436, -0.24308753, 0.0);
    let v = Vec3::new(0.466203685, 0.43236573, 0.0);
    SystemState {
        positions: [x, -x, Vec3::ZERO],
        velocities: [v, v, v * -2.0],
        masses: [1.0, 1.0, 1.0],
        time: 0.0,
        dim: Dim::Two,
    }
}

/// Angular frequency of the circular two-body fixture: omega^2 = (m1 + m2) / d^3.
pub const CIRCULAR_OMEGA: f64 = std::f64::consts::SQRT_2;

/// Period of the circular two-body fixture.
pub fn circular_period() -> f64 {
    std::f64::consts::TAU / CIRCULAR_OMEGA
}

/// Two unit masses on a circular orbit of separation 1 about their COM, with
/// a zero-mass third body parked far away. Analytically solvable, which makes
/// it the convergence-order fixture for the integrators.
pub fn circular_two_body() -> SystemState {
    let v = CIRCULAR_OMEGA * 0.5;
    SystemState {
        positions: [
            Vec3::new(0.5, 0.0, 0.0),
            Vec3::new(-0.5, 0.0, 0.0),
            Vec3::new(1e6, 0.0, 0.0),
        ],
        velocities: [
            Vec3::new(0.0, v, 0.0),
            Vec3::new(0.0, -v, 0.0),
            Vec3::ZERO,
        ],
        masses: [1.0, 1.0, 0.0],
        time: 0.0,
        dim: Dim::Two,
    }
}

/// Exact positions of the circular fixture's binary at time `t`.
pub fn circular_positions_at(t: f64) -> [Vec3; 2] {
    let phase = CIRCULAR_OMEGA * t;
    let p = Vec3::new(0.5 * phase.cos(), 0.5 * phase.sin(), 0.0);
    [p, -p]
}

/// Mildly hierarchical triple: a tight binary orbited by a distant light
/// third body. Stays regular over tens of time units, which makes it the
/// positive fixture for the convergence certificate.
pub fn hierarchical_triple() -> SystemState {
    // Inner binary: unit masses, separation 0.2, circular.
    let omega_in = (2.0f64 / (0.2f64.powi(3))).sqrt();
    let v_inner = omega_in * 0.1;
    // Outer body: mass 0.5 at distance 3 on a near-circular orbit around the
    // binary's barycenter (total inner mass 2).
    let omega_out = (2.5f64 / 27.0).sqrt();
    let v_outer = omega_out * 3.0;
    let state = SystemState {
        positions: [
            Vec3::new(0.1, 0.0, 0.0),
            Vec3::new(-0.1, 0.0, 0.0),
            Vec3::new(3.0, 0.0, 0.0),
        ],
        velocities: [
            Vec3::new(0.0, v_inner, 0.0),
            Vec3::new(0.0, -v_inner, 0.0),
            Vec3::new(0.0, v_outer, 0.0),
        ],
        masses: [1.0, 1.0, 0.5],
        time: 0.0,
        dim: Dim::Two,
    };
    crate::dynamics::recenter_to_com(&state).expect("positive total mass")
}
