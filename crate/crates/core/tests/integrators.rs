//! Slow integrator checks: convergence order against the analytic two-body
//! fixture, long-run conservation, the periodicity of the figure-eight, and
//! the convergence certificate on regular and chaotic inputs.

use tribody_core::dynamics::{self, Dim, Vec3};
use tribody_core::fixtures;
use tribody_core::integrators::{
    converged_integrate, integrate, step_leapfrog, step_rk4, IntegratorConfig, IntegratorError,
    Method,
};
use tribody_core::SystemState;

/// Max-coordinate error of the binary against the analytic circular solution
/// after exactly one period with n fixed steps.
fn circular_error(method: Method, n: usize) -> f64 {
    let state = fixtures::circular_two_body();
    let period = fixtures::circular_period();
    let h = period / n as f64;
    let mut current = state;
    for _ in 0..n {
        current = match method {
            Method::Rk4 => step_rk4(&current, h).unwrap(),
            Method::Leapfrog => step_leapfrog(&current, h).unwrap(),
            Method::BulirschStoer => unreachable!(),
        };
    }
    let expect = fixtures::circular_positions_at(period);
    let mut err = 0.0f64;
    for i in 0..2 {
        err = err.max((current.positions[i] - expect[i]).max_abs());
    }
    err
}

#[test]
fn rk4_is_fourth_order_under_step_halving() {
    let e1 = circular_error(Method::Rk4, 256);
    let e2 = circular_error(Method::Rk4, 512);
    let ratio = e1 / e2;
    let order = ratio.log2();
    assert!(
        (3.5..=4.5).contains(&order),
        "rk4 order {order:.2} from ratio {ratio:.1} (errors {e1:e}, {e2:e})"
    );
    assert!(
        (12.0..=20.0).contains(&ratio),
        "halving ratio {ratio:.1} outside [12, 20]"
    );
}

#[test]
fn leapfrog_is_second_order_under_step_halving() {
    let e1 = circular_error(Method::Leapfrog, 512);
    let e2 = circular_error(Method::Leapfrog, 1024);
    let order = (e1 / e2).log2();
    assert!(
        (1.5..=2.5).contains(&order),
        "leapfrog order {order:.2} (errors {e1:e}, {e2:e})"
    );
}

#[test]
fn leapfrog_energy_drift_is_bounded_without_secular_growth() {
    let state = fixtures::figure8();
    let config = IntegratorConfig {
        method: Method::Leapfrog,
        step: 1e-3,
        dt_sample: 0.1,
        ..Default::default()
    };
    let traj = integrate(&state, state.time + 100.0, &config).unwrap();
    let e0 = dynamics::total_energy(&traj.states[0]).unwrap();
    let drift_over = |t_max: f64| -> f64 {
        traj.states
            .iter()
            .filter(|s| s.time <= t_max + 1e-9)
            .map(|s| ((dynamics::total_energy(s).unwrap() - e0) / e0).abs())
            .fold(0.0, f64::max)
    };
    let short = drift_over(10.0);
    let long = drift_over(100.0);
    assert!(long <= 1e-6, "energy drift {long:e} exceeds 1e-6");
    assert!(
        long <= 2.0 * short,
        "secular energy growth: drift {long:e} over 100 tu vs {short:e} over 10 tu"
    );
}

#[test]
fn integrators_preserve_linear_momentum() {
    let state = fixtures::figure8();
    let p0 = dynamics::linear_momentum(&state);
    let scale: f64 = (0..3)
        .map(|i| state.masses[i] * state.velocities[i].norm())
        .sum();

    for method in [Method::Rk4, Method::Leapfrog, Method::BulirschStoer] {
        let config = IntegratorConfig {
            method,
            step: 1e-2,
            tolerance: 1e-10,
            dt_sample: 0.1,
            ..Default::default()
        };
        // 100 internal steps for the fixed-step methods: 10 samples of 10.
        let traj = integrate(&state, state.time + 1.0, &config).unwrap();
        let p1 = dynamics::linear_momentum(traj.states.last().unwrap());
        assert!(
            (p1 - p0).norm() <= 1e-10 * scale.max(1.0),
            "{} drifted momentum by {:e}",
            method.name(),
            (p1 - p0).norm()
        );
    }
}

#[test]
fn figure8_is_periodic_under_converged_integrate() {
    let state = fixtures::figure8();
    let config = IntegratorConfig {
        method: Method::BulirschStoer,
        tolerance: 1e-10,
        dt_sample: fixtures::FIGURE8_PERIOD / 100.0,
        ..Default::default()
    };
    let traj = converged_integrate(&state, state.time + fixtures::FIGURE8_PERIOD, &config).unwrap();
    assert_eq!(traj.meta.converged, Some(true));
    let end = traj.states.last().unwrap();
    let mut dist = 0.0f64;
    for i in 0..3 {
        dist = dist.max((end.positions[i] - state.positions[i]).max_abs());
    }
    assert!(
        dist <= 1e-3,
        "figure-8 failed to close after one period: {dist:e}"
    );
}

#[test]
fn hierarchical_triple_converges_over_ten_units() {
    let state = fixtures::hierarchical_triple();
    let config = IntegratorConfig {
        tolerance: 1e-10,
        ..Default::default()
    };
    let traj = converged_integrate(&state, state.time + 10.0, &config).unwrap();
    assert_eq!(traj.meta.converged, Some(true));
    assert_eq!(traj.len(), 101);
}

#[test]
fn chaotic_collapse_fails_the_certificate_with_a_divergence_time() {
    // Cold asymmetric collapse; double precision cannot track it for 100
    // time units, so the tolerance pair must disagree at some point.
    let state = dynamics::recenter_to_com(&SystemState {
        positions: [
            Vec3::new(0.6, 0.2, 0.0),
            Vec3::new(-0.4, -0.5, 0.0),
            Vec3::new(-0.1, 0.4, 0.0),
        ],
        velocities: [Vec3::ZERO; 3],
        masses: [1.0, 1.0, 1.0],
        time: 0.0,
        dim: Dim::Two,
    })
    .unwrap();
    let config = IntegratorConfig {
        tolerance: 1e-10,
        ..Default::default()
    };
    match converged_integrate(&state, state.time + 100.0, &config) {
        Err(IntegratorError::NotConverged {
            divergence_time,
            loose,
            tight,
            ..
        }) => {
            assert!(divergence_time > 0.0 && divergence_time <= 100.0);
            assert_eq!(loose.len(), tight.len());
        }
        Ok(traj) => panic!(
            "certificate unexpectedly passed over 100 tu (last t = {})",
            traj.states.last().unwrap().time
        ),
        Err(other) => panic!("unexpected error: {other}"),
    }
}

#[test]
fn rk4_self_convergence_against_bulirsch_stoer() {
    // Independent route agreement on a short smooth stretch.
    let state = fixtures::figure8();
    let rk4 = IntegratorConfig {
        method: Method::Rk4,
        step: 1e-3,
        dt_sample: 0.1,
        ..Default::default()
    };
    let bs = IntegratorConfig {
        method: Method::BulirschStoer,
        tolerance: 1e-12,
        dt_sample: 0.1,
        ..Default::default()
    };
    let a = integrate(&state, state.time + 2.0, &rk4).unwrap();
    let b = integrate(&state, state.time + 2.0, &bs).unwrap();
    for (x, y) in a.states.iter().zip(b.states.iter()) {
        for i in 0..3 {
            assert!(
                (x.positions[i] - y.positions[i]).max_abs() < 1e-8,
                "rk4 and bulirsch_stoer disagree at t = {}",
                x.time
            );
        }
    }
}
