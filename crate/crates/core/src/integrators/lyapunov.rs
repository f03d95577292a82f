//! Maximal Lyapunov exponent by the Benettin shadow-trajectory method:
//! evolve a nearby state, renormalize its offset at fixed intervals and
//! average the logarithmic stretching.
//!
//! The initial offset is constrained to the level set of the classical
//! integrals (energy, linear momentum, angular momentum). A generic offset
//! shifts those integrals and produces linear phase drift even on regular
//! orbits, which inflates finite-time exponents; chaotic stretching lives
//! inside the level set, so the constraint does not mask it.

use serde::{Deserialize, Serialize};

use super::{IntegratorConfig, IntegratorError, Propagator};
use crate::dynamics::{self, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    /// Initial phase-space offset of the shadow state.
    pub delta0: f64,
    /// Interval between renormalizations, in time units.
    pub tau_renorm: f64,
    /// Total evolution span.
    pub horizon: f64,
    /// Exponents at or below this are reported as regular (infinite
    /// Lyapunov time).
    pub lambda_floor: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            delta0: 1e-8,
            tau_renorm: 1.0,
            horizon: 100.0,
            lambda_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub lambda_max: f64,
    /// `1 / lambda_max`, or infinite when the exponent is at or below the
    /// regularity floor.
    pub t_lyap: f64,
}

type Phase = [f64; 18];

fn pack(s: &SystemState) -> Phase {
    let mut y = [0.0; 18];
    for i in 0..3 {
        y[3 * i] = s.positions[i].x;
        y[3 * i + 1] = s.positions[i].y;
        y[3 * i + 2] = s.positions[i].z;
        y[9 + 3 * i] = s.velocities[i].x;
        y[9 + 3 * i + 1] = s.velocities[i].y;
        y[9 + 3 * i + 2] = s.velocities[i].z;
    }
    y
}

fn apply_offset(base: &SystemState, offset: &Phase, scale: f64) -> SystemState {
    let mut s = *base;
    for i in 0..3 {
        s.positions[i].x += offset[3 * i] * scale;
        s.positions[i].y += offset[3 * i + 1] * scale;
        s.positions[i].z += offset[3 * i + 2] * scale;
        s.velocities[i].x += offset[9 + 3 * i] * scale;
        s.velocities[i].y += offset[9 + 3 * i + 1] * scale;
        s.velocities[i].z += offset[9 + 3 * i + 2] * scale;
    }
    s
}

fn dot(a: &Phase, b: &Phase) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn norm(a: &Phase) -> f64 {
    dot(a, a).sqrt()
}

/// Gradients with respect to (q, v) of H, the momentum components and the
/// angular momentum components. Degenerate entries (2D) drop out in the
/// orthogonalization.
fn integral_gradients(s: &SystemState) -> Result<Vec<Phase>, IntegratorError> {
    let acc = dynamics::accelerations(s).map_err(|source| IntegratorError::Singular {
        time: s.time,
        source,
    })?;
    let mut grads = Vec::with_capacity(7);

    let mut gh = [0.0; 18];
    for i in 0..3 {
        let m = s.masses[i];
        gh[3 * i] = -m * acc[i].x;
        gh[3 * i + 1] = -m * acc[i].y;
        gh[3 * i + 2] = -m * acc[i].z;
        gh[9 + 3 * i] = m * s.velocities[i].x;
        gh[9 + 3 * i + 1] = m * s.velocities[i].y;
        gh[9 + 3 * i + 2] = m * s.velocities[i].z;
    }
    grads.push(gh);

    for axis in 0..3 {
        let mut gp = [0.0; 18];
        for i in 0..3 {
            gp[9 + 3 * i + axis] = s.masses[i];
        }
        grads.push(gp);
    }

    // L = sum m q x v, one gradient per component.
    for axis in 0..3 {
        let (a, b) = match axis {
            0 => (1, 2), // Lx = m (qy vz - qz vy)
            1 => (2, 0), // Ly = m (qz vx - qx vz)
            _ => (0, 1), // Lz = m (qx vy - qy vx)
        };
        let mut gl = [0.0; 18];
        for i in 0..3 {
            let m = s.masses[i];
            let q = [s.positions[i].x, s.positions[i].y, s.positions[i].z];
            let v = [s.velocities[i].x, s.velocities[i].y, s.velocities[i].z];
            gl[3 * i + a] = m * v[b];
            gl[3 * i + b] = -m * v[a];
            gl[9 + 3 * i + a] = -m * q[b];
            gl[9 + 3 * i + b] = m * q[a];
        }
        grads.push(gl);
    }
    Ok(grads)
}

fn project_out(v: &mut Phase, grads: &[Phase]) {
    let mut basis: Vec<Phase> = Vec::new();
    for g in grads {
        let mut e = *g;
        for b in &basis {
            let c = dot(&e, b);
            for (x, bx) in e.iter_mut().zip(b.iter()) {
                *x -= c * bx;
            }
        }
        let n = norm(&e);
        if n > 1e-12 {
            for x in e.iter_mut() {
                *x /= n;
            }
            basis.push(e);
        }
    }
    for b in &basis {
        let c = dot(v, b);
        for (x, bx) in v.iter_mut().zip(b.iter()) {
            *x -= c * bx;
        }
    }
}

/// Deterministic in-plane generic direction constrained to the integral
/// level set of `state`, normalized to unit length.
fn initial_direction(state: &SystemState) -> Result<Phase, IntegratorError> {
    let mut dir = [0.0f64; 18];
    for (k, x) in dir.iter_mut().enumerate() {
        // Fixed quasi-random pattern; any generic direction works.
        *x = ((k as f64) * 0.7390851332151607 + 0.31).sin();
    }
    if state.dim == dynamics::Dim::Two {
        for i in 0..3 {
            dir[3 * i + 2] = 0.0;
            dir[9 + 3 * i + 2] = 0.0;
        }
    }
    project_out(&mut dir, &integral_gradients(state)?);
    let n = norm(&dir);
    if n < 1e-8 {
        return Err(IntegratorError::InvalidConfig(
            "could not build a level-set-tangent perturbation direction".into(),
        ));
    }
    for x in dir.iter_mut() {
        *x /= n;
    }
    Ok(dir)
}

/// Benettin estimate of the maximal Lyapunov exponent of the flow through
/// `state`, using `integrator` for both trajectories.
pub fn estimate_lyapunov(
    state: &SystemState,
    integrator: &IntegratorConfig,
    config: &LyapunovConfig,
) -> Result<LyapunovEstimate, IntegratorError> {
    if config.delta0 <= 0.0 || config.tau_renorm <= 0.0 || config.horizon < config.tau_renorm {
        return Err(IntegratorError::InvalidConfig(
            "lyapunov config requires delta0 > 0, tau_renorm > 0, horizon >= tau_renorm".into(),
        ));
    }
    let chunks = (config.horizon / config.tau_renorm).round() as usize;

    let mut reference = *state;
    let dir = initial_direction(state)?;
    let mut shadow = apply_offset(state, &dir, config.delta0);

    let mut prop_ref = Propagator::new(integrator);
    let mut prop_shadow = Propagator::new(integrator);
    let mut log_sum = 0.0f64;

    for _ in 0..chunks {
        reference = prop_ref.advance(&reference, config.tau_renorm)?;
        shadow = prop_shadow.advance(&shadow, config.tau_renorm)?;
        let mut diff = [0.0; 18];
        let ry = pack(&reference);
        let sy = pack(&shadow);
        for i in 0..18 {
            diff[i] = sy[i] - ry[i];
        }
        let dist = norm(&diff);
        if dist > 0.0 {
            log_sum += (dist / config.delta0).ln();
            shadow = apply_offset(&reference, &diff, config.delta0 / dist);
        }
        shadow.time = reference.time;
    }

    let lambda_max = log_sum / (chunks as f64 * config.tau_renorm);
    let t_lyap = if lambda_max > config.lambda_floor {
        1.0 / lambda_max
    } else {
        f64::INFINITY
    };
    Ok(LyapunovEstimate { lambda_max, t_lyap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::integrators::Method;

    fn bs_config() -> IntegratorConfig {
        IntegratorConfig {
            method: Method::BulirschStoer,
            tolerance: 1e-10,
            ..Default::default()
        }
    }

    #[test]
    fn figure8_looks_regular() {
        let est = estimate_lyapunov(
            &fixtures::figure8(),
            &bs_config(),
            &LyapunovConfig::default(),
        )
        .unwrap();
        assert!(
            est.lambda_max < 0.05,
            "figure-8 should look regular, got lambda = {}",
            est.lambda_max
        );
        assert!(est.t_lyap.is_infinite() || est.t_lyap > 20.0);
    }

    #[test]
    fn free_fall_triple_is_chaotic() {
        // Asymmetric cold collapse: ejects after a few crossing times.
        let state = crate::dynamics::recenter_to_com(&crate::SystemState {
            positions: [
                crate::Vec3::new(0.6, 0.2, 0.0),
                crate::Vec3::new(-0.4, -0.5, 0.0),
                crate::Vec3::new(-0.1, 0.4, 0.0),
            ],
            velocities: [crate::Vec3::ZERO; 3],
            masses: [1.0, 1.0, 1.0],
            time: 0.0,
            dim: crate::Dim::Two,
        })
        .unwrap();
        let config = LyapunovConfig {
            horizon: 40.0,
            ..Default::default()
        };
        let est = estimate_lyapunov(&state, &bs_config(), &config).unwrap();
        assert!(
            est.lambda_max > 1e-3,
            "cold collapse should be chaotic, got lambda = {}",
            est.lambda_max
        );
        assert!(est.t_lyap.is_finite());
    }

    #[test]
    fn perturbation_direction_preserves_integrals_to_first_order() {
        let state = fixtures::figure8();
        let dir = initial_direction(&state).unwrap();
        let shadow = apply_offset(&state, &dir, 1e-8);
        let e0 = crate::dynamics::total_energy(&state).unwrap();
        let e1 = crate::dynamics::total_energy(&shadow).unwrap();
        // First-order cancellation leaves only the O(delta0^2) remainder.
        assert!(
            (e1 - e0).abs() < 1e-12,
            "energy moved by {:e} under the constrained offset",
            (e1 - e0).abs()
        );
        let dl = (crate::dynamics::angular_momentum(&shadow)
            - crate::dynamics::angular_momentum(&state))
        .norm();
        assert!(dl < 1e-12, "angular momentum moved by {dl:e}");
    }
}
