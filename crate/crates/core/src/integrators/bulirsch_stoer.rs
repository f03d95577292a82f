//! Gragg-Bulirsch-Stoer stepping: modified midpoint sweeps accelerated by
//! polynomial Richardson extrapolation in the squared substep size, with
//! adaptive step control. Follows the construction in Numerical Recipes
//! ch. 17.3, simplified to a fixed maximum column count.

use super::IntegratorError;
use crate::dynamics::{self, SystemState, Vec3};

/// Substep counts per extrapolation column (even, for the h^2 expansion).
const SUBSTEPS: [usize; 8] = [2, 4, 6, 8, 10, 12, 14, 16];
/// A substep below this fraction of the requested interval is a close
/// encounter the method cannot resolve in double precision.
const UNDERFLOW_FRACTION: f64 = 1e-14;
const SAFETY: f64 = 0.9;

/// Flattened phase point: 9 position components then 9 velocity components.
type Phase = [f64; 18];

fn pack(state: &SystemState) -> Phase {
    let mut y = [0.0; 18];
    for i in 0..3 {
        let q = state.positions[i];
        let v = state.velocities[i];
        y[3 * i] = q.x;
        y[3 * i + 1] = q.y;
        y[3 * i + 2] = q.z;
        y[9 + 3 * i] = v.x;
        y[9 + 3 * i + 1] = v.y;
        y[9 + 3 * i + 2] = v.z;
    }
    y
}

fn unpack(y: &Phase, template: &SystemState, time: f64) -> SystemState {
    let mut state = *template;
    for i in 0..3 {
        state.positions[i] = Vec3::new(y[3 * i], y[3 * i + 1], y[3 * i + 2]);
        state.velocities[i] = Vec3::new(y[9 + 3 * i], y[9 + 3 * i + 1], y[9 + 3 * i + 2]);
    }
    state.time = time;
    state
}

/// dy/dt = (v, a(q)). Fails when a pairwise separation is under `floor`.
fn derivative(y: &Phase, template: &SystemState, floor: f64) -> Option<Phase> {
    let probe = unpack(y, template, template.time);
    let acc = dynamics::accelerations_with_floor(&probe, floor).ok()?;
    let mut dy = [0.0; 18];
    dy[..9].copy_from_slice(&y[9..]);
    for i in 0..3 {
        dy[9 + 3 * i] = acc[i].x;
        dy[9 + 3 * i + 1] = acc[i].y;
        dy[9 + 3 * i + 2] = acc[i].z;
    }
    Some(dy)
}

fn axpy(y: &Phase, dy: &Phase, scale: f64) -> Phase {
    let mut out = *y;
    for i in 0..18 {
        out[i] += dy[i] * scale;
    }
    out
}

/// Gragg's modified midpoint: `n` substeps across `big_h`, with the final
/// smoothing average that removes the odd error terms.
fn modified_midpoint(
    y0: &Phase,
    big_h: f64,
    n: usize,
    template: &SystemState,
    floor: f64,
) -> Option<Phase> {
    let h = big_h / n as f64;
    let f0 = derivative(y0, template, floor)?;
    let mut z_prev = *y0;
    let mut z_cur = axpy(y0, &f0, h);
    for _ in 1..n {
        let f = derivative(&z_cur, template, floor)?;
        let z_next = axpy(&z_prev, &f, 2.0 * h);
        z_prev = z_cur;
        z_cur = z_next;
    }
    let f_end = derivative(&z_cur, template, floor)?;
    let mut out = [0.0; 18];
    for i in 0..18 {
        out[i] = 0.5 * (z_cur[i] + z_prev[i] + h * f_end[i]);
    }
    Some(out)
}

/// Mixed absolute/relative max norm: components are scaled by `1 + |y_ref|`.
fn scaled_norm(diff: &Phase, y_ref: &Phase) -> f64 {
    let mut norm = 0.0f64;
    for i in 0..18 {
        norm = norm.max(diff[i].abs() / (1.0 + y_ref[i].abs()));
    }
    norm
}

enum Attempt {
    Accepted { y: Phase, column: usize, err: f64 },
    TooLarge { err: f64 },
    Singular,
}

fn attempt_step(y0: &Phase, big_h: f64, tol: f64, template: &SystemState, floor: f64) -> Attempt {
    // rows[j] holds the extrapolation tableau entry T_{k, j}.
    let mut prev_row: Vec<Phase> = Vec::with_capacity(SUBSTEPS.len());
    let mut last_err = f64::INFINITY;
    for (k, &n) in SUBSTEPS.iter().enumerate() {
        let t_k0 = match modified_midpoint(y0, big_h, n, template, floor) {
            Some(y) => y,
            None => return Attempt::Singular,
        };
        let mut row: Vec<Phase> = vec![t_k0];
        for j in 1..=k {
            let ratio = n as f64 / SUBSTEPS[k - j] as f64;
            let factor = ratio * ratio - 1.0;
            let upper = row[j - 1];
            let left = prev_row[j - 1];
            let mut entry = [0.0; 18];
            for i in 0..18 {
                entry[i] = upper[i] + (upper[i] - left[i]) / factor;
            }
            row.push(entry);
        }
        if k > 0 {
            let mut diff = [0.0; 18];
            let best = row[k];
            let second = row[k - 1];
            for i in 0..18 {
                diff[i] = best[i] - second[i];
            }
            let err = scaled_norm(&diff, y0);
            if err <= tol {
                return Attempt::Accepted {
                    y: best,
                    column: k,
                    err,
                };
            }
            last_err = err;
        }
        prev_row = row;
    }
    Attempt::TooLarge { err: last_err }
}

/// Advance by exactly `delta`, taking as many internally controlled
/// extrapolation steps as needed. Returns the end state and the recommended
/// size for the next step. `hint` seeds the first attempt.
pub(crate) fn advance(
    state: &SystemState,
    delta: f64,
    tol: f64,
    hint: Option<f64>,
    max_attempts: usize,
    floor: f64,
) -> Result<(SystemState, f64), IntegratorError> {
    if delta <= 0.0 || !delta.is_finite() {
        return Err(IntegratorError::InvalidConfig(format!(
            "bulirsch_stoer interval must be positive, got {delta}"
        )));
    }
    if tol <= 0.0 {
        return Err(IntegratorError::InvalidConfig(
            "bulirsch_stoer tolerance must be positive".into(),
        ));
    }
    let floor_h = UNDERFLOW_FRACTION * delta;
    let mut y = pack(state);
    let mut advanced = 0.0f64;
    let mut h = hint.unwrap_or(delta).abs().min(delta).max(floor_h);
    let mut recommendation = h;
    let mut attempts = 0usize;

    while delta - advanced > 1e-14 * delta {
        attempts += 1;
        if attempts > max_attempts {
            return Err(IntegratorError::MaxStepsExceeded {
                time: state.time + advanced,
                max_steps: max_attempts,
            });
        }
        let h_try = h.min(delta - advanced);
        if h_try < floor_h {
            return Err(IntegratorError::StepUnderflow {
                time: state.time + advanced,
                step: h_try,
                floor: floor_h,
            });
        }
        match attempt_step(&y, h_try, tol, state, floor) {
            Attempt::Accepted { y: y_new, column, err } => {
                y = y_new;
                advanced += h_try;
                let exponent = 1.0 / (2.0 * column as f64 + 1.0);
                let grow = if err > 0.0 {
                    (SAFETY * (tol / err).powf(exponent)).clamp(0.5, 5.0)
                } else {
                    5.0
                };
                h = h_try * grow;
                recommendation = h;
            }
            Attempt::TooLarge { err } => {
                let exponent = 1.0 / (2.0 * SUBSTEPS.len() as f64 - 1.0);
                let shrink = if err.is_finite() && err > 0.0 {
                    (SAFETY * (tol / err).powf(exponent)).clamp(0.1, 0.7)
                } else {
                    0.5
                };
                h = h_try * shrink;
            }
            Attempt::Singular => {
                h = h_try * 0.25;
            }
        }
        if h < floor_h {
            return Err(IntegratorError::StepUnderflow {
                time: state.time + advanced,
                step: h,
                floor: floor_h,
            });
        }
    }
    Ok((unpack(&y, state, state.time + delta), recommendation))
}

/// One certified Bulirsch-Stoer advance of `h_target` with local
/// extrapolation error at most `tol` per internal step. Returns the end
/// state and a recommended next step size.
pub fn step_bulirsch_stoer(
    state: &SystemState,
    h_target: f64,
    tol: f64,
) -> Result<(SystemState, f64), IntegratorError> {
    advance(
        state,
        h_target,
        tol,
        None,
        100_000,
        dynamics::DEFAULT_SEP_FLOOR,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{total_energy, Dim};
    use crate::fixtures;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn near_collision_start_underflows() {
        let state = SystemState {
            positions: [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1e-13, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
            ],
            velocities: [Vec3::ZERO; 3],
            masses: [1.0, 1.0, 1.0],
            time: 0.0,
            dim: Dim::Three,
        };
        match step_bulirsch_stoer(&state, 0.1, 1e-8) {
            Err(IntegratorError::StepUnderflow { .. }) => {}
            other => panic!("expected StepUnderflow, got {other:?}"),
        }
    }

    #[test]
    fn energy_change_bounded_by_tolerance_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let tol = 1e-8;
        for _ in 0..20 {
            let state = loop {
                let candidate = SystemState {
                    positions: [
                        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0),
                        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0),
                        Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0),
                    ],
                    velocities: [
                        Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0),
                        Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0),
                        Vec3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), 0.0),
                    ],
                    masses: [1.0, 1.0, 1.0],
                    time: 0.0,
                    dim: Dim::Two,
                };
                if dynamics::min_separation(&candidate) > 0.5 {
                    break candidate;
                }
            };
            let e0 = total_energy(&state).unwrap();
            let (next, _) = step_bulirsch_stoer(&state, 0.05, tol).unwrap();
            let e1 = total_energy(&next).unwrap();
            assert!(
                (e1 - e0).abs() <= 10.0 * tol * e0.abs(),
                "energy moved {:e} for |E| = {:e}",
                (e1 - e0).abs(),
                e0.abs()
            );
        }
    }

    #[test]
    fn figure8_self_convergence() {
        let state = fixtures::figure8();
        let t_end = state.time + fixtures::FIGURE8_PERIOD;
        let make = |tol: f64| super::super::IntegratorConfig {
            tolerance: tol,
            dt_sample: fixtures::FIGURE8_PERIOD,
            ..Default::default()
        };
        let coarse = super::super::integrate(&state, t_end, &make(1e-6)).unwrap();
        let fine = super::super::integrate(&state, t_end, &make(1e-10)).unwrap();
        let a = coarse.states.last().unwrap();
        let b = fine.states.last().unwrap();
        let mut disc = 0.0f64;
        for i in 0..3 {
            disc = disc.max((a.positions[i] - b.positions[i]).max_abs());
        }
        assert!(disc <= 1e-4, "tolerance pair disagrees by {disc:e}");
    }
}
