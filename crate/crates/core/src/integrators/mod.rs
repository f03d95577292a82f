//! Ground-truth trajectory generation: fixed-step RK4 and symplectic
//! leapfrog, an adaptive Bulirsch-Stoer stepper with a two-tolerance
//! convergence certificate, and Benettin Lyapunov-time estimation.

mod bulirsch_stoer;
mod lyapunov;

pub use bulirsch_stoer::step_bulirsch_stoer;
pub use lyapunov::{estimate_lyapunov, LyapunovConfig, LyapunovEstimate};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{self, DynamicsError, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rk4,
    Leapfrog,
    BulirschStoer,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Leapfrog => "leapfrog",
            Method::BulirschStoer => "bulirsch_stoer",
        }
    }
}

/// How a trajectory is produced: stepping method, its step size or local
/// tolerance, and the uniform sampling interval of the output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Internal step for the fixed-step methods. `dt_sample` must be an
    /// integer multiple of it.
    pub step: f64,
    /// Local error tolerance for Bulirsch-Stoer (mixed absolute/relative,
    /// max-norm over phase-space components scaled by `1 + |y|`).
    pub tolerance: f64,
    /// Interval between stored samples.
    pub dt_sample: f64,
    /// Cap on internal stepping work per sample interval.
    pub max_steps_per_sample: usize,
    /// Pairwise-separation floor handed to the force evaluation.
    pub sep_floor: f64,
    /// Position agreement required between the `tol` and `tol / 10` runs of
    /// [`converged_integrate`].
    pub delta_conv: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            method: Method::BulirschStoer,
            step: 1e-3,
            tolerance: 1e-10,
            dt_sample: 0.1,
            max_steps_per_sample: 100_000,
            sep_floor: dynamics::DEFAULT_SEP_FLOOR,
            delta_conv: 1e-6,
        }
    }
}

/// Generation metadata carried with every trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    pub tolerance: Option<f64>,
    pub step: Option<f64>,
    pub dt_sample: f64,
    /// Sampler provenance, filled in by the dataset layer.
    pub seed: Option<u64>,
    /// Outcome of the convergence certificate, when one was run.
    pub converged: Option<bool>,
}

impl TrajectoryMeta {
    fn from_config(config: &IntegratorConfig) -> Self {
        let (tolerance, step) = match config.method {
            Method::BulirschStoer => (Some(config.tolerance), None),
            _ => (None, Some(config.step)),
        };
        TrajectoryMeta {
            integrator: config.method.name().to_string(),
            tolerance,
            step,
            dt_sample: config.dt_sample,
            seed: None,
            converged: None,
        }
    }
}

/// Uniformly sampled sequence of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SystemState>,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn span(&self) -> f64 {
        self.states.last().map(|s| s.time).unwrap_or(0.0)
            - self.states.first().map(|s| s.time).unwrap_or(0.0)
    }

    /// Checks the structural invariants: at least two states, strictly
    /// increasing times uniform to 1e-9 relative, finite nonsingular states.
    pub fn validate(&self) -> Result<(), IntegratorError> {
        if self.states.len() < 2 {
            return Err(IntegratorError::InvalidConfig(
                "trajectory must contain at least two states".into(),
            ));
        }
        let dt = self.meta.dt_sample;
        for (k, pair) in self.states.windows(2).enumerate() {
            let gap = pair[1].time - pair[0].time;
            if gap <= 0.0 || (gap - dt).abs() > 1e-9 * dt.abs() {
                return Err(IntegratorError::InvalidConfig(format!(
                    "non-uniform sampling at index {k}: gap {gap} vs dt_sample {dt}"
                )));
            }
        }
        for state in &self.states {
            state
                .validate()
                .map_err(|e| IntegratorError::InvalidConfig(format!("bad stored state: {e}")))?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IntegratorError {
    #[error("singular encounter at t = {time}: {source}")]
    Singular {
        time: f64,
        source: DynamicsError,
    },
    #[error("step underflow at t = {time}: required step {step:e} below {floor:e}")]
    StepUnderflow { time: f64, step: f64, floor: f64 },
    #[error("exceeded {max_steps} internal steps in the sample interval starting at t = {time}")]
    MaxStepsExceeded { time: f64, max_steps: usize },
    #[error(
        "convergence certificate failed: tolerance pair ({tol_loose:e}, {tol_tight:e}) \
         diverged beyond {delta_conv:e} at t = {divergence_time}"
    )]
    NotConverged {
        tol_loose: f64,
        tol_tight: f64,
        delta_conv: f64,
        divergence_time: f64,
        loose: Box<Trajectory>,
        tight: Box<Trajectory>,
    },
    #[error("invalid integrator input: {0}")]
    InvalidConfig(String),
}

fn check_step(h: f64) -> Result<(), IntegratorError> {
    if h == 0.0 || !h.is_finite() {
        return Err(IntegratorError::InvalidConfig(format!(
            "step size must be nonzero and finite, got {h}"
        )));
    }
    Ok(())
}

fn forces(state: &SystemState, floor: f64) -> Result<[crate::Vec3; 3], IntegratorError> {
    dynamics::accelerations_with_floor(state, floor).map_err(|source| IntegratorError::Singular {
        time: state.time,
        source,
    })
}

/// One classical Runge-Kutta 4 step of size `h` (may be negative).
pub fn step_rk4(state: &SystemState, h: f64) -> Result<SystemState, IntegratorError> {
    step_rk4_with_floor(state, h, dynamics::DEFAULT_SEP_FLOOR)
}

pub fn step_rk4_with_floor(
    state: &SystemState,
    h: f64,
    floor: f64,
) -> Result<SystemState, IntegratorError> {
    check_step(h)?;
    let eval = |s: &SystemState| -> Result<([crate::Vec3; 3], [crate::Vec3; 3]), IntegratorError> {
        Ok((s.velocities, forces(s, floor)?))
    };
    let shifted = |base: &SystemState, dq: &[crate::Vec3; 3], dv: &[crate::Vec3; 3], scale: f64| {
        let mut s = *base;
        for i in 0..3 {
            s.positions[i] = base.positions[i] + dq[i] * scale;
            s.velocities[i] = base.velocities[i] + dv[i] * scale;
        }
        s
    };

    let (k1q, k1v) = eval(state)?;
    let (k2q, k2v) = eval(&shifted(state, &k1q, &k1v, h / 2.0))?;
    let (k3q, k3v) = eval(&shifted(state, &k2q, &k2v, h / 2.0))?;
    let (k4q, k4v) = eval(&shifted(state, &k3q, &k3v, h))?;

    let mut out = *state;
    for i in 0..3 {
        out.positions[i] = state.positions[i]
            + (k1q[i] + (k2q[i] + k3q[i]) * 2.0 + k4q[i]) * (h / 6.0);
        out.velocities[i] = state.velocities[i]
            + (k1v[i] + (k2v[i] + k3v[i]) * 2.0 + k4v[i]) * (h / 6.0);
    }
    out.time = state.time + h;
    Ok(out)
}

/// One kick-drift-kick (velocity Verlet) leapfrog step: time reversible and
/// symplectic.
pub fn step_leapfrog(state: &SystemState, h: f64) -> Result<SystemState, IntegratorError> {
    step_leapfrog_with_floor(state, h, dynamics::DEFAULT_SEP_FLOOR)
}

pub fn step_leapfrog_with_floor(
    state: &SystemState,
    h: f64,
    floor: f64,
) -> Result<SystemState, IntegratorError> {
    check_step(h)?;
    let acc0 = forces(state, floor)?;
    let mut out = *state;
    for i in 0..3 {
        out.velocities[i] = state.velocities[i] + acc0[i] * (h / 2.0);
        out.positions[i] = state.positions[i] + out.velocities[i] * h;
    }
    out.time = state.time + h;
    let acc1 = forces(&out, floor)?;
    for i in 0..3 {
        out.velocities[i] += acc1[i] * (h / 2.0);
    }
    Ok(out)
}

/// Advances a state across sample intervals, carrying the Bulirsch-Stoer
/// step-size recommendation between calls.
pub(crate) struct Propagator<'a> {
    config: &'a IntegratorConfig,
    bs_hint: Option<f64>,
}

impl<'a> Propagator<'a> {
    pub(crate) fn new(config: &'a IntegratorConfig) -> Self {
        Propagator {
            config,
            bs_hint: None,
        }
    }

    /// Advance by exactly `delta` and snap the end time to `t0 + delta`.
    pub(crate) fn advance(
        &mut self,
        state: &SystemState,
        delta: f64,
    ) -> Result<SystemState, IntegratorError> {
        let cfg = self.config;
        let target_time = state.time + delta;
        let mut current = *state;
        match cfg.method {
            Method::Rk4 | Method::Leapfrog => {
                let n = substeps_per_interval(delta, cfg.step)?;
                if n > cfg.max_steps_per_sample {
                    return Err(IntegratorError::MaxStepsExceeded {
                        time: state.time,
                        max_steps: cfg.max_steps_per_sample,
                    });
                }
                for _ in 0..n {
                    current = match cfg.method {
                        Method::Rk4 => step_rk4_with_floor(&current, cfg.step, cfg.sep_floor)?,
                        _ => step_leapfrog_with_floor(&current, cfg.step, cfg.sep_floor)?,
                    };
                }
            }
            Method::BulirschStoer => {
                let (next, hint) = bulirsch_stoer::advance(
                    &current,
                    delta,
                    cfg.tolerance,
                    self.bs_hint,
                    cfg.max_steps_per_sample,
                    cfg.sep_floor,
                )?;
                current = next;
                self.bs_hint = Some(hint);
            }
        }
        current.time = target_time;
        Ok(current)
    }
}

fn substeps_per_interval(delta: f64, step: f64) -> Result<usize, IntegratorError> {
    if step <= 0.0 || !step.is_finite() {
        return Err(IntegratorError::InvalidConfig(format!(
            "fixed step must be positive, got {step}"
        )));
    }
    let ratio = delta / step;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.abs() {
        return Err(IntegratorError::InvalidConfig(format!(
            "sample interval {delta} is not an integer multiple of step {step}"
        )));
    }
    Ok(n as usize)
}

/// Integrate from `state.time` to `t_end` inclusive, storing a sample every
/// `config.dt_sample`. The span must be a whole number of sample intervals.
pub fn integrate(
    state: &SystemState,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory, IntegratorError> {
    let span = t_end - state.time;
    if span <= 0.0 {
        return Err(IntegratorError::InvalidConfig(format!(
            "t_end {} must exceed start time {}",
            t_end, state.time
        )));
    }
    if config.dt_sample <= 0.0 {
        return Err(IntegratorError::InvalidConfig(
            "dt_sample must be positive".into(),
        ));
    }
    let intervals = span / config.dt_sample;
    let n_intervals = intervals.round();
    if n_intervals < 1.0 || (intervals - n_intervals).abs() > 1e-9 * intervals {
        return Err(IntegratorError::InvalidConfig(format!(
            "span {span} is not a whole number of sample intervals {}",
            config.dt_sample
        )));
    }
    let n_intervals = n_intervals as usize;

    let mut states = Vec::with_capacity(n_intervals + 1);
    states.push(*state);
    let mut propagator = Propagator::new(config);
    let mut current = *state;
    for k in 1..=n_intervals {
        current = propagator.advance(&current, config.dt_sample)?;
        current.time = state.time + k as f64 * config.dt_sample;
        states.push(current);
    }
    Ok(Trajectory {
        states,
        meta: TrajectoryMeta::from_config(config),
    })
}

/// Integrates at `tolerance` and `tolerance / 10` and certifies convergence
/// when the sampled positions of the two runs agree to `delta_conv`
/// everywhere. Returns the tighter-tolerance trajectory, flagged converged.
///
/// A certificate failure means the chaotic horizon of double precision was
/// reached; the error carries both runs and the first divergence time.
pub fn converged_integrate(
    state: &SystemState,
    t_end: f64,
    config: &IntegratorConfig,
) -> Result<Trajectory, IntegratorError> {
    if config.method != Method::BulirschStoer {
        return Err(IntegratorError::InvalidConfig(
            "converged_integrate requires the bulirsch_stoer method".into(),
        ));
    }
    let loose = integrate(state, t_end, config)?;
    let mut tight_config = *config;
    tight_config.tolerance = config.tolerance / 10.0;
    let mut tight = integrate(state, t_end, &tight_config)?;

    let mut divergence_time = None;
    for (a, b) in loose.states.iter().zip(tight.states.iter()) {
        let mut disc = 0.0f64;
        for i in 0..3 {
            disc = disc.max((a.positions[i] - b.positions[i]).max_abs());
        }
        if disc > config.delta_conv {
            divergence_time = Some(a.time);
            break;
        }
    }

    match divergence_time {
        None => {
            tight.meta.converged = Some(true);
            // Report the certified (looser) tolerance: both runs agree to
            // delta_conv, and callers compare against this config value.
            tight.meta.tolerance = Some(config.tolerance);
            Ok(tight)
        }
        Some(divergence_time) => Err(IntegratorError::NotConverged {
            tol_loose: config.tolerance,
            tol_tight: tight_config.tolerance,
            delta_conv: config.delta_conv,
            divergence_time,
            loose: Box::new(loose),
            tight: Box::new(tight),
        }),
    }
}
