//! Three-body gravitational system in dimensionless units with G = 1:
//! state representation, accelerations, phase-space derivatives and the
//! conserved quantities used to audit integrators.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pairwise separations below this are treated as a collision in double
/// precision; forces are no longer meaningful.
pub const DEFAULT_SEP_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("singular state: min pairwise separation {min_separation:e} below floor {floor:e} at t = {time}")]
    SingularState {
        min_separation: f64,
        floor: f64,
        time: f64,
    },
    #[error("all three masses are zero")]
    ZeroTotalMass,
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// Spatial dimension of a system. 2D systems keep the z component of every
/// vector at exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    Two,
    Three,
}

impl Dim {
    pub fn components(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Three => 3,
        }
    }
}

/// Cartesian vector with fixed 3-slot storage; 2D systems use x, y only.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, other: Vec3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn cross(self, other: Vec3) -> Vec3 {
        Vec3 {
            x: self.y * other.z - self.z * other.y,
            y: self.z * other.x - self.x * other.z,
            z: self.x * other.y - self.y * other.x,
        }
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Largest absolute component.
    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

impl std::ops::AddAssign for Vec3 {
    fn add_assign(&mut self, rhs: Vec3) {
        *self = *self + rhs;
    }
}

/// Positions, velocities and masses of the three bodies at a given time.
/// Canonical momenta are `p_i = m_i v_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub positions: [Vec3; 3],
    pub velocities: [Vec3; 3],
    pub masses: [f64; 3],
    pub time: f64,
    pub dim: Dim,
}

/// Time derivative of the canonical phase point: dq/dt and dp/dt per body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseDerivative {
    pub dq_dt: [Vec3; 3],
    pub dp_dt: [Vec3; 3],
}

impl SystemState {
    /// Validating constructor. Checks finiteness, mass sanity, distinct
    /// positions and (for 2D) zero z components.
    pub fn new(
        positions: [Vec3; 3],
        velocities: [Vec3; 3],
        masses: [f64; 3],
        time: f64,
        dim: Dim,
    ) -> Result<Self, DynamicsError> {
        let state = SystemState {
            positions,
            velocities,
            masses,
            time,
            dim,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for v in self.positions.iter().chain(self.velocities.iter()) {
            if !v.is_finite() {
                return Err(DynamicsError::InvalidState(
                    "non-finite position or velocity".into(),
                ));
            }
            if self.dim == Dim::Two && v.z != 0.0 {
                return Err(DynamicsError::InvalidState(
                    "2D state with nonzero z component".into(),
                ));
            }
        }
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(DynamicsError::InvalidState(format!(
                "time {} is not a finite non-negative number",
                self.time
            )));
        }
        if self.masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(DynamicsError::InvalidState(
                "masses must be finite and non-negative".into(),
            ));
        }
        if self.masses.iter().filter(|m| **m > 0.0).count() < 2 {
            return Err(DynamicsError::InvalidState(
                "at least two masses must be strictly positive".into(),
            ));
        }
        let sep = min_separation(self);
        if sep <= 0.0 {
            return Err(DynamicsError::InvalidState(
                "two bodies share the same position".into(),
            ));
        }
        Ok(())
    }

    /// Flattened `(q, v)` vector: positions body-major, then velocities
    /// body-major, `dim` components each. Length `6 d`.
    pub fn to_flat(&self) -> Vec<f64> {
        let d = self.dim.components();
        let mut out = Vec::with_capacity(6 * d);
        for q in &self.positions {
            push_components(&mut out, *q, self.dim);
        }
        for v in &self.velocities {
            push_components(&mut out, *v, self.dim);
        }
        debug_assert_eq!(out.len(), 6 * d);
        out
    }

    /// Flattened canonical `(q, p)` vector with `p_i = m_i v_i`.
    pub fn to_canonical_flat(&self) -> Vec<f64> {
        let d = self.dim.components();
        let mut out = Vec::with_capacity(6 * d);
        for q in &self.positions {
            push_components(&mut out, *q, self.dim);
        }
        for (v, m) in self.velocities.iter().zip(self.masses.iter()) {
            push_components(&mut out, *v * *m, self.dim);
        }
        out
    }

    /// Inverse of [`SystemState::to_flat`]; masses and time are supplied
    /// separately since they are not part of the flat vector.
    pub fn from_flat(flat: &[f64], masses: [f64; 3], time: f64, dim: Dim) -> Self {
        let d = dim.components();
        assert_eq!(flat.len(), 6 * d, "flat state has wrong length");
        let mut positions = [Vec3::ZERO; 3];
        let mut velocities = [Vec3::ZERO; 3];
        for i in 0..3 {
            positions[i] = vec_from_components(&flat[i * d..(i + 1) * d]);
            velocities[i] = vec_from_components(&flat[(3 + i) * d..(4 + i) * d]);
        }
        SystemState {
            positions,
            velocities,
            masses,
            time,
            dim,
        }
    }

    /// Inverse of [`SystemState::to_canonical_flat`]: momenta are divided by
    /// the masses, which must all be strictly positive.
    pub fn from_canonical_flat(flat: &[f64], masses: [f64; 3], time: f64, dim: Dim) -> Self {
        let mut state = Self::from_flat(flat, masses, time, dim);
        for i in 0..3 {
            assert!(masses[i] > 0.0, "canonical form requires positive masses");
            state.velocities[i] = state.velocities[i] * (1.0 / masses[i]);
        }
        state
    }
}

fn push_components(out: &mut Vec<f64>, v: Vec3, dim: Dim) {
    out.push(v.x);
    out.push(v.y);
    if dim == Dim::Three {
        out.push(v.z);
    }
}

fn vec_from_components(c: &[f64]) -> Vec3 {
    match c.len() {
        2 => Vec3::new(c[0], c[1], 0.0),
        3 => Vec3::new(c[0], c[1], c[2]),
        n => panic!("vector slice of length {n}"),
    }
}

/// Smallest pairwise distance between the three bodies.
pub fn min_separation(state: &SystemState) -> f64 {
    let q = &state.positions;
    let mut min = f64::INFINITY;
    for i in 0..3 {
        for j in (i + 1)..3 {
            min = min.min((q[i] - q[j]).norm());
        }
    }
    min
}

fn check_separation(state: &SystemState, floor: f64) -> Result<(), DynamicsError> {
    let sep = min_separation(state);
    if sep < floor {
        return Err(DynamicsError::SingularState {
            min_separation: sep,
            floor,
            time: state.time,
        });
    }
    Ok(())
}

/// Newtonian gravitational acceleration on each body,
/// `a_i = sum_{j != i} m_j (q_j - q_i) / |q_j - q_i|^3` with G = 1.
///
/// A zero-mass body feels the others' gravity but exerts none.
pub fn accelerations(state: &SystemState) -> Result<[Vec3; 3], DynamicsError> {
    accelerations_with_floor(state, DEFAULT_SEP_FLOOR)
}

pub fn accelerations_with_floor(
    state: &SystemState,
    floor: f64,
) -> Result<[Vec3; 3], DynamicsError> {
    check_separation(state, floor)?;
    let q = &state.positions;
    let m = &state.masses;
    let mut acc = [Vec3::ZERO; 3];
    for i in 0..3 {
        for j in (i + 1)..3 {
            let r = q[j] - q[i];
            let dist_sq = r.norm_sq();
            let inv_r3 = 1.0 / (dist_sq * dist_sq.sqrt());
            acc[i] += r * (m[j] * inv_r3);
            acc[j] += -r * (m[i] * inv_r3);
        }
    }
    Ok(acc)
}

/// Canonical phase-space derivative: `dq_i/dt = v_i`, `dp_i/dt = m_i a_i`.
/// For a zero-mass body `dq/dt = v` and `dp/dt = 0`.
pub fn phase_derivative(state: &SystemState) -> Result<PhaseDerivative, DynamicsError> {
    phase_derivative_with_floor(state, DEFAULT_SEP_FLOOR)
}

pub fn phase_derivative_with_floor(
    state: &SystemState,
    floor: f64,
) -> Result<PhaseDerivative, DynamicsError> {
    let acc = accelerations_with_floor(state, floor)?;
    let mut dp_dt = [Vec3::ZERO; 3];
    for i in 0..3 {
        dp_dt[i] = acc[i] * state.masses[i];
    }
    Ok(PhaseDerivative {
        dq_dt: state.velocities,
        dp_dt,
    })
}

/// Total energy `E = sum 1/2 m_i |v_i|^2 - sum_{i<j} m_i m_j / |q_i - q_j|`,
/// i.e. the Hamiltonian evaluated at `p_i = m_i v_i`.
pub fn total_energy(state: &SystemState) -> Result<f64, DynamicsError> {
    check_separation(state, DEFAULT_SEP_FLOOR)?;
    let mut kinetic = 0.0;
    for i in 0..3 {
        kinetic += 0.5 * state.masses[i] * state.velocities[i].norm_sq();
    }
    let mut potential = 0.0;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let r = (state.positions[i] - state.positions[j]).norm();
            potential -= state.masses[i] * state.masses[j] / r;
        }
    }
    Ok(kinetic + potential)
}

/// Total linear momentum `sum m_i v_i`.
pub fn linear_momentum(state: &SystemState) -> Vec3 {
    let mut p = Vec3::ZERO;
    for i in 0..3 {
        p += state.velocities[i] * state.masses[i];
    }
    p
}

/// Total angular momentum `sum m_i q_i x v_i`. For 2D systems only the z
/// component is nonzero.
pub fn angular_momentum(state: &SystemState) -> Vec3 {
    let mut l = Vec3::ZERO;
    for i in 0..3 {
        l += state.positions[i].cross(state.velocities[i]) * state.masses[i];
    }
    l
}

/// Translate to the center-of-mass frame: COM at the origin and total
/// momentum exactly zero. Relative coordinates are unchanged.
pub fn recenter_to_com(state: &SystemState) -> Result<SystemState, DynamicsError> {
    let m_total: f64 = state.masses.iter().sum();
    if m_total <= 0.0 {
        return Err(DynamicsError::ZeroTotalMass);
    }
    let mut com = Vec3::ZERO;
    let mut vel_com = Vec3::ZERO;
    for i in 0..3 {
        com += state.positions[i] * state.masses[i];
        vel_com += state.velocities[i] * state.masses[i];
    }
    com = com * (1.0 / m_total);
    vel_com = vel_com * (1.0 / m_total);
    let mut out = *state;
    for i in 0..3 {
        out.positions[i] = out.positions[i] - com;
        out.velocities[i] = out.velocities[i] - vel_com;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn simple_state(positions: [Vec3; 3], velocities: [Vec3; 3], masses: [f64; 3]) -> SystemState {
        SystemState {
            positions,
            velocities,
            masses,
            time: 0.0,
            dim: Dim::Three,
        }
    }

    #[test]
    fn far_test_particle_leaves_binary_untouched() {
        // Unit masses at distance 1, zero-mass third body far away:
        // |a| = G m / r^2 = 1 up to the third body's O(1e-12) pull.
        let state = simple_state(
            [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1e6, 0.0, 0.0),
            ],
            [Vec3::ZERO; 3],
            [1.0, 1.0, 0.0],
        );
        let acc = accelerations(&state).unwrap();
        assert_relative_eq!(acc[0].norm(), 1.0, max_relative = 1e-11);
        assert_relative_eq!(acc[1].norm(), 1.0, max_relative = 1e-11);
        assert!(acc[0].x > 0.0, "body 1 pulled toward body 2");
        assert!(acc[1].x < 0.0, "body 2 pulled toward body 1");
    }

    #[test]
    fn equilateral_triangle_acceleration_magnitude() {
        // Two unit forces at 60 degrees: resultant 2 cos(30) = sqrt(3),
        // directed at the centroid.
        let h = 3f64.sqrt() / 2.0;
        let positions = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.5, h, 0.0),
        ];
        let state = simple_state(positions, [Vec3::ZERO; 3], [1.0, 1.0, 1.0]);
        let acc = accelerations(&state).unwrap();
        let centroid = Vec3::new(0.5, h / 3.0, 0.0);
        for i in 0..3 {
            assert_relative_eq!(acc[i].norm(), 3f64.sqrt(), max_relative = 1e-12);
            let toward = centroid - positions[i];
            let cos = acc[i].dot(toward) / (acc[i].norm() * toward.norm());
            assert_relative_eq!(cos, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_sources_means_no_acceleration() {
        // All masses other than body 0 are zero, so nothing pulls on it.
        // Built directly: `new()` would reject a single positive mass, but
        // the force kernel itself only requires nonzero separations.
        let state = simple_state(
            [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            [Vec3::ZERO; 3],
            [1.0, 0.0, 0.0],
        );
        let acc = accelerations(&state).unwrap();
        assert_eq!(acc[0], Vec3::ZERO);
        // The massless bodies still feel body 0.
        assert!(acc[1].norm() > 0.0);
        assert!(acc[2].norm() > 0.0);
    }

    #[test]
    fn singular_state_is_rejected() {
        let state = simple_state(
            [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1e-13, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
            ],
            [Vec3::ZERO; 3],
            [1.0, 1.0, 1.0],
        );
        match accelerations(&state) {
            Err(DynamicsError::SingularState { .. }) => {}
            other => panic!("expected SingularState, got {other:?}"),
        }
    }

    #[test]
    fn derivative_at_rest_and_total_force_balance() {
        let state = simple_state(
            [
                Vec3::new(0.3, 0.1, 0.0),
                Vec3::new(-0.4, 0.2, 0.5),
                Vec3::new(0.1, -0.6, -0.2),
            ],
            [Vec3::ZERO; 3],
            [1.0, 2.0, 0.5],
        );
        let deriv = phase_derivative(&state).unwrap();
        for i in 0..3 {
            assert_eq!(deriv.dq_dt[i], Vec3::ZERO);
        }
        let total: Vec3 = deriv.dp_dt[0] + deriv.dp_dt[1] + deriv.dp_dt[2];
        assert!(total.norm() < 1e-12, "Newton's third law violated: {total:?}");
    }

    #[test]
    fn circular_orbit_centripetal_force() {
        // Two unit masses on a circular orbit of separation d = 1:
        // omega^2 = (m1 + m2) / d^3 = 2, each at radius 0.5 from the COM,
        // speed v = omega / 2, centripetal dp/dt magnitude m v^2 / r.
        let omega = 2f64.sqrt();
        let v = omega * 0.5;
        let state = simple_state(
            [
                Vec3::new(0.5, 0.0, 0.0),
                Vec3::new(-0.5, 0.0, 0.0),
                Vec3::new(1e8, 0.0, 0.0),
            ],
            [
                Vec3::new(0.0, v, 0.0),
                Vec3::new(0.0, -v, 0.0),
                Vec3::ZERO,
            ],
            [1.0, 1.0, 0.0],
        );
        let deriv = phase_derivative(&state).unwrap();
        let centripetal = v * v / 0.5;
        assert_relative_eq!(deriv.dp_dt[0].norm(), centripetal, max_relative = 1e-7);
    }

    #[test]
    fn energy_of_resting_pair() {
        let state = simple_state(
            [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1e6, 0.0, 0.0),
            ],
            [Vec3::ZERO; 3],
            [1.0, 1.0, 0.0],
        );
        let e = total_energy(&state).unwrap();
        assert_relative_eq!(e, -1.0, max_relative = 1e-5);
    }

    #[test]
    fn kinetic_only_energy() {
        // One unit mass at speed 2, everything else massless: every mass
        // product vanishes, so E is purely kinetic, 0.5 * 1 * 4 = 2.
        let state = simple_state(
            [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            [Vec3::new(2.0, 0.0, 0.0), Vec3::ZERO, Vec3::ZERO],
            [1.0, 0.0, 0.0],
        );
        let e = total_energy(&state).unwrap();
        assert_relative_eq!(e, 2.0, max_relative = 1e-15);
    }

    #[test]
    fn recenter_is_idempotent_and_kills_momentum() {
        let state = simple_state(
            [
                Vec3::new(1.0, 2.0, 3.0),
                Vec3::new(-0.5, 0.3, 0.2),
                Vec3::new(0.4, -1.2, 0.7),
            ],
            [
                Vec3::new(0.1, -0.2, 0.3),
                Vec3::new(0.5, 0.5, -0.5),
                Vec3::new(-0.3, 0.1, 0.0),
            ],
            [1.0, 2.0, 3.0],
        );
        let once = recenter_to_com(&state).unwrap();
        let twice = recenter_to_com(&once).unwrap();
        assert!(linear_momentum(&once).norm() < 1e-14);
        for i in 0..3 {
            assert!((once.positions[i] - twice.positions[i]).norm() < 1e-15);
            assert!((once.velocities[i] - twice.velocities[i]).norm() < 1e-15);
        }
        // Relative coordinates unchanged.
        let rel_before = state.positions[1] - state.positions[0];
        let rel_after = once.positions[1] - once.positions[0];
        assert!((rel_before - rel_after).norm() < 1e-15);
    }

    #[test]
    fn zero_total_mass_rejected_by_recenter() {
        let state = SystemState {
            positions: [
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            velocities: [Vec3::ZERO; 3],
            masses: [0.0, 0.0, 0.0],
            time: 0.0,
            dim: Dim::Three,
        };
        assert!(matches!(
            recenter_to_com(&state),
            Err(DynamicsError::ZeroTotalMass)
        ));
    }

    #[test]
    fn angular_momentum_flips_under_reflection() {
        let state = simple_state(
            [
                Vec3::new(0.5, 0.2, 0.0),
                Vec3::new(-0.5, -0.1, 0.0),
                Vec3::new(0.1, 0.8, 0.0),
            ],
            [
                Vec3::new(0.0, 0.7, 0.0),
                Vec3::new(0.0, -0.7, 0.0),
                Vec3::new(0.2, 0.0, 0.0),
            ],
            [1.0, 1.0, 1.0],
        );
        let mut mirrored = state;
        for i in 0..3 {
            mirrored.positions[i].x = -mirrored.positions[i].x;
            mirrored.velocities[i].x = -mirrored.velocities[i].x;
        }
        let l = angular_momentum(&state);
        let lm = angular_momentum(&mirrored);
        assert_relative_eq!(l.z, -lm.z, max_relative = 1e-12);
    }

    #[test]
    fn flat_round_trip_2d_and_3d() {
        for dim in [Dim::Two, Dim::Three] {
            let z = if dim == Dim::Three { 0.3 } else { 0.0 };
            let state = SystemState {
                positions: [
                    Vec3::new(0.1, 0.2, z),
                    Vec3::new(-0.4, 0.5, -z),
                    Vec3::new(0.7, -0.8, z),
                ],
                velocities: [
                    Vec3::new(1.0, -1.0, z),
                    Vec3::new(0.25, 0.5, z),
                    Vec3::new(-0.75, 0.125, -z),
                ],
                masses: [1.0, 2.0, 3.0],
                time: 1.5,
                dim,
            };
            let flat = state.to_flat();
            assert_eq!(flat.len(), 6 * dim.components());
            let back = SystemState::from_flat(&flat, state.masses, state.time, dim);
            assert_eq!(state, back);

            let canon = state.to_canonical_flat();
            let back2 = SystemState::from_canonical_flat(&canon, state.masses, state.time, dim);
            for i in 0..3 {
                assert!((state.velocities[i] - back2.velocities[i]).norm() < 1e-15);
            }
        }
    }

    /// Central finite difference of the Hamiltonian must reproduce the
    /// phase derivative: dH/dp = dq/dt and -dH/dq = dp/dt.
    #[test]
    fn derivative_matches_finite_difference_of_hamiltonian() {
        let state = simple_state(
            [
                Vec3::new(0.3, 0.1, -0.2),
                Vec3::new(-0.4, 0.25, 0.5),
                Vec3::new(0.1, -0.6, -0.15),
            ],
            [
                Vec3::new(0.2, -0.1, 0.05),
                Vec3::new(-0.3, 0.15, 0.1),
                Vec3::new(0.05, 0.2, -0.25),
            ],
            [1.0, 1.5, 0.5],
        );
        let deriv = phase_derivative(&state).unwrap();
        let h = 1e-6;

        let energy_of = |s: &SystemState| total_energy(s).unwrap();
        for body in 0..3 {
            let m = state.masses[body];
            for axis in 0..3 {
                // dH/dp via v = p/m perturbation.
                let mut plus = state;
                let mut minus = state;
                set_axis(&mut plus.velocities[body], axis, get_axis(state.velocities[body], axis) + h / m);
                set_axis(&mut minus.velocities[body], axis, get_axis(state.velocities[body], axis) - h / m);
                let dh_dp = (energy_of(&plus) - energy_of(&minus)) / (2.0 * h);
                assert_relative_eq!(
                    dh_dp,
                    get_axis(deriv.dq_dt[body], axis),
                    max_relative = 1e-6,
                    epsilon = 1e-9
                );

                // -dH/dq.
                let mut plus = state;
                let mut minus = state;
                set_axis(&mut plus.positions[body], axis, get_axis(state.positions[body], axis) + h);
                set_axis(&mut minus.positions[body], axis, get_axis(state.positions[body], axis) - h);
                let dh_dq = (energy_of(&plus) - energy_of(&minus)) / (2.0 * h);
                assert_relative_eq!(
                    -dh_dq,
                    get_axis(deriv.dp_dt[body], axis),
                    max_relative = 1e-6,
                    epsilon = 1e-8
                );
            }
        }
    }

    fn get_axis(v: Vec3, axis: usize) -> f64 {
        match axis {
            0 => v.x,
            1 => v.y,
            _ => v.z,
        }
    }

    fn set_axis(v: &mut Vec3, axis: usize, value: f64) {
        match axis {
            0 => v.x = value,
            1 => v.y = value,
            _ => v.z = value,
        }
    }

    fn arb_state() -> impl Strategy<Value = SystemState> {
        let coord = -2.0..2.0f64;
        let vel = -1.0..1.0f64;
        let mass = 0.1..3.0f64;
        (
            proptest::array::uniform9(coord),
            proptest::array::uniform9(vel),
            proptest::array::uniform3(mass),
        )
            .prop_map(|(q, v, m)| SystemState {
                positions: [
                    Vec3::new(q[0], q[1], q[2]),
                    Vec3::new(q[3], q[4], q[5]),
                    Vec3::new(q[6], q[7], q[8]),
                ],
                velocities: [
                    Vec3::new(v[0], v[1], v[2]),
                    Vec3::new(v[3], v[4], v[5]),
                    Vec3::new(v[6], v[7], v[8]),
                ],
                masses: m,
                time: 0.0,
                dim: Dim::Three,
            })
            .prop_filter("non-singular", |s| min_separation(s) > 1e-3)
    }

    proptest! {
        /// Newton's third law: sum of m_i a_i vanishes.
        #[test]
        fn momentum_conservation_of_forces(state in arb_state()) {
            let acc = accelerations(&state).unwrap();
            let mut total = Vec3::ZERO;
            let mut scale = 0.0f64;
            for i in 0..3 {
                total += acc[i] * state.masses[i];
                scale += (acc[i] * state.masses[i]).norm();
            }
            prop_assert!(total.norm() <= 1e-12 * scale.max(1.0));
        }

        /// Rotating the state rotates the accelerations identically.
        #[test]
        fn rotation_equivariance(state in arb_state(), angle in 0.0..std::f64::consts::TAU) {
            let rotate = |v: Vec3| Vec3::new(
                v.x * angle.cos() - v.y * angle.sin(),
                v.x * angle.sin() + v.y * angle.cos(),
                v.z,
            );
            let mut rotated = state;
            for i in 0..3 {
                rotated.positions[i] = rotate(rotated.positions[i]);
                rotated.velocities[i] = rotate(rotated.velocities[i]);
            }
            let acc = accelerations(&state).unwrap();
            let acc_rot = accelerations(&rotated).unwrap();
            for i in 0..3 {
                let expect = rotate(acc[i]);
                prop_assert!((expect - acc_rot[i]).norm() <= 1e-10 * acc[i].norm().max(1.0));
            }
        }

        /// recenter_to_com leaves energy invariant and zeroes momentum.
        #[test]
        fn recenter_preserves_relative_structure(state in arb_state()) {
            let centered = recenter_to_com(&state).unwrap();
            prop_assert!(linear_momentum(&centered).norm() < 1e-12);
            let sep_before = min_separation(&state);
            let sep_after = min_separation(&centered);
            prop_assert!((sep_before - sep_after).abs() <= 1e-12 * sep_before);
        }
    }
}
