//! Ground-truth three-body trajectory generation and neural forecasting.
//!
//! The crate is organised as a pipeline:
//!
//! * [`dynamics`] — equations of motion and conserved quantities (G = 1);
//! * [`integrators`] — RK4, symplectic leapfrog, adaptive Bulirsch-Stoer with
//!   a two-tolerance convergence certificate, and Benettin Lyapunov-time
//!   estimation;
//! * [`dataset`] — initial-condition sampling, bulk generation, CSV/JSON
//!   persistence and conversion into supervised pairs;
//! * [`esn`], [`hnn`], [`lstm`] — the three learner families;
//! * [`eval`] — prediction horizons, tier classification, bootstrap
//!   confidence intervals and report emission.

pub mod dataset;
pub mod dynamics;
pub mod esn;
pub mod eval;
pub mod fixtures;
pub mod hnn;
pub mod integrators;
pub mod lstm;

pub use dynamics::{Dim, DynamicsError, PhaseDerivative, SystemState, Vec3};
pub use integrators::{IntegratorConfig, IntegratorError, Method, Trajectory};
