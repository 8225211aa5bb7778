//! Event-triggered LQG control over an i.i.d. packet-erasure channel.
//!
//! The crate computes the certainty-equivalent controller, expands the
//! scheduler-side error covariance into precomputable Gramian traces scaled
//! by survival factors `(1-p)^c`, and solves the resulting binary send/skip
//! program exactly. The program can also be materialized as a MILP with
//! running attempt counters and one-hot selectors and exported as an LP file.
//!
//! Module map:
//!
//! * [`model`]: problem instances, validation, JSON config, Boeing-747 preset.
//! * [`lqg`]: Riccati recursion, gains, error weights and tail Gramians.
//! * [`covariance`]: Gramian tables, covariance propagation, schedule cost.
//! * [`scheduler`]: one-step certificates, exact solvers, ratio bounds.
//! * [`milp`]: MILP model builder, assignment checker, LP export.
//! * [`sim`]: closed-loop simulation and the Monte Carlo harness.
//! * [`cli`]: the `etlqg` command-line front end.

pub mod cli;
pub mod covariance;
pub mod error;
pub mod linalg;
pub mod lqg;
pub mod milp;
pub mod model;
pub mod scheduler;
pub mod sim;

pub use covariance::{GramianTable, NoiseGramians, Schedule};
pub use error::{Error, Result};
pub use lqg::RiccatiSolution;
pub use milp::MilpModel;
pub use model::{Penalty, Problem};
pub use scheduler::{CertificateOutcome, Decision, RatioBounds, SolveResult};
pub use sim::{AggregateStats, Policy, RunRecord};
