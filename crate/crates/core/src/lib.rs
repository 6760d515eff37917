//! Joint resource allocation for AR-empowered vehicular edge systems.
//!
//! A set of AR vehicles convert camera frames (YUV to RGB), upload them to a
//! roadside edge server, and the server runs object detection on them. The
//! operator picks, per vehicle, the CPU frequency `f`, transmit power `P`,
//! frame side length `s` and the server frequency share `fs` to maximize
//! data profit minus price-weighted energy under a per-frame latency budget.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: the physical and economic formulas and the constraint audit.
//! - [`vehicle`]: per-vehicle block solvers for size, power and CPU frequency.
//! - [`server`]: server compute allocation by a projected dual subgradient
//!   method, plus the closed-form allocation used as its oracle.
//! - [`joint`]: the block-coordinate orchestrator and the baseline schemes.
//! - [`scenario`]: seeded scenario generation and JSON configuration.
//! - [`verify`]: brute-force oracles and property checkers for the tests.
//! - [`cli`]: the `vemeta` experiment commands.

pub mod cli;
pub mod error;
pub mod joint;
pub mod model;
pub mod scenario;
pub mod server;
pub mod vehicle;
pub mod verify;

pub use error::{Error, Infeasibility, Result};
pub use joint::{joint_solve, solve_scheme, JointOptions, SchemeId, SolveReport};
pub use model::{Allocation, ConstraintAudit, ScenarioConfig, SizeMode, VehicleProfile};
