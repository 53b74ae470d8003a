//! Task-level iterative learning control for throwing a "flying knot" with a
//! simulated rope.
//!
//! The crate is organised bottom-up:
//!
//! - [`curvekit`]: Bezier command splines and SO(3) helpers.
//! - [`arm`]: forward kinematics, tip Jacobians and inverse dynamics of the arm.
//! - [`rope`]: maximal-coordinate rope simulator and its exact linearization.
//! - [`qp`]: dense interior-point solver for convex quadratic programs.
//! - [`inverse_model`]: the critical-point QP that turns rope errors into command updates.
//! - [`init_guess`]: demonstration tracking for the first command.
//! - [`demo`]: capture ingestion, timing selection, synthetic demonstrations.
//! - [`plant`]: virtual hardware (servo lag, true rope, 200 Hz measurements).
//! - [`ilc`]: the learning loop and the transfer / sensitivity drivers.
//! - [`config`]: experiment configuration files.

pub mod arm;
pub mod config;
pub mod curvekit;
pub mod demo;
pub mod error;
pub mod ilc;
pub mod init_guess;
pub mod inverse_model;
pub mod io;
pub mod plant;
pub mod qp;
pub mod rng;
pub mod rope;
pub mod scenario;

pub use error::{Error, Result};

/// Standard gravity, z-up world frame.
pub const GRAVITY: f64 = 9.81;
