//! Disturbance-rejection control learning for a planar underwater robot.
//!
//! The crate is organized around a pose-regulation task under strong,
//! time-correlated wave forces that can exceed the robot's control bounds:
//!
//! - [`dynamics`] — planar 3-DOF rigid-body model with configurable
//!   variations (mass, hydrodynamics, latency, offsets) plus a uniform
//!   [`dynamics::DynamicsHandle`] that learned models also satisfy.
//! - [`disturbance`] — sinusoid-superposition wave synthesis, parameter
//!   sampling, and held-out target traces for transfer experiments.
//! - [`neural`] — minimal f64 feedforward/GRU networks with hand-rolled
//!   reverse-mode gradients, optimizers, and a binary checkpoint format.
//! - [`a2c`] — synchronous advantage actor-critic over worker pools;
//!   trains both the state-only baseline and the generalized control
//!   policy conditioned on a future-disturbance window.
//! - [`odi`] — recurrent online disturbance identification with the
//!   iterative data-aggregation loop, and the combined closed-loop
//!   controller.
//! - [`transfer`] — compensatory-policy transfer between dynamics models:
//!   control-action compensation and transition-mismatch compensation
//!   (control- and feature-combination variants).
//! - [`sysid`] — empirical delta-state dynamics model fitted to logged
//!   trajectories, wrapped as a `DynamicsHandle`.
//! - [`harness`] — experiment orchestration: metrics, evaluation, CSV
//!   schemas, run directories, manifests, report emission.
//! - [`config`] — flat `[section] key = value` run-recipe files.
//! - [`report`] — self-contained SVG line and distribution plots.
//!
//! Worker loops are data-parallel via rayon when the `parallel` feature is
//! enabled (default). Every parallel loop has a sequential fallback and both
//! produce bit-identical results; see [`exec`].

pub mod a2c;
pub mod config;
pub mod disturbance;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod harness;
pub mod neural;
pub mod odi;
pub mod report;
pub mod sysid;
pub mod trajectory;
pub mod transfer;

pub use error::{Error, Result};
