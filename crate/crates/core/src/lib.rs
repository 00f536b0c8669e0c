//! Stochastic approximation with discontinuous drift.
//!
//! The crate simulates Robbins-Monro iterates driven by piecewise-smooth
//! fields, builds the Krasovskii and Filippov set-valued regularizations of
//! the drift, integrates the Filippov differential inclusion with sliding
//! modes, measures how closely interpolated iterates track inclusion
//! solutions, and computes occupation-measure diagnostics.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod fields;
pub mod hull;
pub mod inclusion;
pub mod io;
pub mod measures;
pub mod sa_engine;
pub mod tracking;
pub mod trajectory;
pub mod vector;

pub use error::{Error, Result};
pub use fields::{FieldSpec, Guard, Piece, PiecewiseField, Sign, SignPattern};
pub use hull::ConvexVelocitySet;
pub use sa_engine::{
    run_sa, run_sa_with, validate_schedule, IterateTrace, NoiseKind, NoiseModel, SaOptions,
    StepsizeSchedule,
};
pub use trajectory::{Mode, Trajectory};
