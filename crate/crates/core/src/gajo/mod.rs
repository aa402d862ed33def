//! Factor-graph estimation of the drone trajectory.
//!
//! Each pose variable is the drone translation in the event-camera frame.
//! Three factor kinds constrain it: a constant-velocity prior over three
//! consecutive poses, an event-tracking factor on the projected box center,
//! and a radar factor on range, bearing and frame-to-frame displacement.
//! [`inter_sae_track`] solves for the newest pose alone, [`local_optimize`]
//! jointly refines a window, and [`AdaptiveSolver`] keeps a square-root
//! information factor that is updated incrementally and only rebuilt when the
//! estimate moves too far from its linearization point.

mod adaptive;
mod factors;
mod graph;
mod noise;
mod qr;
mod solver;

pub use adaptive::{AdaptiveConfig, AdaptiveSolver, NewPose, StepReport};
pub use factors::{
    jacobian_et, jacobian_prior, jacobian_rt, residual_et, residual_prior, residual_rt, Factor, FactorKind,
    Measurement, RadarMeasurement, NEAR_PLANE, RADIUS_EPSILON,
};
pub use graph::{FactorGraph, PoseVariable, Row};
pub use noise::{huber_rho, huber_weight, NoiseModel};
pub use qr::{qr_solve, SquareRootInfo};
pub use solver::{gauss_newton, inter_sae_track, local_optimize, GnOutcome, GnSettings, InterSaeEstimate};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GajoError {
    #[error("prior factor needs two earlier poses")]
    InsufficientHistory,
    #[error("pose lies behind the camera (z = {0})")]
    PointBehindCamera(f64),
    #[error("pose is within {RADIUS_EPSILON} m of the origin, bearing undefined")]
    DegenerateOrigin,
    #[error("system is rank deficient at column {column}")]
    RankDeficient { column: usize },
    #[error("least-squares system has {rows} rows for {cols} unknowns")]
    Underdetermined { rows: usize, cols: usize },
    #[error("dimension mismatch: got {got}, expected {expected}")]
    LengthMismatch { got: usize, expected: usize },
}
