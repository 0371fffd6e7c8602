//! Shared vocabulary for the highway overtaking lab.
//!
//! Everything here is a pure function over value types: ego/object state
//! tuples, the lane-change label space, the global-to-ego frame transform,
//! quartic Bezier evaluation and fitting, and the pairwise car distance
//! matrix used as an auxiliary training target.

pub mod bezier;
pub mod distance;
pub mod error;
pub mod frame;
pub mod types;
pub mod units;

pub use bezier::{bezier_eval, bezier_fit, BezierCurve, BezierFit, FUTURE_TIMES};
pub use distance::{build_distance_matrix, DistanceMatrix, EGO_SLOT, MATRIX_SLOTS};
pub use error::CoreError;
pub use frame::{to_local_frame, Pose};
pub use types::{EgoState, LaneChangeCommand, ObjectState, TaState, MAX_OBJECTS, OBSERVATION_RADIUS};

pub type Point = (f64, f64);
