//! Ground-truthed synthetic scenes: boxes and spheres on piecewise-linear
//! trajectories, surface-sampled clouds, ray-cast camera images, per-object
//! silhouettes and per-point instance labels.
//!
//! Objects are axis-aligned and live in the world frame; the ground is the
//! world plane `z = 0`. Clouds are stored in the sensor frame of the moving
//! ego rig, like a real capture.

mod generate;
mod raycast;
mod spec;
mod truth;

pub use generate::{frame_key, generate, write_scene, SynthScene};
pub use spec::{
    CameraSpec, EgoWaypoint, GroundSpec, NoiseSpec, ObjectSpec, ScenarioSpec, ShapeKind, Waypoint,
};
pub use truth::{
    decode_u16, encode_u16, FrameTruth, GroundTruth, ObjectFrameTruth, ObjectTruth, TruthTrack,
    ViewTruth, GT_DIR, NO_INSTANCE, UNLABELED,
};

/// Four boxes seen by two cameras over 20 frames at 1 Hz.
pub const EXAMPLE_SCENARIO: &str = include_str!("../../scenarios/four_boxes.json");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("invalid scenario spec: {0}")]
    SpecInvalid(String),
    #[error("synthetic scene i/o: {0}")]
    Io(String),
}
