//! Sensor data ingestion and the on-disk sequence layout.
//!
//! A sequence is a `manifest.json` listing frame directories. Each frame
//! directory holds `cloud.bin` (little-endian `f32` xyz triplets),
//! `cam_<id>.png`, `calib.json` (row-major `K` and 4x4 sensor-to-camera
//! extrinsics per camera) and `pose.json` (timestamp plus row-major 4x4
//! sensor-to-world ego pose).

mod frame;
mod manifest;

use std::path::{Path, PathBuf};

pub use frame::{
    camera_image_file, decode_cloud, encode_cloud, load_frame, save_frame, CameraView, Frame,
    Intrinsics, LoadWarning, LoadedFrame, CALIB_FILE, CLOUD_FILE, POSE_FILE,
};
pub use manifest::{
    validate_sequence, CoordinateConvention, PoseReference, Recalibration, SequenceManifest,
    MANIFEST_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum SceneIoError {
    #[error("{0} not found")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("invalid calibration for camera {camera_id}: {reason}")]
    CalibrationInvalid { camera_id: String, reason: String },
}

impl SceneIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl std::fmt::Display, reason: impl Into<String>) -> Self {
        Self::MalformedFile {
            path: path.to_string(),
            reason: reason.into(),
        }
    }
}
