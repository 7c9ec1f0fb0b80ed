use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frame::{read_calib, read_json, read_pose, write_json};
use super::{load_frame, LoadedFrame, SceneIoError};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Frame in which the point clouds are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinateConvention {
    #[default]
    SensorFrame,
    WorldFrame,
}

/// How ego poses relate to the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PoseReference {
    /// Poses already live in a global frame.
    #[default]
    Absolute,
    /// The world frame is the first frame's ego pose; all poses are
    /// re-expressed relative to it on load.
    FirstFrame,
}

/// A camera whose calibration intentionally changes at `frame`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recalibration {
    pub frame: usize,
    pub camera_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    /// Frame directories, relative to the manifest's directory.
    pub frame_paths: Vec<String>,
    #[serde(default)]
    pub coordinate_convention: CoordinateConvention,
    #[serde(default = "default_units")]
    pub units: String,
    #[serde(default)]
    pub pose_reference: PoseReference,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recalibrations: Vec<Recalibration>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_units() -> String {
    "meters".into()
}

impl SequenceManifest {
    pub fn new(frame_paths: Vec<String>) -> Self {
        Self {
            frame_paths,
            coordinate_convention: CoordinateConvention::SensorFrame,
            units: default_units(),
            pose_reference: PoseReference::Absolute,
            recalibrations: Vec::new(),
            base_dir: PathBuf::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneIoError> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(SceneIoError::NotFound(path.to_path_buf()));
        }
        let mut m: SequenceManifest = read_json(path)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SceneIoError> {
        write_json(path.as_ref(), self)
    }

    pub fn frame_dir(&self, index: usize) -> PathBuf {
        self.base_dir.join(&self.frame_paths[index])
    }

    pub fn len(&self) -> usize {
        self.frame_paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_paths.is_empty()
    }

    /// Loads frame `index`, applying the manifest's pose reference.
    pub fn load_frame(&self, index: usize) -> Result<LoadedFrame, SceneIoError> {
        let mut loaded = load_frame(self.frame_dir(index))?;
        if self.pose_reference == PoseReference::FirstFrame {
            let first = read_pose(&self.frame_dir(0))?;
            let origin = crate::transform::RigidTransform::from_row_major(&first.ego_pose)
                .map_err(|e| SceneIoError::CalibrationInvalid {
                    camera_id: "<ego>".into(),
                    reason: e.to_string(),
                })?;
            loaded.frame.ego_pose = origin.inverse().compose(&loaded.frame.ego_pose);
        }
        Ok(loaded)
    }
}

/// Checks sequence-level consistency. Returns one human-readable warning per
/// problem; an empty list means the sequence is clean.
pub fn validate_sequence(manifest: &SequenceManifest) -> Vec<String> {
    let mut warnings = Vec::new();
    if manifest.units != "meters" {
        warnings.push(format!(
            "inconsistent units: expected \"meters\", manifest declares {:?}",
            manifest.units
        ));
    }

    let redeclared: BTreeSet<(usize, &str)> = manifest
        .recalibrations
        .iter()
        .map(|r| (r.frame, r.camera_id.as_str()))
        .collect();

    let mut last_ts: Option<f64> = None;
    let mut non_monotone = false;
    let mut calib_by_camera: BTreeMap<String, ([f64; 9], [f64; 16])> = BTreeMap::new();
    let mut changed: BTreeSet<String> = BTreeSet::new();

    for (i, rel) in manifest.frame_paths.iter().enumerate() {
        let dir = manifest.base_dir.join(rel);
        if !dir.is_dir() {
            warnings.push(format!("frame path not resolvable: {rel}"));
            continue;
        }
        match read_pose(&dir) {
            Ok(pose) => {
                if let Some(prev) = last_ts {
                    if pose.timestamp < prev {
                        non_monotone = true;
                    }
                }
                last_ts = Some(pose.timestamp);
            }
            Err(e) => warnings.push(format!("frame {rel}: {e}")),
        }
        match read_calib(&dir) {
            Ok(calib) => {
                for cam in calib.cameras {
                    let value = (cam.intrinsics, cam.extrinsics);
                    match calib_by_camera.get(&cam.camera_id) {
                        Some(prev) if *prev != value => {
                            if !redeclared.contains(&(i, cam.camera_id.as_str())) {
                                changed.insert(cam.camera_id.clone());
                            }
                            calib_by_camera.insert(cam.camera_id, value);
                        }
                        Some(_) => {}
                        None => {
                            calib_by_camera.insert(cam.camera_id, value);
                        }
                    }
                }
            }
            Err(e) => warnings.push(format!("frame {rel}: {e}")),
        }
    }
    if non_monotone {
        warnings.push("non-monotone timestamps".into());
    }
    if !changed.is_empty() {
        warnings.push(format!(
            "calibration changed without re-declaration for camera_id(s): {}",
            changed.into_iter().collect::<Vec<_>>().join(", ")
        ));
    }
    warnings
}
