use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::{Matrix3, Point3};
use serde::{Deserialize, Serialize};

use super::SceneIoError;
use crate::transform::RigidTransform;

pub const CLOUD_FILE: &str = "cloud.bin";
pub const CALIB_FILE: &str = "calib.json";
pub const POSE_FILE: &str = "pose.json";

/// Pinhole intrinsics `K`, upper-triangular with positive focal lengths and
/// `K[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics(Matrix3<f64>);

impl Intrinsics {
    pub fn new(k: Matrix3<f64>) -> Result<Self, String> {
        if k.iter().any(|v| !v.is_finite()) {
            return Err("non-finite entry in K".into());
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err("K is not upper-triangular".into());
        }
        if k[(0, 0)] <= 0.0 || k[(1, 1)] <= 0.0 {
            return Err(format!(
                "focal entries must be positive (fx={}, fy={})",
                k[(0, 0)],
                k[(1, 1)]
            ));
        }
        if k[(2, 2)] != 1.0 {
            return Err("K[2][2] must be 1".into());
        }
        Ok(Self(k))
    }

    pub fn from_focal(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self(Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0))
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, String> {
        Self::new(Matrix3::from_row_slice(v))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 3 + c] = self.0[(r, c)];
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// One calibrated camera image of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub camera_id: String,
    pub image: RgbImage,
    pub intrinsics: Intrinsics,
    /// Sensor frame to camera frame.
    pub extrinsics: RigidTransform,
}

impl CameraView {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// One synchronized observation: cloud, camera images and ego pose.
///
/// Points are kept as `f32` triplets, which is the on-disk encoding; this makes
/// save/load bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Stable identifier of the frame within its sequence (directory name).
    pub key: String,
    pub timestamp: f64,
    pub points: Vec<[f32; 3]>,
    pub cameras: Vec<CameraView>,
    /// Sensor frame to world frame.
    pub ego_pose: RigidTransform,
}

impl Frame {
    /// Checks every frame invariant.
    pub fn validate(&self) -> Result<(), SceneIoError> {
        if !self.timestamp.is_finite() {
            return Err(SceneIoError::malformed(
                &self.key,
                "timestamp is not finite",
            ));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().any(|c| !c.is_finite()))
        {
            return Err(SceneIoError::malformed(
                &self.key,
                format!("point {i} has a non-finite coordinate"),
            ));
        }
        if self.cameras.is_empty() {
            return Err(SceneIoError::malformed(&self.key, "frame has no cameras"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for cam in &self.cameras {
            check_camera_id(&cam.camera_id).map_err(|r| SceneIoError::malformed(&self.key, r))?;
            if !seen.insert(cam.camera_id.as_str()) {
                return Err(SceneIoError::malformed(
                    &self.key,
                    format!("duplicate camera_id {:?}", cam.camera_id),
                ));
            }
            if cam.image.width() == 0 || cam.image.height() == 0 {
                return Err(SceneIoError::malformed(
                    &self.key,
                    format!("camera {:?} has an empty image", cam.camera_id),
                ));
            }
            // Re-run the structural checks; values may have been built by hand.
            Intrinsics::new(*cam.intrinsics.matrix()).map_err(|reason| {
                SceneIoError::CalibrationInvalid {
                    camera_id: cam.camera_id.clone(),
                    reason,
                }
            })?;
            RigidTransform::from_matrix(*cam.extrinsics.matrix()).map_err(|e| {
                SceneIoError::CalibrationInvalid {
                    camera_id: cam.camera_id.clone(),
                    reason: e.to_string(),
                }
            })?;
        }
        RigidTransform::from_matrix(*self.ego_pose.matrix()).map_err(|e| {
            SceneIoError::CalibrationInvalid {
                camera_id: "<ego>".into(),
                reason: e.to_string(),
            }
        })?;
        Ok(())
    }

    pub fn camera(&self, camera_id: &str) -> Option<&CameraView> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn point(&self, index: usize) -> Point3<f64> {
        let p = self.points[index];
        Point3::new(p[0] as f64, p[1] as f64, p[2] as f64)
    }
}

fn check_camera_id(id: &str) -> Result<(), String> {
    if id.is_empty()
        || !id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Err(format!("camera_id {id:?} must be non-empty [A-Za-z0-9_-]"));
    }
    Ok(())
}

/// Non-fatal conditions reported while loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadWarning {
    EmptyCloud,
}

#[derive(Debug, Clone)]
pub struct LoadedFrame {
    pub frame: Frame,
    pub warnings: Vec<LoadWarning>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CalibFile {
    pub cameras: Vec<CalibEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CalibEntry {
    pub camera_id: String,
    /// Row-major 3x3.
    pub intrinsics: [f64; 9],
    /// Row-major 4x4, sensor to camera.
    pub extrinsics: [f64; 16],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct PoseFile {
    pub timestamp: f64,
    /// Row-major 4x4, sensor to world.
    pub ego_pose: [f64; 16],
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneIoError> {
    let text = fs::read_to_string(path).map_err(|e| SceneIoError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| SceneIoError::malformed(path.display(), e.to_string()))
}

pub(crate) fn read_calib(dir: &Path) -> Result<CalibFile, SceneIoError> {
    read_json(&dir.join(CALIB_FILE))
}

pub(crate) fn read_pose(dir: &Path) -> Result<PoseFile, SceneIoError> {
    read_json(&dir.join(POSE_FILE))
}

pub fn camera_image_file(camera_id: &str) -> String {
    format!("cam_{camera_id}.png")
}

/// Decodes a little-endian `f32` xyz stream.
pub fn decode_cloud(bytes: &[u8]) -> Result<Vec<[f32; 3]>, String> {
    if !bytes.len().is_multiple_of(12) {
        return Err(format!(
            "cloud length {} is not a multiple of 12 bytes",
            bytes.len()
        ));
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes([c[o], c[o + 1], c[o + 2], c[o + 3]]);
            [f(0), f(4), f(8)]
        })
        .collect())
}

pub fn encode_cloud(points: &[[f32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * 12);
    for p in points {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
    }
    out
}

/// Loads and validates one frame directory.
pub fn load_frame(path: impl AsRef<Path>) -> Result<LoadedFrame, SceneIoError> {
    let dir = path.as_ref();
    if !dir.is_dir() {
        return Err(SceneIoError::NotFound(dir.to_path_buf()));
    }
    let key = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();

    let cloud_path = dir.join(CLOUD_FILE);
    let bytes = fs::read(&cloud_path).map_err(|e| SceneIoError::io(&cloud_path, e))?;
    let points =
        decode_cloud(&bytes).map_err(|r| SceneIoError::malformed(cloud_path.display(), r))?;

    let pose = read_pose(dir)?;
    let ego_pose = RigidTransform::from_row_major(&pose.ego_pose).map_err(|e| {
        SceneIoError::CalibrationInvalid {
            camera_id: "<ego>".into(),
            reason: e.to_string(),
        }
    })?;

    let calib = read_calib(dir)?;
    let mut cameras = Vec::with_capacity(calib.cameras.len());
    for entry in calib.cameras {
        check_camera_id(&entry.camera_id)
            .map_err(|r| SceneIoError::malformed(dir.join(CALIB_FILE).display(), r))?;
        let intrinsics = Intrinsics::from_row_major(&entry.intrinsics).map_err(|reason| {
            SceneIoError::CalibrationInvalid {
                camera_id: entry.camera_id.clone(),
                reason,
            }
        })?;
        let extrinsics = RigidTransform::from_row_major(&entry.extrinsics).map_err(|e| {
            SceneIoError::CalibrationInvalid {
                camera_id: entry.camera_id.clone(),
                reason: e.to_string(),
            }
        })?;
        let img_path = dir.join(camera_image_file(&entry.camera_id));
        let image = image::open(&img_path)
            .map_err(|e| SceneIoError::malformed(img_path.display(), e.to_string()))?
            .to_rgb8();
        cameras.push(CameraView {
            camera_id: entry.camera_id,
            image,
            intrinsics,
            extrinsics,
        });
    }

    let frame = Frame {
        key,
        timestamp: pose.timestamp,
        points,
        cameras,
        ego_pose,
    };
    frame.validate()?;
    let mut warnings = Vec::new();
    if frame.points.is_empty() {
        warnings.push(LoadWarning::EmptyCloud);
    }
    Ok(LoadedFrame { frame, warnings })
}

/// Writes a frame directory in the native layout. The directory is created if
/// needed; existing files are overwritten.
pub fn save_frame(frame: &Frame, dir: impl AsRef<Path>) -> Result<PathBuf, SceneIoError> {
    let dir = dir.as_ref();
    frame.validate()?;
    fs::create_dir_all(dir).map_err(|e| SceneIoError::io(dir, e))?;

    let cloud_path = dir.join(CLOUD_FILE);
    let mut w = BufWriter::new(
        fs::File::create(&cloud_path).map_err(|e| SceneIoError::io(&cloud_path, e))?,
    );
    w.write_all(&encode_cloud(&frame.points))
        .and_then(|_| w.flush())
        .map_err(|e| SceneIoError::io(&cloud_path, e))?;

    let calib = CalibFile {
        cameras: frame
            .cameras
            .iter()
            .map(|c| CalibEntry {
                camera_id: c.camera_id.clone(),
                intrinsics: c.intrinsics.to_row_major(),
                extrinsics: c.extrinsics.to_row_major(),
            })
            .collect(),
    };
    write_json(&dir.join(CALIB_FILE), &calib)?;
    write_json(
        &dir.join(POSE_FILE),
        &PoseFile {
            timestamp: frame.timestamp,
            ego_pose: frame.ego_pose.to_row_major(),
        },
    )?;
    for cam in &frame.cameras {
        let p = dir.join(camera_image_file(&cam.camera_id));
        cam.image
            .save_with_format(&p, image::ImageFormat::Png)
            .map_err(|e| SceneIoError::malformed(p.display(), e.to_string()))?;
    }
    Ok(dir.to_path_buf())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SceneIoError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| SceneIoError::malformed(path.display(), e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| SceneIoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_frame() -> Frame {
        Frame {
            key: "000000".into(),
            timestamp: 0.0,
            points: vec![[0.0, 0.0, 2.0]],
            cameras: vec![CameraView {
                camera_id: "front".into(),
                image: RgbImage::from_pixel(32, 24, image::Rgb([10, 20, 30])),
                intrinsics: Intrinsics::from_focal(500.0, 500.0, 16.0, 12.0),
                extrinsics: RigidTransform::identity(),
            }],
            ego_pose: RigidTransform::identity(),
        }
    }

    #[test]
    fn minimal_frame_loads() {
        let dir = tempfile::tempdir().unwrap();
        let frame_dir = dir.path().join("000000");
        save_frame(&tiny_frame(), &frame_dir).unwrap();
        let loaded = load_frame(&frame_dir).unwrap();
        assert_eq!(loaded.frame.points.len(), 1);
        assert_eq!(loaded.frame.cameras.len(), 1);
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.frame, tiny_frame());
    }

    #[test]
    fn negative_focal_is_calibration_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let frame_dir = dir.path().join("000000");
        save_frame(&tiny_frame(), &frame_dir).unwrap();
        let mut calib = read_calib(&frame_dir).unwrap();
        calib.cameras[0].intrinsics[0] = -500.0;
        write_json(&frame_dir.join(CALIB_FILE), &calib).unwrap();
        assert!(matches!(
            load_frame(&frame_dir),
            Err(SceneIoError::CalibrationInvalid { .. })
        ));
    }

    #[test]
    fn empty_cloud_is_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let mut f = tiny_frame();
        f.points.clear();
        let frame_dir = dir.path().join("000000");
        save_frame(&f, &frame_dir).unwrap();
        let loaded = load_frame(&frame_dir).unwrap();
        assert_eq!(loaded.warnings, vec![LoadWarning::EmptyCloud]);
    }

    #[test]
    fn truncated_cloud_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let frame_dir = dir.path().join("000000");
        save_frame(&tiny_frame(), &frame_dir).unwrap();
        fs::write(frame_dir.join(CLOUD_FILE), [0u8; 13]).unwrap();
        assert!(matches!(
            load_frame(&frame_dir),
            Err(SceneIoError::MalformedFile { .. })
        ));
    }

    #[test]
    fn unknown_calib_key_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let frame_dir = dir.path().join("000000");
        save_frame(&tiny_frame(), &frame_dir).unwrap();
        let text = fs::read_to_string(frame_dir.join(CALIB_FILE)).unwrap();
        let text = text.replacen("\"camera_id\"", "\"bogus\": 1, \"camera_id\"", 1);
        fs::write(frame_dir.join(CALIB_FILE), text).unwrap();
        assert!(matches!(
            load_frame(&frame_dir),
            Err(SceneIoError::MalformedFile { .. })
        ));
    }
}
