use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::Graph4dError;
use crate::scene_io::Frame;
use crate::transform::RigidTransform;

/// Where sensor-to-world poses come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseSource {
    /// The `ego_pose` stored with each frame.
    Manifest,
    /// An external trajectory file in TUM format.
    Trajectory,
    Identity,
}

/// Timestamped poses, sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, RigidTransform)>,
    /// Largest accepted distance between a query time and a sample time.
    tolerance_s: f64,
}

impl Trajectory {
    pub const DEFAULT_TOLERANCE_S: f64 = 1e-3;

    /// Parses `t x y z qx qy qz qw` lines. Blank lines and `#` comments are
    /// skipped; quaternions are normalized.
    pub fn parse_tum(text: &str) -> Result<Self, String> {
        let mut samples = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| format!("line {}: {e}", n + 1))?;
            if v.len() != 8 {
                return Err(format!(
                    "line {}: expected 8 values, found {}",
                    n + 1,
                    v.len()
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(format!("line {}: non-finite value", n + 1));
            }
            let q = Quaternion::new(v[7], v[4], v[5], v[6]);
            if q.norm() < 1e-12 {
                return Err(format!("line {}: zero quaternion", n + 1));
            }
            let rot = UnitQuaternion::from_quaternion(q).to_rotation_matrix();
            samples.push((
                v[0],
                RigidTransform::from_parts(rot, Vector3::new(v[1], v[2], v[3])),
            ));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        if samples.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err("duplicate timestamps".into());
        }
        Ok(Self {
            samples,
            tolerance_s: Self::DEFAULT_TOLERANCE_S,
        })
    }

    pub fn load_tum(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse_tum(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn with_tolerance(mut self, tolerance_s: f64) -> Self {
        self.tolerance_s = tolerance_s;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The sample nearest to `t`, if within tolerance. No interpolation.
    pub fn at(&self, t: f64) -> Option<&RigidTransform> {
        let i = self.samples.partition_point(|s| s.0 < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|k| self.samples.get(k))
            .map(|s| ((s.0 - t).abs(), &s.1))
            .filter(|(d, _)| *d <= self.tolerance_s)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PoseProvider {
    Manifest,
    Trajectory(Trajectory),
    Identity,
}

impl PoseProvider {
    pub fn source(&self) -> PoseSource {
        match self {
            PoseProvider::Manifest => PoseSource::Manifest,
            PoseProvider::Trajectory(_) => PoseSource::Trajectory,
            PoseProvider::Identity => PoseSource::Identity,
        }
    }

    /// Sensor-to-world pose at the frame's timestamp.
    pub fn pose(&self, frame: &Frame) -> Result<RigidTransform, Graph4dError> {
        match self {
            PoseProvider::Manifest => Ok(frame.ego_pose),
            PoseProvider::Identity => Ok(RigidTransform::identity()),
            PoseProvider::Trajectory(tr) => {
                tr.at(frame.timestamp)
                    .copied()
                    .ok_or(Graph4dError::MissingEgoPose {
                        timestamp: frame.timestamp,
                    })
            }
        }
    }
}

/// World-frame copy of the frame's cloud.
pub fn anchor_world(frame: &Frame, provider: &PoseProvider) -> Result<Vec<[f64; 3]>, Graph4dError> {
    let pose = provider.pose(frame)?;
    Ok((0..frame.points.len())
        .map(|i| {
            let p = pose.transform_point(&frame.point(i));
            [p.x, p.y, p.z]
        })
        .collect())
}
