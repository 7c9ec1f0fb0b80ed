use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::scene_io::Intrinsics;
use crate::transform::RigidTransform;

/// Declarative description of a synthetic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub frame_count: usize,
    pub rate_hz: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub ground: Option<GroundSpec>,
    /// Ego (sensor-to-world) waypoints; empty means the identity pose.
    #[serde(default)]
    pub ego: Vec<EgoWaypoint>,
    pub cameras: Vec<CameraSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Isotropic Gaussian jitter of every sampled point, meters.
    pub point_sigma_m: f64,
    /// Fraction of sampled points removed at random.
    pub dropout: f64,
}

/// Flat ground at world `z = 0` over `[-half_extent_m, half_extent_m]²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    pub density_pts_per_m2: f64,
    pub half_extent_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoWaypoint {
    pub t: f64,
    pub position: [f64; 3],
    /// Heading about world z, radians.
    #[serde(default)]
    pub yaw: f64,
}

/// Pinhole camera rigidly mounted on the sensor rig. `position`, `look_at`
/// and `up` are in the sensor frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
}

fn default_up() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Box,
    Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub class: String,
    pub shape: ShapeKind,
    /// Box edge lengths; a sphere uses `size[0]` as its diameter.
    pub size: [f64; 3],
    pub density_pts_per_m2: f64,
    #[serde(default)]
    pub color: Option<[u8; 3]>,
    /// World-frame centre waypoints, linearly interpolated and held constant
    /// outside their time range.
    pub trajectory: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 3],
}

/// Piecewise-linear interpolation over time-sorted samples.
fn interpolate<const N: usize>(samples: &[(f64, [f64; N])], t: f64) -> [f64; N] {
    let first = samples[0];
    if t <= first.0 {
        return first.1;
    }
    for w in samples.windows(2) {
        let ((t0, a), (t1, b)) = (w[0], w[1]);
        if t <= t1 {
            let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
            let mut out = [0.0; N];
            for i in 0..N {
                out[i] = a[i] + s * (b[i] - a[i]);
            }
            return out;
        }
    }
    samples[samples.len() - 1].1
}

impl ObjectSpec {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        let samples: Vec<(f64, [f64; 3])> =
            self.trajectory.iter().map(|w| (w.t, w.position)).collect();
        Vector3::from(interpolate(&samples, t))
    }

    pub fn half_size(&self) -> Vector3<f64> {
        match self.shape {
            ShapeKind::Box => Vector3::from(self.size) * 0.5,
            ShapeKind::Sphere => Vector3::repeat(self.size[0] * 0.5),
        }
    }

    pub fn surface_area(&self) -> f64 {
        match self.shape {
            ShapeKind::Box => {
                let [a, b, c] = self.size;
                2.0 * (a * b + b * c + a * c)
            }
            ShapeKind::Sphere => std::f64::consts::PI * self.size[0] * self.size[0],
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_focal(self.fx, self.fy, self.cx, self.cy)
    }

    /// Sensor-to-camera transform with camera axes x right, y down, z forward.
    pub fn extrinsics(&self) -> Result<RigidTransform, SynthError> {
        let pos = Vector3::from(self.position);
        let f = Vector3::from(self.look_at) - pos;
        let up = Vector3::from(self.up);
        let r = f.cross(&up);
        if f.norm() < 1e-9 || r.norm() < 1e-9 {
            return Err(SynthError::SpecInvalid(format!(
                "camera {}: look_at must differ from position and not be parallel to up",
                self.camera_id
            )));
        }
        let f = f.normalize();
        let r = r.normalize();
        let d = f.cross(&r);
        let rot = Matrix3::from_rows(&[r.transpose(), d.transpose(), f.transpose()]);
        let rot = Rotation3::from_matrix_unchecked(rot);
        Ok(RigidTransform::from_parts(rot, -(rot * pos)))
    }
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| SynthError::SpecInvalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn timestamp(&self, frame: usize) -> f64 {
        frame as f64 / self.rate_hz
    }

    pub fn ego_pose_at(&self, t: f64) -> RigidTransform {
        if self.ego.is_empty() {
            return RigidTransform::identity();
        }
        let samples: Vec<(f64, [f64; 4])> = self
            .ego
            .iter()
            .map(|w| (w.t, [w.position[0], w.position[1], w.position[2], w.yaw]))
            .collect();
        let [x, y, z, yaw] = interpolate(&samples, t);
        RigidTransform::from_yaw_translation(yaw, Vector3::new(x, y, z))
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::SpecInvalid(m));
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return bad("rate_hz must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.noise.dropout) {
            return bad("noise.dropout must lie in [0, 1)".into());
        }
        if !(self.noise.point_sigma_m >= 0.0) {
            return bad("noise.point_sigma_m must be >= 0".into());
        }
        if let Some(g) = &self.ground {
            if !(g.density_pts_per_m2 > 0.0 && g.half_extent_m > 0.0) {
                return bad("ground density and extent must be > 0".into());
            }
        }
        if self.cameras.is_empty() {
            return bad("at least one camera is required".into());
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.cameras {
            if !ids.insert(&c.camera_id) {
                return bad(format!("duplicate camera_id {}", c.camera_id));
            }
            if c.width < 16 || c.height < 16 || !(c.fx > 0.0 && c.fy > 0.0) {
                return bad(format!(
                    "camera {}: need width, height >= 16 and positive focal lengths",
                    c.camera_id
                ));
            }
            c.extrinsics()?;
        }
        if self.objects.len() >= u16::MAX as usize {
            return bad("too many objects".into());
        }
        for o in &self.objects {
            if !(o.density_pts_per_m2 > 0.0) {
                return bad(format!("object {}: density must be > 0", o.name));
            }
            if o.size.iter().any(|s| !(*s > 0.0)) {
                return bad(format!("object {}: sizes must be > 0", o.name));
            }
            if o.trajectory.is_empty() || o.trajectory.windows(2).any(|w| w[1].t < w[0].t) {
                return bad(format!(
                    "object {}: trajectory must be non-empty and time-sorted",
                    o.name
                ));
            }
        }
        if self.ego.windows(2).any(|w| w[1].t < w[0].t) {
            return bad("ego waypoints must be time-sorted".into());
        }
        Ok(())
    }
}
