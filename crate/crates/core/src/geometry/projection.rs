use nalgebra::Point3;

use crate::scene_io::CameraView;

/// Points closer than this to the camera plane are never visible.
pub const NEAR_PLANE_M: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub point_index: usize,
    /// Continuous pixel coordinates; pixel `(c, r)` covers `[c, c+1) x [r, r+1)`.
    /// `NaN` when the point is behind the near plane.
    pub u: f64,
    pub v: f64,
    /// Camera-frame z in meters.
    pub depth: f64,
    pub visible: bool,
}

impl ProjectedPoint {
    /// Pixel containing the projection, for visible points.
    #[inline]
    pub fn pixel(&self) -> Option<(u32, u32)> {
        self.visible
            .then(|| (self.u.floor() as u32, self.v.floor() as u32))
    }
}

/// Projections of a whole cloud into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraProjection {
    pub camera_id: String,
    pub width: u32,
    pub height: u32,
    pub points: Vec<ProjectedPoint>,
}

/// Projects sensor-frame points through the camera's extrinsics and `K`.
/// No point is dropped; points behind the near plane or outside the image are
/// marked invisible.
pub fn project_points(points: &[[f32; 3]], view: &CameraView) -> CameraProjection {
    let r = view.extrinsics.rotation();
    let t = view.extrinsics.translation();
    let k = view.intrinsics.matrix();
    let (w, h) = (view.width() as f64, view.height() as f64);
    let projected = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let ps = Point3::new(p[0] as f64, p[1] as f64, p[2] as f64);
            let pc = r * ps.coords + t;
            project_camera_point(i, pc.x, pc.y, pc.z, k, w, h)
        })
        .collect();
    CameraProjection {
        camera_id: view.camera_id.clone(),
        width: view.width(),
        height: view.height(),
        points: projected,
    }
}

#[inline]
pub(crate) fn project_camera_point(
    index: usize,
    x: f64,
    y: f64,
    z: f64,
    k: &nalgebra::Matrix3<f64>,
    w: f64,
    h: f64,
) -> ProjectedPoint {
    if z <= NEAR_PLANE_M {
        return ProjectedPoint {
            point_index: index,
            u: f64::NAN,
            v: f64::NAN,
            depth: z,
            visible: false,
        };
    }
    let (xn, yn) = (x / z, y / z);
    let u = k[(0, 0)] * xn + k[(0, 1)] * yn + k[(0, 2)];
    let v = k[(1, 1)] * yn + k[(1, 2)];
    let visible = u >= 0.0 && u < w && v >= 0.0 && v < h;
    ProjectedPoint {
        point_index: index,
        u,
        v,
        depth: z,
        visible,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_io::Intrinsics;
    use crate::transform::RigidTransform;
    use image::RgbImage;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn view(extrinsics: RigidTransform) -> CameraView {
        CameraView {
            camera_id: "cam".into(),
            image: RgbImage::new(640, 480),
            intrinsics: Intrinsics::from_focal(500.0, 500.0, 320.0, 240.0),
            extrinsics,
        }
    }

    #[test]
    fn principal_axis_point_hits_principal_point() {
        let p = project_points(&[[0.0, 0.0, 2.0]], &view(RigidTransform::identity()));
        let q = p.points[0];
        assert_eq!((q.u, q.v, q.depth, q.visible), (320.0, 240.0, 2.0, true));
    }

    #[test]
    fn behind_camera_is_invisible() {
        let p = project_points(&[[0.0, 0.0, -1.0]], &view(RigidTransform::identity()));
        assert!(!p.points[0].visible);
        assert_eq!(p.points.len(), 1);
    }

    #[test]
    fn off_axis_point_matches_hand_computation() {
        let p = project_points(&[[0.4, 0.2, 2.0]], &view(RigidTransform::identity()));
        let q = p.points[0];
        // u = 500*0.4/2 + 320, v = 500*0.2/2 + 240
        assert!((q.u - 420.0).abs() < 1e-4 && (q.v - 290.0).abs() < 1e-4);
    }

    #[test]
    fn outside_image_is_invisible() {
        let p = project_points(&[[10.0, 0.0, 2.0]], &view(RigidTransform::identity()));
        assert!(!p.points[0].visible);
    }

    proptest! {
        #[test]
        fn projection_is_equivariant_under_rigid_motion(
            yaw in -3.0f64..3.0, tx in -2.0f64..2.0, ty in -2.0f64..2.0, tz in -2.0f64..2.0,
            px in -1.0f32..1.0, py in -1.0f32..1.0, pz in 1.0f32..5.0,
        ) {
            // Extrinsics E' = E ∘ T and points p' = T⁻¹ p give identical pixels.
            let tform = RigidTransform::from_yaw_translation(yaw, Vector3::new(tx, ty, tz));
            let base = view(RigidTransform::identity());
            let moved = view(RigidTransform::identity().compose(&tform));
            let p = Point3::new(px as f64, py as f64, pz as f64);
            let q = tform.inverse().transform_point(&p);
            let a = project_points(&[[px, py, pz]], &base).points[0];
            // Feed the moved point in f64 precision through the camera-point path.
            let pc = moved.extrinsics.rotation() * q.coords + moved.extrinsics.translation();
            let b = project_camera_point(0, pc.x, pc.y, pc.z, moved.intrinsics.matrix(), 640.0, 480.0);
            prop_assert!((a.u - b.u).abs() < 1e-6 && (a.v - b.v).abs() < 1e-6);
        }
    }
}
