mod common;

use nalgebra::Point3;
use sg4d::geometry::project_points;
use sg4d::scene_io::{load_frame, SequenceManifest, MANIFEST_FILE};
use sg4d::synth::{
    generate, write_scene, CameraSpec, GroundSpec, ObjectSpec, ScenarioSpec, ShapeKind, Waypoint,
    NO_INSTANCE,
};

fn world(frame: &sg4d::scene_io::Frame, i: usize) -> [f64; 3] {
    let p = frame.points[i].map(f64::from);
    let w = frame
        .ego_pose
        .transform_point(&Point3::new(p[0], p[1], p[2]));
    [w.x, w.y, w.z]
}

#[test]
fn unoccluded_points_project_inside_their_silhouette() {
    let s = common::scene(&common::four_boxes());
    for i in [0, 7, 19] {
        let (frame, truth) = (&s.frames[i], &s.truth.frames[i]);
        for view in &frame.cameras {
            let vt = &truth.views[&view.camera_id];
            let proj = project_points(&frame.points, view);
            let mut checked = 0;
            for p in &proj.points {
                let inst = truth.instance_ids[p.point_index];
                let Some((x, y)) = p.pixel() else { continue };
                if inst == NO_INSTANCE {
                    continue;
                }
                // Another object in front means the point may be hidden.
                let front = vt.id_at(x, y);
                if front != NO_INSTANCE && front != inst {
                    continue;
                }
                assert!(
                    vt.silhouette(inst).get(x, y),
                    "frame {i} {} point {}",
                    view.camera_id,
                    p.point_index
                );
                checked += 1;
            }
            assert!(checked > 500);
        }
    }
}

#[test]
fn truth_centroids_are_the_means_of_the_sampled_points() {
    let s = common::scene(&common::four_boxes());
    for (frame, truth) in s.frames.iter().zip(&s.truth.frames) {
        for o in &truth.objects {
            let idx = truth.points_of(o.instance_id);
            assert_eq!(idx.len(), o.point_count);
            let mut mean = [0.0; 3];
            for &k in &idx {
                let w = world(frame, k);
                (0..3).for_each(|a| mean[a] += w[a] / idx.len() as f64);
            }
            assert!(common::dist(mean, o.sampled_centroid) < 1e-3);
            // Boxes on the ground have no sampled bottom face, so only the
            // horizontal centre is unbiased.
            let (c, m) = (o.center, o.sampled_centroid);
            assert!(((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt() < 0.15);
        }
    }
}

#[test]
fn oracle_tracks_are_time_ordered() {
    let s = common::scene(&common::four_boxes());
    let tracks = s.truth.oracle_tracks();
    assert_eq!(tracks.len(), 4);
    for t in tracks {
        assert_eq!(t.samples.len(), 20);
        assert!(t.samples.windows(2).all(|w| w[1].1 > w[0].1));
    }
}

#[test]
fn empty_scene_is_only_ground() {
    let mut spec = common::four_boxes();
    spec.objects.clear();
    spec.frame_count = 2;
    let s = generate(&spec).unwrap();
    assert!(s.truth.objects.is_empty());
    for (f, t) in s.frames.iter().zip(&s.truth.frames) {
        assert!(!f.points.is_empty());
        assert!(t.instance_ids.iter().all(|&i| i == NO_INSTANCE));
        for k in 0..f.points.len() {
            assert!(world(f, k)[2].abs() < 0.1);
        }
    }
}

fn corridor(with_near: bool) -> ScenarioSpec {
    let cube = |name: &str, x: f64| ObjectSpec {
        name: name.into(),
        class: "cube".into(),
        shape: ShapeKind::Box,
        size: [1.0, 1.0, 1.0],
        density_pts_per_m2: 50.0,
        color: None,
        trajectory: vec![Waypoint {
            t: 0.0,
            position: [x, 0.0, 1.0],
        }],
    };
    let mut objects = vec![cube("far", 10.0)];
    if with_near {
        objects.push(cube("near", 5.0));
    }
    ScenarioSpec {
        frame_count: 1,
        rate_hz: 1.0,
        rng_seed: 1,
        noise: Default::default(),
        ground: Some(GroundSpec {
            density_pts_per_m2: 0.5,
            half_extent_m: 15.0,
        }),
        ego: vec![],
        cameras: vec![CameraSpec {
            camera_id: "front".into(),
            width: 160,
            height: 120,
            fx: 200.0,
            fy: 200.0,
            cx: 80.0,
            cy: 60.0,
            position: [0.0, 0.0, 1.0],
            look_at: [10.0, 0.0, 1.0],
            up: [0.0, 0.0, 1.0],
        }],
        objects,
    }
}

#[test]
fn occluded_pixels_leave_the_far_silhouette() {
    let alone = generate(&corridor(false)).unwrap();
    let both = generate(&corridor(true)).unwrap();
    let far_alone = alone.truth.frames[0].views["front"].silhouette(1);
    let view = &both.truth.frames[0].views["front"];
    let (far, near) = (view.silhouette(1), view.silhouette(2));
    assert!(!near.is_empty());
    assert_eq!(far.intersection_count(&near), 0);
    assert!(far.count() < far_alone.count());
    // Everything the far cube loses is covered by the near one.
    for y in 0..far.height() {
        for x in 0..far.width() {
            if far_alone.get(x, y) && !far.get(x, y) {
                assert!(near.get(x, y));
            }
        }
    }
}

#[test]
fn generation_is_byte_deterministic_on_disk() {
    let mut spec = common::four_boxes();
    spec.frame_count = 2;
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        write_scene(&generate(&spec).unwrap(), &dir.path().join(run)).unwrap();
    }
    for rel in [
        "frames/frame_0001/cloud.bin",
        "frames/frame_0001/cam_left.png",
        "gt/frame_0001/silhouettes.json",
    ] {
        let a = std::fs::read(dir.path().join("a").join(rel)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(rel)).unwrap();
        assert_eq!(a, b, "{rel}");
    }
}

#[test]
fn written_frames_load_back_bit_identically() {
    let mut spec = common::four_boxes();
    spec.frame_count = 1;
    let s = generate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let m = write_scene(&s, dir.path()).unwrap();
    let manifest = SequenceManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.frame_paths, m.frame_paths);
    let loaded = load_frame(manifest.frame_dir(0)).unwrap();
    assert_eq!(loaded.frame, s.frames[0]);
}
