use std::collections::BTreeMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use nalgebra::{Point3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::raycast::Solid;
use super::spec::{ScenarioSpec, ShapeKind};
use super::truth::{
    FrameTruth, GroundTruth, ObjectFrameTruth, ObjectTruth, ViewTruth, NO_INSTANCE, UNLABELED,
};
use super::SynthError;
use crate::geometry::project_points;
use crate::scene_io::{save_frame, CameraView, Frame, SequenceManifest, MANIFEST_FILE};

const PALETTE: [[u8; 3]; 8] = [
    [220, 40, 40],
    [40, 90, 220],
    [40, 180, 60],
    [230, 200, 40],
    [170, 60, 200],
    [40, 200, 200],
    [240, 130, 30],
    [200, 200, 200],
];
const GROUND_COLOR: [u8; 3] = [96, 96, 88];
const SKY_COLOR: [u8; 3] = [24, 24, 32];
/// Ground points closer than this to an object's footprint are not sampled.
const FOOTPRINT_MARGIN_M: f64 = 0.05;

/// An in-memory synthetic sequence.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub frames: Vec<Frame>,
    pub truth: GroundTruth,
}

pub fn frame_key(index: usize) -> String {
    format!("frame_{index:04}")
}

/// Generates every frame and its ground truth. Deterministic under
/// `spec.rng_seed`; frames are generated in parallel.
pub fn generate(spec: &ScenarioSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let mut classes: Vec<&str> = spec.objects.iter().map(|o| o.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    let class_id = |name: &str| classes.iter().position(|c| *c == name).unwrap() as u16;
    let objects: Vec<ObjectTruth> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(k, o)| ObjectTruth {
            instance_id: k as u16 + 1,
            name: o.name.clone(),
            class_name: o.class.clone(),
            class_id: class_id(&o.class),
            shape: o.shape,
            size: o.size,
        })
        .collect();
    let label_map = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (i as u16, c.to_string()))
        .collect();

    let results: Result<Vec<(Frame, FrameTruth)>, SynthError> = (0..spec.frame_count)
        .into_par_iter()
        .map(|i| generate_frame(spec, &objects, i))
        .collect();
    let (frames, truth_frames) = results?.into_iter().unzip();
    Ok(SynthScene {
        frames,
        truth: GroundTruth {
            objects,
            label_map,
            frames: truth_frames,
        },
    })
}

/// Writes the scene in the native sequence layout plus the `gt/` subtree and
/// returns the manifest.
pub fn write_scene(scene: &SynthScene, dir: &Path) -> Result<SequenceManifest, SynthError> {
    let mut paths = Vec::with_capacity(scene.frames.len());
    for f in &scene.frames {
        let rel = format!("frames/{}", f.key);
        save_frame(f, dir.join(&rel)).map_err(|e| SynthError::Io(e.to_string()))?;
        paths.push(rel);
    }
    let mut manifest = SequenceManifest::new(paths);
    manifest
        .save(dir.join(MANIFEST_FILE))
        .map_err(|e| SynthError::Io(e.to_string()))?;
    manifest.base_dir = dir.to_path_buf();
    scene.truth.write(dir)?;
    Ok(manifest)
}

fn solids_at(spec: &ScenarioSpec, t: f64) -> Vec<Solid> {
    spec.objects
        .iter()
        .enumerate()
        .map(|(k, o)| Solid {
            instance_id: k as u16 + 1,
            kind: o.shape,
            center: o.position_at(t),
            half: o.half_size(),
            color: o.color.unwrap_or(PALETTE[k % PALETTE.len()]),
        })
        .collect()
}

fn sample_surface(solid: &Solid, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let h = solid.half;
    match solid.kind {
        ShapeKind::Box => {
            // Face pairs weighted by area: normal along x, y, z.
            let areas = [h.y * h.z, h.x * h.z, h.x * h.y];
            let total: f64 = areas.iter().sum();
            (0..n)
                .map(|_| {
                    let mut pick = rng.random::<f64>() * total;
                    let mut axis = 2;
                    for (a, area) in areas.iter().enumerate() {
                        if pick < *area {
                            axis = a;
                            break;
                        }
                        pick -= area;
                    }
                    let mut p = Vector3::zeros();
                    for a in 0..3 {
                        p[a] = if a == axis {
                            if rng.random::<bool>() {
                                h[a]
                            } else {
                                -h[a]
                            }
                        } else {
                            rng.random_range(-h[a]..h[a])
                        };
                    }
                    solid.center + p
                })
                .collect()
        }
        ShapeKind::Sphere => (0..n)
            .map(|_| {
                let v: Vector3<f64> = Vector3::new(
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                    StandardNormal.sample(rng),
                );
                solid.center + v.normalize() * h.x
            })
            .collect(),
    }
}

fn generate_frame(
    spec: &ScenarioSpec,
    objects: &[ObjectTruth],
    index: usize,
) -> Result<(Frame, FrameTruth), SynthError> {
    let t = spec.timestamp(index);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(index as u64);
    let ego = spec.ego_pose_at(t);
    let solids = solids_at(spec, t);
    let jitter = (spec.noise.point_sigma_m > 0.0)
        .then(|| Normal::new(0.0, spec.noise.point_sigma_m).expect("sigma validated"));
    let keep = |rng: &mut ChaCha8Rng| {
        spec.noise.dropout == 0.0 || rng.random::<f64>() >= spec.noise.dropout
    };

    let mut world: Vec<(Vector3<f64>, u16)> = Vec::new();
    for (o, solid) in spec.objects.iter().zip(&solids) {
        let n = (o.density_pts_per_m2 * o.surface_area()).round() as usize;
        for p in sample_surface(solid, n, &mut rng) {
            if keep(&mut rng) {
                world.push((p, solid.instance_id));
            }
        }
    }
    if let Some(g) = &spec.ground {
        let side = 2.0 * g.half_extent_m;
        let n = (g.density_pts_per_m2 * side * side).round() as usize;
        for _ in 0..n {
            let x = rng.random_range(-g.half_extent_m..g.half_extent_m);
            let y = rng.random_range(-g.half_extent_m..g.half_extent_m);
            let under = solids.iter().any(|s| {
                s.center.z - s.half.z <= FOOTPRINT_MARGIN_M && s.covers_xy(x, y, FOOTPRINT_MARGIN_M)
            });
            if !under && keep(&mut rng) {
                world.push((Vector3::new(x, y, 0.0), NO_INSTANCE));
            }
        }
    }
    if let Some(j) = jitter {
        for (p, _) in &mut world {
            *p += Vector3::new(j.sample(&mut rng), j.sample(&mut rng), j.sample(&mut rng));
        }
    }
    world.shuffle(&mut rng);

    let to_sensor = ego.inverse();
    let points: Vec<[f32; 3]> = world
        .iter()
        .map(|(p, _)| {
            let s = to_sensor.transform_point(&Point3::from(*p));
            [s.x as f32, s.y as f32, s.z as f32]
        })
        .collect();
    let instance_ids: Vec<u16> = world.iter().map(|(_, id)| *id).collect();
    let class_ids: Vec<u16> = instance_ids
        .iter()
        .map(|&id| match id {
            NO_INSTANCE => UNLABELED,
            id => objects[id as usize - 1].class_id,
        })
        .collect();

    let mut cameras = Vec::with_capacity(spec.cameras.len());
    let mut views = BTreeMap::new();
    for cs in &spec.cameras {
        let extrinsics = cs.extrinsics()?;
        let intrinsics = cs.intrinsics();
        let (image, ids) = render(spec, &solids, cs, &ego.compose(&extrinsics.inverse()));
        let view = CameraView {
            camera_id: cs.camera_id.clone(),
            image,
            intrinsics,
            extrinsics,
        };
        let silhouettes = silhouettes(&view, &ids, &points, &instance_ids, &world, &solids, &ego);
        views.insert(
            cs.camera_id.clone(),
            ViewTruth {
                width: cs.width,
                height: cs.height,
                ids,
                silhouettes,
            },
        );
        cameras.push(view);
    }

    let object_truth = solids
        .iter()
        .map(|s| {
            let mine: Vec<&Vector3<f64>> = world
                .iter()
                .filter(|(_, id)| *id == s.instance_id)
                .map(|(p, _)| p)
                .collect();
            let center: [f64; 3] = s.center.into();
            if mine.is_empty() {
                return ObjectFrameTruth {
                    instance_id: s.instance_id,
                    center,
                    sampled_centroid: center,
                    sampled_min: center,
                    sampled_max: center,
                    point_count: 0,
                };
            }
            let mut lo = [f64::INFINITY; 3];
            let mut hi = [f64::NEG_INFINITY; 3];
            let mut sum = Vector3::zeros();
            for p in &mine {
                sum += **p;
                for a in 0..3 {
                    lo[a] = lo[a].min(p[a]);
                    hi[a] = hi[a].max(p[a]);
                }
            }
            ObjectFrameTruth {
                instance_id: s.instance_id,
                center,
                sampled_centroid: (sum / mine.len() as f64).into(),
                sampled_min: lo,
                sampled_max: hi,
                point_count: mine.len(),
            }
        })
        .collect();

    let key = frame_key(index);
    Ok((
        Frame {
            key: key.clone(),
            timestamp: t,
            points,
            cameras,
            ego_pose: ego,
        },
        FrameTruth {
            key,
            timestamp: t,
            instance_ids,
            class_ids,
            objects: object_truth,
            views,
        },
    ))
}

/// Ray-casts every pixel centre; returns the shaded image and the front-most
/// instance id per pixel.
fn render(
    spec: &ScenarioSpec,
    solids: &[Solid],
    cs: &super::spec::CameraSpec,
    camera_to_world: &crate::transform::RigidTransform,
) -> (RgbImage, Vec<u16>) {
    let origin = camera_to_world.translation();
    let rot = camera_to_world.rotation();
    let light = Vector3::new(0.3, 0.5, 1.0).normalize();
    let mut image = RgbImage::new(cs.width, cs.height);
    let mut ids = vec![NO_INSTANCE; (cs.width * cs.height) as usize];
    for r in 0..cs.height {
        for c in 0..cs.width {
            let x = (c as f64 + 0.5 - cs.cx) / cs.fx;
            let y = (r as f64 + 0.5 - cs.cy) / cs.fy;
            let dir = rot * Vector3::new(x, y, 1.0);
            let mut best: Option<(f64, Vector3<f64>, &Solid)> = None;
            for s in solids {
                if let Some((t, n)) = s.hit(&origin, &dir) {
                    if best.as_ref().is_none_or(|b| t < b.0) {
                        best = Some((t, n, s));
                    }
                }
            }
            let ground_t = spec.ground.as_ref().and_then(|g| {
                if dir.z >= 0.0 {
                    return None;
                }
                let t = -origin.z / dir.z;
                let p = origin + dir * t;
                (t > 0.0 && p.x.abs() <= g.half_extent_m && p.y.abs() <= g.half_extent_m)
                    .then_some(t)
            });
            let color = match (best, ground_t) {
                (Some((t, n, s)), g) if g.is_none_or(|gt| t <= gt) => {
                    ids[(r * cs.width + c) as usize] = s.instance_id;
                    let shade = 0.55 + 0.45 * n.dot(&light).max(0.0);
                    s.color.map(|v| (v as f64 * shade).round() as u8)
                }
                (_, Some(_)) => GROUND_COLOR,
                _ => SKY_COLOR,
            };
            image.put_pixel(c, r, Rgb(color));
        }
    }
    (image, ids)
}

/// Per-instance visible pixels: the instance's own id-buffer pixels plus the
/// pixels of its points that no other solid hides from the camera.
fn silhouettes(
    view: &CameraView,
    ids: &[u16],
    points: &[[f32; 3]],
    instance_ids: &[u16],
    world: &[(Vector3<f64>, u16)],
    solids: &[Solid],
    ego: &crate::transform::RigidTransform,
) -> BTreeMap<u16, Vec<u32>> {
    let mut out: BTreeMap<u16, Vec<u32>> = BTreeMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id != NO_INSTANCE {
            out.entry(id).or_default().push(i as u32);
        }
    }
    let cam_center = ego.compose(&view.extrinsics.inverse()).translation();
    let proj = project_points(points, view);
    for (i, pp) in proj.points.iter().enumerate() {
        let id = instance_ids[i];
        if id == NO_INSTANCE {
            continue;
        }
        let Some((x, y)) = pp.pixel() else { continue };
        let p = world[i].0;
        let hidden = solids
            .iter()
            .any(|s| s.instance_id != id && s.blocks_segment(&cam_center, &p));
        if !hidden {
            out.entry(id).or_default().push(y * view.width() + x);
        }
    }
    for px in out.values_mut() {
        px.sort_unstable();
        px.dedup();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::spec::{CameraSpec, NoiseSpec, ObjectSpec, Waypoint};

    pub(crate) fn cube_spec() -> ScenarioSpec {
        ScenarioSpec {
            frame_count: 2,
            rate_hz: 1.0,
            rng_seed: 3,
            noise: NoiseSpec::default(),
            ground: None,
            ego: vec![],
            cameras: vec![CameraSpec {
                camera_id: "front".into(),
                width: 128,
                height: 96,
                fx: 100.0,
                fy: 100.0,
                cx: 64.0,
                cy: 48.0,
                position: [0.0, 0.0, 0.5],
                look_at: [10.0, 0.0, 0.5],
                up: [0.0, 0.0, 1.0],
            }],
            objects: vec![ObjectSpec {
                name: "cube".into(),
                class: "box".into(),
                shape: ShapeKind::Box,
                size: [1.0, 1.0, 1.0],
                density_pts_per_m2: 100.0,
                color: None,
                trajectory: vec![Waypoint {
                    t: 0.0,
                    position: [6.0, 0.0, 0.5],
                }],
            }],
        }
    }

    #[test]
    fn cube_point_count_and_extent() {
        let scene = generate(&cube_spec()).unwrap();
        let f = &scene.frames[0];
        assert_eq!(f.points.len(), 600);
        let o = &scene.truth.frames[0].objects[0];
        for a in 0..3 {
            assert!((o.sampled_max[a] - o.sampled_min[a] - 1.0).abs() <= 0.05);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&cube_spec()).unwrap();
        let b = generate(&cube_spec()).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn visible_cube_has_silhouette_at_image_centre() {
        let scene = generate(&cube_spec()).unwrap();
        let v = &scene.truth.frames[0].views["front"];
        assert_eq!(v.id_at(64, 48), 1);
        assert!(v.silhouette(1).get(64, 48));
        assert!(!v.silhouette(1).get(0, 0));
    }
}
