//! Per-frame refinement loop: cluster the unmapped points, segment the
//! proposals in every camera, turn the matched masks into token sets and
//! dissolve implausible objects back into the unmapped set.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{hdbscan_cluster, sample_proposals, ClusterParams};
use crate::geometry::{
    assign_points_to_masks, group_masks_across_views, project_points, CameraProjection,
    GeometryError, MaskAssignment, MaskGroup,
};
use crate::scene_io::Frame;
use crate::seg::{MaskSet, SegBackend, SegError, SegRequest};
use crate::step::{
    assemble_step, encode_patches, encode_shape, PatchStore, StepError, StepProvenance,
    StepTokenSet,
};
use crate::transform::RigidTransform;

pub const RULE_MAX_EXTENT: &str = "max_extent";
pub const RULE_MAX_ASPECT: &str = "max_aspect";
pub const RULE_MAX_SPEED: &str = "max_speed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlausibilityRules {
    pub max_extent_m: f64,
    pub max_aspect: f64,
    pub max_speed_mps: f64,
    pub extent_enabled: bool,
    pub aspect_enabled: bool,
    pub speed_enabled: bool,
}

impl Default for PlausibilityRules {
    fn default() -> Self {
        Self {
            max_extent_m: 30.0,
            max_aspect: 50.0,
            max_speed_mps: 60.0,
            extent_enabled: true,
            aspect_enabled: true,
            speed_enabled: true,
        }
    }
}

impl PlausibilityRules {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("max_extent_m", self.max_extent_m),
            ("max_aspect", self.max_aspect),
            ("max_speed_mps", self.max_speed_mps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("refinement.rules.{name} must be a positive number"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub detail: String,
}

/// Applies the enabled rules in the order extent, aspect, speed and reports
/// the first one that fails. The speed rule needs `history` with an earlier
/// timestamp.
pub fn check_plausibility(
    token: &StepTokenSet,
    history: Option<&StepTokenSet>,
    rules: &PlausibilityRules,
) -> Result<(), Violation> {
    let axes = token.shape.axes();
    if rules.extent_enabled {
        for (name, a) in ["x", "y", "z"].iter().zip(&axes) {
            if a.extent() > rules.max_extent_m {
                return Err(Violation {
                    rule_id: RULE_MAX_EXTENT.into(),
                    detail: format!(
                        "{name} extent {:.2} m > {:.2} m",
                        a.extent(),
                        rules.max_extent_m
                    ),
                });
            }
        }
    }
    if rules.aspect_enabled {
        let stds: Vec<f64> = axes.iter().map(|a| a.std).filter(|&s| s > 0.0).collect();
        if stds.len() >= 2 {
            let hi = stds.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = stds.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi / lo > rules.max_aspect {
                return Err(Violation {
                    rule_id: RULE_MAX_ASPECT.into(),
                    detail: format!("sigma ratio {:.1} > {:.1}", hi / lo, rules.max_aspect),
                });
            }
        }
    }
    if rules.speed_enabled {
        if let Some(prev) = history {
            let dt = token.timestamp - prev.timestamp;
            if dt > 0.0 {
                let d = token.centroid.distance(&prev.centroid);
                let speed = d / dt;
                if speed > rules.max_speed_mps {
                    return Err(Violation {
                        rule_id: RULE_MAX_SPEED.into(),
                        detail: format!(
                            "moved {d:.2} m in {dt:.2} s ({speed:.1} m/s > {:.1} m/s)",
                            rules.max_speed_mps
                        ),
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineParams {
    pub n_iter: usize,
    pub h_hop: usize,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            n_iter: 1,
            h_hop: 1,
        }
    }
}

/// Everything `refine_frame` delegates to.
pub struct RefineDeps<'a> {
    pub clustering: &'a ClusterParams,
    pub backend: &'a dyn SegBackend,
    /// Cross-view match gate on `1 - IoU`.
    pub crossview_gate: f64,
    pub background: [u8; 3],
    /// Sensor to world; token geometry is encoded in the world frame.
    pub sensor_to_world: &'a RigidTransform,
    /// Latest steps of live tracks, consulted by the speed rule.
    pub history: &'a [StepTokenSet],
    /// A history step further than this from a token is not its predecessor.
    pub history_radius_m: f64,
}

/// An object dissolved by a plausibility rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub object_id: u64,
    pub rule_id: String,
    pub detail: String,
    pub iteration: usize,
    pub centroid: [f64; 3],
    pub extents: [f64; 3],
    pub point_count: usize,
}

/// Wall-clock time per stage, summed over iterations.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub project_ms: f64,
    pub cluster_ms: f64,
    pub segment_ms: f64,
    pub assign_ms: f64,
    pub encode_ms: f64,
    pub check_ms: f64,
}

/// Result of refining one frame. Object ids of `accepted` are frame-local
/// (1, 2, ... in creation order); temporal association replaces them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    /// Sorted indices of points owned by no accepted object.
    pub unmapped: Vec<usize>,
    pub accepted: Vec<StepTokenSet>,
    /// Iterations actually run.
    pub iteration: usize,
    pub rejections: Vec<Rejection>,
    pub timings: StageTimings,
}

impl FrameState {
    /// Checks that accepted point sets and `unmapped` partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<(), String> {
        let mut owner = vec![false; n];
        let sets = self
            .accepted
            .iter()
            .map(|s| s.point_indices.as_slice())
            .chain(std::iter::once(self.unmapped.as_slice()));
        for set in sets {
            for &i in set {
                match owner.get_mut(i) {
                    None => return Err(format!("point {i} is out of range")),
                    Some(true) => return Err(format!("point {i} is owned twice")),
                    Some(o) => *o = true,
                }
            }
        }
        match owner.iter().position(|o| !o) {
            Some(i) => Err(format!("point {i} was lost")),
            None => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error(transparent)]
    Segmentation(#[from] SegError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error("invalid refinement parameters: {0}")]
    InvalidParams(String),
}

/// Runs the refinement loop on one frame.
///
/// New patches are added to `store` only when the whole frame succeeds; on
/// error nothing observable has changed.
pub fn refine_frame(
    frame: &Frame,
    params: RefineParams,
    deps: &RefineDeps<'_>,
    rules: &PlausibilityRules,
    store: &mut PatchStore,
) -> Result<FrameState, RefineError> {
    if params.n_iter < 1 {
        return Err(RefineError::InvalidParams("n_iter must be >= 1".into()));
    }
    let mut timings = StageTimings::default();
    let clock = Instant::now();
    let projections: Vec<CameraProjection> = frame
        .cameras
        .par_iter()
        .map(|c| project_points(&frame.points, c))
        .collect();
    timings.project_ms += ms(clock);

    let mut staged = PatchStore::new();
    let mut state = FrameState {
        unmapped: (0..frame.points.len()).collect(),
        accepted: Vec::new(),
        iteration: 0,
        rejections: Vec::new(),
        timings: StageTimings::default(),
    };
    let mut next_local_id = 1u64;

    while state.iteration < params.n_iter && !state.unmapped.is_empty() {
        let iteration = state.iteration;
        state.iteration += 1;

        let clock = Instant::now();
        let coords: Vec<[f64; 3]> = state
            .unmapped
            .iter()
            .map(|&i| frame.points[i].map(f64::from))
            .collect();
        let clusters = hdbscan_cluster(&coords, deps.clustering);
        let proposal_params = ClusterParams {
            rng_seed: deps.clustering.rng_seed.wrapping_add(iteration as u64),
            ..deps.clustering.clone()
        };
        let proposals: Vec<Vec<usize>> = sample_proposals(&clusters, &proposal_params)
            .proposals
            .into_iter()
            .map(|p| p.into_iter().map(|k| state.unmapped[k]).collect())
            .collect();
        timings.cluster_ms += ms(clock);
        if proposals.is_empty() {
            break;
        }

        let clock = Instant::now();
        let mask_sets = segment_all(frame, &projections, &proposals, deps.backend)?;
        timings.segment_ms += ms(clock);

        let clock = Instant::now();
        let mut per_view: BTreeMap<String, MaskAssignment> = BTreeMap::new();
        for set in &mask_sets {
            let proj = projections
                .iter()
                .find(|p| p.camera_id == set.camera_id)
                .expect("mask sets are built per projected camera");
            per_view.insert(
                set.camera_id.clone(),
                assign_points_to_masks(
                    std::slice::from_ref(proj),
                    std::slice::from_ref(set),
                    &state.unmapped,
                )?,
            );
        }
        let groups = group_masks_across_views(&per_view, deps.crossview_gate);
        let joint = assign_points_to_masks(&projections, &mask_sets, &state.unmapped)?;
        timings.assign_ms += ms(clock);

        let clock = Instant::now();
        let mut taken = Vec::new();
        for group in &groups {
            let mut points: Vec<usize> = group
                .members
                .iter()
                .flat_map(|k| joint.per_mask.get(k).into_iter().flatten().copied())
                .collect();
            points.sort_unstable();
            points.dedup();
            if points.is_empty() {
                continue;
            }
            let step = encode_group(
                frame,
                group,
                &mask_sets,
                &points,
                next_local_id,
                deps,
                &mut staged,
            )?;
            next_local_id += 1;
            taken.extend_from_slice(&points);
            state.accepted.push(step);
        }
        remove_sorted(&mut state.unmapped, taken);
        timings.encode_ms += ms(clock);

        let clock = Instant::now();
        for _ in 0..params.h_hop {
            if !sweep(&mut state, iteration, deps, rules) {
                break;
            }
        }
        timings.check_ms += ms(clock);
    }

    state.timings = timings;
    store.absorb(staged);
    Ok(state)
}

/// One rule pass over every accepted token; returns whether anything was
/// dissolved.
fn sweep(
    state: &mut FrameState,
    iteration: usize,
    deps: &RefineDeps<'_>,
    rules: &PlausibilityRules,
) -> bool {
    let mut kept = Vec::with_capacity(state.accepted.len());
    let mut freed = Vec::new();
    for step in std::mem::take(&mut state.accepted) {
        let history = nearest_history(&step, deps.history, deps.history_radius_m);
        match check_plausibility(&step, history, rules) {
            Ok(()) => kept.push(step),
            Err(v) => {
                state.rejections.push(Rejection {
                    object_id: step.object_id,
                    rule_id: v.rule_id,
                    detail: v.detail,
                    iteration,
                    centroid: step.centroid.to_array(),
                    extents: step.shape.extents(),
                    point_count: step.point_indices.len(),
                });
                freed.extend(step.point_indices);
            }
        }
    }
    state.accepted = kept;
    let any = !freed.is_empty();
    if any {
        state.unmapped.extend(freed);
        state.unmapped.sort_unstable();
    }
    any
}

/// The earlier step closest to `step` within `radius`.
pub fn nearest_history<'h>(
    step: &StepTokenSet,
    history: &'h [StepTokenSet],
    radius: f64,
) -> Option<&'h StepTokenSet> {
    history
        .iter()
        .filter(|h| h.timestamp < step.timestamp)
        .map(|h| (h.centroid.distance(&step.centroid), h))
        .filter(|(d, _)| *d <= radius)
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.object_id.cmp(&b.1.object_id)))
        .map(|(_, h)| h)
}

/// One request per camera carrying every proposal visible in it. Proposals
/// with no visible prompt point in a camera are left out of that request.
fn segment_all(
    frame: &Frame,
    projections: &[CameraProjection],
    proposals: &[Vec<usize>],
    backend: &dyn SegBackend,
) -> Result<Vec<MaskSet>, SegError> {
    let run = |(cam, proj): (&crate::scene_io::CameraView, &CameraProjection)| -> Result<MaskSet, SegError> {
        let groups: Vec<Vec<[f64; 2]>> = proposals
            .iter()
            .map(|p| {
                p.iter()
                    .map(|&i| proj.points[i])
                    .filter(|pp| pp.visible)
                    .map(|pp| [pp.u, pp.v])
                    .collect::<Vec<_>>()
            })
            .filter(|g| !g.is_empty())
            .collect();
        if groups.is_empty() {
            return Ok(MaskSet::empty(&cam.camera_id, &frame.key, frame.timestamp, cam.width(), cam.height()));
        }
        let n = groups.len();
        let set = backend.segment(&SegRequest {
            frame_key: &frame.key,
            timestamp: frame.timestamp,
            camera_id: &cam.camera_id,
            image: &cam.image,
            prompt_groups: groups,
        })?;
        if set.masks.len() != n || set.camera_id != cam.camera_id {
            return Err(SegError::MalformedResponse(format!(
                "backend {} returned {} masks for camera {:?}, expected {n} for {:?}",
                backend.name(),
                set.masks.len(),
                set.camera_id,
                cam.camera_id
            )));
        }
        Ok(set)
    };
    let pairs: Vec<_> = frame.cameras.iter().zip(projections).collect();
    if backend.capabilities().concurrent {
        pairs.into_par_iter().map(run).collect()
    } else {
        pairs.into_iter().map(run).collect()
    }
}

/// Builds the token set of one cross-view group. Patches come from the
/// member mask with the largest area (ties: smaller camera id, then mask id).
fn encode_group(
    frame: &Frame,
    group: &MaskGroup,
    mask_sets: &[MaskSet],
    points: &[usize],
    object_id: u64,
    deps: &RefineDeps<'_>,
    store: &mut PatchStore,
) -> Result<StepTokenSet, StepError> {
    let mut best: Option<(usize, &MaskSet, &crate::seg::ObjectMask)> = None;
    for key in &group.members {
        let Some(set) = mask_sets.iter().find(|s| s.camera_id == key.camera_id) else {
            continue;
        };
        let Some(m) = set.get(key.mask_id) else {
            continue;
        };
        let area = m.mask.count();
        // Members are sorted by (camera, mask), so strict > keeps the first on ties.
        if best.is_none_or(|(a, _, _)| area > a) {
            best = Some((area, set, m));
        }
    }
    let patches = match best {
        Some((_, set, m)) => {
            let view = frame
                .camera(&set.camera_id)
                .expect("mask sets only name cameras of the frame");
            encode_patches(&view.image, &m.mask, deps.background, store)?
        }
        None => Vec::new(),
    };
    let world: Vec<[f64; 3]> = points
        .iter()
        .map(|&i| {
            let p = deps.sensor_to_world.transform_point(&frame.point(i));
            [p.x, p.y, p.z]
        })
        .collect();
    let (centroid, shape) = encode_shape(&world)?;
    assemble_step(
        patches,
        centroid,
        shape,
        frame.timestamp,
        frame.timestamp,
        StepProvenance {
            object_id,
            timestamp: frame.timestamp,
            point_indices: points.to_vec(),
            source_cameras: group.members.iter().map(|k| k.camera_id.clone()).collect(),
        },
    )
}

/// Removes `taken` from the sorted list `from`.
fn remove_sorted(from: &mut Vec<usize>, mut taken: Vec<usize>) {
    taken.sort_unstable();
    from.retain(|i| taken.binary_search(i).is_err());
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
