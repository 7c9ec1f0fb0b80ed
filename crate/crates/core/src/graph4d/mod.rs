//! Per-frame spatial graphs and the windowed 4D scene graph.
//!
//! All geometry lives in one world frame. Directional relations are judged in
//! the ego frame at each timestamp (x forward, y left, z up), so they do not
//! depend on where the world origin sits.

mod pose;

use std::collections::{BTreeMap, BTreeSet};

use base64::Engine;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::refinement::Rejection;
use crate::step::{PatchStore, StepTokenSet};
use crate::temporal::{Track, TrackSet};
use crate::transform::RigidTransform;

pub use pose::{anchor_world, PoseProvider, PoseSource, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;
pub const WORLD_FRAME: &str = "world";
pub const EGO_AXES: &str = "x forward, y left, z up";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Graph4dError {
    #[error("frame {timestamp} references object {object_id}, which no track holds at that time")]
    DanglingNodeRef { timestamp: f64, object_id: u64 },
    #[error("no ego pose for timestamp {timestamp}")]
    MissingEgoPose { timestamp: f64 },
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("patch {0} is not in the patch store")]
    MissingPatch(String),
    #[error("malformed scene graph: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Near,
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Above,
    Below,
}

impl Relation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Relation::Near => "near",
            Relation::LeftOf => "left_of",
            Relation::RightOf => "right_of",
            Relation::InFrontOf => "in_front_of",
            Relation::Behind => "behind",
            Relation::Above => "above",
            Relation::Below => "below",
        }
    }

    pub fn inverse(&self) -> Relation {
        match self {
            Relation::Near => Relation::Near,
            Relation::LeftOf => Relation::RightOf,
            Relation::RightOf => Relation::LeftOf,
            Relation::InFrontOf => Relation::Behind,
            Relation::Behind => Relation::InFrontOf,
            Relation::Above => Relation::Below,
            Relation::Below => Relation::Above,
        }
    }
}

/// `a <relation> b`. For `near`, `value` is the centroid distance and
/// `a < b`; for directional relations it is the offset along the dominant
/// ego axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub a: u64,
    pub b: u64,
    pub relation: Relation,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraphFrame {
    pub timestamp: f64,
    /// Sorted.
    pub node_ids: Vec<u64>,
    /// Sorted by `(a, b, relation)`.
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphParams {
    pub near_threshold_m: f64,
    pub relation_radius_m: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            near_threshold_m: 3.0,
            relation_radius_m: 15.0,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.near_threshold_m > 0.0 && self.relation_radius_m > 0.0) {
            return Err("graph thresholds must be > 0".into());
        }
        Ok(())
    }
}

/// Spatial graph of the objects observed at one timestamp. `ego_pose` maps
/// the ego (sensor) frame to the world frame.
pub fn build_frame_graph(
    timestamp: f64,
    steps: &[StepTokenSet],
    ego_pose: &RigidTransform,
    params: &GraphParams,
) -> SceneGraphFrame {
    let mut nodes: Vec<&StepTokenSet> = steps.iter().collect();
    nodes.sort_by_key(|s| s.object_id);
    let to_ego = ego_pose.rotation().transpose();
    let mut edges = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let world = Vector3::from(b.centroid.to_array()) - Vector3::from(a.centroid.to_array());
            let d = world.norm();
            if d < params.near_threshold_m {
                edges.push(Edge {
                    a: a.object_id,
                    b: b.object_id,
                    relation: Relation::Near,
                    value: d,
                });
            }
            if d > params.relation_radius_m {
                continue;
            }
            // Offset of b from a in ego axes.
            let o = to_ego * world;
            let Some((rel, mag)) = dominant_relation(&o) else {
                continue;
            };
            edges.push(Edge {
                a: b.object_id,
                b: a.object_id,
                relation: rel,
                value: mag,
            });
            edges.push(Edge {
                a: a.object_id,
                b: b.object_id,
                relation: rel.inverse(),
                value: mag,
            });
        }
    }
    edges.sort_by_key(|e| (e.a, e.b, e.relation));
    SceneGraphFrame {
        timestamp,
        node_ids: nodes.iter().map(|s| s.object_id).collect(),
        edges,
    }
}

/// Relation of a point at ego offset `o` relative to the origin, decided by
/// the largest absolute component (ties favour x, then y).
fn dominant_relation(o: &Vector3<f64>) -> Option<(Relation, f64)> {
    let (ax, ay, az) = (o.x.abs(), o.y.abs(), o.z.abs());
    if ax == 0.0 && ay == 0.0 && az == 0.0 {
        return None;
    }
    Some(if ax >= ay && ax >= az {
        (
            if o.x > 0.0 {
                Relation::InFrontOf
            } else {
                Relation::Behind
            },
            ax,
        )
    } else if ay >= az {
        (
            if o.y > 0.0 {
                Relation::LeftOf
            } else {
                Relation::RightOf
            },
            ay,
        )
    } else {
        (
            if o.z > 0.0 {
                Relation::Above
            } else {
                Relation::Below
            },
            az,
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoSample {
    pub timestamp: f64,
    /// Ego to world.
    pub pose: RigidTransform,
}

/// Time span covered by the graph: `(start_exclusive, end]`. The start is
/// absent until frames have scrolled out of the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_exclusive: Option<f64>,
    pub end: Option<f64>,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub frame: String,
    pub ego_axes: String,
    pub pose_source: PoseSource,
}

impl Anchor {
    pub fn world(pose_source: PoseSource) -> Self {
        Self {
            frame: WORLD_FRAME.into(),
            ego_axes: EGO_AXES.into(),
            pose_source,
        }
    }
}

/// An object the plausibility rules removed, kept for inspection at query time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedObject {
    pub timestamp: f64,
    #[serde(flatten)]
    pub rejection: Rejection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph4D {
    pub schema_version: u32,
    pub window: TimeWindow,
    /// Time-ordered, at most `window.frames` entries.
    pub frames: Vec<SceneGraphFrame>,
    pub tracks: BTreeMap<u64, Track>,
    /// One pose per frame, same order.
    pub ego: Vec<EgoSample>,
    pub anchor: Anchor,
    #[serde(default)]
    pub rejected: Vec<RejectedObject>,
}

impl SceneGraph4D {
    /// Checks every cross-reference.
    pub fn validate(&self) -> Result<(), Graph4dError> {
        if self.frames.len() > self.window.frames {
            return Err(Graph4dError::Malformed(format!(
                "{} frames exceed the window of {}",
                self.frames.len(),
                self.window.frames
            )));
        }
        if self
            .frames
            .windows(2)
            .any(|w| w[0].timestamp >= w[1].timestamp)
        {
            return Err(Graph4dError::Malformed(
                "frame timestamps must increase".into(),
            ));
        }
        for f in &self.frames {
            if !self.ego.iter().any(|e| e.timestamp == f.timestamp) {
                return Err(Graph4dError::MissingEgoPose {
                    timestamp: f.timestamp,
                });
            }
            for &id in &f.node_ids {
                let present = self
                    .tracks
                    .get(&id)
                    .is_some_and(|t| t.steps.iter().any(|s| s.timestamp == f.timestamp));
                if !present {
                    return Err(Graph4dError::DanglingNodeRef {
                        timestamp: f.timestamp,
                        object_id: id,
                    });
                }
            }
            let nodes: BTreeSet<u64> = f.node_ids.iter().copied().collect();
            for e in &f.edges {
                for id in [e.a, e.b] {
                    if !nodes.contains(&id) {
                        return Err(Graph4dError::DanglingNodeRef {
                            timestamp: f.timestamp,
                            object_id: id,
                        });
                    }
                }
            }
        }
        for (id, t) in &self.tracks {
            if *id != t.object_id || t.steps.is_empty() {
                return Err(Graph4dError::Malformed(format!(
                    "track {id} is inconsistent"
                )));
            }
        }
        Ok(())
    }

    pub fn end_time(&self) -> Option<f64> {
        self.frames.last().map(|f| f.timestamp)
    }

    /// Every patch reference held by the tracks.
    pub fn patch_refs(&self) -> BTreeSet<String> {
        self.tracks
            .values()
            .flat_map(|t| &t.steps)
            .flat_map(|s| &s.patch_tokens)
            .map(|p| p.patch_ref.clone())
            .collect()
    }
}

/// Binds the last `window_frames` frame graphs, the live tracks and the ego
/// poses of those frames into one graph.
pub fn assemble_4dsg(
    frame_graphs: &[SceneGraphFrame],
    tracks: &TrackSet,
    ego_poses: &[EgoSample],
    window_frames: usize,
    anchor: Anchor,
    rejected: &[RejectedObject],
) -> Result<SceneGraph4D, Graph4dError> {
    if window_frames == 0 {
        return Err(Graph4dError::Malformed(
            "window must hold at least one frame".into(),
        ));
    }
    let skip = frame_graphs.len().saturating_sub(window_frames);
    let frames = frame_graphs[skip..].to_vec();
    let start_exclusive = skip.checked_sub(1).map(|i| frame_graphs[i].timestamp);
    let mut ego = Vec::with_capacity(frames.len());
    for f in &frames {
        let pose = ego_poses
            .iter()
            .find(|e| e.timestamp == f.timestamp)
            .ok_or(Graph4dError::MissingEgoPose {
                timestamp: f.timestamp,
            })?;
        ego.push(*pose);
    }
    let end = frames.last().map(|f| f.timestamp);
    let in_window = |t: f64| start_exclusive.is_none_or(|s| t > s) && end.is_some_and(|e| t <= e);
    let graph = SceneGraph4D {
        schema_version: SCHEMA_VERSION,
        window: TimeWindow {
            start_exclusive,
            end,
            frames: window_frames,
        },
        tracks: tracks
            .tracks
            .iter()
            .map(|t| (t.object_id, t.clone()))
            .collect(),
        frames,
        ego,
        anchor,
        rejected: rejected
            .iter()
            .filter(|r| in_window(r.timestamp))
            .cloned()
            .collect(),
    };
    graph.validate()?;
    Ok(graph)
}

/// How patch images travel with the serialized graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchMode {
    /// `patch_ref` names a file `<hash>.png` in the patch directory.
    #[default]
    Ref,
    /// `patch_png_base64` carries the PNG bytes.
    Inline,
}

/// Canonical JSON: keys sorted, floats in shortest round-trip form, two-space
/// indentation and a trailing newline.
pub fn to_canonical_json(
    graph: &SceneGraph4D,
    mode: PatchMode,
    store: &PatchStore,
) -> Result<String, Graph4dError> {
    let mut v = serde_json::to_value(graph).map_err(|e| Graph4dError::Malformed(e.to_string()))?;
    if mode == PatchMode::Inline {
        let b64 = base64::engine::general_purpose::STANDARD;
        for_each_patch(&mut v, |p| {
            let key = p
                .remove("patch_ref")
                .and_then(|k| k.as_str().map(str::to_owned))
                .ok_or_else(|| Graph4dError::Malformed("patch token without patch_ref".into()))?;
            let png = store
                .png_bytes(&key)
                .ok_or(Graph4dError::MissingPatch(key))?;
            p.insert("patch_png_base64".into(), Value::String(b64.encode(png)));
            Ok(())
        })?;
    }
    let mut text =
        serde_json::to_string_pretty(&v).map_err(|e| Graph4dError::Malformed(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

/// Parses a serialized graph. Inline patches are decoded into `store` and
/// replaced by their content hash.
pub fn from_json(text: &str, store: &mut PatchStore) -> Result<SceneGraph4D, Graph4dError> {
    let mut v: Value =
        serde_json::from_str(text).map_err(|e| Graph4dError::Malformed(e.to_string()))?;
    let found = v
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Graph4dError::Malformed("missing schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(Graph4dError::SchemaVersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let b64 = base64::engine::general_purpose::STANDARD;
    for_each_patch(&mut v, |p| {
        if let Some(data) = p.remove("patch_png_base64") {
            let bytes = data
                .as_str()
                .and_then(|s| b64.decode(s).ok())
                .ok_or_else(|| Graph4dError::Malformed("patch_png_base64 is not base64".into()))?;
            let key = store.insert_png(&bytes).map_err(Graph4dError::Malformed)?;
            p.insert("patch_ref".into(), Value::String(key));
        }
        Ok(())
    })?;
    let graph: SceneGraph4D =
        serde_json::from_value(v).map_err(|e| Graph4dError::Malformed(e.to_string()))?;
    graph.validate()?;
    Ok(graph)
}

fn for_each_patch(
    v: &mut Value,
    mut f: impl FnMut(&mut serde_json::Map<String, Value>) -> Result<(), Graph4dError>,
) -> Result<(), Graph4dError> {
    let Some(tracks) = v.get_mut("tracks").and_then(Value::as_object_mut) else {
        return Ok(());
    };
    for track in tracks.values_mut() {
        let Some(steps) = track.get_mut("steps").and_then(Value::as_array_mut) else {
            continue;
        };
        for step in steps {
            let Some(patches) = step.get_mut("patch_tokens").and_then(Value::as_array_mut) else {
                continue;
            };
            for p in patches.iter_mut().filter_map(Value::as_object_mut) {
                f(p)?;
            }
        }
    }
    Ok(())
}
