use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::graph4d::{Relation, SceneGraph4D, SceneGraphFrame};
use crate::step::StepTokenSet;
use crate::temporal::Track;

/// Version tag of the prompt layout below.
pub const TEMPLATE_VERSION: &str = "text-blocks/1";

const PREAMBLE: &str = "You are given a 4D scene graph of a driving scene observed over a sliding time window. \
All coordinates are meters in one fixed world frame; the ego axes are x forward, y left, z up. \
Each object block lists the object's observations (centroid, extent and standard deviation per axis), \
its displacement between consecutive observations and its spatial relations. \
Image patches of an object's latest observation are attached after the text, tagged with the object id and grid cell. \
Answer the question using only this information.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptOptions {
    /// Relations of every frame instead of only the latest one.
    pub full_history: bool,
    pub include_rejected: bool,
    pub include_patches: bool,
    pub answer_format: Option<String>,
}

impl Default for PromptOptions {
    fn default() -> Self {
        Self {
            full_history: false,
            include_rejected: true,
            include_patches: true,
            answer_format: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectBlock {
    pub object_id: u64,
    pub text: String,
}

/// One patch image to send alongside the text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchAttachment {
    pub object_id: u64,
    pub timestamp: f64,
    pub row: u8,
    pub col: u8,
    pub patch_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptContext {
    pub template_version: String,
    pub system_preamble: String,
    pub window_block: String,
    /// Ascending object id.
    pub object_blocks: Vec<ObjectBlock>,
    pub ego_block: String,
    pub rejected_block: Option<String>,
    pub question: String,
    pub answer_format: Option<String>,
    pub patch_attachments: Vec<PatchAttachment>,
}

impl PromptContext {
    /// Text blocks in prompt order.
    pub fn blocks(&self) -> Vec<String> {
        let mut out = vec![self.system_preamble.clone(), self.window_block.clone()];
        out.extend(self.object_blocks.iter().map(|b| b.text.clone()));
        out.push(self.ego_block.clone());
        out.extend(self.rejected_block.clone());
        out.push(format!("Question: {}", self.question));
        if let Some(f) = &self.answer_format {
            out.push(format!("Answer format: {f}"));
        }
        out
    }

    pub fn text(&self) -> String {
        let mut t = self.blocks().join("\n\n");
        t.push('\n');
        t
    }
}

/// Renders the graph for a question. Pure: the same inputs give the same
/// bytes.
pub fn render_prompt(
    graph: &SceneGraph4D,
    question: &str,
    options: &PromptOptions,
) -> PromptContext {
    let latest = graph.frames.last();
    let mut object_blocks = Vec::new();
    let mut patch_attachments = Vec::new();
    for (id, track) in &graph.tracks {
        let frames: Vec<&SceneGraphFrame> = if options.full_history {
            graph.frames.iter().collect()
        } else {
            latest.into_iter().collect()
        };
        object_blocks.push(ObjectBlock {
            object_id: *id,
            text: object_block(track, &frames),
        });
        if options.include_patches {
            if let Some(step) = track.steps.last() {
                patch_attachments.extend(step.patch_tokens.iter().map(|p| PatchAttachment {
                    object_id: *id,
                    timestamp: step.timestamp,
                    row: p.row,
                    col: p.col,
                    patch_ref: p.patch_ref.clone(),
                }));
            }
        }
    }
    let rejected_block = (options.include_rejected && !graph.rejected.is_empty()).then(|| {
        let mut s = String::from("Rejected candidates (removed by geometric plausibility rules):");
        for r in &graph.rejected {
            let x = &r.rejection;
            write!(
                s,
                "\n  t={} rule={} centroid={} m extent={} m points={}: {}",
                sec(r.timestamp),
                x.rule_id,
                vec3(x.centroid),
                vec3(x.extents),
                x.point_count,
                x.detail
            )
            .unwrap();
        }
        s
    });
    PromptContext {
        template_version: TEMPLATE_VERSION.into(),
        system_preamble: PREAMBLE.into(),
        window_block: window_block(graph),
        object_blocks,
        ego_block: ego_block(graph),
        rejected_block,
        question: question.into(),
        answer_format: options.answer_format.clone(),
        patch_attachments,
    }
}

fn window_block(graph: &SceneGraph4D) -> String {
    let span = match (graph.frames.first(), graph.frames.last()) {
        (Some(a), Some(b)) => format!("{} to {}", sec(a.timestamp), sec(b.timestamp)),
        _ => "empty".into(),
    };
    format!(
        "Window: {} of at most {} frames, {span}; {} objects.",
        graph.frames.len(),
        graph.window.frames,
        graph.tracks.len()
    )
}

fn object_block(track: &Track, frames: &[&SceneGraphFrame]) -> String {
    let status = match track.status {
        crate::temporal::TrackStatus::Active => "active",
        crate::temporal::TrackStatus::Terminated => "terminated",
    };
    let mut s = format!(
        "Object {}: status={status} first_seen={} last_seen={} observations={}",
        track.object_id,
        sec(track.birth),
        sec(track.last_seen),
        track.steps.len()
    );
    for step in &track.steps {
        write!(
            s,
            "\n  t={} centroid={} m extent={} m sigma={} m patches={}",
            sec(step.timestamp),
            vec3(step.centroid.to_array()),
            vec3(step.shape.extents()),
            vec3(step.shape.axes().map(|a| a.std)),
            step.patch_tokens.len()
        )
        .unwrap();
    }
    for w in track.steps.windows(2) {
        s.push_str("\n  ");
        s.push_str(&displacement_line(&w[0], &w[1]));
    }
    for f in frames {
        if f.node_ids.binary_search(&track.object_id).is_err() {
            continue;
        }
        let rel = relations_of(track.object_id, f);
        write!(
            s,
            "\n  relations at t={}: {}",
            sec(f.timestamp),
            if rel.is_empty() { "none".into() } else { rel }
        )
        .unwrap();
    }
    s
}

/// `move t0->t1: delta=(dx, dy, dz) m |delta|=d m over dt s speed=v m/s`.
pub fn displacement_line(a: &StepTokenSet, b: &StepTokenSet) -> String {
    let (ca, cb) = (a.centroid.to_array(), b.centroid.to_array());
    let d = [cb[0] - ca[0], cb[1] - ca[1], cb[2] - ca[2]];
    let mag = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let dt = b.timestamp - a.timestamp;
    let speed = if dt > 0.0 {
        format!(" speed={:.1} m/s", mag / dt)
    } else {
        String::new()
    };
    format!(
        "move {}->{}: delta=({:+.2}, {:+.2}, {:+.2}) m |delta|={mag:.1} m over {dt:.2} s{speed}",
        sec(a.timestamp),
        sec(b.timestamp),
        d[0],
        d[1],
        d[2]
    )
}

fn relations_of(id: u64, f: &SceneGraphFrame) -> String {
    let mut parts = Vec::new();
    for e in &f.edges {
        if e.relation == Relation::Near {
            let other = if e.a == id {
                e.b
            } else if e.b == id {
                e.a
            } else {
                continue;
            };
            parts.push(format!("near {other} ({:.2} m)", e.value));
        } else if e.a == id {
            parts.push(format!("{} {}", e.relation.as_str(), e.b));
        }
    }
    parts.join("; ")
}

fn ego_block(graph: &SceneGraph4D) -> String {
    let mut s = String::from("Ego trajectory:");
    if graph.ego.is_empty() {
        s.push_str(" none");
    }
    for e in &graph.ego {
        let r = e.pose.rotation();
        let yaw = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
        let yaw = if yaw.abs() < 0.05 { 0.0 } else { yaw };
        write!(
            s,
            "\n  t={} position={} m yaw={yaw:.1} deg",
            sec(e.timestamp),
            vec3(e.pose.translation().into())
        )
        .unwrap();
    }
    s
}

fn sec(t: f64) -> String {
    format!("{t:.2}s")
}

fn vec3(v: [f64; 3]) -> String {
    let f = |x: f64| {
        // Avoid "-0.00".
        let r = format!("{x:.2}");
        if r == "-0.00" {
            "0.00".to_string()
        } else {
            r
        }
    };
    format!("({}, {}, {})", f(v[0]), f(v[1]), f(v[2]))
}
