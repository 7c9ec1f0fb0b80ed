//! Frame-by-frame orchestration: refinement, association, windowing and
//! graph assembly.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SegBackendKind};
use crate::graph4d::{
    assemble_4dsg, build_frame_graph, to_canonical_json, Anchor, EgoSample, Graph4dError,
    PatchMode, PoseProvider, PoseSource, RejectedObject, SceneGraph4D, SceneGraphFrame, Trajectory,
};
use crate::refinement::{
    refine_frame, RefineDeps, RefineError, RefineParams, Rejection, StageTimings,
};
use crate::scene_io::{Frame, SceneIoError, SequenceManifest};
use crate::seg::{FileBackend, OracleBackend, RemoteBackend, SegBackend};
use crate::step::{PatchStore, StepTokenSet};
use crate::synth::GroundTruth;
use crate::temporal::{associate, window_prune, TrackSet};

pub const GRAPH_FILE: &str = "4dsg.json";
pub const PATCH_DIR: &str = "patches";
pub const REPORT_DIR: &str = "reports";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneIoError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Graph(#[from] Graph4dError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTimings {
    #[serde(flatten)]
    pub stages: StageTimings,
    pub associate_ms: f64,
    pub graph_ms: f64,
    pub total_ms: f64,
}

/// What happened to one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_key: String,
    pub timestamp: f64,
    pub point_count: usize,
    pub accepted: usize,
    pub unmapped: usize,
    pub iterations: usize,
    pub rejections: Vec<Rejection>,
    pub matched: Vec<u64>,
    pub born: Vec<u64>,
    pub terminated: Vec<u64>,
    pub archived: Vec<u64>,
    pub timings: FrameTimings,
}

/// Stateful pipeline over one sequence.
pub struct Pipeline {
    config: PipelineConfig,
    backend: Box<dyn SegBackend>,
    pose: PoseProvider,
    store: PatchStore,
    tracks: TrackSet,
    /// The last `T + 1` frame graphs; the oldest only marks the window start.
    frame_graphs: VecDeque<SceneGraphFrame>,
    ego: VecDeque<EgoSample>,
    rejected: Vec<RejectedObject>,
    timestamps: Vec<f64>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig, backend: Box<dyn SegBackend>, pose: PoseProvider) -> Self {
        Self {
            config,
            backend,
            pose,
            store: PatchStore::new(),
            tracks: TrackSet::new(),
            frame_graphs: VecDeque::new(),
            ego: VecDeque::new(),
            rejected: Vec::new(),
            timestamps: Vec::new(),
        }
    }

    pub fn store(&self) -> &PatchStore {
        &self.store
    }

    pub fn tracks(&self) -> &TrackSet {
        &self.tracks
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Runs one frame. Frames must arrive in increasing time order. On error
    /// the pipeline state is unchanged.
    pub fn process(&mut self, frame: &Frame) -> Result<FrameReport, PipelineError> {
        let clock = Instant::now();
        if let Some(&last) = self.timestamps.last() {
            if !(frame.timestamp > last) {
                return Err(PipelineError::Input(format!(
                    "frame {} has timestamp {} after {last}",
                    frame.key, frame.timestamp
                )));
            }
        }
        let pose = self.pose.pose(frame)?;
        let history: Vec<StepTokenSet> = self
            .tracks
            .active()
            .filter_map(|t| t.latest().cloned())
            .collect();
        let c = &self.config;
        let deps = RefineDeps {
            clustering: &c.clustering,
            backend: self.backend.as_ref(),
            crossview_gate: c.matching.crossview_gate,
            background: c.step.background,
            sensor_to_world: &pose,
            history: &history,
            history_radius_m: c.association.max_match_distance_m,
        };
        let params = RefineParams {
            n_iter: c.n_iter,
            h_hop: c.h_hop,
        };
        let state = refine_frame(frame, params, &deps, &c.plausibility, &mut self.store)?;

        let t = frame.timestamp;
        let assoc_clock = Instant::now();
        let accepted = state.accepted.len();
        let outcome = associate(
            &mut self.tracks,
            state.accepted,
            t,
            &c.association,
            &self.store,
            c.step.background,
        );
        self.timestamps.push(t);
        let window = c.window_frames;
        let cutoff = self
            .timestamps
            .len()
            .checked_sub(window + 1)
            .map(|i| self.timestamps[i]);
        let archived = cutoff
            .map(|cut| window_prune(&mut self.tracks, cut))
            .unwrap_or_default();
        let associate_ms = assoc_clock.elapsed().as_secs_f64() * 1e3;

        let graph_clock = Instant::now();
        let steps: Vec<StepTokenSet> = self
            .tracks
            .tracks
            .iter()
            .filter_map(|tr| tr.steps.last().filter(|s| s.timestamp == t).cloned())
            .collect();
        self.frame_graphs
            .push_back(build_frame_graph(t, &steps, &pose, &c.graph));
        self.ego.push_back(EgoSample { timestamp: t, pose });
        while self.frame_graphs.len() > window + 1 {
            self.frame_graphs.pop_front();
            self.ego.pop_front();
        }
        self.rejected
            .extend(state.rejections.iter().map(|r| RejectedObject {
                timestamp: t,
                rejection: r.clone(),
            }));
        if let Some(cut) = cutoff {
            self.rejected.retain(|r| r.timestamp > cut);
        }
        let live = self
            .tracks
            .tracks
            .iter()
            .flat_map(|tr| &tr.steps)
            .flat_map(|s| &s.patch_tokens)
            .map(|p| p.patch_ref.clone())
            .collect();
        self.store.retain(&live);
        let graph_ms = graph_clock.elapsed().as_secs_f64() * 1e3;

        let report = FrameReport {
            frame_key: frame.key.clone(),
            timestamp: t,
            point_count: frame.points.len(),
            accepted,
            unmapped: state.unmapped.len(),
            iterations: state.iteration,
            rejections: state.rejections,
            matched: outcome.matched.iter().map(|m| m.0).collect(),
            born: outcome.born,
            terminated: outcome.terminated,
            archived,
            timings: FrameTimings {
                stages: state.timings,
                associate_ms,
                graph_ms,
                total_ms: clock.elapsed().as_secs_f64() * 1e3,
            },
        };
        tracing::info!(
            frame = %report.frame_key,
            timestamp = report.timestamp,
            points = report.point_count,
            accepted = report.accepted,
            rejected = report.rejections.len(),
            tracks = self.tracks.tracks.len(),
            total_ms = report.timings.total_ms,
            cluster_ms = report.timings.stages.cluster_ms,
            segment_ms = report.timings.stages.segment_ms,
            "frame processed"
        );
        Ok(report)
    }

    /// The current windowed scene graph.
    pub fn graph(&self) -> Result<SceneGraph4D, PipelineError> {
        let frames: Vec<SceneGraphFrame> = self.frame_graphs.iter().cloned().collect();
        let ego: Vec<EgoSample> = self.ego.iter().copied().collect();
        Ok(assemble_4dsg(
            &frames,
            &self.tracks,
            &ego,
            self.config.window_frames,
            Anchor::world(self.pose.source()),
            &self.rejected,
        )?)
    }
}

/// Builds the segmentation backend named by the config. `manifest` locates
/// the default ground-truth directory of the oracle.
pub fn make_backend(
    config: &PipelineConfig,
    manifest: &SequenceManifest,
) -> Result<Box<dyn SegBackend>, PipelineError> {
    let seg = &config.segmentation;
    Ok(match seg.backend {
        SegBackendKind::Oracle => {
            let dir = seg
                .truth_dir
                .clone()
                .unwrap_or_else(|| manifest.base_dir.clone());
            let keys: Vec<String> = manifest
                .frame_paths
                .iter()
                .map(|p| {
                    Path::new(p)
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_else(|| p.clone())
                })
                .collect();
            let truth = GroundTruth::read(&dir, &keys)
                .map_err(|e| PipelineError::Input(format!("oracle ground truth: {e}")))?;
            Box::new(OracleBackend::new(Arc::new(truth)))
        }
        SegBackendKind::File => Box::new(FileBackend::new(
            seg.mask_dir
                .clone()
                .expect("validated: file backend has mask_dir"),
        )),
        SegBackendKind::Remote => {
            let url = config
                .seg_endpoint()
                .ok_or_else(|| PipelineError::Input("segmentation.endpoint is not set".into()))?;
            Box::new(RemoteBackend::new(
                &url,
                Duration::from_secs_f64(seg.timeout_s),
            ))
        }
    })
}

pub fn make_pose_provider(config: &PipelineConfig) -> Result<PoseProvider, PipelineError> {
    Ok(match config.pose.source {
        PoseSource::Manifest => PoseProvider::Manifest,
        PoseSource::Identity => PoseProvider::Identity,
        PoseSource::Trajectory => {
            let path = config
                .pose
                .path
                .as_ref()
                .expect("validated: trajectory source has a path");
            let tr = Trajectory::load_tum(path).map_err(PipelineError::Input)?;
            PoseProvider::Trajectory(tr.with_tolerance(config.pose.tolerance_s))
        }
    })
}

/// Result of running a whole sequence.
pub struct BuildOutput {
    pub graph: SceneGraph4D,
    pub store: PatchStore,
    pub reports: Vec<FrameReport>,
}

/// Runs every frame of the manifest through a fresh pipeline.
pub fn build_sequence(
    manifest: &SequenceManifest,
    config: &PipelineConfig,
    backend: Box<dyn SegBackend>,
) -> Result<BuildOutput, PipelineError> {
    let pose = make_pose_provider(config)?;
    let mut pipeline = Pipeline::new(config.clone(), backend, pose);
    let mut reports = Vec::with_capacity(manifest.len());
    for i in 0..manifest.len() {
        let loaded = manifest.load_frame(i)?;
        reports.push(pipeline.process(&loaded.frame)?);
    }
    Ok(BuildOutput {
        graph: pipeline.graph()?,
        store: pipeline.store,
        reports,
    })
}

/// Writes `4dsg.json`, the patch directory (reference mode) and one report
/// per frame under `dir`. Returns the graph path.
pub fn write_outputs(
    out: &BuildOutput,
    dir: &Path,
    mode: PatchMode,
) -> Result<PathBuf, PipelineError> {
    let io = |p: &Path, e: std::io::Error| PipelineError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let text = to_canonical_json(&out.graph, mode, &out.store)?;
    let graph_path = dir.join(GRAPH_FILE);
    std::fs::write(&graph_path, text).map_err(|e| io(&graph_path, e))?;
    if mode == PatchMode::Ref {
        let patches = dir.join(PATCH_DIR);
        let mut referenced = out.store.clone();
        referenced.retain(&out.graph.patch_refs());
        referenced
            .write_dir(&patches)
            .map_err(|e| io(&patches, e))?;
    }
    let reports = dir.join(REPORT_DIR);
    std::fs::create_dir_all(&reports).map_err(|e| io(&reports, e))?;
    for r in &out.reports {
        let p = reports.join(format!("{}.json", r.frame_key));
        let text = serde_json::to_string_pretty(r).expect("reports always serialize");
        std::fs::write(&p, text).map_err(|e| io(&p, e))?;
    }
    Ok(graph_path)
}

/// Loads a graph written by [`write_outputs`] together with its patches.
pub fn read_graph(path: &Path) -> Result<(SceneGraph4D, PatchStore), PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut store = PatchStore::new();
    let graph = crate::graph4d::from_json(&text, &mut store)?;
    let refs = graph.patch_refs();
    let patch_dir = path.parent().unwrap_or(Path::new(".")).join(PATCH_DIR);
    store
        .load_keys(&patch_dir, refs.iter())
        .map_err(|e| PipelineError::Io(format!("patches: {e}")))?;
    Ok((graph, store))
}
