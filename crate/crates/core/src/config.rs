//! Pipeline configuration: one TOML or JSON document plus `key=value`
//! overrides. Unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterParams;
use crate::graph4d::{GraphParams, PatchMode, PoseSource};
use crate::refinement::PlausibilityRules;
use crate::step::DEFAULT_BACKGROUND;
use crate::temporal::AssociationParams;
use crate::vlm::{MockClient, PromptOptions};

/// Consulted when `segmentation.endpoint` is not set.
pub const SEG_ENDPOINT_ENV: &str = "SG4D_SEG_ENDPOINT";
/// Consulted when `vlm.endpoint` is not set.
pub const VLM_ENDPOINT_ENV: &str = "SG4D_VLM_ENDPOINT";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Sliding window length `T`, in frames.
    pub window_frames: usize,
    /// Re-clustering passes over the unmapped points per frame.
    pub n_iter: usize,
    /// Plausibility sweeps after each pass.
    pub h_hop: usize,
    pub output_dir: Option<PathBuf>,
    pub clustering: ClusterParams,
    pub matching: MatchingConfig,
    pub step: StepConfig,
    pub plausibility: PlausibilityRules,
    pub association: AssociationParams,
    pub graph: GraphParams,
    pub segmentation: SegmentationConfig,
    pub pose: PoseConfig,
    pub vlm: VlmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_frames: 10,
            n_iter: 1,
            h_hop: 1,
            output_dir: None,
            clustering: ClusterParams::default(),
            matching: MatchingConfig::default(),
            step: StepConfig::default(),
            plausibility: PlausibilityRules::default(),
            association: AssociationParams::default(),
            graph: GraphParams::default(),
            segmentation: SegmentationConfig::default(),
            pose: PoseConfig::default(),
            vlm: VlmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingConfig {
    /// Cross-view pairs with `1 - IoU` at or above this are not matched.
    pub crossview_gate: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self {
            crossview_gate: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepConfig {
    pub background: [u8; 3],
    pub patch_mode: PatchMode,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            background: DEFAULT_BACKGROUND,
            patch_mode: PatchMode::Ref,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegBackendKind {
    /// Ground-truth silhouettes of a synthetic sequence.
    #[default]
    Oracle,
    /// Precomputed mask PNGs.
    File,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub backend: SegBackendKind,
    /// Directory holding the `gt/` tree for `oracle`; defaults to the manifest's.
    pub truth_dir: Option<PathBuf>,
    /// Mask root for `file`.
    pub mask_dir: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            backend: SegBackendKind::Oracle,
            truth_dir: None,
            mask_dir: None,
            endpoint: None,
            timeout_s: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseConfig {
    pub source: PoseSource,
    /// TUM trajectory file for `trajectory`.
    pub path: Option<PathBuf>,
    pub tolerance_s: f64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            source: PoseSource::Manifest,
            path: None,
            tolerance_s: crate::graph4d::Trajectory::DEFAULT_TOLERANCE_S,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VlmClientKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VlmConfig {
    pub client: VlmClientKind,
    pub endpoint: Option<String>,
    pub timeout_s: f64,
    pub mock: MockClient,
    pub prompt: PromptOptions,
}

impl Default for VlmConfig {
    fn default() -> Self {
        Self {
            client: VlmClientKind::Mock,
            endpoint: None,
            timeout_s: 60.0,
            mock: MockClient::ObjectCount,
            prompt: PromptOptions::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a `.json` or `.toml` file and applies `overrides`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let doc: toml::Table = if is_json {
            serde_json::from_str(&text)
                .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text)
                .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?
        };
        Self::from_table(doc, overrides)
    }

    /// Defaults plus `overrides`.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, ConfigError> {
        Self::from_table(toml::Table::new(), overrides)
    }

    fn from_table(mut doc: toml::Table, overrides: &[String]) -> Result<Self, ConfigError> {
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config: PipelineConfig = toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.window_frames < 1 {
            return bad("window_frames must be >= 1".into());
        }
        if self.n_iter < 1 {
            return bad("n_iter must be >= 1".into());
        }
        if !(self.matching.crossview_gate > 0.0 && self.matching.crossview_gate <= 1.0) {
            return bad("matching.crossview_gate must lie in (0, 1]".into());
        }
        self.clustering.validate().map_err(ConfigError::Invalid)?;
        self.plausibility.validate().map_err(ConfigError::Invalid)?;
        self.association.validate().map_err(ConfigError::Invalid)?;
        self.graph.validate().map_err(ConfigError::Invalid)?;
        if self.segmentation.backend == SegBackendKind::File && self.segmentation.mask_dir.is_none()
        {
            return bad("segmentation.mask_dir is required for the file backend".into());
        }
        if self.pose.source == PoseSource::Trajectory && self.pose.path.is_none() {
            return bad("pose.path is required for the trajectory pose source".into());
        }
        for (name, t) in [
            ("segmentation", self.segmentation.timeout_s),
            ("vlm", self.vlm.timeout_s),
        ] {
            if !(t > 0.0 && t.is_finite()) {
                return bad(format!("{name}.timeout_s must be > 0"));
            }
        }
        Ok(())
    }

    pub fn seg_endpoint(&self) -> Option<String> {
        self.segmentation
            .endpoint
            .clone()
            .or_else(|| std::env::var(SEG_ENDPOINT_ENV).ok())
    }

    pub fn vlm_endpoint(&self) -> Option<String> {
        self.vlm
            .endpoint
            .clone()
            .or_else(|| std::env::var(VLM_ENDPOINT_ENV).ok())
    }
}

/// Applies `dotted.key=value`. The value is read as a TOML literal, falling
/// back to a plain string.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Parse(format!(
            "override key {key:?} is malformed"
        )));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path
        .split_last()
        .expect("split yields at least one segment");
    let mut table = doc;
    for p in parents {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("override {key:?}: {p} is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_configuration() {
        let c = PipelineConfig::default();
        assert_eq!(
            (c.window_frames, c.n_iter, c.h_hop, c.clustering.m),
            (10, 1, 1, 4)
        );
        c.validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let c = PipelineConfig::from_overrides(&[
            "clustering.min_cluster_size=20".into(),
            "plausibility.max_speed_mps = 3.5".into(),
            "segmentation.backend=remote".into(),
        ])
        .unwrap();
        assert_eq!(c.clustering.min_cluster_size, 20);
        assert_eq!(c.plausibility.max_speed_mps, 3.5);
        assert_eq!(c.segmentation.backend, SegBackendKind::Remote);
    }

    #[test]
    fn zero_window_is_rejected() {
        let err = PipelineConfig::from_overrides(&["window_frames=0".into()]).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(m) if m.contains("window_frames")));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_overrides(&["clustering.min_size=3".into()]).is_err());
        assert!(PipelineConfig::from_overrides(&["bogus=1".into()]).is_err());
    }

    #[test]
    fn json_and_toml_files_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        let j = dir.path().join("c.json");
        std::fs::write(&t, "window_frames = 5\n[graph]\nnear_threshold_m = 2.0\n").unwrap();
        std::fs::write(
            &j,
            r#"{"window_frames": 5, "graph": {"near_threshold_m": 2.0}}"#,
        )
        .unwrap();
        assert_eq!(
            PipelineConfig::load(&t, &[]).unwrap(),
            PipelineConfig::load(&j, &[]).unwrap()
        );
    }
}
