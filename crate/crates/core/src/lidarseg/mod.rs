//! Point-level semantic labels from object tokens, and mIoU scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph4d::SceneGraph4D;
use crate::synth::{decode_u16, encode_u16};

/// Class id of points that belong to no class.
pub const UNLABELED: u16 = u16::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LidarsegError {
    #[error("prediction has {pred} points, ground truth has {gt}")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("object {object_id} at t={timestamp} has no usable point provenance: {reason}")]
    MissingProvenance {
        object_id: u64,
        timestamp: f64,
        reason: String,
    },
    #[error("class id {0} is not in the label map")]
    UnknownClass(u16),
    #[error("{0}")]
    Io(String),
}

/// One class id per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointLabeling {
    pub labels: Vec<u16>,
    pub label_map: BTreeMap<u16, String>,
}

impl PointLabeling {
    pub fn unlabeled(n: usize, label_map: BTreeMap<u16, String>) -> Self {
        Self {
            labels: vec![UNLABELED; n],
            label_map,
        }
    }

    pub fn validate(&self) -> Result<(), LidarsegError> {
        if self.label_map.contains_key(&UNLABELED) {
            return Err(LidarsegError::UnknownClass(UNLABELED));
        }
        match self
            .labels
            .iter()
            .find(|&&l| l != UNLABELED && !self.label_map.contains_key(&l))
        {
            Some(&l) => Err(LidarsegError::UnknownClass(l)),
            None => Ok(()),
        }
    }

    /// Writes `<stem>.bin` (little-endian u16 per point) and `<stem>.json`
    /// (label map).
    pub fn write(&self, bin_path: &Path, map_path: &Path) -> Result<(), LidarsegError> {
        let io = |p: &Path, e: std::io::Error| LidarsegError::Io(format!("{}: {e}", p.display()));
        std::fs::write(bin_path, encode_u16(&self.labels)).map_err(|e| io(bin_path, e))?;
        let json =
            serde_json::to_string_pretty(&self.label_map).expect("label maps always serialize");
        std::fs::write(map_path, json).map_err(|e| io(map_path, e))
    }

    pub fn read(bin_path: &Path, map_path: &Path) -> Result<Self, LidarsegError> {
        let io = |p: &Path, e: String| LidarsegError::Io(format!("{}: {e}", p.display()));
        let bytes = std::fs::read(bin_path).map_err(|e| io(bin_path, e.to_string()))?;
        let labels = decode_u16(&bytes).map_err(|e| io(bin_path, e))?;
        let text = std::fs::read_to_string(map_path).map_err(|e| io(map_path, e.to_string()))?;
        let label_map = serde_json::from_str(&text).map_err(|e| io(map_path, e.to_string()))?;
        let out = Self { labels, label_map };
        out.validate()?;
        Ok(out)
    }
}

/// Labels each point of the frame at `timestamp` with the class of the object
/// owning it. Objects without a class assignment leave their points unlabeled.
pub fn project_labels(
    graph: &SceneGraph4D,
    timestamp: f64,
    point_count: usize,
    class_assignments: &BTreeMap<u64, u16>,
    label_map: &BTreeMap<u16, String>,
) -> Result<PointLabeling, LidarsegError> {
    let mut out = PointLabeling::unlabeled(point_count, label_map.clone());
    let mut owned = vec![false; point_count];
    for track in graph.tracks.values() {
        let Some(step) = track.steps.iter().find(|s| s.timestamp == timestamp) else {
            continue;
        };
        let bad = |reason: String| LidarsegError::MissingProvenance {
            object_id: track.object_id,
            timestamp,
            reason,
        };
        if step.point_indices.is_empty() {
            return Err(bad("no point indices".into()));
        }
        let class = class_assignments.get(&track.object_id).copied();
        if let Some(c) = class {
            if !label_map.contains_key(&c) {
                return Err(LidarsegError::UnknownClass(c));
            }
        }
        for &i in &step.point_indices {
            let slot = owned.get_mut(i).ok_or_else(|| {
                bad(format!(
                    "point {i} is beyond the frame's {point_count} points"
                ))
            })?;
            if *slot {
                return Err(bad(format!("point {i} is owned by two objects")));
            }
            *slot = true;
            if let Some(c) = class {
                out.labels[i] = c;
            }
        }
    }
    Ok(out)
}

/// Counts indexed `[gt][pred]` over `classes`, the sorted union of classes in
/// either labeling plus [`UNLABELED`] last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<u16>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn build(
        pred: &[u16],
        gt: &[u16],
        ignore_unlabeled_gt: bool,
    ) -> Result<Self, LidarsegError> {
        if pred.len() != gt.len() {
            return Err(LidarsegError::LengthMismatch {
                pred: pred.len(),
                gt: gt.len(),
            });
        }
        let mut set: BTreeSet<u16> = pred.iter().chain(gt).copied().collect();
        set.insert(UNLABELED);
        // UNLABELED = u16::MAX sorts last.
        let classes: Vec<u16> = set.into_iter().collect();
        let idx: BTreeMap<u16, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
        for (&p, &g) in pred.iter().zip(gt) {
            if ignore_unlabeled_gt && g == UNLABELED {
                continue;
            }
            counts[idx[&g]][idx[&p]] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// IoU of one class: `TP / (TP + FP + FN)`.
    pub fn iou(&self, k: usize) -> f64 {
        let tp = self.counts[k][k];
        let fn_: u64 = self.counts[k].iter().sum::<u64>() - tp;
        let fp: u64 = self.counts.iter().map(|r| r[k]).sum::<u64>() - tp;
        let denom = tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            tp as f64 / denom as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouReport {
    /// IoU per class present in the evaluated ground truth.
    pub per_class: BTreeMap<u16, f64>,
    pub miou: f64,
    pub evaluated_points: u64,
    pub confusion: ConfusionMatrix,
}

/// Mean IoU over the classes present in the evaluated ground truth. Classes
/// only predicted add false positives but no IoU term. With no ground-truth
/// class at all the mean is 0.
pub fn miou(
    pred: &PointLabeling,
    gt: &PointLabeling,
    ignore_unlabeled_gt: bool,
) -> Result<MiouReport, LidarsegError> {
    let confusion = ConfusionMatrix::build(&pred.labels, &gt.labels, ignore_unlabeled_gt)?;
    let mut per_class = BTreeMap::new();
    for (k, &c) in confusion.classes.iter().enumerate() {
        if c == UNLABELED || confusion.counts[k].iter().sum::<u64>() == 0 {
            continue;
        }
        per_class.insert(c, confusion.iou(k));
    }
    let miou = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(MiouReport {
        per_class,
        miou,
        evaluated_points: confusion.total(),
        confusion,
    })
}
