mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use sg4d::config::PipelineConfig;
use sg4d::graph4d::{PoseProvider, SceneGraph4D};
use sg4d::lidarseg::{miou, project_labels, PointLabeling, UNLABELED};
use sg4d::pipeline::Pipeline;
use sg4d::seg::OracleBackend;
use sg4d::synth::{FrameTruth, GroundTruth};

fn built() -> (SceneGraph4D, GroundTruth) {
    let mut spec = common::four_boxes();
    spec.frame_count = 5;
    let s = common::scene(&spec);
    let backend = OracleBackend::new(Arc::new(s.truth.clone()));
    let mut p = Pipeline::new(
        PipelineConfig::default(),
        Box::new(backend),
        PoseProvider::Manifest,
    );
    for f in &s.frames {
        p.process(f).unwrap();
    }
    (p.graph().unwrap(), s.truth)
}

/// Majority ground-truth class of each object's points at the frame.
fn majority_classes(graph: &SceneGraph4D, truth: &FrameTruth) -> BTreeMap<u64, u16> {
    let mut out = BTreeMap::new();
    for track in graph.tracks.values() {
        let Some(step) = track.steps.iter().find(|s| s.timestamp == truth.timestamp) else {
            continue;
        };
        let mut votes: BTreeMap<u16, usize> = BTreeMap::new();
        for &i in &step.point_indices {
            *votes.entry(truth.class_ids[i]).or_default() += 1;
        }
        let (&class, _) = votes
            .iter()
            .max_by_key(|(c, n)| (**n, std::cmp::Reverse(**c)))
            .unwrap();
        if class != UNLABELED {
            out.insert(track.object_id, class);
        }
    }
    out
}

#[test]
fn projected_labels_score_high_against_the_synthetic_truth() {
    let (graph, truth) = built();
    let frame = truth.frames.last().unwrap();
    let classes = majority_classes(&graph, frame);
    assert_eq!(classes.len(), 4);
    let gt = PointLabeling {
        labels: frame.class_ids.clone(),
        label_map: truth.label_map.clone(),
    };
    let pred = project_labels(
        &graph,
        frame.timestamp,
        gt.labels.len(),
        &classes,
        &truth.label_map,
    )
    .unwrap();
    let report = miou(&pred, &gt, true).unwrap();
    assert!(report.miou > 0.9, "{report:?}");
}

#[test]
fn renaming_classes_consistently_keeps_the_score() {
    let (graph, truth) = built();
    let frame = truth.frames.last().unwrap();
    let classes = majority_classes(&graph, frame);
    let gt = PointLabeling {
        labels: frame.class_ids.clone(),
        label_map: truth.label_map.clone(),
    };
    let pred = project_labels(
        &graph,
        frame.timestamp,
        gt.labels.len(),
        &classes,
        &truth.label_map,
    )
    .unwrap();
    let base = miou(&pred, &gt, true).unwrap().miou;

    let rename = |c: u16| if c == UNLABELED { c } else { 100 - c };
    let relabel = |l: &PointLabeling| PointLabeling {
        labels: l.labels.iter().map(|&c| rename(c)).collect(),
        label_map: l
            .label_map
            .iter()
            .map(|(&c, n)| (rename(c), n.clone()))
            .collect(),
    };
    let renamed = miou(&relabel(&pred), &relabel(&gt), true).unwrap().miou;
    assert!((base - renamed).abs() < 1e-12);
}

#[test]
fn unknown_class_assignment_is_refused() {
    let (graph, truth) = built();
    let frame = truth.frames.last().unwrap();
    let mut classes = majority_classes(&graph, frame);
    let first = *classes.keys().next().unwrap();
    classes.insert(first, 4242);
    assert!(project_labels(
        &graph,
        frame.timestamp,
        frame.class_ids.len(),
        &classes,
        &truth.label_map
    )
    .is_err());
}
