mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::{dist, four_boxes, long_bar, scene};
use sg4d::clustering::ClusterParams;
use sg4d::refinement::{
    refine_frame, PlausibilityRules, RefineDeps, RefineParams, RULE_MAX_EXTENT,
};
use sg4d::seg::{MaskSet, OracleBackend, PropagateTarget, SegBackend, SegError, SegRequest};
use sg4d::step::{PatchStore, DEFAULT_BACKGROUND};
use sg4d::synth::{SynthScene, NO_INSTANCE};

fn run(
    scene: &SynthScene,
    frame: usize,
    backend: &dyn SegBackend,
    params: RefineParams,
    rules: &PlausibilityRules,
) -> Result<sg4d::refinement::FrameState, sg4d::refinement::RefineError> {
    let f = &scene.frames[frame];
    let clustering = ClusterParams::default();
    let deps = RefineDeps {
        clustering: &clustering,
        backend,
        crossview_gate: 0.8,
        background: DEFAULT_BACKGROUND,
        sensor_to_world: &f.ego_pose,
        history: &[],
        history_radius_m: 5.0,
    };
    refine_frame(f, params, &deps, rules, &mut PatchStore::new())
}

fn oracle(scene: &SynthScene) -> OracleBackend {
    OracleBackend::new(Arc::new(scene.truth.clone()))
}

#[test]
fn four_boxes_become_four_objects_and_ground_stays_unmapped() {
    let sc = scene(&four_boxes());
    let backend = oracle(&sc);
    for i in [0, 9, 19] {
        let state = run(
            &sc,
            i,
            &backend,
            RefineParams::default(),
            &PlausibilityRules::default(),
        )
        .unwrap();
        state.check_partition(sc.frames[i].points.len()).unwrap();
        assert!(state.rejections.is_empty());
        assert_eq!(state.accepted.len(), 4, "frame {i}");
        let truth = &sc.truth.frames[i];
        for step in &state.accepted {
            let nearest = truth
                .objects
                .iter()
                .map(|o| dist(o.sampled_centroid, step.centroid.to_array()))
                .fold(f64::INFINITY, f64::min);
            assert!(nearest <= 0.1, "frame {i}: centroid off by {nearest}");
        }
        let object_points = state
            .unmapped
            .iter()
            .filter(|&&p| truth.instance_ids[p] != NO_INSTANCE)
            .count();
        assert_eq!(object_points, 0, "frame {i}: object points left unmapped");
    }
}

#[test]
fn tiny_extent_cap_rejects_everything() {
    let sc = scene(&four_boxes());
    let rules = PlausibilityRules {
        max_extent_m: 0.01,
        ..Default::default()
    };
    let state = run(&sc, 0, &oracle(&sc), RefineParams::default(), &rules).unwrap();
    assert!(state.accepted.is_empty());
    assert_eq!(state.unmapped.len(), sc.frames[0].points.len());
    assert_eq!(state.rejections.len(), 4);
    assert!(state
        .rejections
        .iter()
        .all(|r| r.rule_id == RULE_MAX_EXTENT));
}

#[test]
fn zero_hops_disable_rejection() {
    let sc = scene(&four_boxes());
    let rules = PlausibilityRules {
        max_extent_m: 0.01,
        ..Default::default()
    };
    let params = RefineParams {
        n_iter: 1,
        h_hop: 0,
    };
    let state = run(&sc, 0, &oracle(&sc), params, &rules).unwrap();
    assert!(state.rejections.is_empty());
    assert_eq!(state.accepted.len(), 4);
}

#[test]
fn long_bar_is_dissolved_back_into_unmapped() {
    let mut spec = four_boxes();
    spec.objects.push(long_bar());
    spec.frame_count = 2;
    let sc = scene(&spec);
    let bar_id = sc
        .truth
        .objects
        .iter()
        .find(|o| o.name == "bar")
        .unwrap()
        .instance_id;
    let state = run(
        &sc,
        1,
        &oracle(&sc),
        RefineParams::default(),
        &PlausibilityRules::default(),
    )
    .unwrap();
    state.check_partition(sc.frames[1].points.len()).unwrap();
    assert_eq!(state.accepted.len(), 4);
    assert_eq!(state.rejections.len(), 1);
    assert_eq!(state.rejections[0].rule_id, RULE_MAX_EXTENT);
    let bar_points = sc.truth.frames[1].points_of(bar_id);
    assert!(bar_points
        .iter()
        .all(|p| state.unmapped.binary_search(p).is_ok()));
}

/// Answers only even prompt groups on its first call per camera.
struct Flaky {
    inner: OracleBackend,
    calls: AtomicUsize,
    cameras: usize,
}

impl SegBackend for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }
    fn segment(&self, request: &SegRequest<'_>) -> Result<MaskSet, SegError> {
        let mut set = self.inner.segment(request)?;
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.cameras {
            for m in set.masks.iter_mut().filter(|m| m.mask_id % 2 == 1) {
                m.mask = sg4d::mask::BinaryMask::empty(m.mask.width(), m.mask.height());
                m.score = 0.0;
            }
        }
        Ok(set)
    }
    fn propagate(
        &self,
        previous: &MaskSet,
        target: &PropagateTarget<'_>,
    ) -> Result<MaskSet, SegError> {
        self.inner.propagate(previous, target)
    }
}

#[test]
fn second_iteration_recovers_what_a_flaky_backend_dropped() {
    let sc = scene(&four_boxes());
    let rules = PlausibilityRules::default();
    let full = run(&sc, 0, &oracle(&sc), RefineParams::default(), &rules).unwrap();

    let flaky = |cameras| Flaky {
        inner: oracle(&sc),
        calls: AtomicUsize::new(0),
        cameras,
    };
    let once = run(
        &sc,
        0,
        &flaky(2),
        RefineParams {
            n_iter: 1,
            h_hop: 1,
        },
        &rules,
    )
    .unwrap();
    assert!(once.accepted.len() < full.accepted.len());
    let twice = run(
        &sc,
        0,
        &flaky(2),
        RefineParams {
            n_iter: 2,
            h_hop: 1,
        },
        &rules,
    )
    .unwrap();
    assert_eq!(twice.accepted.len(), full.accepted.len());
    assert_eq!(twice.iteration, 2);
    twice.check_partition(sc.frames[0].points.len()).unwrap();
}

struct Failing;

impl SegBackend for Failing {
    fn name(&self) -> &str {
        "failing"
    }
    fn segment(&self, _: &SegRequest<'_>) -> Result<MaskSet, SegError> {
        Err(SegError::BackendUnavailable("down".into()))
    }
    fn propagate(&self, _: &MaskSet, _: &PropagateTarget<'_>) -> Result<MaskSet, SegError> {
        Err(SegError::BackendUnavailable("down".into()))
    }
}

#[test]
fn backend_failure_leaves_the_store_untouched() {
    let sc = scene(&four_boxes());
    let f = &sc.frames[0];
    let clustering = ClusterParams::default();
    let deps = RefineDeps {
        clustering: &clustering,
        backend: &Failing,
        crossview_gate: 0.8,
        background: DEFAULT_BACKGROUND,
        sensor_to_world: &f.ego_pose,
        history: &[],
        history_radius_m: 5.0,
    };
    let mut store = PatchStore::new();
    let err = refine_frame(
        f,
        RefineParams::default(),
        &deps,
        &PlausibilityRules::default(),
        &mut store,
    );
    assert!(matches!(
        err,
        Err(sg4d::refinement::RefineError::Segmentation(_))
    ));
    assert!(store.is_empty());
}

#[test]
fn more_iterations_only_add_objects() {
    let sc = scene(&four_boxes());
    let rules = PlausibilityRules::default();
    let backend = oracle(&sc);
    let one = run(
        &sc,
        5,
        &backend,
        RefineParams {
            n_iter: 1,
            h_hop: 1,
        },
        &rules,
    )
    .unwrap();
    let two = run(
        &sc,
        5,
        &backend,
        RefineParams {
            n_iter: 2,
            h_hop: 1,
        },
        &rules,
    )
    .unwrap();
    for s in &one.accepted {
        assert!(two
            .accepted
            .iter()
            .any(|t| t.point_indices == s.point_indices));
    }
}
