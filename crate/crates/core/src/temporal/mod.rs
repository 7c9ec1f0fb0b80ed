//! Frame-to-frame association of object tokens into persistent tracks.

use serde::{Deserialize, Serialize};

use crate::geometry::hungarian_match;
use crate::step::{PatchStore, ShapeToken, StepTokenSet};

/// Length scale of the centroid fallback used for zero-volume boxes.
const DEGENERATE_SCALE_M: f64 = 1.0;
/// Combined costs at or above this never match.
pub const COST_GATE: f64 = 1.0;
const BINS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Active,
    Terminated,
}

/// Time-ordered token sets of one object identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub object_id: u64,
    /// Steps inside the current window, strictly increasing timestamps.
    pub steps: Vec<StepTokenSet>,
    pub status: TrackStatus,
    /// First appearance; survives steps scrolling out of the window.
    pub birth: f64,
    pub last_seen: f64,
    /// Consecutive frames without a match.
    #[serde(default)]
    pub missed_frames: usize,
}

impl Track {
    pub fn latest(&self) -> Option<&StepTokenSet> {
        self.steps.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociationParams {
    pub max_match_distance_m: f64,
    pub distance_weight: f64,
    pub shape_weight: f64,
    pub appearance_weight: f64,
    pub max_gap_frames: usize,
}

impl Default for AssociationParams {
    fn default() -> Self {
        Self {
            max_match_distance_m: 5.0,
            distance_weight: 0.5,
            shape_weight: 0.3,
            appearance_weight: 0.2,
            max_gap_frames: 3,
        }
    }
}

impl AssociationParams {
    pub fn validate(&self) -> Result<(), String> {
        let w = [
            self.distance_weight,
            self.shape_weight,
            self.appearance_weight,
        ];
        if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err("association weights must lie in [0, 1]".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("association weights must sum to 1".into());
        }
        if !(self.max_match_distance_m > 0.0) {
            return Err("association.max_match_distance_m must be > 0".into());
        }
        Ok(())
    }
}

/// `1 - IoU` of the two axis-aligned extent boxes. When either box has zero
/// volume the boxes are compared by centre distance instead:
/// `1 - exp(-d / 1 m)`.
pub fn shape_dissimilarity(a: &ShapeToken, b: &ShapeToken) -> f64 {
    let (aa, bb) = (a.axes(), b.axes());
    let vol = |s: &[crate::step::AxisStats; 3]| s.iter().map(|x| x.extent()).product::<f64>();
    let (va, vb) = (vol(&aa), vol(&bb));
    if va <= 0.0 || vb <= 0.0 {
        let d: f64 = aa
            .iter()
            .zip(&bb)
            .map(|(x, y)| (x.mean - y.mean).powi(2))
            .sum::<f64>()
            .sqrt();
        return 1.0 - (-d / DEGENERATE_SCALE_M).exp();
    }
    let inter: f64 = aa
        .iter()
        .zip(&bb)
        .map(|(x, y)| (x.max.min(y.max) - x.min.max(y.min)).max(0.0))
        .product();
    let iou = inter / (va + vb - inter);
    (1.0 - iou).clamp(0.0, 1.0)
}

/// Joint 8x8x8 RGB histogram over the non-background pixels of all patches.
pub fn appearance_histogram(
    step: &StepTokenSet,
    store: &PatchStore,
    background: [u8; 3],
) -> Vec<f64> {
    let mut h = vec![0.0; BINS * BINS * BINS];
    for p in &step.patch_tokens {
        let Some(img) = store.get(&p.patch_ref) else {
            continue;
        };
        for px in img.pixels() {
            if px.0 == background {
                continue;
            }
            let [r, g, b] = px.0.map(|c| c as usize * BINS / 256);
            h[(r * BINS + g) * BINS + b] += 1.0;
        }
    }
    h
}

/// `1 - cos` of the appearance histograms; 0.5 when either side has nothing
/// to compare.
pub fn appearance_dissimilarity(
    a: &StepTokenSet,
    b: &StepTokenSet,
    store: &PatchStore,
    background: [u8; 3],
) -> f64 {
    if a.patch_tokens.is_empty() || b.patch_tokens.is_empty() {
        return 0.5;
    }
    let ha = appearance_histogram(a, store, background);
    let hb = appearance_histogram(b, store, background);
    let dot: f64 = ha.iter().zip(&hb).map(|(x, y)| x * y).sum();
    let na = ha.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = hb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.5;
    }
    (1.0 - dot / (na * nb)).clamp(0.0, 1.0)
}

/// Live tracks of a sequence plus the id counter.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackSet {
    /// Tracks with at least one step in the window, sorted by object id.
    pub tracks: Vec<Track>,
    /// Ids of tracks whose steps all left the window.
    pub archived: Vec<u64>,
    pub next_id: u64,
}

impl TrackSet {
    pub fn new() -> Self {
        Self {
            tracks: Vec::new(),
            archived: Vec::new(),
            next_id: 1,
        }
    }

    pub fn get(&self, object_id: u64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.object_id == object_id)
    }

    pub fn active(&self) -> impl Iterator<Item = &Track> {
        self.tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active)
    }
}

/// What one association step changed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssociationOutcome {
    /// `(object_id, index into new_steps)`.
    pub matched: Vec<(u64, usize)>,
    pub born: Vec<u64>,
    pub terminated: Vec<u64>,
}

/// Combined association cost, or `None` when the centroid gate fails.
pub fn association_cost(
    track_step: &StepTokenSet,
    step: &StepTokenSet,
    params: &AssociationParams,
    store: &PatchStore,
    background: [u8; 3],
) -> Option<f64> {
    let d = track_step.centroid.distance(&step.centroid);
    if d > params.max_match_distance_m {
        return None;
    }
    let mut cost = params.distance_weight * d / params.max_match_distance_m;
    if params.shape_weight > 0.0 {
        cost += params.shape_weight * shape_dissimilarity(&track_step.shape, &step.shape);
    }
    if params.appearance_weight > 0.0 {
        cost += params.appearance_weight
            * appearance_dissimilarity(track_step, step, store, background);
    }
    Some(cost)
}

fn canonical_step_order(steps: &[StepTokenSet]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..steps.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&steps[i], &steps[j]);
        a.centroid
            .to_array()
            .iter()
            .zip(b.centroid.to_array().iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.point_indices.cmp(&b.point_indices))
    });
    order
}

/// Matches the steps of one frame at time `t` to the active tracks.
///
/// Matched steps extend their track and take its object id; unmatched steps
/// start new tracks with fresh ids; active tracks unmatched for more than
/// `max_gap_frames` consecutive frames are terminated. Every step's temporal
/// token is rewritten to `(track birth, t)`.
pub fn associate(
    set: &mut TrackSet,
    mut new_steps: Vec<StepTokenSet>,
    t: f64,
    params: &AssociationParams,
    store: &PatchStore,
    background: [u8; 3],
) -> AssociationOutcome {
    set.tracks.sort_by_key(|tr| tr.object_id);
    let active: Vec<usize> = (0..set.tracks.len())
        .filter(|&i| set.tracks[i].status == TrackStatus::Active)
        .collect();
    // Rows in object-id order, columns in centroid order: the solution does
    // not depend on the order new_steps arrived in.
    let cols = canonical_step_order(&new_steps);
    let cost: Vec<Vec<f64>> = active
        .iter()
        .map(|&ti| {
            let last = set.tracks[ti].latest().expect("live tracks have steps");
            cols.iter()
                .map(|&si| {
                    association_cost(last, &new_steps[si], params, store, background)
                        .unwrap_or(f64::INFINITY)
                })
                .collect()
        })
        .collect();
    let matching = hungarian_match(&cost, COST_GATE);

    let mut outcome = AssociationOutcome::default();
    let mut step_taken = vec![false; new_steps.len()];
    let mut track_matched = vec![false; active.len()];
    let mut placements: Vec<(usize, usize)> = Vec::new();
    for &(r, c) in &matching.pairs {
        let (ti, si) = (active[r], cols[c]);
        step_taken[si] = true;
        track_matched[r] = true;
        placements.push((ti, si));
        outcome.matched.push((set.tracks[ti].object_id, si));
    }
    for (ti, si) in placements {
        let tr = &mut set.tracks[ti];
        let mut step = std::mem::replace(&mut new_steps[si], placeholder());
        step.object_id = tr.object_id;
        step.temporal.t_start = tr.birth;
        step.temporal.t_end = t;
        tr.steps.push(step);
        tr.last_seen = t;
        tr.missed_frames = 0;
    }
    for (r, &ti) in active.iter().enumerate() {
        if track_matched[r] {
            continue;
        }
        let tr = &mut set.tracks[ti];
        tr.missed_frames += 1;
        if tr.missed_frames > params.max_gap_frames {
            tr.status = TrackStatus::Terminated;
            if let Some(last) = tr.steps.last_mut() {
                last.temporal.t_end = tr.last_seen;
            }
            outcome.terminated.push(tr.object_id);
        }
    }
    for &si in &cols {
        if step_taken[si] {
            continue;
        }
        let id = set.next_id;
        set.next_id += 1;
        let mut step = std::mem::replace(&mut new_steps[si], placeholder());
        step.object_id = id;
        step.temporal.t_start = t;
        step.temporal.t_end = t;
        set.tracks.push(Track {
            object_id: id,
            steps: vec![step],
            status: TrackStatus::Active,
            birth: t,
            last_seen: t,
            missed_frames: 0,
        });
        outcome.born.push(id);
    }
    outcome.matched.sort_unstable();
    outcome
}

fn placeholder() -> StepTokenSet {
    let axis = crate::step::AxisStats {
        mean: 0.0,
        std: 0.0,
        min: 0.0,
        max: 0.0,
    };
    StepTokenSet {
        object_id: 0,
        timestamp: 0.0,
        patch_tokens: vec![],
        centroid: crate::step::CentroidToken {
            x: 0.0,
            y: 0.0,
            z: 0.0,
        },
        shape: ShapeToken {
            x: axis,
            y: axis,
            z: axis,
        },
        temporal: crate::step::TemporalToken {
            t_start: 0.0,
            t_end: 0.0,
        },
        point_indices: vec![],
        source_cameras: vec![],
    }
}

/// Drops steps with `timestamp <= cutoff`. Tracks left without steps leave
/// the live set; their ids move to `archived`. Temporal tokens of the
/// surviving steps are untouched.
///
/// With a window of `T` frames the caller passes the timestamp of the frame
/// `T` frames before the current one, so exactly the last `T` frames survive.
pub fn window_prune(set: &mut TrackSet, cutoff: f64) -> Vec<u64> {
    for tr in &mut set.tracks {
        tr.steps.retain(|s| s.timestamp > cutoff);
    }
    let mut gone = Vec::new();
    set.tracks.retain(|tr| {
        if tr.steps.is_empty() {
            gone.push(tr.object_id);
            false
        } else {
            true
        }
    });
    set.archived.extend(&gone);
    gone
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::step::{AxisStats, CentroidToken, TemporalToken};

    fn step_at(x: f64, half: f64, t: f64) -> StepTokenSet {
        let ax = |m: f64| AxisStats {
            mean: m,
            std: half / 2.0,
            min: m - half,
            max: m + half,
        };
        StepTokenSet {
            object_id: 0,
            timestamp: t,
            patch_tokens: vec![],
            centroid: CentroidToken { x, y: 0.0, z: 0.0 },
            shape: ShapeToken {
                x: ax(x),
                y: ax(0.0),
                z: ax(0.0),
            },
            temporal: TemporalToken {
                t_start: t,
                t_end: t,
            },
            point_indices: vec![0],
            source_cameras: vec![],
        }
    }

    fn params(gate: f64) -> AssociationParams {
        AssociationParams {
            max_match_distance_m: gate,
            ..Default::default()
        }
    }

    #[test]
    fn shape_examples() {
        let a = step_at(0.0, 0.5, 0.0).shape;
        assert_eq!(shape_dissimilarity(&a, &a), 0.0);
        assert_eq!(shape_dissimilarity(&a, &step_at(5.0, 0.5, 0.0).shape), 1.0);
        let half = shape_dissimilarity(&a, &step_at(0.5, 0.5, 0.0).shape);
        assert!((half - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_use_distance() {
        let a = step_at(0.0, 0.0, 0.0).shape;
        assert_eq!(shape_dissimilarity(&a, &a), 0.0);
        let d = shape_dissimilarity(&a, &step_at(1.0, 0.0, 0.0).shape);
        assert!((d - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn near_step_keeps_identity_far_step_births() {
        let store = PatchStore::new();
        let mut set = TrackSet::new();
        associate(
            &mut set,
            vec![step_at(0.0, 0.5, 0.0)],
            0.0,
            &params(2.0),
            &store,
            [128; 3],
        );
        let out = associate(
            &mut set,
            vec![step_at(0.5, 0.5, 1.0)],
            1.0,
            &params(2.0),
            &store,
            [128; 3],
        );
        assert_eq!(out.matched, vec![(1, 0)]);
        assert_eq!(set.tracks[0].steps.len(), 2);
        assert_eq!(
            set.tracks[0].steps[1].temporal,
            TemporalToken {
                t_start: 0.0,
                t_end: 1.0
            }
        );

        let out = associate(
            &mut set,
            vec![step_at(10.0, 0.5, 2.0)],
            2.0,
            &params(2.0),
            &store,
            [128; 3],
        );
        assert!(out.matched.is_empty());
        assert_eq!(out.born, vec![2]);
        assert_eq!(set.get(1).unwrap().missed_frames, 1);
    }

    #[test]
    fn unseen_tracks_terminate_after_the_gap() {
        let store = PatchStore::new();
        let mut set = TrackSet::new();
        let p = AssociationParams {
            max_gap_frames: 2,
            ..Default::default()
        };
        associate(
            &mut set,
            vec![step_at(0.0, 0.5, 0.0)],
            0.0,
            &p,
            &store,
            [128; 3],
        );
        for t in 1..=2 {
            let out = associate(&mut set, vec![], t as f64, &p, &store, [128; 3]);
            assert!(out.terminated.is_empty());
        }
        let out = associate(&mut set, vec![], 3.0, &p, &store, [128; 3]);
        assert_eq!(out.terminated, vec![1]);
        let tr = set.get(1).unwrap();
        assert_eq!(tr.status, TrackStatus::Terminated);
        assert_eq!(tr.steps.last().unwrap().temporal.t_end, tr.last_seen);
    }

    #[test]
    fn prune_keeps_birth_and_archives_empty_tracks() {
        let store = PatchStore::new();
        let mut set = TrackSet::new();
        for t in 0..15 {
            associate(
                &mut set,
                vec![step_at(0.1 * t as f64, 0.5, t as f64)],
                t as f64,
                &params(5.0),
                &store,
                [128; 3],
            );
        }
        window_prune(&mut set, 14.0 - 10.0);
        let tr = set.get(1).unwrap();
        assert_eq!(tr.steps.len(), 10);
        assert_eq!(tr.steps[0].temporal.t_start, 0.0);
        assert_eq!(window_prune(&mut set, 100.0), vec![1]);
        assert!(set.tracks.is_empty());
        assert_eq!(set.archived, vec![1]);
    }
}
