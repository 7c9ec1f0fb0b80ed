use std::collections::BTreeMap;

use super::{CameraProjection, GeometryError};
use crate::seg::MaskSet;

/// Identifies one mask of one camera.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MaskKey {
    pub camera_id: String,
    pub mask_id: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MaskAssignment {
    /// Sorted point indices owned by each mask. Masks that received no point
    /// are present with an empty list.
    pub per_mask: BTreeMap<MaskKey, Vec<usize>>,
    /// Candidates that landed in no mask (including invisible ones).
    pub residual: Vec<usize>,
}

/// Assigns each candidate point to at most one mask.
///
/// A point is a candidate for a mask when it is visible in that mask's camera
/// and the pixel containing its projection is set. Among several candidate
/// masks the one seen at the smallest camera depth wins; ties go to the
/// lexicographically smaller `camera_id`, then to the earlier mask in its set.
pub fn assign_points_to_masks(
    projections: &[CameraProjection],
    masks: &[MaskSet],
    candidates: &[usize],
) -> Result<MaskAssignment, GeometryError> {
    let mut views = Vec::with_capacity(masks.len());
    for set in masks {
        let proj = projections
            .iter()
            .find(|p| p.camera_id == set.camera_id)
            .ok_or_else(|| {
                GeometryError::InconsistentViews(format!(
                    "mask set references unknown camera_id {:?}",
                    set.camera_id
                ))
            })?;
        for m in &set.masks {
            if m.mask.width() != proj.width || m.mask.height() != proj.height {
                return Err(GeometryError::InconsistentViews(format!(
                    "mask {} of camera {:?} is {}x{}, camera is {}x{}",
                    m.mask_id,
                    set.camera_id,
                    m.mask.width(),
                    m.mask.height(),
                    proj.width,
                    proj.height
                )));
            }
        }
        views.push((set, proj));
    }
    // Deterministic camera order for the tie rule.
    views.sort_by(|a, b| a.0.camera_id.cmp(&b.0.camera_id));

    let mut per_mask: BTreeMap<MaskKey, Vec<usize>> = BTreeMap::new();
    for (set, _) in &views {
        for m in &set.masks {
            per_mask
                .entry(MaskKey {
                    camera_id: set.camera_id.clone(),
                    mask_id: m.mask_id,
                })
                .or_default();
        }
    }
    let mut residual = Vec::new();
    for &i in candidates {
        let mut best: Option<(f64, usize, usize)> = None;
        for (v, (set, proj)) in views.iter().enumerate() {
            let Some(pp) = proj.points.get(i) else {
                return Err(GeometryError::InconsistentViews(format!(
                    "point {i} missing from projection of camera {:?}",
                    proj.camera_id
                )));
            };
            let Some((x, y)) = pp.pixel() else { continue };
            let Some(mi) = set.masks.iter().position(|m| m.mask.get(x, y)) else {
                continue;
            };
            // Views are sorted, so a strict comparison keeps the smaller id on ties.
            if best.is_none_or(|(d, _, _)| pp.depth < d) {
                best = Some((pp.depth, v, mi));
            }
        }
        match best {
            Some((_, v, mi)) => {
                let set = views[v].0;
                per_mask
                    .get_mut(&MaskKey {
                        camera_id: set.camera_id.clone(),
                        mask_id: set.masks[mi].mask_id,
                    })
                    .expect("key inserted above")
                    .push(i);
            }
            None => residual.push(i),
        }
    }
    for v in per_mask.values_mut() {
        v.sort_unstable();
    }
    residual.sort_unstable();
    Ok(MaskAssignment { per_mask, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ProjectedPoint;
    use crate::mask::BinaryMask;
    use crate::seg::ObjectMask;

    fn proj(camera: &str, pts: &[(f64, f64, f64)]) -> CameraProjection {
        CameraProjection {
            camera_id: camera.into(),
            width: 10,
            height: 10,
            points: pts
                .iter()
                .enumerate()
                .map(|(i, &(u, v, d))| ProjectedPoint {
                    point_index: i,
                    u,
                    v,
                    depth: d,
                    visible: d > 0.1 && (0.0..10.0).contains(&u) && (0.0..10.0).contains(&v),
                })
                .collect(),
        }
    }

    fn masks(camera: &str, rasters: Vec<BinaryMask>) -> MaskSet {
        MaskSet {
            camera_id: camera.into(),
            frame_key: "f".into(),
            timestamp: 0.0,
            width: 10,
            height: 10,
            masks: rasters
                .into_iter()
                .enumerate()
                .map(|(i, mask)| ObjectMask {
                    mask_id: i as u32,
                    mask,
                    prompt_points: vec![],
                    score: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn full_mask_takes_every_visible_point() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64 + 0.5, 5.0, 3.0)).collect();
        let p = proj("a", &pts);
        let m = masks("a", vec![BinaryMask::full(10, 10)]);
        let out = assign_points_to_masks(&[p], &[m], &(0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!(out.per_mask.values().next().unwrap().len(), 10);
        assert!(out.residual.is_empty());
    }

    #[test]
    fn no_masks_leaves_everything_residual() {
        let p = proj("a", &[(1.0, 1.0, 2.0), (2.0, 2.0, 2.0)]);
        let out = assign_points_to_masks(&[p], &[], &[0, 1]).unwrap();
        assert!(out.per_mask.is_empty());
        assert_eq!(out.residual, vec![0, 1]);
    }

    #[test]
    fn unknown_camera_is_inconsistent() {
        let p = proj("a", &[(1.0, 1.0, 2.0)]);
        let m = masks("b", vec![BinaryMask::full(10, 10)]);
        assert!(matches!(
            assign_points_to_masks(&[p], &[m], &[0]),
            Err(GeometryError::InconsistentViews(_))
        ));
    }

    /// Enumerates the four (mask in near camera, mask in far camera) cases for
    /// a point visible in both cameras.
    #[test]
    fn nearest_camera_rule_table() {
        let near = proj("near", &[(5.0, 5.0, 2.0)]);
        let far = proj("far", &[(5.0, 5.0, 8.0)]);
        for (near_has, far_has) in [(false, false), (false, true), (true, false), (true, true)] {
            let mk = |has: bool| {
                if has {
                    BinaryMask::full(10, 10)
                } else {
                    BinaryMask::empty(10, 10)
                }
            };
            let sets = vec![
                masks("near", vec![mk(near_has)]),
                masks("far", vec![mk(far_has)]),
            ];
            let out = assign_points_to_masks(&[near.clone(), far.clone()], &sets, &[0]).unwrap();
            let owner: Vec<&str> = out
                .per_mask
                .iter()
                .filter(|(_, v)| !v.is_empty())
                .map(|(k, _)| k.camera_id.as_str())
                .collect();
            let expected: Vec<&str> = match (near_has, far_has) {
                (false, false) => vec![],
                (false, true) => vec!["far"],
                (true, _) => vec!["near"],
            };
            assert_eq!(owner, expected, "case {near_has}/{far_has}");
            assert_eq!(out.residual.is_empty(), near_has || far_has);
        }
    }

    #[test]
    fn equal_depth_prefers_smaller_camera_id() {
        let a = proj("a", &[(5.0, 5.0, 4.0)]);
        let b = proj("b", &[(5.0, 5.0, 4.0)]);
        let sets = vec![
            masks("b", vec![BinaryMask::full(10, 10)]),
            masks("a", vec![BinaryMask::full(10, 10)]),
        ];
        let out = assign_points_to_masks(&[b, a], &sets, &[0]).unwrap();
        assert_eq!(
            out.per_mask[&MaskKey {
                camera_id: "a".into(),
                mask_id: 0
            }],
            vec![0]
        );
    }

    #[test]
    fn overlapping_masks_in_one_camera_go_to_the_first() {
        let p = proj("a", &[(5.0, 5.0, 4.0)]);
        let sets = vec![masks(
            "a",
            vec![BinaryMask::full(10, 10), BinaryMask::full(10, 10)],
        )];
        let out = assign_points_to_masks(&[p], &sets, &[0]).unwrap();
        assert_eq!(
            out.per_mask[&MaskKey {
                camera_id: "a".into(),
                mask_id: 0
            }],
            vec![0]
        );
        assert!(out.per_mask[&MaskKey {
            camera_id: "a".into(),
            mask_id: 1
        }]
            .is_empty());
    }
}
