use std::collections::BTreeMap;

use super::{hungarian_match, MaskAssignment, MaskKey};

/// `|a ∩ b| / |a ∪ b|` for sorted, deduplicated index lists; 0 when both are empty.
pub fn index_iou(a: &[usize], b: &[usize]) -> f64 {
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// `cost[i][j] = 1 - IoU` of the 3D point sets of mask `i` in view a and mask
/// `j` in view b. Two empty sets cost 1, so they are never matched.
pub fn crossview_mask_cost(sets_a: &[&[usize]], sets_b: &[&[usize]]) -> Vec<Vec<f64>> {
    sets_a
        .iter()
        .map(|a| sets_b.iter().map(|b| 1.0 - index_iou(a, b)).collect())
        .collect()
}

/// Masks of several cameras believed to show the same physical object.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskGroup {
    /// Sorted by camera then mask id.
    pub members: Vec<MaskKey>,
}

/// Chains pairwise Hungarian matches across cameras (in `camera_id` order).
///
/// `per_view` holds the independent per-camera assignment of each camera.
/// Each group carries the union of its members' point sets; every mask of the
/// next camera is matched against those unions. Masks without points never
/// form a group.
pub fn group_masks_across_views(
    per_view: &BTreeMap<String, MaskAssignment>,
    gate: f64,
) -> Vec<MaskGroup> {
    let mut groups: Vec<(Vec<MaskKey>, Vec<usize>)> = Vec::new();
    for assignment in per_view.values() {
        let masks: Vec<(&MaskKey, &Vec<usize>)> = assignment
            .per_mask
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .collect();
        let group_sets: Vec<&[usize]> = groups.iter().map(|g| g.1.as_slice()).collect();
        let mask_sets: Vec<&[usize]> = masks.iter().map(|m| m.1.as_slice()).collect();
        let matched = hungarian_match(&crossview_mask_cost(&group_sets, &mask_sets), gate);
        let mut taken = vec![false; masks.len()];
        for &(g, k) in &matched.pairs {
            taken[k] = true;
            let (members, union) = &mut groups[g];
            members.push(masks[k].0.clone());
            union.extend_from_slice(masks[k].1);
            union.sort_unstable();
            union.dedup();
        }
        for (k, (key, set)) in masks.iter().enumerate() {
            if !taken[k] {
                groups.push((vec![(*key).clone()], (*set).clone()));
            }
        }
    }
    groups
        .into_iter()
        .map(|(mut members, _)| {
            members.sort();
            MaskGroup { members }
        })
        .collect()
}
