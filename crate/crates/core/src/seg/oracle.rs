use std::collections::BTreeMap;
use std::sync::Arc;

use super::{MaskSet, ObjectMask, PropagateTarget, SegBackend, SegError, SegRequest};
use crate::mask::BinaryMask;
use crate::synth::{GroundTruth, ViewTruth, NO_INSTANCE};

/// Answers prompts with the synthetic harness's ground-truth silhouettes.
///
/// A prompt group selects the instance seen most often at its prompt pixels
/// (ties to the smaller instance id); the answer is that instance's
/// silhouette. Groups that only touch background get an empty mask, score 0.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    truth: Arc<GroundTruth>,
}

impl OracleBackend {
    pub fn new(truth: Arc<GroundTruth>) -> Self {
        Self { truth }
    }

    fn view(&self, frame_key: &str, camera_id: &str) -> Result<&ViewTruth, SegError> {
        self.truth
            .frame(frame_key)
            .and_then(|f| f.views.get(camera_id))
            .ok_or_else(|| {
                SegError::InvalidRequest(format!(
                    "no ground truth for frame {frame_key:?} camera {camera_id:?}"
                ))
            })
    }
}

fn vote(view: &ViewTruth, prompts: &[[f64; 2]]) -> Option<u16> {
    let mut counts: BTreeMap<u16, usize> = BTreeMap::new();
    for p in prompts {
        let id = view.id_at(p[0].floor() as u32, p[1].floor() as u32);
        if id != NO_INSTANCE {
            *counts.entry(id).or_default() += 1;
        }
    }
    // max_by_key keeps the last maximum; descending ids make that the smallest id.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .map(|(id, _)| id)
}

fn identify(view: &ViewTruth, mask: &BinaryMask) -> Option<u16> {
    view.silhouettes
        .iter()
        .map(|(&id, px)| {
            (
                id,
                px.iter().filter(|&&p| mask.as_slice()[p as usize]).count(),
            )
        })
        .filter(|&(_, n)| n > 0)
        .rev()
        .max_by_key(|&(_, n)| n)
        .map(|(id, _)| id)
}

fn answer(
    view: &ViewTruth,
    mask_id: u32,
    instance: Option<u16>,
    prompt_points: Vec<[f64; 2]>,
) -> ObjectMask {
    let mask = match instance {
        Some(id) => view.silhouette(id),
        None => BinaryMask::empty(view.width, view.height),
    };
    let score = if mask.is_empty() { 0.0 } else { 1.0 };
    ObjectMask {
        mask_id,
        mask,
        prompt_points,
        score,
    }
}

impl SegBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn segment(&self, request: &SegRequest<'_>) -> Result<MaskSet, SegError> {
        request.validate()?;
        let view = self.view(request.frame_key, request.camera_id)?;
        let (w, h) = request.image.dimensions();
        if (w, h) != (view.width, view.height) {
            return Err(SegError::InvalidRequest(format!(
                "image is {w}x{h}, ground truth is {}x{}",
                view.width, view.height
            )));
        }
        let masks = request
            .prompt_groups
            .iter()
            .enumerate()
            .map(|(g, prompts)| answer(view, g as u32, vote(view, prompts), prompts.clone()))
            .collect();
        Ok(MaskSet {
            camera_id: request.camera_id.to_string(),
            frame_key: request.frame_key.to_string(),
            timestamp: request.timestamp,
            width: w,
            height: h,
            masks,
        })
    }

    fn propagate(
        &self,
        previous: &MaskSet,
        target: &PropagateTarget<'_>,
    ) -> Result<MaskSet, SegError> {
        let before = self.view(&previous.frame_key, &previous.camera_id)?;
        let after = self.view(target.frame_key, &previous.camera_id)?;
        let masks = previous
            .masks
            .iter()
            .filter(|m| !m.mask.is_empty())
            .map(|m| {
                answer(
                    after,
                    m.mask_id,
                    identify(before, &m.mask),
                    m.prompt_points.clone(),
                )
            })
            .collect();
        Ok(MaskSet {
            camera_id: previous.camera_id.clone(),
            frame_key: target.frame_key.to_string(),
            timestamp: target.timestamp,
            width: after.width,
            height: after.height,
            masks,
        })
    }
}
