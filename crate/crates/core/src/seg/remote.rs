use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{MaskSet, ObjectMask, PropagateTarget, SegBackend, SegError, SegRequest};
use crate::http::{HttpError, JsonClient};
use crate::mask::Rle;

/// Body of `POST /segment`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequestWire {
    /// PNG, standard base64.
    pub image: String,
    /// One positive multi-point prompt per group, `(u, v)` in pixels.
    pub prompt_groups: Vec<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub camera_id: String,
    pub frame_key: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMaskWire {
    /// Prompt-group index for `/segment`; carried id for `/propagate`.
    #[serde(default)]
    pub mask_id: u32,
    pub rle: Rle,
    pub score: f64,
}

/// Response of both `/segment` and `/propagate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponseWire {
    pub masks: Vec<SegmentMaskWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

/// Body of `POST /propagate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagateRequestWire {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub camera_id: String,
    pub frame_key: String,
    pub timestamp: f64,
    pub masks: Vec<SegmentMaskWire>,
}

pub fn encode_png_base64(image: &RgbImage) -> String {
    let mut buf = Vec::new();
    image
        .write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    base64::engine::general_purpose::STANDARD.encode(buf)
}

/// Client for the model-adapter segmentation endpoints.
#[derive(Debug)]
pub struct RemoteBackend {
    client: JsonClient,
    sessions: Mutex<BTreeMap<String, String>>,
}

impl RemoteBackend {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            client: JsonClient::new(base_url, timeout),
            sessions: Mutex::new(BTreeMap::new()),
        }
    }

    fn call<T: Serialize>(&self, path: &str, body: &T) -> Result<SegmentResponseWire, SegError> {
        self.client.post(path, body).map_err(|e| match e {
            HttpError::Malformed { reason, .. } => SegError::MalformedResponse(reason),
            other => SegError::BackendUnavailable(other.to_string()),
        })
    }

    fn session(&self, camera_id: &str) -> Option<String> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(camera_id)
            .cloned()
    }

    fn remember(&self, camera_id: &str, session: Option<String>) {
        if let Some(s) = session {
            self.sessions
                .lock()
                .expect("session map poisoned")
                .insert(camera_id.to_string(), s);
        }
    }
}

fn decode_masks(
    wire: Vec<SegmentMaskWire>,
    width: u32,
    height: u32,
    prompts: impl Fn(u32) -> Vec<[f64; 2]>,
) -> Result<Vec<ObjectMask>, SegError> {
    wire.into_iter()
        .map(|m| {
            if m.rle.size != [height, width] {
                return Err(SegError::MalformedResponse(format!(
                    "mask {} has size {:?}, expected [{height}, {width}]",
                    m.mask_id, m.rle.size
                )));
            }
            if !(0.0..=1.0).contains(&m.score) {
                return Err(SegError::MalformedResponse(format!(
                    "mask {} score {} outside [0, 1]",
                    m.mask_id, m.score
                )));
            }
            let mask = m
                .rle
                .decode()
                .map_err(|e| SegError::MalformedResponse(e.to_string()))?;
            Ok(ObjectMask {
                mask_id: m.mask_id,
                mask,
                prompt_points: prompts(m.mask_id),
                score: m.score,
            })
        })
        .collect()
}

impl SegBackend for RemoteBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn segment(&self, request: &SegRequest<'_>) -> Result<MaskSet, SegError> {
        request.validate()?;
        let body = SegmentRequestWire {
            image: encode_png_base64(request.image),
            prompt_groups: request.prompt_groups.clone(),
            session_id: self.session(request.camera_id),
            camera_id: request.camera_id.to_string(),
            frame_key: request.frame_key.to_string(),
            timestamp: request.timestamp,
        };
        let resp = self.call("/segment", &body)?;
        if resp.masks.len() != request.prompt_groups.len() {
            return Err(SegError::MalformedResponse(format!(
                "{} masks for {} prompt groups",
                resp.masks.len(),
                request.prompt_groups.len()
            )));
        }
        self.remember(request.camera_id, resp.session_id);
        // Masks come back in prompt-group order; the index is the id.
        let wire = resp
            .masks
            .into_iter()
            .enumerate()
            .map(|(g, m)| SegmentMaskWire {
                mask_id: g as u32,
                ..m
            })
            .collect();
        let (w, h) = request.image.dimensions();
        let masks = decode_masks(wire, w, h, |g| request.prompt_groups[g as usize].clone())?;
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
        let alive: Vec<&ObjectMask> = previous
            .masks
            .iter()
            .filter(|m| !m.mask.is_empty())
            .collect();
        let body = PropagateRequestWire {
            image: encode_png_base64(target.image),
            session_id: self.session(&previous.camera_id),
            camera_id: previous.camera_id.clone(),
            frame_key: target.frame_key.to_string(),
            timestamp: target.timestamp,
            masks: alive
                .iter()
                .map(|m| SegmentMaskWire {
                    mask_id: m.mask_id,
                    rle: m.mask.to_rle(),
                    score: m.score,
                })
                .collect(),
        };
        let resp = self.call("/propagate", &body)?;
        self.remember(&previous.camera_id, resp.session_id);
        let (w, h) = target.image.dimensions();
        let masks = decode_masks(resp.masks, w, h, |id| {
            previous
                .get(id)
                .map(|m| m.prompt_points.clone())
                .unwrap_or_default()
        })?;
        let mut seen = std::collections::BTreeSet::new();
        for m in &masks {
            if previous.get(m.mask_id).is_none() || !seen.insert(m.mask_id) {
                return Err(SegError::MalformedResponse(format!(
                    "propagated mask id {} is unknown or repeated",
                    m.mask_id
                )));
            }
        }
        Ok(MaskSet {
            camera_id: previous.camera_id.clone(),
            frame_key: target.frame_key.to_string(),
            timestamp: target.timestamp,
            width: w,
            height: h,
            masks,
        })
    }
}
