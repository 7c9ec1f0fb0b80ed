//! Promptable segmentation backends.
//!
//! Every backend turns one prompt group (the projected proposal points of one
//! cluster) into one mask for one camera. The pipeline only sees the
//! [`SegBackend`] trait; which implementation runs is a config choice.

mod file;
mod oracle;
mod remote;

use crate::mask::BinaryMask;
use image::RgbImage;

pub use file::FileBackend;
pub use oracle::OracleBackend;
pub use remote::{
    encode_png_base64, PropagateRequestWire, RemoteBackend, SegmentMaskWire, SegmentRequestWire,
    SegmentResponseWire,
};

/// One returned mask. `mask_id` is the prompt-group index for `segment`, and
/// is carried over unchanged by `propagate`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMask {
    pub mask_id: u32,
    pub mask: BinaryMask,
    pub prompt_points: Vec<[f64; 2]>,
    pub score: f64,
}

/// All masks of one camera at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub camera_id: String,
    pub frame_key: String,
    pub timestamp: f64,
    pub width: u32,
    pub height: u32,
    pub masks: Vec<ObjectMask>,
}

impl MaskSet {
    pub fn empty(
        camera_id: &str,
        frame_key: &str,
        timestamp: f64,
        width: u32,
        height: u32,
    ) -> Self {
        Self {
            camera_id: camera_id.into(),
            frame_key: frame_key.into(),
            timestamp,
            width,
            height,
            masks: Vec::new(),
        }
    }

    pub fn get(&self, mask_id: u32) -> Option<&ObjectMask> {
        self.masks.iter().find(|m| m.mask_id == mask_id)
    }
}

/// Prompts for one camera image; one group per proposal cluster.
#[derive(Debug, Clone)]
pub struct SegRequest<'a> {
    pub frame_key: &'a str,
    pub timestamp: f64,
    pub camera_id: &'a str,
    pub image: &'a RgbImage,
    pub prompt_groups: Vec<Vec<[f64; 2]>>,
}

impl SegRequest<'_> {
    pub fn validate(&self) -> Result<(), SegError> {
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        for (g, group) in self.prompt_groups.iter().enumerate() {
            for p in group {
                if !(p[0] >= 0.0 && p[0] < w && p[1] >= 0.0 && p[1] < h) {
                    return Err(SegError::InvalidRequest(format!(
                        "prompt ({}, {}) of group {g} lies outside the {w}x{h} image",
                        p[0], p[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Target frame for mask propagation.
#[derive(Debug, Clone)]
pub struct PropagateTarget<'a> {
    pub frame_key: &'a str,
    pub timestamp: f64,
    pub image: &'a RgbImage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    /// Whether `segment` may be called from several threads at once.
    pub concurrent: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SegError {
    #[error("segmentation backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("mask {path} is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    MaskShapeMismatch {
        path: String,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("invalid segmentation request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
}

pub trait SegBackend: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities {
        Capabilities { concurrent: true }
    }

    /// Returns exactly one mask per prompt group, with the image's dimensions.
    fn segment(&self, request: &SegRequest<'_>) -> Result<MaskSet, SegError>;

    /// Carries masks of the previous frame of the same camera stream forward.
    fn propagate(
        &self,
        previous: &MaskSet,
        target: &PropagateTarget<'_>,
    ) -> Result<MaskSet, SegError>;
}

impl<T: SegBackend + ?Sized> SegBackend for Box<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn segment(&self, request: &SegRequest<'_>) -> Result<MaskSet, SegError> {
        (**self).segment(request)
    }
    fn propagate(
        &self,
        previous: &MaskSet,
        target: &PropagateTarget<'_>,
    ) -> Result<MaskSet, SegError> {
        (**self).propagate(previous, target)
    }
}
