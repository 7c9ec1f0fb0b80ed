use std::path::{Path, PathBuf};

use super::{MaskSet, ObjectMask, PropagateTarget, SegBackend, SegError, SegRequest};
use crate::mask::BinaryMask;

/// Reads precomputed masks from `<root>/<frame>/<camera_id>/<group>.png`.
///
/// Any nonzero pixel is set. A missing file yields an empty mask with score 0;
/// a file whose dimensions differ from the camera image is an error.
#[derive(Debug, Clone)]
pub struct FileBackend {
    root: PathBuf,
}

impl FileBackend {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn mask_path(&self, frame_key: &str, camera_id: &str, group: u32) -> PathBuf {
        self.root
            .join(frame_key)
            .join(camera_id)
            .join(format!("{group}.png"))
    }

    fn read(&self, path: &Path, width: u32, height: u32) -> Result<Option<BinaryMask>, SegError> {
        if !path.exists() {
            return Ok(None);
        }
        let img = image::open(path)
            .map_err(|e| SegError::MalformedResponse(format!("{}: {e}", path.display())))?
            .to_luma8();
        if img.width() != width || img.height() != height {
            return Err(SegError::MaskShapeMismatch {
                path: path.display().to_string(),
                got_w: img.width(),
                got_h: img.height(),
                want_w: width,
                want_h: height,
            });
        }
        Ok(Some(BinaryMask::from_gray_image(&img)))
    }

    fn load(
        &self,
        frame_key: &str,
        camera_id: &str,
        mask_id: u32,
        prompt_points: Vec<[f64; 2]>,
        width: u32,
        height: u32,
    ) -> Result<ObjectMask, SegError> {
        let path = self.mask_path(frame_key, camera_id, mask_id);
        Ok(match self.read(&path, width, height)? {
            Some(mask) => ObjectMask {
                mask_id,
                mask,
                prompt_points,
                score: 1.0,
            },
            None => ObjectMask {
                mask_id,
                mask: BinaryMask::empty(width, height),
                prompt_points,
                score: 0.0,
            },
        })
    }
}

impl SegBackend for FileBackend {
    fn name(&self) -> &str {
        "file"
    }

    fn segment(&self, request: &SegRequest<'_>) -> Result<MaskSet, SegError> {
        request.validate()?;
        let (w, h) = request.image.dimensions();
        let mut out = MaskSet::empty(
            request.camera_id,
            request.frame_key,
            request.timestamp,
            w,
            h,
        );
        for (g, prompts) in request.prompt_groups.iter().enumerate() {
            out.masks.push(self.load(
                request.frame_key,
                request.camera_id,
                g as u32,
                prompts.clone(),
                w,
                h,
            )?);
        }
        Ok(out)
    }

    fn propagate(
        &self,
        previous: &MaskSet,
        target: &PropagateTarget<'_>,
    ) -> Result<MaskSet, SegError> {
        let (w, h) = target.image.dimensions();
        let mut out = MaskSet::empty(
            &previous.camera_id,
            target.frame_key,
            target.timestamp,
            w,
            h,
        );
        // An empty mask has already been reported once; retire it.
        for m in previous.masks.iter().filter(|m| !m.mask.is_empty()) {
            out.masks.push(self.load(
                target.frame_key,
                &previous.camera_id,
                m.mask_id,
                m.prompt_points.clone(),
                w,
                h,
            )?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn write_mask(backend: &FileBackend, group: u32, mask: &BinaryMask) {
        let path = backend.mask_path("f0", "front", group);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        mask.to_gray_image().save(&path).unwrap();
    }

    #[test]
    fn missing_group_yields_empty_mask_with_zero_score() {
        let dir = tempfile::tempdir().unwrap();
        let backend = FileBackend::new(dir.path());
        let rect = BinaryMask::from_rect(32, 24, 2, 3, 10, 12);
        write_mask(&backend, 0, &rect);
        write_mask(&backend, 1, &rect);
        let image = RgbImage::new(32, 24);
        let req = SegRequest {
            frame_key: "f0",
            timestamp: 0.0,
            camera_id: "front",
            image: &image,
            prompt_groups: vec![vec![[5.0, 5.0]]; 3],
        };
        let set = backend.segment(&req).unwrap();
        assert_eq!(set.masks.len(), 3);
        assert_eq!(set.masks[0].mask, rect);
        assert_eq!(set.masks[1].score, 1.0);
        assert!(set.masks[2].mask.is_empty());
        assert_eq!(set.masks[2].score, 0.0);
        assert_eq!(set.masks[2].mask.width(), 32);
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let backend = FileBackend::new(dir.path());
        write_mask(&backend, 0, &BinaryMask::full(16, 16));
        let image = RgbImage::new(32, 24);
        let req = SegRequest {
            frame_key: "f0",
            timestamp: 0.0,
            camera_id: "front",
            image: &image,
            prompt_groups: vec![vec![[1.0, 1.0]]],
        };
        assert!(matches!(
            backend.segment(&req),
            Err(SegError::MaskShapeMismatch {
                got_w: 16,
                want_w: 32,
                ..
            })
        ));
    }
}
