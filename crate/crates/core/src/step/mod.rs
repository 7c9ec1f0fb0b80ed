//! Object tokens: masked image patches on a 16x16 grid, a centroid, a
//! per-axis Gaussian and extent summary, and first/last-seen times.

mod store;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::mask::BinaryMask;

pub use store::{patch_hash, PatchStore};

/// Cells per image side.
pub const GRID: u32 = 16;
/// A token set never carries more patches than the grid has cells.
pub const MAX_PATCHES: usize = (GRID * GRID) as usize;
pub const DEFAULT_BACKGROUND: [u8; 3] = [128, 128, 128];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StepError {
    #[error("image {width}x{height} is smaller than the {GRID}x{GRID} grid")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("cannot encode the shape of an empty point set")]
    EmptyPointSet,
    #[error("token invariant violated: {0}")]
    InvariantViolation(String),
}

/// One retained grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchToken {
    pub row: u8,
    pub col: u8,
    /// Fraction of the cell covered by the mask, in `(0.5, 1]`.
    pub iou: f64,
    /// Content hash of the isolated patch image in the [`PatchStore`].
    pub patch_ref: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidToken {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CentroidToken {
    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &CentroidToken) -> f64 {
        let d = [self.x - other.x, self.y - other.y, self.z - other.z];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl AxisStats {
    pub fn extent(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeToken {
    pub x: AxisStats,
    pub y: AxisStats,
    pub z: AxisStats,
}

impl ShapeToken {
    pub fn axes(&self) -> [AxisStats; 3] {
        [self.x, self.y, self.z]
    }

    pub fn extents(&self) -> [f64; 3] {
        [self.x.extent(), self.y.extent(), self.z.extent()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalToken {
    pub t_start: f64,
    pub t_end: f64,
}

/// Complete token set of one object observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTokenSet {
    pub object_id: u64,
    /// Time of the observation this set encodes.
    pub timestamp: f64,
    /// Row-major order.
    pub patch_tokens: Vec<PatchToken>,
    pub centroid: CentroidToken,
    pub shape: ShapeToken,
    pub temporal: TemporalToken,
    /// Sorted indices into the frame's cloud.
    pub point_indices: Vec<usize>,
    /// Cameras whose masks were merged into this object, sorted.
    pub source_cameras: Vec<String>,
}

impl StepTokenSet {
    pub fn validate(&self) -> Result<(), StepError> {
        let bad = |m: String| Err(StepError::InvariantViolation(m));
        if self.point_indices.is_empty() {
            return bad("point_indices is empty".into());
        }
        if self.point_indices.windows(2).any(|w| w[0] >= w[1]) {
            return bad("point_indices must be strictly increasing".into());
        }
        if self.patch_tokens.len() > MAX_PATCHES {
            return bad(format!(
                "{} patch tokens exceed {MAX_PATCHES}",
                self.patch_tokens.len()
            ));
        }
        for p in &self.patch_tokens {
            if p.row as u32 >= GRID || p.col as u32 >= GRID || !(p.iou > 0.5 && p.iou <= 1.0) {
                return bad(format!(
                    "patch ({}, {}) iou {} out of range",
                    p.row, p.col, p.iou
                ));
            }
        }
        if self
            .patch_tokens
            .windows(2)
            .any(|w| (w[0].row, w[0].col) >= (w[1].row, w[1].col))
        {
            return bad("patch tokens must be unique and row-major".into());
        }
        if !(self.temporal.t_start <= self.temporal.t_end) {
            return bad("t_start > t_end".into());
        }
        let c = self.centroid.to_array();
        for (a, s) in self.shape.axes().iter().enumerate() {
            if !(s.min <= s.mean && s.mean <= s.max && s.std >= 0.0) {
                return bad(format!("axis {a}: need min <= mean <= max and std >= 0"));
            }
            if s.mean != c[a] {
                return bad(format!("axis {a}: shape mean differs from centroid"));
            }
        }
        Ok(())
    }
}

/// Keeps in-mask pixels and paints everything else with `background`.
pub fn isolate_mask(image: &RgbImage, mask: &BinaryMask, background: [u8; 3]) -> RgbImage {
    assert_eq!(
        (image.width(), image.height()),
        (mask.width(), mask.height()),
        "image and mask dimensions differ"
    );
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        if mask.get(x, y) {
            *image.get_pixel(x, y)
        } else {
            Rgb(background)
        }
    })
}

/// Start offsets of the `GRID` cells along a side of `len` pixels, plus `len`.
/// The first `len % GRID` cells are one pixel longer.
pub fn grid_bounds(len: u32) -> [u32; GRID as usize + 1] {
    let (base, rem) = (len / GRID, len % GRID);
    let mut out = [0; GRID as usize + 1];
    for i in 0..GRID as usize {
        out[i + 1] = out[i] + base + u32::from((i as u32) < rem);
    }
    out
}

/// A retained cell with its pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub row: u8,
    pub col: u8,
    pub iou: f64,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

/// Cells whose mask coverage `|mask ∩ cell| / |cell|` is strictly above 0.5,
/// in row-major order.
pub fn grid_patch_tokens(mask: &BinaryMask) -> Result<Vec<GridCell>, StepError> {
    let (w, h) = (mask.width(), mask.height());
    if w < GRID || h < GRID {
        return Err(StepError::ImageTooSmall {
            width: w,
            height: h,
        });
    }
    let xs = grid_bounds(w);
    let ys = grid_bounds(h);
    // Per-cell counts in one pass over the raster.
    let mut col_of = vec![0usize; w as usize];
    for c in 0..GRID as usize {
        for x in xs[c]..xs[c + 1] {
            col_of[x as usize] = c;
        }
    }
    let mut counts = [[0u64; GRID as usize]; GRID as usize];
    let data = mask.as_slice();
    for r in 0..GRID as usize {
        for y in ys[r]..ys[r + 1] {
            let row = &data[(y * w) as usize..((y + 1) * w) as usize];
            for (x, &set) in row.iter().enumerate() {
                if set {
                    counts[r][col_of[x]] += 1;
                }
            }
        }
    }
    let mut out = Vec::new();
    for r in 0..GRID as usize {
        for c in 0..GRID as usize {
            let area = ((xs[c + 1] - xs[c]) * (ys[r + 1] - ys[r])) as u64;
            if 2 * counts[r][c] > area {
                out.push(GridCell {
                    row: r as u8,
                    col: c as u8,
                    iou: counts[r][c] as f64 / area as f64,
                    x0: xs[c],
                    y0: ys[r],
                    x1: xs[c + 1],
                    y1: ys[r + 1],
                });
            }
        }
    }
    Ok(out)
}

/// Isolates the mask, cuts the retained cells out of the result and stores
/// each patch image.
pub fn encode_patches(
    image: &RgbImage,
    mask: &BinaryMask,
    background: [u8; 3],
    store: &mut PatchStore,
) -> Result<Vec<PatchToken>, StepError> {
    let cells = grid_patch_tokens(mask)?;
    let isolated = isolate_mask(image, mask, background);
    Ok(cells
        .into_iter()
        .map(|c| {
            let patch = image::imageops::crop_imm(&isolated, c.x0, c.y0, c.x1 - c.x0, c.y1 - c.y0)
                .to_image();
            PatchToken {
                row: c.row,
                col: c.col,
                iou: c.iou,
                patch_ref: store.insert(patch),
            }
        })
        .collect())
}

/// Centroid plus per-axis population statistics of a point set.
pub fn encode_shape(points: &[[f64; 3]]) -> Result<(CentroidToken, ShapeToken), StepError> {
    if points.is_empty() {
        return Err(StepError::EmptyPointSet);
    }
    let n = points.len() as f64;
    let axis = |a: usize| {
        let mean = points.iter().map(|p| p[a]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[a] - mean).powi(2)).sum::<f64>() / n;
        let (min, max) = points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[a]), hi.max(p[a]))
            });
        // Rounding can push the mean a hair outside [min, max] for near-constant data.
        AxisStats {
            mean: mean.clamp(min, max),
            std: var.sqrt(),
            min,
            max,
        }
    };
    let shape = ShapeToken {
        x: axis(0),
        y: axis(1),
        z: axis(2),
    };
    let centroid = CentroidToken {
        x: shape.x.mean,
        y: shape.y.mean,
        z: shape.z.mean,
    };
    Ok((centroid, shape))
}

/// Provenance of one object observation.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProvenance {
    pub object_id: u64,
    pub timestamp: f64,
    pub point_indices: Vec<usize>,
    pub source_cameras: Vec<String>,
}

pub fn assemble_step(
    mut patches: Vec<PatchToken>,
    centroid: CentroidToken,
    shape: ShapeToken,
    t_first: f64,
    t_last: f64,
    provenance: StepProvenance,
) -> Result<StepTokenSet, StepError> {
    patches.sort_by_key(|p| (p.row, p.col));
    let mut point_indices = provenance.point_indices;
    point_indices.sort_unstable();
    let mut source_cameras = provenance.source_cameras;
    source_cameras.sort();
    source_cameras.dedup();
    let step = StepTokenSet {
        object_id: provenance.object_id,
        timestamp: provenance.timestamp,
        patch_tokens: patches,
        centroid,
        shape,
        temporal: TemporalToken {
            t_start: t_first,
            t_end: t_last,
        },
        point_indices,
        source_cameras,
    };
    step.validate()?;
    Ok(step)
}
