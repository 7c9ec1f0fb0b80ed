//! Binary rasters and their run-length wire encoding.

use image::{GrayImage, Luma};
use serde::{Deserialize, Serialize};

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "BinaryMask({}x{}, {} set)",
            self.width,
            self.height,
            self.count()
        )
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; (width * height) as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![true; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Axis-aligned rectangle covering columns `x0..=x1`, rows `y0..=y1`,
    /// clipped to the raster.
    pub fn from_rect(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> Self {
        Self::from_fn(width, height, |x, y| {
            let (x, y) = (x as i64, y as i64);
            x >= x0 && x <= x1 && y >= y0 && y <= y1
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: impl IntoIterator<Item = u32>) -> Self {
        let mut m = Self::empty(width, height);
        for p in pixels {
            m.data[p as usize] = true;
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Linear indices (`y * width + x`) of set pixels.
    pub fn pixels(&self) -> Vec<u32> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i as u32)
            .collect()
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data
            .iter()
            .zip(&other.data)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// 4-neighbourhood dilation by one pixel.
    pub fn dilate(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(w, h, |x, y| {
            self.get(x, y)
                || (x > 0 && self.get(x - 1, y))
                || (x + 1 < w && self.get(x + 1, y))
                || (y > 0 && self.get(x, y - 1))
                || (y + 1 < h && self.get(x, y + 1))
        })
    }

    /// Shifts by `(dx, dy)`; pixels moved outside the raster are dropped.
    pub fn translate(&self, dx: i64, dy: i64) -> Self {
        let (w, h) = (self.width as i64, self.height as i64);
        Self::from_fn(self.width, self.height, |x, y| {
            let (sx, sy) = (x as i64 - dx, y as i64 - dy);
            sx >= 0 && sy >= 0 && sx < w && sy < h && self.get(sx as u32, sy as u32)
        })
    }

    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| {
            Luma([if self.get(x, y) { 255 } else { 0 }])
        })
    }

    /// Any nonzero pixel counts as set.
    pub fn from_gray_image(img: &GrayImage) -> Self {
        Self::from_fn(img.width(), img.height(), |x, y| {
            img.get_pixel(x, y)[0] != 0
        })
    }

    pub fn to_rle(&self) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &b in &self.data {
            if b == current {
                run += 1;
            } else {
                counts.push(run);
                current = b;
                run = 1;
            }
        }
        counts.push(run);
        Rle {
            size: [self.height, self.width],
            counts,
        }
    }
}

/// Row-major run-length encoding: `counts` alternate between runs of unset and
/// set pixels, starting with an (possibly zero-length) unset run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`.
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("RLE run lengths sum to {got}, expected {expected} pixels")]
pub struct RleError {
    pub got: u64,
    pub expected: u64,
}

impl Rle {
    pub fn decode(&self) -> Result<BinaryMask, RleError> {
        let [h, w] = self.size;
        let expected = h as u64 * w as u64;
        let got: u64 = self.counts.iter().map(|&c| c as u64).sum();
        if got != expected {
            return Err(RleError { got, expected });
        }
        let mut data = Vec::with_capacity(expected as usize);
        let mut value = false;
        for &c in &self.counts {
            data.extend(std::iter::repeat_n(value, c as usize));
            value = !value;
        }
        Ok(BinaryMask {
            width: w,
            height: h,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rle_of_full_mask_starts_with_zero_run() {
        let rle = BinaryMask::full(3, 2).to_rle();
        assert_eq!(rle.counts, vec![0, 6]);
        assert_eq!(rle.size, [2, 3]);
    }

    #[test]
    fn rle_length_mismatch_is_rejected() {
        let rle = Rle {
            size: [2, 2],
            counts: vec![1, 1],
        };
        assert!(rle.decode().is_err());
    }

    #[test]
    fn rect_is_inclusive_and_clipped() {
        let m = BinaryMask::from_rect(10, 10, -3, 8, 1, 20);
        assert_eq!(m.count(), 2 * 2);
        assert!(m.get(0, 9) && m.get(1, 8) && !m.get(2, 8));
    }

    proptest! {
        #[test]
        fn rle_round_trip(w in 1u32..40, h in 1u32..40, seed in any::<u64>()) {
            let m = BinaryMask::from_fn(w, h, |x, y| {
                let v = (x as u64).wrapping_mul(0x9E37_79B9).wrapping_add((y as u64) << 7) ^ seed;
                v.count_ones().is_multiple_of(3)
            });
            prop_assert_eq!(m.to_rle().decode().unwrap(), m);
        }
    }
}
