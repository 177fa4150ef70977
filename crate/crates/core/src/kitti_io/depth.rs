use image::{DynamicImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::KittiError;
use crate::grid::Grid;

/// Monocular depth up to unknown scale and shift, min-max normalized per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDepthMap {
    pub grid: Grid<f64>,
}

impl RelativeDepthMap {
    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }
}

/// Min-max normalizes a precomputed depth grid into `[0, 1]`. A constant grid
/// maps to all zeros.
pub fn load_relative_depth(grid: &Grid<f64>) -> Result<RelativeDepthMap, KittiError> {
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(KittiError::NonFiniteInput);
    }
    let (lo, hi) = grid
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let normalized = if grid.is_empty() || span <= 0.0 {
        grid.map(|_| 0.0)
    } else {
        grid.map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
    };
    Ok(RelativeDepthMap { grid: normalized })
}

/// Reads a grayscale depth image; 16-bit samples are scaled by 1/65535,
/// 8-bit samples by 1/255, then normalized with [`load_relative_depth`].
pub fn decode_depth_image(img: &DynamicImage) -> Result<RelativeDepthMap, KittiError> {
    let grid = match img {
        DynamicImage::ImageLuma16(buf) => Grid::from_vec(
            buf.height() as usize,
            buf.width() as usize,
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        ),
        DynamicImage::ImageLuma8(buf) => Grid::from_vec(
            buf.height() as usize,
            buf.width() as usize,
            buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        ),
        other => {
            return Err(KittiError::ShapeMismatch(format!(
                "depth must be single-channel grayscale, got {:?}",
                other.color()
            )))
        }
    }
    .expect("image buffer length matches its dimensions");
    load_relative_depth(&grid)
}

/// Quantizes a `[0, 1]` grid into a 16-bit grayscale image.
pub fn encode_unit_grid_u16(grid: &Grid<f64>) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    let (h, w) = grid.dims();
    ImageBuffer::from_fn(w as u32, h as u32, |c, r| {
        let v = grid.get(r as usize, c as usize).clamp(0.0, 1.0);
        Luma([(v * 65535.0).round() as u16])
    })
}
