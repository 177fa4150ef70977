use image::{DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::KittiError;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Road,
    NonRoad,
    Invalid,
}

impl Label {
    pub fn is_valid(self) -> bool {
        self != Label::Invalid
    }

    /// 1.0 for road, 0.0 otherwise.
    pub fn target(self) -> f64 {
        if self == Label::Road {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMask {
    pub grid: Grid<Label>,
}

impl GroundTruthMask {
    pub fn new(grid: Grid<Label>) -> Self {
        Self { grid }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.grid.dims()
    }

    /// A training frame needs at least one road pixel.
    pub fn is_usable(&self) -> bool {
        self.grid.iter().any(|l| *l == Label::Road)
    }

    pub fn valid_count(&self) -> usize {
        self.grid.iter().filter(|l| l.is_valid()).count()
    }

    /// Per-pixel 0/1 road targets.
    pub fn targets(&self) -> Vec<f64> {
        self.grid.iter().map(|l| l.target()).collect()
    }

    /// Per-pixel loss weights: 1 on valid pixels, 0 on invalid ones.
    pub fn validity_weights(&self) -> Vec<f64> {
        self.grid
            .iter()
            .map(|l| if l.is_valid() { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn mirrored(&self) -> Self {
        Self {
            grid: self.grid.mirrored(),
        }
    }
}

/// Decodes a KITTI road ground-truth image: blue > 127 is road, otherwise
/// red > 127 is non-road, anything else is outside the evaluated area.
pub fn decode_gt_mask(img: &DynamicImage) -> Result<GroundTruthMask, KittiError> {
    if img.color().channel_count() != 3 {
        return Err(KittiError::ShapeMismatch(format!(
            "ground truth must have 3 channels, got {}",
            img.color().channel_count()
        )));
    }
    let rgb = img.to_rgb8();
    let grid = Grid::from_fn(rgb.height() as usize, rgb.width() as usize, |r, c| {
        let Rgb([red, _, blue]) = *rgb.get_pixel(c as u32, r as u32);
        if blue > 127 {
            Label::Road
        } else if red > 127 {
            Label::NonRoad
        } else {
            Label::Invalid
        }
    });
    Ok(GroundTruthMask { grid })
}

pub fn encode_gt_mask(mask: &GroundTruthMask) -> RgbImage {
    let (h, w) = mask.dims();
    RgbImage::from_fn(w as u32, h as u32, |c, r| match mask.grid.get(r as usize, c as usize) {
        Label::Road => Rgb([255, 0, 255]),
        Label::NonRoad => Rgb([255, 0, 0]),
        Label::Invalid => Rgb([0, 0, 0]),
    })
}
