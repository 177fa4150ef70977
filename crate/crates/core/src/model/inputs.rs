use super::ModelError;
use crate::grid::Grid;
use crate::kitti_io::{FrameBundle, GroundTruthMask};
use crate::lidar_adaptation::{adapt, AdaptConfig};

/// Network-ready planes, each `height × width`, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    height: usize,
    width: usize,
    image: Vec<f64>,
    lidar: Vec<f64>,
    depth: Vec<f64>,
}

fn stack(planes: &[Grid<f64>], dims: (usize, usize), what: &str) -> Result<Vec<f64>, ModelError> {
    let mut out = Vec::with_capacity(planes.len() * dims.0 * dims.1);
    for p in planes {
        if p.dims() != dims {
            return Err(ModelError::ShapeMismatch(format!(
                "{what} plane is {:?}, expected {dims:?}",
                p.dims()
            )));
        }
        out.extend_from_slice(p.as_slice());
    }
    Ok(out)
}

impl ModelInputs {
    /// `image` holds 3 planes, `lidar` 1 or 3, all sharing one grid.
    pub fn from_planes(image: &[Grid<f64>], lidar: &[Grid<f64>], depth: &Grid<f64>) -> Result<Self, ModelError> {
        let dims = depth.dims();
        if image.len() != 3 {
            return Err(ModelError::ShapeMismatch(format!(
                "image needs 3 planes, got {}",
                image.len()
            )));
        }
        if lidar.is_empty() {
            return Err(ModelError::ShapeMismatch("no LiDAR planes".into()));
        }
        Ok(Self {
            height: dims.0,
            width: dims.1,
            image: stack(image, dims, "image")?,
            lidar: stack(lidar, dims, "lidar")?,
            depth: depth.as_slice().to_vec(),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn lidar_channels(&self) -> usize {
        self.lidar.len() / (self.height * self.width)
    }

    pub fn image(&self) -> &[f64] {
        &self.image
    }

    pub fn lidar(&self) -> &[f64] {
        &self.lidar
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn depth_mut(&mut self) -> &mut [f64] {
        &mut self.depth
    }

    pub fn image_mut(&mut self) -> &mut [f64] {
        &mut self.image
    }

    pub fn lidar_mut(&mut self) -> &mut [f64] {
        &mut self.lidar
    }

    /// Left-right mirror of every plane.
    pub fn mirrored(&self) -> Self {
        let flip = |planes: &[f64]| -> Vec<f64> {
            planes
                .chunks(self.width)
                .flat_map(|row| row.iter().rev().copied())
                .collect()
        };
        Self {
            height: self.height,
            width: self.width,
            image: flip(&self.image),
            lidar: flip(&self.lidar),
            depth: flip(&self.depth),
        }
    }
}

/// Scales the image to `[0, 1]`, runs LiDAR adaptation and stacks the
/// configured LiDAR planes with the relative depth.
pub fn prepare_inputs(frame: &FrameBundle, cfg: &AdaptConfig) -> Result<ModelInputs, ModelError> {
    frame.check_dims()?;
    let (h, w) = frame.dims();
    let image: Vec<Grid<f64>> = (0..3)
        .map(|ch| {
            Grid::from_fn(h, w, |r, c| {
                frame.image.get_pixel(c as u32, r as u32).0[ch] as f64 / 255.0
            })
        })
        .collect();
    let adapted = adapt(&frame.cloud, &frame.calib, h, w, cfg)?;
    let lidar = adapted.channels(cfg.channels, cfg.max_range);
    ModelInputs::from_planes(&image, &lidar, &frame.depth.grid)
}

/// A frame reduced to what training and evaluation consume.
#[derive(Debug, Clone)]
pub struct PreparedFrame {
    pub frame_id: String,
    pub inputs: ModelInputs,
    pub gt: Option<GroundTruthMask>,
}

pub fn prepare_frame(frame: &FrameBundle, cfg: &AdaptConfig) -> Result<PreparedFrame, ModelError> {
    Ok(PreparedFrame {
        frame_id: frame.frame_id.clone(),
        inputs: prepare_inputs(frame, cfg)?,
        gt: frame.gt.clone(),
    })
}
