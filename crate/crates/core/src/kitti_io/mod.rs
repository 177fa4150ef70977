//! KITTI-format ingestion and the synthetic scene generator.
//!
//! On-disk layout of a dataset root (mirrors the KITTI road benchmark):
//!
//! ```text
//! image_2/<id>.png        8-bit RGB camera image
//! velodyne/<id>.bin       little-endian f32 (x, y, z, reflectance) quads
//! calib/<id>.txt          `key: v1 ... vn` lines (P2, R0_rect, Tr_velo_to_cam)
//! depth/<id>.png          16-bit (or 8-bit) grayscale relative depth
//! gt_image_2/<id>.png     optional ground truth; `<cat>_road_<num>.png` also accepted
//! ```

mod calib;
mod dataset;
mod depth;
mod gt;
mod synth;
mod velodyne;

use image::RgbImage;
use thiserror::Error;

pub use calib::{parse_calibration, serialize_calibration, CameraCalibration, Mat3x4, Mat4, IDENTITY4};
pub use dataset::{list_frames, load_frame, write_frame, DatasetLayout};
pub use depth::{decode_depth_image, encode_unit_grid_u16, load_relative_depth, RelativeDepthMap};
pub use gt::{decode_gt_mask, encode_gt_mask, GroundTruthMask, Label};
pub use synth::{synth_scene, synth_scene_detailed, SynthConfig, SyntheticScene};
pub use velodyne::{read_point_cloud, write_point_cloud, PointCloud};

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("calibration is missing key `{0}`")]
    MissingKey(String),
    #[error("calibration key `{key}` needs {expected} values, got {got}")]
    WrongValueCount {
        key: String,
        expected: usize,
        got: usize,
    },
    #[error("cannot parse calibration line `{0}`")]
    UnparsableNumber(String),
    #[error("velodyne data of {0} bytes is not a whole number of 16-byte records")]
    TruncatedRecord(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("depth grid contains non-finite values")]
    NonFiniteInput,
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
}

/// One scene's aligned inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBundle {
    pub frame_id: String,
    pub image: RgbImage,
    pub cloud: PointCloud,
    pub calib: CameraCalibration,
    pub depth: RelativeDepthMap,
    pub gt: Option<GroundTruthMask>,
}

impl FrameBundle {
    /// `(height, width)` of the image grid.
    pub fn dims(&self) -> (usize, usize) {
        (self.image.height() as usize, self.image.width() as usize)
    }

    /// Image, depth and (when present) ground truth must share one grid.
    pub fn check_dims(&self) -> Result<(), KittiError> {
        let dims = self.dims();
        if self.depth.dims() != dims {
            return Err(KittiError::ShapeMismatch(format!(
                "{}: depth {:?} vs image {:?}",
                self.frame_id,
                self.depth.dims(),
                dims
            )));
        }
        if let Some(gt) = &self.gt {
            if gt.dims() != dims {
                return Err(KittiError::ShapeMismatch(format!(
                    "{}: ground truth {:?} vs image {:?}",
                    self.frame_id,
                    gt.dims(),
                    dims
                )));
            }
        }
        Ok(())
    }
}
