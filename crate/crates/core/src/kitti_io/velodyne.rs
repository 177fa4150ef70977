use serde::{Deserialize, Serialize};

use super::KittiError;

const RECORD_BYTES: usize = 16;

/// Velodyne returns as `(x, y, z, reflectance)`, in file order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<[f32; 4]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Decodes a headerless KITTI velodyne scan of little-endian `f32` quads.
pub fn read_point_cloud(bytes: &[u8]) -> Result<PointCloud, KittiError> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(KittiError::TruncatedRecord(bytes.len()));
    }
    let points = bytes
        .chunks_exact(RECORD_BYTES)
        .map(|rec| {
            let mut p = [0f32; 4];
            for (i, v) in p.iter_mut().enumerate() {
                let b = &rec[4 * i..4 * i + 4];
                *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
            p
        })
        .collect();
    Ok(PointCloud { points })
}

pub fn write_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * RECORD_BYTES);
    for p in &cloud.points {
        for v in p {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}
