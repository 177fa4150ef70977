use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::KittiError;

pub type Mat3x4 = [[f64; 4]; 3];
pub type Mat4 = [[f64; 4]; 4];

pub const IDENTITY4: Mat4 = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Camera intrinsics plus the LiDAR-to-rectified-camera chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    /// 3×4 projection of the rectified camera (pixels).
    pub p: Mat3x4,
    /// Homogeneous rectifying rotation.
    pub r_rect: Mat4,
    /// Homogeneous rigid transform from the velodyne frame to the camera frame (meters).
    pub t_velo_to_cam: Mat4,
}

impl CameraCalibration {
    pub fn identity() -> Self {
        Self {
            p: [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            r_rect: IDENTITY4,
            t_velo_to_cam: IDENTITY4,
        }
    }

    /// `R_rect · T_velo_to_cam`, the full velodyne → rectified camera transform.
    pub fn velo_to_rect(&self) -> Mat4 {
        mat4_mul(&self.r_rect, &self.t_velo_to_cam)
    }

    /// Checks the structural invariants: finite entries, homogeneous bottom
    /// rows and an orthonormal rectifying rotation (within 1e-6).
    pub fn check_invariants(&self) -> Result<(), KittiError> {
        let all = self
            .p
            .iter()
            .flatten()
            .chain(self.r_rect.iter().flatten())
            .chain(self.t_velo_to_cam.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(KittiError::InvalidCalibration("non-finite entry".into()));
        }
        for (name, m) in [("R0_rect", &self.r_rect), ("Tr_velo_to_cam", &self.t_velo_to_cam)] {
            if m[3] != [0.0, 0.0, 0.0, 1.0] {
                return Err(KittiError::InvalidCalibration(format!(
                    "{name} bottom row is not (0,0,0,1)"
                )));
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| self.r_rect[i][k] * self.r_rect[j][k]).sum();
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot - expected).abs() > 1e-6 {
                    return Err(KittiError::InvalidCalibration(
                        "R0_rect is not orthonormal".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn mat4_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn values_for<'a>(
    entries: &'a [(String, Vec<f64>)],
    key: &str,
    expected: usize,
) -> Result<&'a [f64], KittiError> {
    let (_, values) = entries
        .iter()
        .find(|(k, _)| k == key)
        .ok_or_else(|| KittiError::MissingKey(key.to_string()))?;
    if values.len() != expected {
        return Err(KittiError::WrongValueCount {
            key: key.to_string(),
            expected,
            got: values.len(),
        });
    }
    Ok(values)
}

/// Parses a KITTI calibration file (`key: v1 v2 ...` per line).
///
/// Only `P2`, `R0_rect` and `Tr_velo_to_cam` are required; other keys
/// (`P0`, `Tr_imu_to_velo`, ...) are tolerated and ignored. Numbers on
/// every line must parse, including lines for keys that are not used.
pub fn parse_calibration(text: &str) -> Result<CameraCalibration, KittiError> {
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, rest)) = line.split_once(':') else {
            return Err(KittiError::UnparsableNumber(line.to_string()));
        };
        let values = rest
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| KittiError::UnparsableNumber(line.to_string()))?;
        entries.push((key.trim().to_string(), values));
    }

    let p2 = values_for(&entries, "P2", 12)?;
    let r0 = values_for(&entries, "R0_rect", 9)?;
    let tr = values_for(&entries, "Tr_velo_to_cam", 12)?;

    let mut p = [[0.0; 4]; 3];
    for (i, v) in p2.iter().enumerate() {
        p[i / 4][i % 4] = *v;
    }
    let mut r_rect = IDENTITY4;
    for (i, v) in r0.iter().enumerate() {
        r_rect[i / 3][i % 3] = *v;
    }
    let mut t_velo_to_cam = IDENTITY4;
    for (i, v) in tr.iter().enumerate() {
        t_velo_to_cam[i / 4][i % 4] = *v;
    }
    Ok(CameraCalibration {
        p,
        r_rect,
        t_velo_to_cam,
    })
}

/// Writes the three keys consumed by [`parse_calibration`]. Values use the
/// shortest round-tripping decimal form, so parsing the output reproduces
/// the calibration exactly.
pub fn serialize_calibration(calib: &CameraCalibration) -> String {
    let mut out = String::new();
    let mut line = |key: &str, values: &mut dyn Iterator<Item = f64>| {
        out.push_str(key);
        out.push(':');
        for v in values {
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    };
    line("P2", &mut calib.p.iter().flatten().copied());
    line(
        "R0_rect",
        &mut calib.r_rect[..3].iter().flat_map(|row| row[..3].iter().copied()),
    );
    line(
        "Tr_velo_to_cam",
        &mut calib.t_velo_to_cam[..3].iter().flatten().copied(),
    );
    out
}
