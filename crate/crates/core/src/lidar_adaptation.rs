//! LiDAR data-space adaptation: the point cloud is projected onto the image
//! grid with a z-buffer, turned into an altitude-difference map (low on flat
//! road, high at curbs and obstacles), densified and normalized so it can be
//! fed to a convolutional encoder alongside the camera image.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::kitti_io::{CameraCalibration, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum AdaptError {
    #[error("radius must be at least 1, got {0}")]
    InvalidRadius(usize),
    #[error("no valid pixels to normalize")]
    EmptyValidSet,
    #[error("percentiles must satisfy 0 <= lo < hi <= 100, got ({lo}, {hi})")]
    InvalidPercentiles { lo: f64, hi: f64 },
}

/// Minimum camera-frame depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// The z-buffered projection of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedLidarImage {
    /// Velodyne z of the surviving point (meters).
    pub altitude: Grid<f64>,
    pub hit: Grid<bool>,
    /// Camera-frame depth of the surviving point (meters).
    pub range: Grid<f64>,
    /// Index into the source cloud of the surviving point.
    pub source: Grid<Option<usize>>,
}

impl ProjectedLidarImage {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            altitude: Grid::filled(height, width, 0.0),
            hit: Grid::filled(height, width, false),
            range: Grid::filled(height, width, 0.0),
            source: Grid::filled(height, width, None),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        self.hit.dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AltitudeDifferenceMap {
    pub grid: Grid<f64>,
    pub valid: Grid<bool>,
}

/// Where a single point lands, if anywhere: `(row, col, camera depth)`.
pub fn project_point(velo_to_rect: &[[f64; 4]; 4], p: &[[f64; 4]; 3], point: [f64; 3], height: usize, width: usize) -> Option<(usize, usize, f64)> {
    let h = [point[0], point[1], point[2], 1.0];
    let mut cam = [0.0; 4];
    for (i, out) in cam.iter_mut().enumerate() {
        *out = (0..4).map(|k| velo_to_rect[i][k] * h[k]).sum();
    }
    if !(cam[2] > MIN_DEPTH) {
        return None;
    }
    let mut img = [0.0; 3];
    for (i, out) in img.iter_mut().enumerate() {
        *out = (0..4).map(|k| p[i][k] * cam[k]).sum();
    }
    if !(img[2] > 0.0) {
        return None;
    }
    let u = img[0] / img[2];
    let v = img[1] / img[2];
    if !(u >= 0.0 && u < width as f64 && v >= 0.0 && v < height as f64) {
        return None;
    }
    Some((v.floor() as usize, u.floor() as usize, cam[2]))
}

/// Z-buffered projection: the nearest point (smallest camera depth, then
/// smallest index) wins each pixel.
pub fn project_points(
    cloud: &PointCloud,
    calib: &CameraCalibration,
    height: usize,
    width: usize,
) -> ProjectedLidarImage {
    let mut out = ProjectedLidarImage::empty(height, width);
    let m = calib.velo_to_rect();
    for (index, pt) in cloud.points.iter().enumerate() {
        let xyz = [pt[0] as f64, pt[1] as f64, pt[2] as f64];
        let Some((row, col, depth)) = project_point(&m, &calib.p, xyz, height, width) else {
            continue;
        };
        if *out.hit.get(row, col) && *out.range.get(row, col) <= depth {
            continue;
        }
        out.hit.set(row, col, true);
        out.range.set(row, col, depth);
        out.altitude.set(row, col, xyz[2]);
        out.source.set(row, col, Some(index));
    }
    out
}

/// Mean of `|Z(p) - Z(q)| / |p - q|` over hit neighbors `q` within Chebyshev
/// distance `radius` of each hit pixel `p`.
///
/// Horizontal neighbor pairs `(-dx, +dx)` are summed before being added to
/// the running total, so mirroring the input left-right mirrors the output
/// bit for bit.
pub fn altitude_difference(
    proj: &ProjectedLidarImage,
    radius: usize,
) -> Result<AltitudeDifferenceMap, AdaptError> {
    if radius < 1 {
        return Err(AdaptError::InvalidRadius(radius));
    }
    let (h, w) = proj.dims();
    let r = radius as isize;
    let inv_dist: Vec<f64> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| 1.0 / ((dx * dx + dy * dy) as f64).sqrt()))
        .collect();
    let side = 2 * radius + 1;

    let mut grid = Grid::filled(h, w, 0.0);
    for row in 0..h {
        for col in 0..w {
            if !*proj.hit.get(row, col) {
                continue;
            }
            let z = *proj.altitude.get(row, col);
            let term = |dy: isize, dx: isize| -> Option<f64> {
                let rr = row as isize + dy;
                let cc = col as isize + dx;
                if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                    return None;
                }
                let (rr, cc) = (rr as usize, cc as usize);
                if !*proj.hit.get(rr, cc) {
                    return None;
                }
                let k = (dy + r) as usize * side + (dx + r) as usize;
                Some((z - *proj.altitude.get(rr, cc)).abs() * inv_dist[k])
            };
            let mut total = 0.0;
            let mut count = 0usize;
            for dy in -r..=r {
                let mut row_sum = 0.0;
                if dy != 0 {
                    if let Some(t) = term(dy, 0) {
                        row_sum += t;
                        count += 1;
                    }
                }
                for dx in 1..=r {
                    let left = term(dy, -dx);
                    let right = term(dy, dx);
                    count += left.is_some() as usize + right.is_some() as usize;
                    row_sum += left.unwrap_or(0.0) + right.unwrap_or(0.0);
                }
                total += row_sum;
            }
            if count > 0 {
                grid.set(row, col, total / count as f64);
            }
        }
    }
    Ok(AltitudeDifferenceMap {
        grid,
        valid: proj.hit.clone(),
    })
}

/// Fills each invalid pixel from its nearest valid pixel (Chebyshev distance
/// up to `max_ring`, ties to the first candidate in row-major order).
pub fn densify(adm: &AltitudeDifferenceMap, max_ring: usize) -> AltitudeDifferenceMap {
    let (h, w) = adm.grid.dims();
    let mut out = adm.clone();
    if max_ring == 0 {
        return out;
    }
    for row in 0..h {
        for col in 0..w {
            if *adm.valid.get(row, col) {
                continue;
            }
            if let Some(v) = nearest_valid(adm, row, col, max_ring) {
                out.grid.set(row, col, v);
                out.valid.set(row, col, true);
            } else {
                out.grid.set(row, col, 0.0);
            }
        }
    }
    out
}

fn nearest_valid(adm: &AltitudeDifferenceMap, row: usize, col: usize, max_ring: usize) -> Option<f64> {
    let (h, w) = adm.grid.dims();
    let (row, col) = (row as isize, col as isize);
    for ring in 1..=max_ring as isize {
        let top = row - ring;
        let bottom = row + ring;
        for rr in top.max(0)..=bottom.min(h as isize - 1) {
            let edge_row = rr == top || rr == bottom;
            let cols: &mut dyn Iterator<Item = isize> = if edge_row {
                &mut ((col - ring)..=(col + ring))
            } else {
                &mut [col - ring, col + ring].into_iter()
            };
            for cc in cols {
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                let (ru, cu) = (rr as usize, cc as usize);
                if *adm.valid.get(ru, cu) {
                    return Some(*adm.grid.get(ru, cu));
                }
            }
        }
    }
    None
}

/// Linear-interpolated percentile of sorted values (`pct` in `[0, 100]`).
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let pos = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Clips valid values to their `[lo_pct, hi_pct]` percentiles and maps that
/// range onto `[0, 1]`. Invalid pixels are set to 0.
pub fn normalize_adm(
    adm: &AltitudeDifferenceMap,
    lo_pct: f64,
    hi_pct: f64,
) -> Result<AltitudeDifferenceMap, AdaptError> {
    if !(0.0 <= lo_pct && lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(AdaptError::InvalidPercentiles {
            lo: lo_pct,
            hi: hi_pct,
        });
    }
    let mut values: Vec<f64> = adm
        .grid
        .iter()
        .zip(adm.valid.iter())
        .filter_map(|(v, ok)| ok.then_some(*v))
        .collect();
    if values.is_empty() {
        return Err(AdaptError::EmptyValidSet);
    }
    values.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&values, lo_pct);
    let hi = percentile_sorted(&values, hi_pct);
    let span = hi - lo;
    let mut grid = adm.grid.clone();
    for (v, ok) in grid.as_mut_slice().iter_mut().zip(adm.valid.iter()) {
        *v = if !ok || span <= 0.0 {
            0.0
        } else {
            (v.clamp(lo, hi) - lo) / span
        };
    }
    Ok(AltitudeDifferenceMap {
        grid,
        valid: adm.valid.clone(),
    })
}

/// How many LiDAR planes the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LidarChannels {
    /// Normalized altitude difference only.
    AdmOnly,
    /// Normalized altitude difference, normalized range and the hit mask.
    AdmRangeHit,
}

impl LidarChannels {
    pub fn count(self) -> usize {
        match self {
            LidarChannels::AdmOnly => 1,
            LidarChannels::AdmRangeHit => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub radius: usize,
    pub max_ring: usize,
    pub lo_pct: f64,
    pub hi_pct: f64,
    /// Depth mapped to 1.0 in the normalized range channel (meters).
    pub max_range: f64,
    pub channels: LidarChannels,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            max_ring: 8,
            lo_pct: 2.0,
            hi_pct: 98.0,
            max_range: 80.0,
            channels: LidarChannels::AdmRangeHit,
        }
    }
}

/// Result of the full adaptation chain for one frame.
#[derive(Debug, Clone)]
pub struct AdaptedLidar {
    pub projected: ProjectedLidarImage,
    /// Raw altitude-difference map (meters per pixel).
    pub raw: AltitudeDifferenceMap,
    /// Densified and normalized map in `[0, 1]`.
    pub normalized: AltitudeDifferenceMap,
}

impl AdaptedLidar {
    /// Network input planes in `[0, 1]`, per `channels`.
    pub fn channels(&self, channels: LidarChannels, max_range: f64) -> Vec<Grid<f64>> {
        let adm = self.normalized.grid.clone();
        match channels {
            LidarChannels::AdmOnly => vec![adm],
            LidarChannels::AdmRangeHit => {
                let range = Grid::from_fn(adm.height(), adm.width(), |r, c| {
                    if *self.projected.hit.get(r, c) {
                        (self.projected.range.get(r, c) / max_range).clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                });
                let hit = self.projected.hit.map(|&b| if b { 1.0 } else { 0.0 });
                vec![adm, range, hit]
            }
        }
    }
}

/// project → altitude difference → densify → normalize. A frame with no
/// points in view gets an all-zero, all-invalid map.
pub fn adapt(
    cloud: &PointCloud,
    calib: &CameraCalibration,
    height: usize,
    width: usize,
    cfg: &AdaptConfig,
) -> Result<AdaptedLidar, AdaptError> {
    let projected = project_points(cloud, calib, height, width);
    let raw = altitude_difference(&projected, cfg.radius)?;
    let dense = densify(&raw, cfg.max_ring);
    let normalized = match normalize_adm(&dense, cfg.lo_pct, cfg.hi_pct) {
        Ok(n) => n,
        Err(AdaptError::EmptyValidSet) => dense,
        Err(e) => return Err(e),
    };
    Ok(AdaptedLidar {
        projected,
        raw,
        normalized,
    })
}
