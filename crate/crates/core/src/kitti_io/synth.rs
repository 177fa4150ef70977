//! Deterministic synthetic driving scenes.
//!
//! The world is the velodyne frame (x forward, y left, z up, origin at the
//! LiDAR). A road corridor lies on the plane `z = ROAD_Z`; everything
//! outside it is a raised sidewalk/verge separated by vertical curb faces,
//! and axis-aligned boxes stand in for vehicles and street furniture. The
//! camera image, depth buffer, exact ground truth and the LiDAR scan are all
//! produced by casting rays against that one geometry, so the modalities are
//! consistent by construction.
//!
//! Only IEEE-exact arithmetic (`+ - * / sqrt floor`) is used on the geometry
//! path, which keeps the output byte-identical across platforms.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    load_relative_depth, CameraCalibration, FrameBundle, GroundTruthMask, KittiError, Label,
    PointCloud,
};
use crate::grid::Grid;

const ROAD_Z: f64 = -1.73;
/// Camera optical center in the velodyne frame.
const CAMERA_CENTER: [f64; 3] = [0.27, 0.0, -0.08];
const MAX_LIDAR_RANGE: f64 = 80.0;
const EPS_T: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub obstacle_count: usize,
    /// Scales image pixel noise and LiDAR range jitter; 0 gives clean data.
    pub noise_level: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 96,
            width: 320,
            obstacle_count: 3,
            noise_level: 0.3,
        }
    }
}

/// A generated frame plus the generator-side facts tests need.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub bundle: FrameBundle,
    /// Camera-frame depth of the first surface along each pixel ray
    /// (`f64::INFINITY` for sky).
    pub depth_buffer: Grid<f64>,
    /// For each LiDAR point, whether the generator's own pinhole model puts
    /// it inside the image.
    pub point_in_view: Vec<bool>,
}

/// Generates one frame. Output is a pure function of `(seed, cfg)`.
pub fn synth_scene(seed: u64, cfg: &SynthConfig) -> Result<FrameBundle, KittiError> {
    Ok(synth_scene_detailed(seed, cfg)?.bundle)
}

pub fn synth_scene_detailed(seed: u64, cfg: &SynthConfig) -> Result<SyntheticScene, KittiError> {
    if cfg.height < 32 || cfg.width < 32 {
        return Err(KittiError::DegenerateConfig(format!(
            "synthetic frames need H, W >= 32, got {}x{}",
            cfg.height, cfg.width
        )));
    }
    if !(cfg.noise_level.is_finite() && cfg.noise_level >= 0.0) {
        return Err(KittiError::DegenerateConfig(format!(
            "noise_level must be finite and non-negative, got {}",
            cfg.noise_level
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = Scene::sample(&mut rng, cfg.obstacle_count);
    let camera = Pinhole::for_size(cfg.height, cfg.width);

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_1ae5_u64);
    let (image, gt, depth_buffer) = render(&scene, &camera, cfg, &mut noise_rng);
    let (cloud, point_in_view) = scan(&scene, &camera, cfg, &mut noise_rng);

    let disparity = depth_buffer.map(|&t| if t.is_finite() { 1.0 / t } else { 0.0 });
    let depth = load_relative_depth(&disparity)?;

    Ok(SyntheticScene {
        bundle: FrameBundle {
            frame_id: format!("syn_{seed:06}"),
            image,
            cloud,
            calib: camera.calibration(),
            depth,
            gt: Some(gt),
        },
        depth_buffer,
        point_in_view,
    })
}

#[derive(Debug, Clone, Copy)]
struct Pinhole {
    focal: f64,
    cx: f64,
    cy: f64,
    height: usize,
    width: usize,
}

impl Pinhole {
    fn for_size(height: usize, width: usize) -> Self {
        Self {
            focal: 0.58 * width as f64,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            height,
            width,
        }
    }

    fn calibration(&self) -> CameraCalibration {
        let [cx_w, cy_w, cz_w] = CAMERA_CENTER;
        // camera axes: x = -y_velo, y = -z_velo, z = x_velo; t = -R c
        CameraCalibration {
            p: [
                [self.focal, 0.0, self.cx, 0.0],
                [0.0, self.focal, self.cy, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ],
            r_rect: super::calib::IDENTITY4,
            t_velo_to_cam: [
                [0.0, -1.0, 0.0, cy_w],
                [0.0, 0.0, -1.0, cz_w],
                [1.0, 0.0, 0.0, -cx_w],
                [0.0, 0.0, 0.0, 1.0],
            ],
        }
    }

    /// World-frame direction of the ray through the center of pixel
    /// `(row, col)`, scaled so its camera-frame depth component is 1.
    fn pixel_ray(&self, row: usize, col: usize) -> [f64; 3] {
        let xc = (col as f64 + 0.5 - self.cx) / self.focal;
        let yc = (row as f64 + 0.5 - self.cy) / self.focal;
        [1.0, -xc, -yc]
    }

    fn in_view(&self, p: [f64; 3]) -> bool {
        let depth = p[0] - CAMERA_CENTER[0];
        if depth <= 1e-6 {
            return false;
        }
        let u = self.focal * (-(p[1] - CAMERA_CENTER[1])) / depth + self.cx;
        let v = self.focal * (-(p[2] - CAMERA_CENTER[2])) / depth + self.cy;
        u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Surface {
    Road,
    Verge,
    Curb,
    Obstacle { index: usize, face: usize },
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    t: f64,
    point: [f64; 3],
    surface: Surface,
}

#[derive(Debug, Clone)]
struct Obstacle {
    min: [f64; 3],
    max: [f64; 3],
    color: [f64; 3],
    reflectance: f64,
}

#[derive(Debug, Clone, Copy)]
enum VergeKind {
    Grass,
    Pavement,
    Dirt,
}

#[derive(Debug, Clone)]
struct Scene {
    center: f64,
    slope: f64,
    half_width: f64,
    curb_height: f64,
    road_gray: f64,
    verge: VergeKind,
    verge_tint: [f64; 3],
    illumination: f64,
    texture_seed: u64,
    obstacles: Vec<Obstacle>,
}

impl Scene {
    fn sample(rng: &mut ChaCha8Rng, obstacle_count: usize) -> Self {
        let half_width = rng.gen_range(3.0..5.0);
        let center = rng.gen_range(-1.5..1.5);
        let slope = rng.gen_range(-0.06..0.06);
        let curb_height = rng.gen_range(0.10..0.20);
        let road_gray = rng.gen_range(70.0..105.0);
        let verge = match rng.gen_range(0..3) {
            0 => VergeKind::Grass,
            1 => VergeKind::Pavement,
            _ => VergeKind::Dirt,
        };
        let verge_tint = [
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-12.0..12.0),
            rng.gen_range(-12.0..12.0),
        ];
        let illumination = rng.gen_range(0.75..1.2);
        let texture_seed = rng.gen::<u64>();
        let mut scene = Self {
            center,
            slope,
            half_width,
            curb_height,
            road_gray,
            verge,
            verge_tint,
            illumination,
            texture_seed,
            obstacles: Vec::with_capacity(obstacle_count),
        };
        for _ in 0..obstacle_count {
            let x = rng.gen_range(7.0..40.0);
            let y = rng.gen_range(-12.0..12.0);
            let length = rng.gen_range(1.5..4.5);
            let width = rng.gen_range(1.4..2.0);
            let height = rng.gen_range(1.0..2.0);
            let color = [
                rng.gen_range(20.0..235.0),
                rng.gen_range(20.0..235.0),
                rng.gen_range(20.0..235.0),
            ];
            let reflectance = rng.gen_range(0.5..0.9);
            scene.obstacles.push(Obstacle {
                min: [x, y - width / 2.0, ROAD_Z],
                max: [x + length, y + width / 2.0, ROAD_Z + height],
                color,
                reflectance,
            });
        }
        scene
    }

    fn lateral_offset(&self, p: [f64; 3]) -> f64 {
        p[1] - (self.center + self.slope * p[0])
    }

    fn verge_z(&self) -> f64 {
        ROAD_Z + self.curb_height
    }

    fn intersect(&self, o: [f64; 3], d: [f64; 3]) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, surface: Surface| {
            if t > EPS_T && best.map_or(true, |b| t < b.t) {
                let point = [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
                best = Some(Hit { t, point, surface });
            }
        };

        if d[2] < 0.0 {
            let t = (ROAD_Z - o[2]) / d[2];
            let p = [o[0] + t * d[0], o[1] + t * d[1], ROAD_Z];
            if self.lateral_offset(p).abs() <= self.half_width {
                consider(t, Surface::Road);
            }
            let zv = self.verge_z();
            if o[2] > zv {
                let t = (zv - o[2]) / d[2];
                let p = [o[0] + t * d[0], o[1] + t * d[1], zv];
                if self.lateral_offset(p).abs() > self.half_width {
                    consider(t, Surface::Verge);
                }
            }
        }

        let denom = d[1] - self.slope * d[0];
        if denom != 0.0 {
            for side in [-1.0, 1.0] {
                let t = (self.center + side * self.half_width - o[1] + self.slope * o[0]) / denom;
                let z = o[2] + t * d[2];
                if z >= ROAD_Z && z <= self.verge_z() {
                    consider(t, Surface::Curb);
                }
            }
        }

        for (index, ob) in self.obstacles.iter().enumerate() {
            if let Some((t, face)) = slab_entry(o, d, ob.min, ob.max) {
                consider(t, Surface::Obstacle { index, face });
            }
        }
        best
    }

    fn texture(&self, p: [f64; 3], cell: f64, salt: u64) -> f64 {
        let ix = (p[0] / cell).floor() as i64;
        let iy = (p[1] / cell).floor() as i64;
        let iz = (p[2] / cell).floor() as i64;
        hash_unit(self.texture_seed ^ salt, ix, iy, iz)
    }

    fn shade(&self, hit: &Hit) -> [f64; 3] {
        let base = match hit.surface {
            Surface::Road => {
                let e = self.lateral_offset(hit.point);
                let dash = (hit.point[0] / 3.0).floor() as i64;
                if e.abs() < 0.08 && dash.rem_euclid(2) == 0 {
                    [205.0, 205.0, 195.0]
                } else {
                    let g = self.road_gray + 9.0 * self.texture(hit.point, 0.3, 1);
                    [g, g, g + 4.0]
                }
            }
            Surface::Verge => {
                let n = self.texture(hit.point, 0.2, 2);
                let base = match self.verge {
                    VergeKind::Grass => [70.0 + 15.0 * n, 125.0 + 25.0 * n, 50.0 + 10.0 * n],
                    VergeKind::Pavement => [160.0 + 14.0 * n, 155.0 + 14.0 * n, 145.0 + 14.0 * n],
                    VergeKind::Dirt => [135.0 + 16.0 * n, 112.0 + 14.0 * n, 80.0 + 10.0 * n],
                };
                [
                    base[0] + self.verge_tint[0],
                    base[1] + self.verge_tint[1],
                    base[2] + self.verge_tint[2],
                ]
            }
            Surface::Curb => [175.0, 172.0, 168.0],
            Surface::Obstacle { index, face } => {
                let c = self.obstacles[index].color;
                // top faces are lit, side faces progressively darker
                let k = [0.85, 0.7, 1.0][face];
                [c[0] * k, c[1] * k, c[2] * k]
            }
        };
        base.map(|v| v * self.illumination)
    }

    fn reflectance(&self, hit: &Hit) -> f64 {
        match hit.surface {
            Surface::Road => 0.25 + 0.05 * self.texture(hit.point, 0.3, 1),
            Surface::Verge => 0.45 + 0.08 * self.texture(hit.point, 0.2, 2),
            Surface::Curb => 0.55,
            Surface::Obstacle { index, .. } => self.obstacles[index].reflectance,
        }
    }
}

/// Ray/box entry distance and the axis of the entered face.
fn slab_entry(o: [f64; 3], d: [f64; 3], min: [f64; 3], max: [f64; 3]) -> Option<(f64, usize)> {
    let mut t_enter = f64::NEG_INFINITY;
    let mut t_exit = f64::INFINITY;
    let mut face = 0;
    for axis in 0..3 {
        if d[axis] == 0.0 {
            if o[axis] < min[axis] || o[axis] > max[axis] {
                return None;
            }
            continue;
        }
        let t0 = (min[axis] - o[axis]) / d[axis];
        let t1 = (max[axis] - o[axis]) / d[axis];
        let (near, far) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
        if near > t_enter {
            t_enter = near;
            face = axis;
        }
        t_exit = t_exit.min(far);
    }
    (t_enter <= t_exit && t_enter > EPS_T).then_some((t_enter, face))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of a lattice cell to `[-1, 1)`.
fn hash_unit(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = splitmix64(seed);
    for v in [x, y, z] {
        h = splitmix64(h ^ v as u64);
    }
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

fn render(
    scene: &Scene,
    camera: &Pinhole,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (RgbImage, GroundTruthMask, Grid<f64>) {
    let (h, w) = (cfg.height, cfg.width);
    let mut image = RgbImage::new(w as u32, h as u32);
    let mut labels = Grid::filled(h, w, Label::NonRoad);
    let mut depth = Grid::filled(h, w, f64::INFINITY);
    let pixel_noise = 25.0 * cfg.noise_level;
    for row in 0..h {
        for col in 0..w {
            let dir = camera.pixel_ray(row, col);
            let color = match scene.intersect(CAMERA_CENTER, dir) {
                Some(hit) => {
                    depth.set(row, col, hit.t);
                    if hit.surface == Surface::Road {
                        labels.set(row, col, Label::Road);
                    }
                    scene.shade(&hit)
                }
                None => {
                    let k = row as f64 / h as f64;
                    [125.0 + 60.0 * k, 165.0 + 40.0 * k, 225.0].map(|v| v * scene.illumination)
                }
            };
            let px = color.map(|v| {
                let noisy = v + pixel_noise * (2.0 * rng.gen::<f64>() - 1.0);
                noisy.round().clamp(0.0, 255.0) as u8
            });
            image.put_pixel(col as u32, row as u32, Rgb(px));
        }
    }
    (image, GroundTruthMask::new(labels), depth)
}

fn scan(
    scene: &Scene,
    camera: &Pinhole,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> (PointCloud, Vec<bool>) {
    let beams = (cfg.height / 3).max(16);
    let azimuths = cfg.width;
    let below = (camera.height as f64 - camera.cy) / camera.focal;
    let (el_lo, el_hi) = (-1.1 * below, 0.06);
    let az_max = 1.2 * (camera.width as f64 / 2.0) / camera.focal;
    let jitter = 0.004 * cfg.noise_level;

    let mut points = Vec::new();
    let mut in_view = Vec::new();
    for b in 0..beams {
        let tan_el = el_lo + (el_hi - el_lo) * b as f64 / (beams - 1) as f64;
        for a in 0..azimuths {
            let tan_az = az_max - 2.0 * az_max * a as f64 / (azimuths - 1) as f64;
            let dir = [1.0, tan_az, tan_el];
            let Some(hit) = scene.intersect([0.0; 3], dir) else {
                continue;
            };
            let norm = (1.0 + tan_az * tan_az + tan_el * tan_el).sqrt();
            if hit.t * norm > MAX_LIDAR_RANGE {
                continue;
            }
            let scale = 1.0 + jitter * (2.0 * rng.gen::<f64>() - 1.0);
            let refl = (scene.reflectance(&hit) + 0.05 * cfg.noise_level * (2.0 * rng.gen::<f64>() - 1.0))
                .clamp(0.0, 1.0);
            let p = [
                (hit.point[0] * scale) as f32,
                (hit.point[1] * scale) as f32,
                (hit.point[2] * scale) as f32,
                refl as f32,
            ];
            in_view.push(camera.in_view([p[0] as f64, p[1] as f64, p[2] as f64]));
            points.push(p);
        }
    }
    (PointCloud { points }, in_view)
}
