//! Independent oracles and the checks shared by the integration tests and
//! the acceptance target.
#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use udeer_core::diff_engine::{DiffError, DiffTensor, Tape, Var, BCE_EPS};
use udeer_core::grid::Grid;
use udeer_core::kitti_io::{CameraCalibration, GroundTruthMask, Label, PointCloud};
use udeer_core::lidar_adaptation::{AltitudeDifferenceMap, ProjectedLidarImage, MIN_DEPTH};
use udeer_core::model::{ModelInputs, ModelOutputs};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> DiffTensor {
    DiffTensor::new(shape.to_vec(), data).unwrap()
}

/// Uniform values bounded away from zero, so ReLU kinks stay out of reach
/// of the finite-difference step.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

// ---- reference implementations ----

pub fn conv_oracle(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    k: &[f64],
    [f, _, kh, kw]: [usize; 4],
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * f * ho * wo];
    for b in 0..n {
        for o in 0..f {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias[o];
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let kv = k[((o * c + ch) * kh + ky) * kw + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * f + o) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (out, [n, f, ho, wo])
}

fn source_coord(o: usize, factor: usize, n: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(n - 1);
    let hi = (lo + 1).min(n - 1);
    (lo, hi, src - lo as f64)
}

/// Half-pixel-centred bilinear upsampling written as the textbook blend.
pub fn upsample_oracle(x: &[f64], [n, c, h, w]: [usize; 4], factor: usize) -> Vec<f64> {
    let (ho, wo) = (h * factor, w * factor);
    let mut out = vec![0.0; n * c * ho * wo];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        for oy in 0..ho {
            let (y0, y1, ly) = source_coord(oy, factor, h);
            for ox in 0..wo {
                let (x0, x1, lx) = source_coord(ox, factor, w);
                let top = (1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1];
                let bottom = (1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1];
                out[plane * ho * wo + oy * wo + ox] = (1.0 - ly) * top + ly * bottom;
            }
        }
    }
    out
}

/// Weighted-mean binary cross-entropy by a plain scalar loop.
pub fn bce_oracle(p: &[f64], t: &[f64], w: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        if w[i] == 0.0 {
            continue;
        }
        let q = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
        num += w[i] * -(t[i] * q.ln() + (1.0 - t[i]) * (1.0 - q).ln());
        den += w[i];
    }
    num / den.max(1.0)
}

fn mat_vec(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for k in 0..4 {
            out[i] += m[i][k] * v[k];
        }
    }
    out
}

/// Per-point projection with the two extrinsic transforms applied one after
/// the other and a separate nearest-point z-buffer.
pub fn projection_oracle(cloud: &PointCloud, calib: &CameraCalibration, h: usize, w: usize) -> ProjectedLidarImage {
    let mut landed: Vec<(usize, usize, f64, usize)> = Vec::new();
    for (i, pt) in cloud.points.iter().enumerate() {
        let velo = [pt[0] as f64, pt[1] as f64, pt[2] as f64, 1.0];
        let cam = mat_vec(&calib.r_rect, mat_vec(&calib.t_velo_to_cam, velo));
        if cam[2] <= MIN_DEPTH {
            continue;
        }
        let mut img = [0.0; 3];
        for r in 0..3 {
            for k in 0..4 {
                img[r] += calib.p[r][k] * cam[k];
            }
        }
        if img[2] <= 0.0 {
            continue;
        }
        let (u, v) = (img[0] / img[2], img[1] / img[2]);
        if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
            continue;
        }
        landed.push((v.floor() as usize, u.floor() as usize, cam[2], i));
    }
    let mut best: std::collections::HashMap<(usize, usize), (f64, usize)> = Default::default();
    for (row, col, depth, i) in landed {
        let slot = best.entry((row, col)).or_insert((depth, i));
        if depth < slot.0 || (depth == slot.0 && i < slot.1) {
            *slot = (depth, i);
        }
    }
    let mut out = ProjectedLidarImage::empty(h, w);
    for ((row, col), (depth, i)) in best {
        out.hit.set(row, col, true);
        out.range.set(row, col, depth);
        out.altitude.set(row, col, cloud.points[i][2] as f64);
        out.source.set(row, col, Some(i));
    }
    out
}

/// Naive double loop over every pixel pair.
pub fn adm_oracle(hit: &Grid<bool>, z: &Grid<f64>, radius: usize) -> Grid<f64> {
    let (h, w) = hit.dims();
    Grid::from_fn(h, w, |r, c| {
        if !*hit.get(r, c) {
            return 0.0;
        }
        let mut sum = 0.0;
        let mut n = 0;
        for r2 in 0..h {
            for c2 in 0..w {
                let dy = r.abs_diff(r2);
                let dx = c.abs_diff(c2);
                if (dy == 0 && dx == 0) || dy.max(dx) > radius || !*hit.get(r2, c2) {
                    continue;
                }
                let dist = ((dy * dy + dx * dx) as f64).sqrt();
                sum += (z.get(r, c) - z.get(r2, c2)).abs() / dist;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    })
}

/// Exhaustive search for the nearest valid pixel.
pub fn densify_oracle(adm: &AltitudeDifferenceMap, max_ring: usize) -> AltitudeDifferenceMap {
    let (h, w) = adm.grid.dims();
    let mut out = adm.clone();
    for r in 0..h {
        for c in 0..w {
            if *adm.valid.get(r, c) {
                continue;
            }
            let mut best: Option<(usize, usize, usize)> = None;
            for r2 in 0..h {
                for c2 in 0..w {
                    if !*adm.valid.get(r2, c2) {
                        continue;
                    }
                    let d = r.abs_diff(r2).max(c.abs_diff(c2));
                    if d <= max_ring && best.map_or(true, |b| (d, r2, c2) < b) {
                        best = Some((d, r2, c2));
                    }
                }
            }
            if let Some((_, r2, c2)) = best {
                out.grid.set(r, c, *adm.grid.get(r2, c2));
                out.valid.set(r, c, true);
            } else {
                out.grid.set(r, c, 0.0);
            }
        }
    }
    out
}

/// `(max F1 in percent, threshold)` by recounting at each of the 256 thresholds.
pub fn max_f_oracle(pairs: &[(Grid<f64>, GroundTruthMask)]) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    for k in 0..256 {
        let t = k as f64 / 255.0;
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for (prob, gt) in pairs {
            for (p, l) in prob.iter().zip(gt.grid.iter()) {
                match (l, *p >= t) {
                    (Label::Road, true) => tp += 1,
                    (Label::Road, false) => fneg += 1,
                    (Label::NonRoad, true) => fp += 1,
                    _ => {}
                }
            }
        }
        let prec = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let rec = if tp + fneg == 0 { 0.0 } else { tp as f64 / (tp + fneg) as f64 };
        let f = if prec + rec == 0.0 { 0.0 } else { 2.0 * prec * rec / (prec + rec) };
        if 100.0 * f > best.0 {
            best = (100.0 * f, t);
        }
    }
    best
}

// ---- random fixtures ----

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GroundTruthMask {
    GroundTruthMask::new(Grid::from_fn(h, w, |_, _| match rng.gen_range(0..10) {
        0 => Label::Invalid,
        1..=4 => Label::Road,
        _ => Label::NonRoad,
    }))
}

pub fn random_inputs(rng: &mut ChaCha8Rng, h: usize, w: usize, lidar: usize) -> ModelInputs {
    let mut plane = || Grid::from_vec(h, w, uniform(rng, h * w, 0.0, 1.0)).unwrap();
    let image = [plane(), plane(), plane()];
    let lidar: Vec<_> = (0..lidar).map(|_| plane()).collect();
    let depth = plane();
    ModelInputs::from_planes(&image, &lidar, &depth).unwrap()
}

/// Four leaf probability maps standing in for the network outputs.
pub fn leaf_outputs(tape: &mut Tape, rng: &mut ChaCha8Rng, h: usize, w: usize) -> ModelOutputs {
    let mut map = |tape: &mut Tape| {
        tape.leaf(tensor(&[1, 1, h, w], uniform(rng, h * w, 0.01, 0.99)).requiring_grad())
    };
    ModelOutputs {
        fine: map(tape),
        image_aux: map(tape),
        lidar_aux: map(tape),
        depth_aux: map(tape),
        height: h,
        width: w,
    }
}

// ---- finite differences ----

pub const FD_STEP: f64 = 1e-5;

/// `‖a − n‖ / (‖a‖ + ‖n‖)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Worst relative error between the tape gradient and central differences,
/// over every input of `f`.
pub fn gradient_error<F>(inputs: &[DiffTensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, DiffError>,
{
    let eval = |ins: &[DiffTensor], grads: bool| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.leaf(t.clone().requiring_grad())).collect();
        let root = f(&mut tape, &vars).unwrap();
        let value = tape.data(root)[0];
        if !grads {
            return (value, Vec::new());
        }
        tape.backward(root).unwrap();
        let g = vars
            .iter()
            .zip(ins)
            .map(|(v, t)| tape.grad(*v).map_or(vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        (value, g)
    };
    let (_, analytic) = eval(inputs, true);
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; t.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            *slot = (eval(&plus, false).0 - eval(&minus, false).0) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic[i], &numeric));
    }
    worst
}

/// Reduces an `[N,C,H,W]` node to a scalar through a fixed 1×1 projection,
/// a sigmoid and a weighted BCE against fixed targets.
pub fn scalar_head(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, DiffError> {
    let shape = tape.shape(y).to_vec();
    let (c, hw) = (shape[1], shape[2] * shape[3]);
    let mut r = rng(seed ^ 0xbead);
    let k = tape.constant(vec![1, c, 1, 1], uniform(&mut r, c, -1.0, 1.0))?;
    let b = tape.constant(vec![1], vec![0.1])?;
    let z = tape.conv2d(y, k, b, 1, 0)?;
    let p = tape.sigmoid(z);
    let n = shape[0] * hw;
    let t: Vec<f64> = (0..n).map(|_| f64::from(r.gen_bool(0.5))).collect();
    let w = uniform(&mut r, n, 0.2, 1.0);
    tape.bce_masked(p, &t, &w)
}
