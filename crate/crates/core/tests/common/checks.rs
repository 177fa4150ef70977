//! One function per acceptance criterion. Each returns whether it held and
//! the measured numbers behind the verdict.

use std::time::Instant;

use rand::Rng;

use udeer_core::diff_engine::{DiffError, Tape, Var};
use udeer_core::evaluation::{evaluate_set, max_f, sweep_counts, result_from_counts};
use udeer_core::grid::Grid;
use udeer_core::kitti_io::{
    load_frame, parse_calibration, read_point_cloud, serialize_calibration, synth_scene, write_frame,
    write_point_cloud, CameraCalibration, PointCloud, SynthConfig, IDENTITY4,
};
use udeer_core::lidar_adaptation::{altitude_difference, project_points, AdaptConfig, ProjectedLidarImage};
use udeer_core::model::{
    forward, prepare_frame, total_loss, train_supervised, LossWeights, ModelConfig, ModelParams, PreparedFrame,
    TrainConfig,
};
use udeer_core::semi_supervised::{pseudo_loss, semi_supervised_rounds, PseudoLabelSet, SemiConfig};

use super::*;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

pub const OP_TOLERANCE: f64 = 1e-4;
pub const MODEL_TOLERANCE: f64 = 1e-3;
pub const GRADIENT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

type OpCase = (&'static str, fn(u64) -> f64);

fn conv_case(seed: u64, x: [usize; 4], f: usize, k: usize, stride: usize, pad: usize) -> f64 {
    let mut r = rng(seed);
    let inputs = [
        tensor(&x, uniform(&mut r, x.iter().product(), -1.0, 1.0)),
        tensor(&[f, x[1], k, k], uniform(&mut r, f * x[1] * k * k, -1.0, 1.0)),
        tensor(&[f], uniform(&mut r, f, -0.5, 0.5)),
    ];
    gradient_error(&inputs, |t, v| {
        let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
        scalar_head(t, y, seed)
    })
}

fn unary_case(seed: u64, op: fn(&mut Tape, Var) -> Result<Var, DiffError>) -> f64 {
    let mut r = rng(seed);
    let inputs = [tensor(&[1, 2, 3, 4], away_from_zero(&mut r, 24))];
    gradient_error(&inputs, |t, v| {
        let y = op(t, v[0])?;
        scalar_head(t, y, seed)
    })
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("conv2d 3x3 stride 1 pad 1", |s| conv_case(s, [1, 2, 5, 6], 3, 3, 1, 1)),
        ("conv2d 3x3 stride 2 pad 1", |s| conv_case(s, [1, 3, 8, 8], 2, 3, 2, 1)),
        ("conv2d 1x1", |s| conv_case(s, [2, 4, 3, 3], 2, 1, 1, 0)),
        ("relu", |s| unary_case(s, |t, x| Ok(t.relu(x)))),
        ("sigmoid", |s| unary_case(s, |t, x| Ok(t.sigmoid(x)))),
        ("scale", |s| unary_case(s, |t, x| Ok(t.scale(x, -1.7)))),
        ("bilinear_upsample x2", |s| unary_case(s, |t, x| t.bilinear_upsample(x, 2))),
        ("bilinear_upsample x8", |s| unary_case(s, |t, x| t.bilinear_upsample(x, 8))),
        ("add", |s| {
            let mut r = rng(s);
            let inputs = [
                tensor(&[1, 2, 3, 3], uniform(&mut r, 18, -1.0, 1.0)),
                tensor(&[1, 2, 3, 3], uniform(&mut r, 18, -1.0, 1.0)),
            ];
            gradient_error(&inputs, |t, v| {
                let y = t.add(v[0], v[1])?;
                let y = t.add(y, v[0])?;
                scalar_head(t, y, s)
            })
        }),
        ("concat_channels", |s| {
            let mut r = rng(s);
            let inputs = [
                tensor(&[1, 1, 3, 4], uniform(&mut r, 12, -1.0, 1.0)),
                tensor(&[1, 2, 3, 4], uniform(&mut r, 24, -1.0, 1.0)),
            ];
            gradient_error(&inputs, |t, v| {
                let y = t.concat_channels(&[v[0], v[1], v[0]])?;
                scalar_head(t, y, s)
            })
        }),
        ("bce_masked", |s| {
            let mut r = rng(s);
            let n = 20;
            let inputs = [tensor(&[1, 1, 4, 5], uniform(&mut r, n, 0.05, 0.95))];
            let t: Vec<f64> = (0..n).map(|_| f64::from(r.gen_bool(0.5))).collect();
            let w: Vec<f64> = (0..n).map(|i| if i % 4 == 0 { 0.0 } else { r.gen_range(0.1..2.0) }).collect();
            gradient_error(&inputs, move |tape, v| tape.bce_masked(v[0], &t, &w))
        }),
    ]
}

fn model_loss(params: &ModelParams, inputs: &ModelInputs, gt: &GroundTruthMask) -> f64 {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, params, &bound, inputs).unwrap();
    let terms = total_loss(&mut tape, &out, gt, &LossWeights::default()).unwrap();
    tape.data(terms.total)[0]
}

/// Relative error of the full-model parameter gradient on a 16×16 input,
/// over a few sampled coordinates of every parameter tensor.
pub fn model_gradient_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let params = ModelParams::init(ModelConfig::default(), seed, 2.0).unwrap();
    let inputs = random_inputs(&mut r, 16, 16, 3);
    let gt = random_mask(&mut r, 16, 16);

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, &params, &bound, &inputs).unwrap();
    let terms = total_loss(&mut tape, &out, &gt, &LossWeights::default()).unwrap();
    tape.backward(terms.total).unwrap();

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for (k, var) in bound.vars().iter().enumerate() {
        let grad = tape.grad(*var).unwrap().to_vec();
        for _ in 0..3 {
            let j = r.gen_range(0..grad.len());
            let mut plus = params.clone();
            plus.params_mut()[k].tensor.data_mut()[j] += FD_STEP;
            let mut minus = params.clone();
            minus.params_mut()[k].tensor.data_mut()[j] -= FD_STEP;
            analytic.push(grad[j]);
            numeric.push((model_loss(&plus, &inputs, &gt) - model_loss(&minus, &inputs, &gt)) / (2.0 * FD_STEP));
        }
    }
    relative_error(&analytic, &numeric)
}

pub fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst_op = (0.0f64, "");
    for (name, case) in op_cases() {
        for seed in GRADIENT_SEEDS {
            let e = case(seed);
            if e > worst_op.0 || e.is_nan() {
                worst_op = (e, name);
            }
        }
    }
    let worst_model = GRADIENT_SEEDS.iter().map(|&s| model_gradient_error(s)).fold(0.0f64, f64::max);
    let passed = worst_op.0 < OP_TOLERANCE && worst_model < MODEL_TOLERANCE;
    Outcome::new(
        passed,
        format!(
            "worst op rel err {:.2e} ({}), model rel err {:.2e}, {:.1}s",
            worst_op.0,
            worst_op.1,
            worst_model,
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---- oracle equivalence ----

pub fn kitti_calibration() -> CameraCalibration {
    parse_calibration(
        "P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03\n\
         R0_rect: 9.999239e-01 9.837760e-03 -7.445048e-03 -9.869795e-03 9.999421e-01 -4.278459e-03 7.402527e-03 4.351614e-03 9.999631e-01\n\
         Tr_velo_to_cam: 7.533745e-03 -9.999714e-01 -6.166020e-04 -4.069766e-03 1.480249e-02 7.280733e-04 -9.998902e-01 -7.631618e-02 9.998621e-01 7.523790e-03 1.480755e-02 -2.717806e-01\n",
    )
    .unwrap()
}

/// Points ahead of the sensor, with repeated points to exercise z-buffer ties.
pub fn random_cloud(r: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let mut points: Vec<[f32; 4]> = (0..n)
        .map(|_| {
            [
                r.gen_range(-5.0f32..60.0),
                r.gen_range(-25.0f32..25.0),
                r.gen_range(-2.5f32..3.0),
                r.gen_range(0.0f32..1.0),
            ]
        })
        .collect();
    for i in 0..n / 20 {
        points.push(points[i * 7 % n]);
    }
    PointCloud { points }
}

pub fn projections_agree(a: &ProjectedLidarImage, b: &ProjectedLidarImage) -> bool {
    a.hit == b.hit
        && a.source == b.source
        && a.altitude == b.altitude
        && a.range.iter().zip(b.range.iter()).all(|(x, y)| (x - y).abs() <= 1e-9)
}

pub fn projection_mismatches() -> usize {
    let mut bad = 0;
    let kitti = kitti_calibration();
    for seed in 0..5 {
        let mut r = rng(seed);
        let cloud = random_cloud(&mut r, 20_000);
        if !projections_agree(&project_points(&cloud, &kitti, 375, 1242), &projection_oracle(&cloud, &kitti, 375, 1242)) {
            bad += 1;
        }
        let frame = synth_scene(seed, &SynthConfig::default()).unwrap();
        let (h, w) = frame.dims();
        if !projections_agree(&project_points(&frame.cloud, &frame.calib, h, w), &projection_oracle(&frame.cloud, &frame.calib, h, w)) {
            bad += 1;
        }
    }
    bad
}

pub fn random_projection(r: &mut ChaCha8Rng, h: usize, w: usize) -> ProjectedLidarImage {
    let density = r.gen_range(0.05..1.0);
    let mut p = ProjectedLidarImage::empty(h, w);
    for row in 0..h {
        for col in 0..w {
            if r.gen_bool(density) {
                p.hit.set(row, col, true);
                p.altitude.set(row, col, r.gen_range(-3.0..3.0));
                p.range.set(row, col, r.gen_range(1.0..80.0));
            }
        }
    }
    p
}

/// Largest deviation from the naive double loop over random 16×16 grids.
pub fn adm_max_deviation() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..60 {
        let mut r = rng(1000 + seed);
        let proj = random_projection(&mut r, 16, 16);
        let radius = 1 + (seed as usize % 3);
        let fast = altitude_difference(&proj, radius).unwrap();
        let slow = adm_oracle(&proj.hit, &proj.altitude, radius);
        for (a, b) in fast.grid.iter().zip(slow.iter()) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Probability maps mixing continuous values with exact threshold levels.
pub fn random_prob_map(r: &mut ChaCha8Rng, h: usize, w: usize) -> Grid<f64> {
    Grid::from_fn(h, w, |_, _| {
        if r.gen_bool(0.3) {
            r.gen_range(0..256) as f64 / 255.0
        } else {
            r.gen::<f64>()
        }
    })
}

pub fn max_f_mismatches() -> usize {
    let mut bad = 0;
    for seed in 0..50 {
        let mut r = rng(2000 + seed);
        let pairs: Vec<_> = (0..3)
            .map(|_| (random_prob_map(&mut r, 12, 20), random_mask(&mut r, 12, 20)))
            .collect();
        let mut pooled = sweep_counts(&pairs[0].0, &pairs[0].1).unwrap();
        for (p, g) in &pairs[1..] {
            for (a, c) in pooled.iter_mut().zip(sweep_counts(p, g).unwrap()) {
                *a += c;
            }
        }
        let fast = result_from_counts(&pooled).unwrap();
        let single = max_f(&pairs[0].0, &pairs[0].1).unwrap();
        let (f, t) = max_f_oracle(&pairs);
        let (f1, t1) = max_f_oracle(&pairs[..1]);
        if fast.max_f != f || fast.best_threshold != t || single.max_f != f1 || single.best_threshold != t1 {
            bad += 1;
        }
    }
    bad
}

pub fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let proj = projection_mismatches();
    let adm = adm_max_deviation();
    let mf = max_f_mismatches();
    Outcome::new(
        proj == 0 && adm < 1e-12 && mf == 0,
        format!(
            "projection mismatches {proj}/10, ADM max dev {adm:.1e}, max_f mismatches {mf}/50, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---- loss identity ----

/// Largest gap between `total_loss` and the separately summed terms, and
/// whether zero coefficients reproduce the fine term bit for bit.
pub fn loss_identity_gap() -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut zero_exact = true;
    for seed in 0..100 {
        let mut r = rng(3000 + seed);
        let (h, w) = (r.gen_range(1..10), r.gen_range(1..10));
        let mut tape = Tape::new();
        let out = leaf_outputs(&mut tape, &mut r, h, w);
        let gt = random_mask(&mut r, h, w);
        let lw = LossWeights::new(r.gen_range(0.0..2.0), r.gen_range(0.0..2.0), r.gen_range(0.0..2.0)).unwrap();
        let terms = total_loss(&mut tape, &out, &gt, &lw).unwrap();
        let (t, v) = (gt.targets(), gt.validity_weights());
        let term = |var| bce_oracle(tape.data(var), &t, &v);
        let expected = term(out.fine) + lw.alpha * term(out.image_aux) + lw.beta * term(out.lidar_aux)
            + lw.gamma * term(out.depth_aux);
        worst = worst.max((tape.data(terms.total)[0] - expected).abs());

        let zero = total_loss(&mut tape, &out, &gt, &LossWeights::new(0.0, 0.0, 0.0).unwrap()).unwrap();
        zero_exact &= tape.data(zero.total)[0] == tape.data(zero.fine)[0];
    }
    (worst, zero_exact)
}

pub fn loss_identity() -> Outcome {
    let (gap, zero_exact) = loss_identity_gap();
    Outcome::new(
        gap < 1e-12 && zero_exact,
        format!("max gap {gap:.1e} over 100 instances, zero weights reduce to fine term: {zero_exact}"),
    )
}

// ---- masking ----

/// Number of excluded pixels with a nonzero gradient on the fine map, over
/// pseudo-label and ground-truth masks, plus nonzero parameter gradients
/// under an empty included set.
pub fn masking_violations() -> (usize, usize) {
    let mut leaked = 0;
    let mut empty_leaks = 0;
    for seed in 0..10 {
        let mut r = rng(4000 + seed);
        let params = ModelParams::init(ModelConfig::default(), seed, 2.0).unwrap();
        let inputs = random_inputs(&mut r, 16, 16, 3);

        let prob = random_prob_map(&mut r, 16, 16);
        let tau = r.gen_range(0.5..1.0);
        let pseudo = PseudoLabelSet::from_probabilities(&prob, tau).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = forward(&mut tape, &params, &bound, &inputs).unwrap();
        let terms = pseudo_loss(&mut tape, &out, &pseudo, &LossWeights::default()).unwrap();
        tape.backward(terms.total).unwrap();
        let g = tape.grad(out.fine).unwrap();
        leaked += pseudo.included.iter().zip(g).filter(|(inc, g)| !**inc && **g != 0.0).count();

        let gt = random_mask(&mut r, 16, 16);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = forward(&mut tape, &params, &bound, &inputs).unwrap();
        let terms = total_loss(&mut tape, &out, &gt, &LossWeights::default()).unwrap();
        tape.backward(terms.total).unwrap();
        for var in [out.fine, out.image_aux, out.lidar_aux, out.depth_aux] {
            let g = tape.grad(var).unwrap();
            leaked += gt.grid.iter().zip(g).filter(|(l, g)| !l.is_valid() && **g != 0.0).count();
        }

        let none = PseudoLabelSet::from_probabilities(&Grid::filled(16, 16, 0.7), 0.8).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let out = forward(&mut tape, &params, &bound, &inputs).unwrap();
        let terms = pseudo_loss(&mut tape, &out, &none, &LossWeights::default()).unwrap();
        tape.backward(terms.total).unwrap();
        empty_leaks += usize::from(tape.data(terms.total)[0] != 0.0);
        for var in bound.vars() {
            empty_leaks += tape.grad(*var).map_or(0, |g| g.iter().filter(|v| **v != 0.0).count());
        }
    }
    (leaked, empty_leaks)
}

/// Maps (out of 100) where raising τ adds a pixel to the included set.
pub fn threshold_monotonicity_violations() -> usize {
    let mut bad = 0;
    for seed in 0..100 {
        let mut r = rng(5000 + seed);
        let prob = random_prob_map(&mut r, 10, 14);
        let mut taus = [r.gen::<f64>(), r.gen::<f64>()];
        taus.sort_by(f64::total_cmp);
        let loose = PseudoLabelSet::from_probabilities(&prob, taus[0]).unwrap();
        let strict = PseudoLabelSet::from_probabilities(&prob, taus[1]).unwrap();
        if strict.included.iter().zip(loose.included.iter()).any(|(s, l)| *s && !*l) {
            bad += 1;
        }
    }
    bad
}

pub fn masking_properties() -> Outcome {
    let (leaked, empty) = masking_violations();
    let mono = threshold_monotonicity_violations();
    Outcome::new(
        leaked == 0 && empty == 0 && mono == 0,
        format!("nonzero excluded-pixel grads {leaked}, empty-set leaks {empty}, monotonicity violations {mono}/100"),
    )
}

// ---- end-to-end training ----

pub const HELDOUT_SEEDS: std::ops::Range<u64> = 10_000..10_010;

pub fn prepared(seeds: impl IntoIterator<Item = u64>) -> Vec<PreparedFrame> {
    let (sc, ac) = (SynthConfig::default(), AdaptConfig::default());
    seeds
        .into_iter()
        .map(|s| prepare_frame(&synth_scene(s, &sc).unwrap(), &ac).unwrap())
        .collect()
}

pub fn supervised_end_to_end() -> Outcome {
    let start = Instant::now();
    let train = prepared(0..40);
    let heldout = prepared(HELDOUT_SEEDS);
    let cfg = TrainConfig { steps: 200, ..TrainConfig::default() };
    let first = train_supervised(&train, &cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let maxf = evaluate_set(&first.params, &heldout).unwrap().max_f;
    let second = train_supervised(&train, &cfg).unwrap();
    let deterministic =
        first.params.to_checkpoint().encode() == second.params.to_checkpoint().encode() && first.log == second.log;
    Outcome::new(
        maxf >= 95.0 && deterministic && elapsed < 900.0,
        format!("held-out MaxF {maxf:.3} (gate 95.0), deterministic: {deterministic}, train+prep {elapsed:.0}s"),
    )
}

pub struct SemiRun {
    pub seed: u64,
    pub baseline: f64,
    pub semi: f64,
}

/// One seed: a supervised start on 8 labeled frames, then three rounds with
/// 64 unlabeled frames against the same schedule without them.
pub fn semi_run(seed: u64, heldout: &[PreparedFrame]) -> SemiRun {
    let base = 1_000 * seed;
    let labeled = prepared(base..base + 8);
    let unlabeled = prepared(base + 100..base + 164);
    let init = train_supervised(&labeled, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
    let cfg = SemiConfig { seed, tau: 0.9, rounds: 3, ..SemiConfig::default() };
    let semi = semi_supervised_rounds(&init.params, &labeled, &unlabeled, &cfg, &[]).unwrap();
    let baseline = semi_supervised_rounds(&init.params, &labeled, &[], &cfg, &[]).unwrap();
    SemiRun {
        seed,
        baseline: evaluate_set(&baseline.params, heldout).unwrap().max_f,
        semi: evaluate_set(&semi.params, heldout).unwrap().max_f,
    }
}

pub fn semi_supervised_end_to_end() -> Outcome {
    let start = Instant::now();
    let heldout = prepared(HELDOUT_SEEDS);
    let runs: Vec<SemiRun> = [1, 2, 3].into_iter().map(|s| semi_run(s, &heldout)).collect();
    let mean = |f: fn(&SemiRun) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (semi, baseline) = (mean(|r| r.semi), mean(|r| r.baseline));
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("seed {}: {:.3} vs {:.3}", r.seed, r.semi, r.baseline))
        .collect();
    Outcome::new(
        semi >= baseline - 0.5,
        format!(
            "mean MaxF semi {semi:.3} vs supervised-only {baseline:.3} (improvement {:+.3}); {}; {:.0}s",
            semi - baseline,
            per_seed.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---- formats ----

/// Random proper rotation from a normalized quaternion.
pub fn random_rotation(r: &mut ChaCha8Rng) -> [[f64; 3]; 3] {
    let q: Vec<f64> = uniform(r, 4, -1.0, 1.0);
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn random_calibration(r: &mut ChaCha8Rng) -> CameraCalibration {
    let mut c = CameraCalibration::identity();
    for row in c.p.iter_mut() {
        for v in row.iter_mut() {
            *v = r.gen_range(-800.0..800.0);
        }
    }
    let (rr, rt) = (random_rotation(r), random_rotation(r));
    c.r_rect = IDENTITY4;
    c.t_velo_to_cam = IDENTITY4;
    for i in 0..3 {
        for j in 0..3 {
            c.r_rect[i][j] = rr[i][j];
            c.t_velo_to_cam[i][j] = rt[i][j];
        }
        c.t_velo_to_cam[i][3] = r.gen_range(-2.0..2.0);
    }
    c
}

fn dir_bytes(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn format_roundtrips() -> Outcome {
    let mut cloud_bad = 0;
    let mut calib_bad = 0;
    for seed in 0..50 {
        let mut r = rng(6000 + seed);
        let n = r.gen_range(0..500);
        let cloud = PointCloud {
            points: (0..n).map(|_| [r.gen(), r.gen::<f32>() * -7.5, r.gen_range(-1e6..1e6), r.gen()]).collect(),
        };
        let bytes = write_point_cloud(&cloud);
        let back = read_point_cloud(&bytes).unwrap();
        if back != cloud || write_point_cloud(&back) != bytes {
            cloud_bad += 1;
        }
        let calib = random_calibration(&mut r);
        let text = serialize_calibration(&calib);
        match parse_calibration(&text) {
            Ok(parsed) if parsed == calib && serialize_calibration(&parsed) == text => {}
            _ => calib_bad += 1,
        }
    }

    let mut synth_bad = 0;
    let cfg = SynthConfig::default();
    for seed in [0, 7, 123_456] {
        let a = synth_scene(seed, &cfg).unwrap();
        let b = synth_scene(seed, &cfg).unwrap();
        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_frame(da.path(), &a).unwrap();
        write_frame(db.path(), &b).unwrap();
        let files = dir_bytes(da.path());
        let reloaded = load_frame(da.path(), &a.frame_id).unwrap();
        let same_cloud = reloaded.cloud == a.cloud && reloaded.calib == a.calib && reloaded.image == a.image;
        if files.is_empty() || files != dir_bytes(db.path()) || !same_cloud || reloaded.gt != a.gt {
            synth_bad += 1;
        }
    }
    Outcome::new(
        cloud_bad == 0 && calib_bad == 0 && synth_bad == 0,
        format!("point-cloud failures {cloud_bad}/50, calibration failures {calib_bad}/50, synth byte mismatches {synth_bad}/3"),
    )
}
