use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use rayon::prelude::*;

use udeer_core::diff_engine::Checkpoint;
use udeer_core::evaluation::{evaluate_predictions, overlay, summary_line, write_curve_csv};
use udeer_core::grid::Grid;
use udeer_core::kitti_io::{
    encode_unit_grid_u16, list_frames, load_frame, parse_calibration, read_point_cloud, synth_scene, write_frame,
    DatasetLayout, FrameBundle, SynthConfig,
};
use udeer_core::lidar_adaptation::{adapt, AdaptConfig, LidarChannels};
use udeer_core::model::{
    predict, prepare_frame, train_supervised, write_loss_csv, LossWeights, ModelConfig, ModelParams, PreparedFrame,
    TrainConfig,
};
use udeer_core::semi_supervised::{semi_supervised_rounds, SemiConfig};

use crate::config::Config;
use crate::error::{io, CliError, CliResult};
use crate::manifest::RunManifest;

/// Settings shared by every command after command-line overrides.
pub struct Run {
    pub config: Config,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Run {
    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command, self.config.snapshot().clone());
        m.seeds.insert("seed".into(), self.seed);
        m
    }

    fn prefix(&self) -> CliResult<String> {
        self.config.get_or("frame_prefix", String::new())
    }
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| io(path, e))
}

fn save_png(path: &Path, img: &DynamicImage) -> CliResult<()> {
    img.save_with_format(path, ImageFormat::Png).map_err(|e| io(path, e))
}

fn data_err(id: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("frame {id}: {e}"))
}

fn frame_ids(dir: &Path, prefix: &str) -> CliResult<Vec<String>> {
    let ids = list_frames(dir).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(ids.into_iter().filter(|id| id.starts_with(prefix)).collect())
}

fn synth_config(cfg: &Config) -> CliResult<SynthConfig> {
    let d = SynthConfig::default();
    Ok(SynthConfig {
        height: cfg.get_or("height", d.height)?,
        width: cfg.get_or("width", d.width)?,
        obstacle_count: cfg.get_or("obstacles", d.obstacle_count)?,
        noise_level: cfg.get_or("noise", d.noise_level)?,
    })
}

fn lidar_mode(channels: usize) -> CliResult<LidarChannels> {
    match channels {
        1 => Ok(LidarChannels::AdmOnly),
        3 => Ok(LidarChannels::AdmRangeHit),
        n => Err(CliError::Config(format!("lidar_channels must be 1 or 3, got {n}"))),
    }
}

fn adapt_config(cfg: &Config, channels: usize) -> CliResult<AdaptConfig> {
    let d = AdaptConfig::default();
    Ok(AdaptConfig {
        radius: cfg.get_or("radius", d.radius)?,
        max_ring: cfg.get_or("max_ring", d.max_ring)?,
        lo_pct: cfg.get_or("lo_pct", d.lo_pct)?,
        hi_pct: cfg.get_or("hi_pct", d.hi_pct)?,
        max_range: cfg.get_or("max_range", d.max_range)?,
        channels: lidar_mode(channels)?,
    })
}

fn loss_weights(cfg: &Config) -> CliResult<LossWeights> {
    let d = LossWeights::default();
    LossWeights::new(
        cfg.get_or("alpha", d.alpha)?,
        cfg.get_or("beta", d.beta)?,
        cfg.get_or("gamma", d.gamma)?,
    )
    .map_err(|e| CliError::Config(e.to_string()))
}

fn train_config(run: &Run) -> CliResult<TrainConfig> {
    let cfg = &run.config;
    let d = TrainConfig::default();
    let model = ModelConfig {
        lidar_channels: cfg.get_or("lidar_channels", d.model.lidar_channels)?,
        fuse_all_levels: cfg.get_or("fuse_all_levels", d.model.fuse_all_levels)?,
    };
    model.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let t = TrainConfig {
        steps: cfg.get_or("steps", d.steps)?,
        lr: cfg.get_or("lr", d.lr)?,
        momentum: cfg.get_or("momentum", d.momentum)?,
        seed: run.seed,
        loss_weights: loss_weights(cfg)?,
        model,
        hflip: cfg.get_or("hflip", d.hflip)?,
        init_scale: cfg.get_or("init_scale", d.init_scale)?,
    };
    if !(t.lr > 0.0 && (0.0..1.0).contains(&t.momentum) && t.init_scale >= 0.0) {
        return Err(CliError::Config("need lr > 0, momentum in [0, 1), init_scale ≥ 0".into()));
    }
    Ok(t)
}

fn semi_config(run: &Run) -> CliResult<SemiConfig> {
    let cfg = &run.config;
    let d = SemiConfig::default();
    let s = SemiConfig {
        tau: cfg.get_or("tau", d.tau)?,
        rounds: cfg.get_or("rounds", d.rounds)?,
        steps_per_round: cfg.get_or("steps_per_round", d.steps_per_round)?,
        labeled_mix: cfg.get_or("labeled_mix", d.labeled_mix)?,
        seed: run.seed,
        lr: cfg.get_or("lr", d.lr)?,
        momentum: cfg.get_or("momentum", d.momentum)?,
        loss_weights: loss_weights(cfg)?,
        hflip: cfg.get_or("hflip", d.hflip)?,
    };
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s)
}

fn load_frames(dir: &Path, prefix: &str, manifest: &mut RunManifest) -> CliResult<Vec<FrameBundle>> {
    let ids = frame_ids(dir, prefix)?;
    manifest.record_tree(dir)?;
    ids.par_iter()
        .map(|id| load_frame(dir, id).map_err(|e| data_err(id, e)))
        .collect()
}

fn prepare_all(frames: &[FrameBundle], adapt_cfg: &AdaptConfig) -> CliResult<Vec<PreparedFrame>> {
    frames
        .par_iter()
        .map(|f| prepare_frame(f, adapt_cfg).map_err(|e| data_err(&f.frame_id, e)))
        .collect()
}

fn load_checkpoint(path: &Path, manifest: &mut RunManifest) -> CliResult<ModelParams> {
    if !path.exists() {
        return Err(CliError::Order(format!(
            "checkpoint {} not found; run `udeer train` first",
            path.display()
        )));
    }
    manifest.record_input(path)?;
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    let ck = Checkpoint::decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    ModelParams::from_checkpoint(&ck).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn checkpoint_path(run: &Run) -> PathBuf {
    run.config
        .path("checkpoint")
        .unwrap_or_else(|| run.out_dir.join("model.ckpt"))
}

fn write_checkpoint(path: &Path, params: &ModelParams, manifest: &mut RunManifest) -> CliResult<()> {
    write_file(path, &params.to_checkpoint().encode())?;
    manifest.artifact(path);
    Ok(())
}

pub fn synth(run: &Run) -> CliResult<()> {
    let mut manifest = run.manifest("synth");
    let sc = synth_config(&run.config)?;
    let count: u64 = run.config.get_or("count", 10)?;
    DatasetLayout::new(&run.out_dir)
        .create_dirs()
        .map_err(|e| CliError::Io(e.to_string()))?;
    let frames = (run.seed..run.seed + count)
        .into_par_iter()
        .map(|s| synth_scene(s, &sc).map_err(|e| CliError::Config(e.to_string())))
        .collect::<CliResult<Vec<_>>>()?;
    for f in &frames {
        write_frame(&run.out_dir, f).map_err(|e| CliError::Io(e.to_string()))?;
        manifest.artifact(&DatasetLayout::new(&run.out_dir).image(&f.frame_id));
    }
    manifest.seeds.insert("last_frame_seed".into(), run.seed + count.saturating_sub(1));
    manifest.write(&run.out_dir)?;
    println!("wrote {count} frames to {}", run.out_dir.display());
    Ok(())
}

/// 16-bit normalized ADM and 8-bit validity mask per frame.
pub fn adapt_cmd(run: &Run) -> CliResult<()> {
    let mut manifest = run.manifest("adapt");
    let data_dir = run.config.require_path("data_dir")?;
    let channels = run.config.get_or("lidar_channels", 3)?;
    let ac = adapt_config(&run.config, channels)?;
    let ids = frame_ids(&data_dir, &run.prefix()?)?;
    if ids.is_empty() {
        println!("no frames under {}", data_dir.display());
        return Ok(());
    }
    let layout = DatasetLayout::new(&data_dir);
    let (adm_dir, valid_dir) = (run.out_dir.join("adm"), run.out_dir.join("adm_valid"));
    create_dir(&adm_dir)?;
    create_dir(&valid_dir)?;
    for id in &ids {
        let img_path = layout.image(id);
        let (w, h) = image::image_dimensions(&img_path).map_err(|e| data_err(id, e))?;
        let velo_path = layout.velodyne(id);
        let calib_path = layout.calib(id);
        let cloud_bytes = fs::read(&velo_path).map_err(|e| data_err(id, e))?;
        let cloud = read_point_cloud(&cloud_bytes).map_err(|e| data_err(id, e))?;
        let calib_text = fs::read_to_string(&calib_path).map_err(|e| data_err(id, e))?;
        let calib = parse_calibration(&calib_text).map_err(|e| data_err(id, e))?;
        for p in [&img_path, &velo_path, &calib_path] {
            manifest.record_input(p)?;
        }
        let adapted = adapt(&cloud, &calib, h as usize, w as usize, &ac).map_err(|e| data_err(id, e))?;
        let adm_path = adm_dir.join(format!("{id}.png"));
        save_png(&adm_path, &DynamicImage::ImageLuma16(encode_unit_grid_u16(&adapted.normalized.grid)))?;
        let valid = &adapted.raw.valid;
        let mask = ImageBuffer::from_fn(w, h, |c, r| Luma([if *valid.get(r as usize, c as usize) { 255u8 } else { 0 }]));
        let valid_path = valid_dir.join(format!("{id}.png"));
        save_png(&valid_path, &DynamicImage::ImageLuma8(mask))?;
        manifest.artifact(&adm_path);
        manifest.artifact(&valid_path);
    }
    manifest.write(&run.out_dir)?;
    println!("adapted {} frames", ids.len());
    Ok(())
}

pub fn train(run: &Run) -> CliResult<()> {
    let mut manifest = run.manifest("train");
    let data_dir = run.config.require_path("data_dir")?;
    let tc = train_config(run)?;
    let ac = adapt_config(&run.config, tc.model.lidar_channels)?;
    let frames = load_frames(&data_dir, &run.prefix()?, &mut manifest)?;
    if frames.is_empty() {
        return Err(CliError::Data(format!("no frames under {}", data_dir.display())));
    }
    let prepared = prepare_all(&frames, &ac)?;
    let outcome = train_supervised(&prepared, &tc).map_err(|e| CliError::Data(e.to_string()))?;
    create_dir(&run.out_dir)?;
    write_checkpoint(&run.out_dir.join("model.ckpt"), &outcome.params, &mut manifest)?;
    let mut csv = Vec::new();
    write_loss_csv(&outcome.log, &mut csv).expect("writing to memory");
    let csv_path = run.out_dir.join("train_loss.csv");
    write_file(&csv_path, &csv)?;
    manifest.artifact(&csv_path);
    manifest.write(&run.out_dir)?;
    if let Some(last) = outcome.log.last() {
        println!("trained {} steps, final loss {:.6}", tc.steps, last.total);
    }
    Ok(())
}

pub fn pseudo(run: &Run) -> CliResult<()> {
    let mut manifest = run.manifest("pseudo");
    let init = load_checkpoint(&checkpoint_path(run), &mut manifest)?;
    let sc = semi_config(run)?;
    let ac = adapt_config(&run.config, init.config().lidar_channels)?;
    let prefix = run.prefix()?;
    let labeled_dir = run.config.require_path("data_dir")?;
    let unlabeled_dir = run.config.require_path("unlabeled_dir")?;
    let labeled = prepare_all(&load_frames(&labeled_dir, &prefix, &mut manifest)?, &ac)?;
    let unlabeled = prepare_all(&load_frames(&unlabeled_dir, &prefix, &mut manifest)?, &ac)?;
    let heldout = match run.config.path("heldout_dir") {
        Some(dir) => prepare_all(&load_frames(&dir, &prefix, &mut manifest)?, &ac)?,
        None => Vec::new(),
    };
    let outcome = semi_supervised_rounds(&init, &labeled, &unlabeled, &sc, &heldout)
        .map_err(|e| CliError::Data(e.to_string()))?;
    create_dir(&run.out_dir)?;
    write_checkpoint(&run.out_dir.join("model_semi.ckpt"), &outcome.params, &mut manifest)?;
    let mut jsonl = Vec::new();
    for r in &outcome.reports {
        serde_json::to_writer(&mut jsonl, r).expect("report serializes");
        jsonl.push(b'\n');
    }
    let report_path = run.out_dir.join("pseudo_rounds.jsonl");
    write_file(&report_path, &jsonl)?;
    manifest.artifact(&report_path);
    manifest.write(&run.out_dir)?;
    println!("ran {} pseudo-label rounds", outcome.reports.len());
    Ok(())
}

/// Probability map from an 8- or 16-bit grayscale PNG.
fn read_probability_png(path: &Path, id: &str) -> CliResult<Grid<f64>> {
    let img = image::open(path).map_err(|e| data_err(id, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / 65535.0).collect(),
        _ => return Err(data_err(id, "prediction must be a grayscale PNG")),
    };
    Ok(Grid::from_vec(h, w, values).expect("buffer matches dimensions"))
}

/// Fine-head probability maps, from `prediction_dir` when set, else from the checkpoint.
fn predictions(run: &Run, frames: &[FrameBundle], manifest: &mut RunManifest) -> CliResult<Vec<Grid<f64>>> {
    if let Some(dir) = run.config.path("prediction_dir") {
        return frames
            .iter()
            .map(|f| {
                let path = dir.join(format!("{}.png", f.frame_id));
                manifest.record_input(&path).map_err(|e| data_err(&f.frame_id, e))?;
                read_probability_png(&path, &f.frame_id)
            })
            .collect();
    }
    let params = load_checkpoint(&checkpoint_path(run), manifest)?;
    let ac = adapt_config(&run.config, params.config().lidar_channels)?;
    let prepared = prepare_all(frames, &ac)?;
    prepared
        .par_iter()
        .map(|p| {
            predict(&params, &p.inputs)
                .map(|pred| pred.fine)
                .map_err(|e| data_err(&p.frame_id, e))
        })
        .collect()
}

fn eval_dir(run: &Run) -> CliResult<PathBuf> {
    run.config
        .path("eval_dir")
        .or_else(|| run.config.path("data_dir"))
        .ok_or_else(|| CliError::Config("missing required key `eval_dir` (or `data_dir`)".into()))
}

pub fn eval(run: &Run) -> CliResult<()> {
    let mut manifest = run.manifest("eval");
    let dir = eval_dir(run)?;
    let frames = load_frames(&dir, &run.prefix()?, &mut manifest)?;
    if frames.is_empty() {
        return Err(CliError::Data(format!("no frames under {}", dir.display())));
    }
    let probs = predictions(run, &frames, &mut manifest)?;
    let mut pairs = Vec::with_capacity(frames.len());
    for (f, p) in frames.iter().zip(&probs) {
        let gt = f.gt.as_ref().ok_or_else(|| data_err(&f.frame_id, "no ground truth"))?;
        if gt.dims() != p.dims() {
            return Err(data_err(&f.frame_id, format!("prediction {:?} vs ground truth {:?}", p.dims(), gt.dims())));
        }
        pairs.push((p, gt));
    }
    let result = evaluate_predictions(pairs).map_err(|e| CliError::Data(e.to_string()))?;
    create_dir(&run.out_dir)?;
    let mut csv = Vec::new();
    write_curve_csv(&result, &mut csv).expect("writing to memory");
    let curve_path = run.out_dir.join("eval_curve.csv");
    write_file(&curve_path, &csv)?;
    let line = summary_line(&result);
    let summary_path = run.out_dir.join("eval_summary.txt");
    let mut summary = Vec::new();
    writeln!(summary, "{line} frames={}", frames.len()).expect("writing to memory");
    write_file(&summary_path, &summary)?;
    manifest.artifact(&curve_path);
    manifest.artifact(&summary_path);
    manifest.write(&run.out_dir)?;
    println!("{line}");
    Ok(())
}

pub fn visualize(run: &Run) -> CliResult<()> {
    let mut manifest = run.manifest("visualize");
    let dir = eval_dir(run)?;
    let threshold: f64 = run.config.get_or("threshold", 0.5)?;
    let frames = load_frames(&dir, &run.prefix()?, &mut manifest)?;
    let probs = predictions(run, &frames, &mut manifest)?;
    let out = run.out_dir.join("overlays");
    create_dir(&out)?;
    for (f, p) in frames.iter().zip(&probs) {
        if p.dims() != f.dims() {
            return Err(data_err(&f.frame_id, "prediction size differs from the image"));
        }
        let path = out.join(format!("{}.png", f.frame_id));
        save_png(&path, &DynamicImage::ImageRgb8(overlay(&f.image, p, f.gt.as_ref(), threshold)))?;
        manifest.artifact(&path);
    }
    manifest.write(&run.out_dir)?;
    println!("wrote {} overlays", frames.len());
    Ok(())
}
