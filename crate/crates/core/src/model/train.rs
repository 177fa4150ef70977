use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, masked_total_loss, LossWeights, ModelConfig, ModelError, ModelInputs, ModelParams, PreparedFrame};
use crate::diff_engine::Tape;
use crate::kitti_io::GroundTruthMask;

/// Keeps the sampling stream distinct from the initialization stream of the same seed.
pub(crate) const SAMPLING_STREAM: u64 = 0x5348_5546_464c_4521;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub model: ModelConfig,
    /// Mirror each drawn frame left-right with probability 1/2.
    pub hflip: bool,
    /// Multiplier on the default `1/√fan_in` initialization bound.
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 0.1,
            momentum: 0.9,
            seed: 0,
            loss_weights: LossWeights::default(),
            model: ModelConfig::default(),
            hflip: true,
            init_scale: 2.0,
        }
    }
}

/// Loss values of one optimization step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss_fine: f64,
    pub loss_image: f64,
    pub loss_lidar: f64,
    pub loss_depth: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LossRecord>,
}

/// One forward/backward/SGD step on a single frame.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    params: &mut ModelParams,
    inputs: &ModelInputs,
    targets: &[f64],
    weights: &[f64],
    loss_weights: &LossWeights,
    lr: f64,
    momentum: f64,
    step: usize,
) -> Result<LossRecord, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, params, &bound, inputs)?;
    let terms = masked_total_loss(&mut tape, &out, targets, weights, loss_weights)?;
    tape.backward(terms.total)?;
    params.collect_grads(&tape, &bound)?;
    params.sgd_step(lr, momentum)?;
    let [loss_fine, loss_image, loss_lidar, loss_depth, total] = terms.values(&tape);
    Ok(LossRecord {
        step,
        loss_fine,
        loss_image,
        loss_lidar,
        loss_depth,
        total,
    })
}

pub(crate) fn supervised_gt(frame: &PreparedFrame) -> Result<&GroundTruthMask, ModelError> {
    let gt = frame
        .gt
        .as_ref()
        .ok_or_else(|| ModelError::MissingGroundTruth(frame.frame_id.clone()))?;
    if !gt.is_usable() {
        return Err(ModelError::UnusableGroundTruth(frame.frame_id.clone()));
    }
    if gt.dims() != frame.inputs.dims() {
        return Err(ModelError::ShapeMismatch(format!(
            "{}: ground truth {:?} vs inputs {:?}",
            frame.frame_id,
            gt.dims(),
            frame.inputs.dims()
        )));
    }
    Ok(gt)
}

/// Endless reshuffled epochs over `0..len`.
pub(crate) struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub(crate) fn new(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
            pos: len,
        }
    }

    pub(crate) fn next(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.pos >= self.order.len() {
            self.order.shuffle(rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Continues training `params` for `steps` single-frame supervised steps.
/// `first_step` numbers the log records.
pub fn train_steps(
    params: &mut ModelParams,
    frames: &[PreparedFrame],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    first_step: usize,
) -> Result<Vec<LossRecord>, ModelError> {
    if frames.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let gts = frames.iter().map(supervised_gt).collect::<Result<Vec<_>, _>>()?;
    let mut sampler = EpochSampler::new(frames.len());
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let i = sampler.next(rng);
        let flip = cfg.hflip && rng.gen_bool(0.5);
        let record = if flip {
            let gt = gts[i].mirrored();
            training_step(
                params,
                &frames[i].inputs.mirrored(),
                &gt.targets(),
                &gt.validity_weights(),
                &cfg.loss_weights,
                cfg.lr,
                cfg.momentum,
                first_step + step,
            )?
        } else {
            training_step(
                params,
                &frames[i].inputs,
                &gts[i].targets(),
                &gts[i].validity_weights(),
                &cfg.loss_weights,
                cfg.lr,
                cfg.momentum,
                first_step + step,
            )?
        };
        log.push(record);
    }
    Ok(log)
}

/// Trains the supervised model from a seeded initialization.
pub fn train_supervised(frames: &[PreparedFrame], cfg: &TrainConfig) -> Result<TrainOutcome, ModelError> {
    if frames.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    for f in frames {
        supervised_gt(f)?;
    }
    let mut params = ModelParams::init(cfg.model, cfg.seed, cfg.init_scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ SAMPLING_STREAM);
    let log = train_steps(&mut params, frames, cfg, &mut rng, 0)?;
    Ok(TrainOutcome { params, log })
}

/// CSV with header `step,loss_fine,loss_image,loss_lidar,loss_depth,total`.
pub fn write_loss_csv(log: &[LossRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,loss_fine,loss_image,loss_lidar,loss_depth,total")?;
    for r in log {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.loss_fine, r.loss_image, r.loss_lidar, r.loss_depth, r.total
        )?;
    }
    Ok(())
}
