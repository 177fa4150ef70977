//! Confidence-thresholded self-training. Each round relabels every unlabeled
//! frame with the current model, keeps the pixels whose confidence reaches
//! `tau`, and continues training on a mix of labeled and pseudo-labeled frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff_engine::Tape;
use crate::evaluation::{evaluate_set, EvalError};
use crate::grid::Grid;
use crate::model::train::{supervised_gt, EpochSampler};
use crate::model::{
    forward, masked_total_loss, predict, training_step, LossTerms, LossWeights, ModelError, ModelInputs,
    ModelOutputs, ModelParams, PreparedFrame,
};

const MIX_STREAM: u64 = 0x4d49_585f_5345_4c46;

#[derive(Debug, Error)]
pub enum SemiError {
    #[error("labeled set is empty")]
    EmptyLabeledSet,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Hard labels, their confidences and the included set `S` for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSet {
    pub labels: Grid<u8>,
    pub confidence: Grid<f64>,
    pub included: Grid<bool>,
    pub tau: f64,
}

fn check_tau(tau: f64) -> Result<(), SemiError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SemiError::InvalidConfig(format!("tau must lie in [0, 1], got {tau}")));
    }
    Ok(())
}

impl PseudoLabelSet {
    /// Label 1 iff `p ≥ 0.5`; confidence `max(p, 1 − p)`; included iff confidence `≥ tau`.
    pub fn from_probabilities(prob: &Grid<f64>, tau: f64) -> Result<Self, SemiError> {
        check_tau(tau)?;
        let confidence = prob.map(|&p| p.max(1.0 - p));
        Ok(Self {
            labels: prob.map(|&p| u8::from(p >= 0.5)),
            included: confidence.map(|&c| c >= tau),
            confidence,
            tau,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    pub fn included_count(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn included_fraction(&self) -> f64 {
        self.included_count() as f64 / self.included.len() as f64
    }

    pub fn mean_confidence(&self) -> f64 {
        self.confidence.iter().sum::<f64>() / self.confidence.len() as f64
    }

    pub fn targets(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| l as f64).collect()
    }

    /// 1 on `S`, 0 elsewhere.
    pub fn weights(&self) -> Vec<f64> {
        self.included.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn mirrored(&self) -> Self {
        Self {
            labels: self.labels.mirrored(),
            confidence: self.confidence.mirrored(),
            included: self.included.mirrored(),
            tau: self.tau,
        }
    }
}

pub fn generate_pseudo_labels(params: &ModelParams, inputs: &ModelInputs, tau: f64) -> Result<PseudoLabelSet, SemiError> {
    check_tau(tau)?;
    let pred = predict(params, inputs)?;
    PseudoLabelSet::from_probabilities(&pred.fine, tau)
}

/// The combined loss with validity replaced by the included set. An empty
/// set gives 0 with all-zero gradients.
pub fn pseudo_loss(
    tape: &mut Tape,
    out: &ModelOutputs,
    pseudo: &PseudoLabelSet,
    w: &LossWeights,
) -> Result<LossTerms, ModelError> {
    if pseudo.dims() != (out.height, out.width) {
        return Err(ModelError::ShapeMismatch(format!(
            "pseudo labels {:?} vs outputs {:?}",
            pseudo.dims(),
            (out.height, out.width)
        )));
    }
    masked_total_loss(tape, out, &pseudo.targets(), &pseudo.weights(), w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemiConfig {
    pub tau: f64,
    pub rounds: usize,
    pub steps_per_round: usize,
    /// Probability that a step draws a labeled frame.
    pub labeled_mix: f64,
    pub seed: u64,
    pub lr: f64,
    pub momentum: f64,
    pub loss_weights: LossWeights,
    pub hflip: bool,
}

impl Default for SemiConfig {
    fn default() -> Self {
        Self {
            tau: 0.9,
            rounds: 3,
            steps_per_round: 100,
            labeled_mix: 0.5,
            seed: 0,
            lr: 0.1,
            momentum: 0.9,
            loss_weights: LossWeights::default(),
            hflip: true,
        }
    }
}

impl SemiConfig {
    pub fn validate(&self) -> Result<(), SemiError> {
        check_tau(self.tau)?;
        if self.steps_per_round == 0 {
            return Err(SemiError::InvalidConfig("steps_per_round must be positive".into()));
        }
        if !(self.labeled_mix > 0.0 && self.labeled_mix <= 1.0) {
            return Err(SemiError::InvalidConfig(format!(
                "labeled_mix must lie in (0, 1], got {}",
                self.labeled_mix
            )));
        }
        self.loss_weights.validate()?;
        Ok(())
    }
}

/// Summary of one round. Loss means are `None` when the branch was never drawn;
/// `heldout_maxf` is `None` without a held-out set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub mean_confidence: f64,
    pub included_fraction: f64,
    pub labeled_loss: Option<f64>,
    pub pseudo_loss: Option<f64>,
    pub heldout_maxf: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SemiOutcome {
    pub params: ModelParams,
    pub reports: Vec<RoundReport>,
}

fn pseudo_step(
    params: &mut ModelParams,
    inputs: &ModelInputs,
    pseudo: &PseudoLabelSet,
    cfg: &SemiConfig,
) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, params, &bound, inputs)?;
    let terms = pseudo_loss(&mut tape, &out, pseudo, &cfg.loss_weights)?;
    tape.backward(terms.total)?;
    params.collect_grads(&tape, &bound)?;
    params.sgd_step(cfg.lr, cfg.momentum)?;
    Ok(tape.data(terms.total)[0])
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Runs `cfg.rounds` rounds of pseudo-labeling and mixed training from `init`.
pub fn semi_supervised_rounds(
    init: &ModelParams,
    labeled: &[PreparedFrame],
    unlabeled: &[PreparedFrame],
    cfg: &SemiConfig,
    heldout: &[PreparedFrame],
) -> Result<SemiOutcome, SemiError> {
    if labeled.is_empty() {
        return Err(SemiError::EmptyLabeledSet);
    }
    cfg.validate()?;
    let gts = labeled.iter().map(supervised_gt).collect::<Result<Vec<_>, _>>()?;
    let mut params = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ MIX_STREAM);
    let mut labeled_order = EpochSampler::new(labeled.len());
    let mut unlabeled_order = EpochSampler::new(unlabeled.len());
    let mut reports = Vec::with_capacity(cfg.rounds);
    let mut step = 0;
    for round in 0..cfg.rounds {
        let frozen = &params;
        let pseudo = unlabeled
            .par_iter()
            .map(|f| generate_pseudo_labels(frozen, &f.inputs, cfg.tau))
            .collect::<Result<Vec<_>, _>>()?;
        let (mut sup_losses, mut pseudo_losses) = (Vec::new(), Vec::new());
        for _ in 0..cfg.steps_per_round {
            let draw_labeled = unlabeled.is_empty() || rng.gen::<f64>() < cfg.labeled_mix;
            let flip = cfg.hflip && rng.gen_bool(0.5);
            if draw_labeled {
                let i = labeled_order.next(&mut rng);
                let gt = if flip { gts[i].mirrored() } else { gts[i].clone() };
                let inputs = if flip { labeled[i].inputs.mirrored() } else { labeled[i].inputs.clone() };
                let rec = training_step(
                    &mut params,
                    &inputs,
                    &gt.targets(),
                    &gt.validity_weights(),
                    &cfg.loss_weights,
                    cfg.lr,
                    cfg.momentum,
                    step,
                )?;
                sup_losses.push(rec.total);
            } else {
                let i = unlabeled_order.next(&mut rng);
                let loss = if flip {
                    pseudo_step(&mut params, &unlabeled[i].inputs.mirrored(), &pseudo[i].mirrored(), cfg)?
                } else {
                    pseudo_step(&mut params, &unlabeled[i].inputs, &pseudo[i], cfg)?
                };
                pseudo_losses.push(loss);
            }
            step += 1;
        }
        let n = pseudo.len().max(1) as f64;
        reports.push(RoundReport {
            round,
            mean_confidence: pseudo.iter().map(PseudoLabelSet::mean_confidence).sum::<f64>() / n,
            included_fraction: pseudo.iter().map(PseudoLabelSet::included_fraction).sum::<f64>() / n,
            labeled_loss: mean(&sup_losses),
            pseudo_loss: mean(&pseudo_losses),
            heldout_maxf: if heldout.is_empty() {
                None
            } else {
                Some(evaluate_set(&params, heldout)?.max_f)
            },
        });
    }
    Ok(SemiOutcome { params, reports })
}
