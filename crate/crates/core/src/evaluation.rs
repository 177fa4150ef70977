//! Pixel-level road scoring: confusion counts over a 256-level threshold
//! sweep, precision/recall curve, MaxF and average precision. Counts from
//! several frames are pooled before any ratio is taken.

use std::io::Write;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;
use crate::kitti_io::{GroundTruthMask, Label};
use crate::model::{predict, ModelError, ModelParams, PreparedFrame};

/// Number of swept thresholds, `k / 255` for `k = 0..=255`.
pub const THRESHOLD_LEVELS: usize = 256;

pub fn threshold_at(k: usize) -> f64 {
    k as f64 / 255.0
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground truth has no valid pixels")]
    NoValidPixels,
    #[error("no frames to evaluate")]
    EmptyDataset,
    #[error("frame `{0}` has no ground truth")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    /// False negatives.
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn check_shape(prob: &Grid<f64>, gt: &GroundTruthMask) -> Result<(), EvalError> {
    if prob.dims() != gt.dims() {
        return Err(EvalError::ShapeMismatch(format!(
            "prediction {:?} vs ground truth {:?}",
            prob.dims(),
            gt.dims()
        )));
    }
    Ok(())
}

/// Counts with the prediction positive iff `prob ≥ threshold`. Invalid
/// pixels are skipped.
pub fn confusion_at(prob: &Grid<f64>, gt: &GroundTruthMask, threshold: f64) -> Result<ConfusionCounts, EvalError> {
    check_shape(prob, gt)?;
    let mut c = ConfusionCounts::default();
    for (&p, &label) in prob.iter().zip(gt.grid.iter()) {
        let positive = p >= threshold;
        match (label, positive) {
            (Label::Invalid, _) => {}
            (Label::Road, true) => c.tp += 1,
            (Label::Road, false) => c.fn_ += 1,
            (Label::NonRoad, true) => c.fp += 1,
            (Label::NonRoad, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// How many swept thresholds `p` reaches: `#{k : p ≥ k/255}`.
fn level(p: f64) -> usize {
    if !(p >= 0.0) {
        return 0;
    }
    let mut k = ((p * 255.0).floor().min(255.0)) as i64;
    while k < 255 && p >= threshold_at(k as usize + 1) {
        k += 1;
    }
    while k >= 0 && !(p >= threshold_at(k as usize)) {
        k -= 1;
    }
    (k + 1) as usize
}

/// Confusion counts at every swept threshold, computed from one histogram pass.
pub fn sweep_counts(prob: &Grid<f64>, gt: &GroundTruthMask) -> Result<Vec<ConfusionCounts>, EvalError> {
    check_shape(prob, gt)?;
    let mut road = [0u64; THRESHOLD_LEVELS + 1];
    let mut other = [0u64; THRESHOLD_LEVELS + 1];
    for (&p, &label) in prob.iter().zip(gt.grid.iter()) {
        match label {
            Label::Road => road[level(p)] += 1,
            Label::NonRoad => other[level(p)] += 1,
            Label::Invalid => {}
        }
    }
    let road_total: u64 = road.iter().sum();
    let other_total: u64 = other.iter().sum();
    // positives at threshold k are the pixels with level > k
    let mut out = vec![ConfusionCounts::default(); THRESHOLD_LEVELS];
    let (mut tp, mut fp) = (0u64, 0u64);
    for k in (0..THRESHOLD_LEVELS).rev() {
        tp += road[k + 1];
        fp += other[k + 1];
        out[k] = ConfusionCounts {
            tp,
            fp,
            fn_: road_total - tp,
            tn: other_total - fp,
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Maximum F1 over the sweep, in percent.
    pub max_f: f64,
    /// Smallest threshold attaining `max_f`.
    pub best_threshold: f64,
    /// Trapezoidal area under the recall-sorted PR curve, in percent.
    /// Thresholds with no positive prediction are left out, and the curve
    /// starts at recall 0 with the precision of its lowest-recall point.
    pub average_precision: f64,
    /// One point per threshold, thresholds strictly increasing.
    pub curve: Vec<CurvePoint>,
}

/// Builds the curve and summary from per-threshold counts.
pub fn result_from_counts(counts: &[ConfusionCounts]) -> Result<EvalResult, EvalError> {
    if counts.first().map_or(true, |c| c.total() == 0) {
        return Err(EvalError::NoValidPixels);
    }
    let curve: Vec<CurvePoint> = counts
        .iter()
        .enumerate()
        .map(|(k, c)| CurvePoint {
            threshold: threshold_at(k),
            counts: *c,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
        .collect();
    let mut best = 0;
    for (k, pt) in curve.iter().enumerate() {
        if pt.f1 > curve[best].f1 {
            best = k;
        }
    }
    let mut pr: Vec<(f64, f64, usize)> = curve
        .iter()
        .enumerate()
        .filter(|(_, pt)| pt.counts.tp + pt.counts.fp > 0)
        .map(|(k, pt)| (pt.recall, pt.precision, k))
        .collect();
    pr.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.2.cmp(&a.2)));
    // extend the lowest-recall precision back to recall 0
    if pr.first().is_some_and(|p| p.0 > 0.0) {
        pr.insert(0, (0.0, pr[0].1, usize::MAX));
    }
    let area: f64 = pr
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(EvalResult {
        max_f: 100.0 * curve[best].f1,
        best_threshold: curve[best].threshold,
        average_precision: 100.0 * area,
        curve,
    })
}

/// MaxF of one probability map.
pub fn max_f(prob: &Grid<f64>, gt: &GroundTruthMask) -> Result<EvalResult, EvalError> {
    result_from_counts(&sweep_counts(prob, gt)?)
}

/// Pools sweep counts over `(prediction, ground truth)` pairs.
pub fn evaluate_predictions<'a>(
    pairs: impl IntoIterator<Item = (&'a Grid<f64>, &'a GroundTruthMask)>,
) -> Result<EvalResult, EvalError> {
    let mut pooled: Option<Vec<ConfusionCounts>> = None;
    for (prob, gt) in pairs {
        let counts = sweep_counts(prob, gt)?;
        match &mut pooled {
            None => pooled = Some(counts),
            Some(acc) => acc.iter_mut().zip(counts).for_each(|(a, c)| *a += c),
        }
    }
    result_from_counts(&pooled.ok_or(EvalError::EmptyDataset)?)
}

/// Runs the model on every frame and scores the fine output with pooled counts.
pub fn evaluate_set(params: &ModelParams, frames: &[PreparedFrame]) -> Result<EvalResult, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let mut preds = Vec::with_capacity(frames.len());
    for f in frames {
        let gt = f
            .gt
            .as_ref()
            .ok_or_else(|| EvalError::MissingGroundTruth(f.frame_id.clone()))?;
        preds.push((predict(params, &f.inputs)?.fine, gt));
    }
    evaluate_predictions(preds.iter().map(|(p, g)| (p, *g)))
}

/// Frames whose id starts with `prefix` (all frames for an empty prefix).
pub fn filter_by_prefix<'a>(frames: &'a [PreparedFrame], prefix: &str) -> Vec<&'a PreparedFrame> {
    frames.iter().filter(|f| f.frame_id.starts_with(prefix)).collect()
}

/// CSV: `threshold,tp,fp,fn,tn,precision,recall,f1`, one row per threshold.
pub fn write_curve_csv(result: &EvalResult, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "threshold,tp,fp,fn,tn,precision,recall,f1")?;
    for pt in &result.curve {
        let c = pt.counts;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            pt.threshold, c.tp, c.fp, c.fn_, c.tn, pt.precision, pt.recall, pt.f1
        )?;
    }
    Ok(())
}

pub fn summary_line(result: &EvalResult) -> String {
    format!(
        "MaxF={:.4} AP={:.4} best_threshold={:.6}",
        result.max_f, result.average_precision, result.best_threshold
    )
}

fn tint(px: Rgb<u8>, color: [u8; 3]) -> Rgb<u8> {
    Rgb([0, 1, 2].map(|i| ((px.0[i] as u16 + color[i] as u16) / 2) as u8))
}

/// Overlay of the thresholded prediction on the camera image. With ground
/// truth: true positives green, false positives red, false negatives blue.
/// Without: predicted road green.
pub fn overlay(image: &RgbImage, prob: &Grid<f64>, gt: Option<&GroundTruthMask>, threshold: f64) -> RgbImage {
    let mut out = image.clone();
    for (c, r, px) in out.enumerate_pixels_mut() {
        let (r, c) = (r as usize, c as usize);
        if r >= prob.height() || c >= prob.width() {
            continue;
        }
        let positive = *prob.get(r, c) >= threshold;
        let label = gt.map(|g| *g.grid.get(r, c));
        let color = match (label, positive) {
            (Some(Label::Road), true) | (None, true) => Some([0, 255, 0]),
            (Some(Label::NonRoad), true) => Some([255, 0, 0]),
            (Some(Label::Road), false) => Some([0, 0, 255]),
            _ => None,
        };
        if let Some(color) = color {
            *px = tint(*px, color);
        }
    }
    out
}
