use super::{LossWeights, ModelError, ModelOutputs};
use crate::diff_engine::{Tape, Var};
use crate::kitti_io::GroundTruthMask;

/// The four masked BCE terms and their weighted sum, all scalar tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub fine: Var,
    pub image: Var,
    pub lidar: Var,
    pub depth: Var,
    pub total: Var,
}

impl LossTerms {
    /// `(fine, image, lidar, depth, total)` values.
    pub fn values(&self, tape: &Tape) -> [f64; 5] {
        [self.fine, self.image, self.lidar, self.depth, self.total].map(|v| tape.data(v)[0])
    }
}

/// `L_fine + α·L_image + β·L_lidar + γ·L_depth`, every term a masked BCE
/// against the same `targets` with per-pixel `weights`.
pub fn masked_total_loss(
    tape: &mut Tape,
    out: &ModelOutputs,
    targets: &[f64],
    weights: &[f64],
    w: &LossWeights,
) -> Result<LossTerms, ModelError> {
    w.validate()?;
    let fine = tape.bce_masked(out.fine, targets, weights)?;
    let image = tape.bce_masked(out.image_aux, targets, weights)?;
    let lidar = tape.bce_masked(out.lidar_aux, targets, weights)?;
    let depth = tape.bce_masked(out.depth_aux, targets, weights)?;
    let a = tape.scale(image, w.alpha);
    let b = tape.scale(lidar, w.beta);
    let c = tape.scale(depth, w.gamma);
    let total = tape.add(fine, a)?;
    let total = tape.add(total, b)?;
    let total = tape.add(total, c)?;
    Ok(LossTerms {
        fine,
        image,
        lidar,
        depth,
        total,
    })
}

/// Supervised loss: road targets from `gt`, invalid pixels weighted 0.
pub fn total_loss(
    tape: &mut Tape,
    out: &ModelOutputs,
    gt: &GroundTruthMask,
    w: &LossWeights,
) -> Result<LossTerms, ModelError> {
    if gt.dims() != (out.height, out.width) {
        return Err(ModelError::ShapeMismatch(format!(
            "ground truth {:?} vs outputs {:?}",
            gt.dims(),
            (out.height, out.width)
        )));
    }
    masked_total_loss(tape, out, &gt.targets(), &gt.validity_weights(), w)
}
