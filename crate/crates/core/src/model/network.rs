use super::params::{layer, BoundParams};
use super::{ModelError, ModelInputs, ModelParams};
use crate::diff_engine::{DiffError, Tape, Var};
use crate::grid::Grid;

/// Tape handles of the four sigmoid probability maps, each `[1, 1, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    pub fine: Var,
    pub image_aux: Var,
    pub lidar_aux: Var,
    pub depth_aux: Var,
    pub height: usize,
    pub width: usize,
}

/// Plain probability maps from an inference pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub fine: Grid<f64>,
    pub image_aux: Grid<f64>,
    pub lidar_aux: Grid<f64>,
    pub depth_aux: Grid<f64>,
}

fn conv(tape: &mut Tape, params: &ModelParams, bound: &BoundParams, idx: usize, x: Var) -> Result<Var, DiffError> {
    let spec = &params.layers()[idx];
    tape.conv2d(x, bound.weight(idx), bound.bias(idx), spec.stride, spec.pad)
}

fn encoder(tape: &mut Tape, params: &ModelParams, bound: &BoundParams, layers: [usize; 3], x: Var) -> Result<[Var; 3], DiffError> {
    let mut feats = [x; 3];
    let mut cur = x;
    for (slot, idx) in feats.iter_mut().zip(layers) {
        let z = conv(tape, params, bound, idx, cur)?;
        cur = tape.relu(z);
        *slot = cur;
    }
    Ok(feats)
}

fn aux_head(tape: &mut Tape, params: &ModelParams, bound: &BoundParams, idx: usize, feat: Var) -> Result<Var, DiffError> {
    let logits = conv(tape, params, bound, idx, feat)?;
    let full = tape.bilinear_upsample(logits, 8)?;
    Ok(tape.sigmoid(full))
}

/// Shifts unit-range planes to `[-0.5, 0.5]`.
fn centered(plane: &[f64]) -> Vec<f64> {
    plane.iter().map(|v| v - 0.5).collect()
}

/// Records the full network on `tape`. `bound` must come from
/// `params.bind(tape)` on the same tape.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams,
    bound: &BoundParams,
    inputs: &ModelInputs,
) -> Result<ModelOutputs, ModelError> {
    let (h, w) = inputs.dims();
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(ModelError::NonDivisibleResolution {
            height: h,
            width: w,
        });
    }
    let lc = inputs.lidar_channels();
    if lc != params.config().lidar_channels {
        return Err(ModelError::ShapeMismatch(format!(
            "model expects {} LiDAR planes, inputs carry {lc}",
            params.config().lidar_channels
        )));
    }
    let image = tape.constant(vec![1, 3, h, w], centered(inputs.image()))?;
    let lidar = tape.constant(vec![1, lc, h, w], centered(inputs.lidar()))?;
    let depth = tape.constant(vec![1, 1, h, w], centered(inputs.depth()))?;

    let [e1, e2, e3] = encoder(tape, params, bound, layer::IMAGE_ENC, image)?;
    let [l1, l2, l3] = encoder(tape, params, bound, layer::LIDAR_ENC, lidar)?;
    let [p1, p2, p3] = encoder(tape, params, bound, layer::DEPTH_ENC, depth)?;
    let fuse_all = params.config().fuse_all_levels;

    let decoder_stage = |tape: &mut Tape, prev: Var, skip: Var, side: Option<(Var, Var)>, idx: usize| -> Result<Var, DiffError> {
        let mut parts = vec![tape.bilinear_upsample(prev, 2)?, skip];
        if let Some((l, p)) = side {
            parts.push(tape.bilinear_upsample(l, 2)?);
            parts.push(tape.bilinear_upsample(p, 2)?);
        }
        let cat = tape.concat_channels(&parts)?;
        let z = conv(tape, params, bound, idx, cat)?;
        Ok(tape.relu(z))
    };
    let d1 = decoder_stage(tape, e3, e2, Some((l3, p3)), layer::DECODER[0])?;
    let d2 = decoder_stage(tape, d1, e1, fuse_all.then_some((l2, p2)), layer::DECODER[1])?;
    let d3 = decoder_stage(tape, d2, image, fuse_all.then_some((l1, p1)), layer::DECODER[2])?;

    let fine_logits = conv(tape, params, bound, layer::HEAD_FINE, d3)?;
    let fine = tape.sigmoid(fine_logits);
    let image_aux = aux_head(tape, params, bound, layer::HEAD_IMAGE, e3)?;
    let lidar_aux = aux_head(tape, params, bound, layer::HEAD_LIDAR, l3)?;
    let depth_aux = aux_head(tape, params, bound, layer::HEAD_DEPTH, p3)?;
    Ok(ModelOutputs {
        fine,
        image_aux,
        lidar_aux,
        depth_aux,
        height: h,
        width: w,
    })
}

/// Inference pass returning the four probability maps.
pub fn predict(params: &ModelParams, inputs: &ModelInputs) -> Result<Predictions, ModelError> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let out = forward(&mut tape, params, &bound, inputs)?;
    let grid = |v: Var| {
        Grid::from_vec(out.height, out.width, tape.data(v).to_vec()).expect("output matches input grid")
    };
    Ok(Predictions {
        fine: grid(out.fine),
        image_aux: grid(out.image_aux),
        lidar_aux: grid(out.lidar_aux),
        depth_aux: grid(out.depth_aux),
    })
}
