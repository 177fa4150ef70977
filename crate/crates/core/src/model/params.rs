use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ModelError;
use crate::diff_engine::{sgd_step, Checkpoint, DiffError, DiffTensor, Param, Tape, Var};

pub(crate) const IMAGE_WIDTHS: [usize; 3] = [16, 32, 64];
pub(crate) const LIDAR_WIDTHS: [usize; 3] = [8, 16, 32];
pub(crate) const DEPTH_WIDTHS: [usize; 3] = [8, 16, 32];
pub(crate) const DECODER_WIDTHS: [usize; 3] = [32, 16, 8];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of LiDAR input planes (1 or 3).
    pub lidar_channels: usize,
    /// Fuse LiDAR/depth features at every decoder level, or only the deepest.
    pub fuse_all_levels: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            lidar_channels: 3,
            fuse_all_levels: true,
        }
    }
}

/// One convolution layer of the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl LayerSpec {
    fn conv3x3_s2(name: &str, i: usize, o: usize) -> Self {
        Self {
            name: name.into(),
            in_channels: i,
            out_channels: o,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    fn conv1x1(name: &str, i: usize, o: usize) -> Self {
        Self {
            name: name.into(),
            in_channels: i,
            out_channels: o,
            kernel: 1,
            stride: 1,
            pad: 0,
        }
    }
}

/// Layer indices into [`ModelConfig::layers`].
pub(crate) mod layer {
    pub const IMAGE_ENC: [usize; 3] = [0, 1, 2];
    pub const LIDAR_ENC: [usize; 3] = [3, 4, 5];
    pub const DEPTH_ENC: [usize; 3] = [6, 7, 8];
    pub const DECODER: [usize; 3] = [9, 10, 11];
    pub const HEAD_FINE: usize = 12;
    pub const HEAD_IMAGE: usize = 13;
    pub const HEAD_LIDAR: usize = 14;
    pub const HEAD_DEPTH: usize = 15;
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !matches!(self.lidar_channels, 1 | 3) {
            return Err(ModelError::InvalidConfig(format!(
                "lidar_channels must be 1 or 3, got {}",
                self.lidar_channels
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let [i1, i2, i3] = IMAGE_WIDTHS;
        let [l1, l2, l3] = LIDAR_WIDTHS;
        let [p1, p2, p3] = DEPTH_WIDTHS;
        let [d1, d2, d3] = DECODER_WIDTHS;
        let fuse = self.fuse_all_levels;
        vec![
            LayerSpec::conv3x3_s2("image_enc.0", 3, i1),
            LayerSpec::conv3x3_s2("image_enc.1", i1, i2),
            LayerSpec::conv3x3_s2("image_enc.2", i2, i3),
            LayerSpec::conv3x3_s2("lidar_enc.0", self.lidar_channels, l1),
            LayerSpec::conv3x3_s2("lidar_enc.1", l1, l2),
            LayerSpec::conv3x3_s2("lidar_enc.2", l2, l3),
            LayerSpec::conv3x3_s2("depth_enc.0", 1, p1),
            LayerSpec::conv3x3_s2("depth_enc.1", p1, p2),
            LayerSpec::conv3x3_s2("depth_enc.2", p2, p3),
            // 1/4: up(image deep) ‖ image skip ‖ up(lidar deep) ‖ up(depth deep)
            LayerSpec::conv1x1("decoder.0", i3 + i2 + l3 + p3, d1),
            // 1/2: up(decoder) ‖ image skip [‖ up(lidar mid) ‖ up(depth mid)]
            LayerSpec::conv1x1("decoder.1", d1 + i1 + if fuse { l2 + p2 } else { 0 }, d2),
            // full: up(decoder) ‖ raw image [‖ up(lidar shallow) ‖ up(depth shallow)]
            LayerSpec::conv1x1("decoder.2", d2 + 3 + if fuse { l1 + p1 } else { 0 }, d3),
            LayerSpec::conv1x1("head.fine", d3, 1),
            LayerSpec::conv1x1("head.image", i3, 1),
            LayerSpec::conv1x1("head.lidar", l3, 1),
            LayerSpec::conv1x1("head.depth", p3, 1),
        ]
    }

    /// SHA-256 over every parameter name and shape.
    pub fn arch_hash(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for spec in self.layers() {
            for (suffix, shape) in param_shapes(&spec) {
                hasher.update(format!("{}.{suffix}{shape:?};", spec.name).as_bytes());
            }
        }
        hasher.finalize().into()
    }
}

fn param_shapes(spec: &LayerSpec) -> [(&'static str, Vec<usize>); 2] {
    [
        (
            "weight",
            vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel],
        ),
        ("bias", vec![spec.out_channels]),
    ]
}

/// All trainable tensors, two per layer (weight then bias) in layer order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layers: Vec<LayerSpec>,
    params: Vec<Param>,
}

/// Tape handles of a bound parameter set, in the same order as the params.
#[derive(Debug, Clone)]
pub struct BoundParams(pub(crate) Vec<Var>);

impl BoundParams {
    /// One handle per parameter tensor, in parameter order.
    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub(crate) fn weight(&self, layer: usize) -> Var {
        self.0[2 * layer]
    }

    pub(crate) fn bias(&self, layer: usize) -> Var {
        self.0[2 * layer + 1]
    }
}

impl ModelParams {
    /// Weights uniform in `±scale/√fan_in` drawn from a ChaCha stream keyed
    /// by `seed`; biases zero.
    pub fn init(config: ModelConfig, seed: u64, scale: f64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config.layers();
        let mut params = Vec::with_capacity(2 * layers.len());
        for spec in &layers {
            let [(_, wshape), (_, bshape)] = param_shapes(spec);
            let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
            let bound = scale / fan_in.sqrt();
            let numel: usize = wshape.iter().product();
            let weights = (0..numel)
                .map(|_| bound * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            params.push(Param::new(
                format!("{}.weight", spec.name),
                DiffTensor::new(wshape, weights)?,
            ));
            params.push(Param::new(
                format!("{}.bias", spec.name),
                DiffTensor::zeros(bshape)?,
            ));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params
            .iter()
            .all(|p| p.tensor.data().iter().all(|v| v.is_finite()))
    }

    /// Puts every parameter on `tape` as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| tape.leaf(p.tensor.clone()))
                .collect(),
        )
    }

    /// Copies gradients computed on `tape` back onto the parameters.
    pub fn collect_grads(&mut self, tape: &Tape, bound: &BoundParams) -> Result<(), DiffError> {
        for (p, var) in self.params.iter_mut().zip(&bound.0) {
            let g = tape
                .grad(*var)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
            p.tensor.set_grad(Some(g))?;
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, lr: f64, momentum: f64) -> Result<(), DiffError> {
        sgd_step(&mut self.params, lr, momentum)
    }

    /// Resets momentum buffers and gradients.
    pub fn reset_optimizer_state(&mut self) {
        for p in &mut self.params {
            p.velocity.iter_mut().for_each(|v| *v = 0.0);
            let _ = p.tensor.set_grad(None);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            arch_hash: self.config.arch_hash(),
            tensors: self
                .params
                .iter()
                .map(|p| {
                    let mut t = p.tensor.clone();
                    let _ = t.set_grad(None);
                    t.set_requires_grad(false);
                    (p.name.clone(), t)
                })
                .collect(),
        }
    }

    /// Rebuilds parameters from a checkpoint, inferring the configuration
    /// from tensor shapes and verifying the recorded architecture hash.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let find = |name: &str| {
            ck.tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| ModelError::ArchitectureMismatch(format!("missing tensor `{name}`")))
        };
        let lidar_channels = find("lidar_enc.0.weight")?.shape()[1];
        let decoder1_in = find("decoder.1.weight")?.shape()[1];
        let config = ModelConfig {
            lidar_channels,
            fuse_all_levels: decoder1_in != DECODER_WIDTHS[0] + IMAGE_WIDTHS[0],
        };
        config.validate()?;
        if config.arch_hash() != ck.arch_hash {
            return Err(ModelError::ArchitectureMismatch(
                "architecture hash differs".into(),
            ));
        }
        let layers = config.layers();
        let mut params = Vec::with_capacity(2 * layers.len());
        for spec in &layers {
            for (suffix, shape) in param_shapes(spec) {
                let name = format!("{}.{suffix}", spec.name);
                let t = find(&name)?;
                if t.shape() != shape.as_slice() {
                    return Err(ModelError::ArchitectureMismatch(format!(
                        "`{name}` has shape {:?}, expected {shape:?}",
                        t.shape()
                    )));
                }
                if t.data().iter().any(|v| !v.is_finite()) {
                    return Err(ModelError::ArchitectureMismatch(format!(
                        "`{name}` contains non-finite values"
                    )));
                }
                params.push(Param::new(name, t.clone()));
            }
        }
        if ck.tensors.len() != params.len() {
            return Err(ModelError::ArchitectureMismatch(format!(
                "checkpoint has {} tensors, architecture needs {}",
                ck.tensors.len(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layers,
            params,
        })
    }
}
