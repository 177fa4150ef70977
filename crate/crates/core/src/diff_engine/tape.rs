use super::kernels::{self, ConvGeometry};
use super::{DiffError, DiffTensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    Relu(Var),
    Sigmoid(Var),
    Upsample {
        input: Var,
        factor: usize,
    },
    Concat(Vec<Var>),
    Add(Var, Var),
    Scale(Var, f64),
    BceMasked {
        prob: Var,
        target: Vec<f64>,
        weight: Vec<f64>,
        denom: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: DiffTensor,
    op: Op,
}

/// Arena of recorded operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn nchw(shape: &[usize], what: &str) -> Result<[usize; 4], DiffError> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(DiffError::ShapeMismatch(format!(
            "{what} must be 4-D [N,C,H,W], got {shape:?}"
        ))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Places a tensor on the tape. Its `requires_grad` flag decides whether
    /// backward computes a gradient for it.
    pub fn leaf(&mut self, mut tensor: DiffTensor) -> Var {
        tensor.grad = None;
        self.push(tensor, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, DiffError> {
        Ok(self.leaf(DiffTensor::new(shape, data)?))
    }

    fn push(&mut self, value: DiffTensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records `op` with output `data`; the output requires a gradient iff
    /// any input does. Ops on constants are stored as plain leaves.
    fn record(&mut self, shape: Vec<usize>, data: Vec<f64>, inputs: &[Var], op: Op) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        let value = DiffTensor {
            shape,
            data,
            grad: None,
            requires_grad,
        };
        self.push(value, if requires_grad { op } else { Op::Leaf })
    }

    pub fn value(&self, v: Var) -> &DiffTensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value.data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    /// Cross-correlation of `input [N,C,H,W]` with `kernel [F,C,k,k]` plus
    /// `bias [F]`, zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, pad: usize) -> Result<Var, DiffError> {
        let [n, c, h, w] = nchw(self.shape(input), "conv2d input")?;
        let [f, kc, k, k2] = nchw(self.shape(kernel), "conv2d kernel")?;
        if kc != c {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d kernel expects {kc} channels, input has {c}"
            )));
        }
        if k != k2 {
            return Err(DiffError::ShapeMismatch(format!("conv2d kernel must be square, got {k}x{k2}")));
        }
        if self.shape(bias) != [f] {
            return Err(DiffError::ShapeMismatch(format!(
                "conv2d bias shape {:?}, expected [{f}]",
                self.shape(bias)
            )));
        }
        if stride == 0 {
            return Err(DiffError::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (Some(ho), Some(wo)) = (
            kernels::conv_output_len(h, k, stride, pad),
            kernels::conv_output_len(w, k, stride, pad),
        ) else {
            return Err(DiffError::ShapeMismatch(format!(
                "kernel {k} does not fit input {h}x{w} with padding {pad}"
            )));
        };
        let geom = ConvGeometry {
            n,
            c,
            h,
            w,
            f,
            k,
            stride,
            pad,
            ho,
            wo,
        };
        let out = kernels::conv2d_forward(&geom, self.data(input), self.data(kernel), self.data(bias));
        Ok(self.record(
            vec![n, f, ho, wo],
            out,
            &[input, kernel, bias],
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        self.record(self.shape(x).to_vec(), out, &[x], Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        self.record(self.shape(x).to_vec(), out, &[x], Op::Sigmoid(x))
    }

    /// Bilinear upsampling of `[N,C,H,W]` by an integer factor
    /// (half-pixel centers, edge clamped).
    pub fn bilinear_upsample(&mut self, x: Var, factor: usize) -> Result<Var, DiffError> {
        if factor == 0 {
            return Err(DiffError::InvalidArgument("upsample factor must be >= 1".into()));
        }
        let [n, c, h, w] = nchw(self.shape(x), "upsample input")?;
        let out = kernels::upsample_forward(self.data(x), n * c, h, w, factor);
        Ok(self.record(
            vec![n, c, h * factor, w * factor],
            out,
            &[x],
            Op::Upsample { input: x, factor },
        ))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, DiffError> {
        let first = xs
            .first()
            .ok_or_else(|| DiffError::InvalidArgument("concat of zero tensors".into()))?;
        let [n, _, h, w] = nchw(self.shape(*first), "concat input")?;
        let mut channels = 0;
        for &x in xs {
            let [xn, xc, xh, xw] = nchw(self.shape(x), "concat input")?;
            if (xn, xh, xw) != (n, h, w) {
                return Err(DiffError::ShapeMismatch(format!(
                    "concat of {:?} with {:?}",
                    self.shape(*first),
                    self.shape(x)
                )));
            }
            channels += xc;
        }
        let mut out = Vec::with_capacity(n * channels * h * w);
        for b in 0..n {
            for &x in xs {
                let xc = self.shape(x)[1];
                let plane = xc * h * w;
                out.extend_from_slice(&self.data(x)[b * plane..][..plane]);
            }
        }
        Ok(self.record(vec![n, channels, h, w], out, xs, Op::Concat(xs.to_vec())))
    }

    pub fn add(&mut self, x: Var, y: Var) -> Result<Var, DiffError> {
        if self.shape(x) != self.shape(y) {
            return Err(DiffError::ShapeMismatch(format!(
                "add of {:?} and {:?}",
                self.shape(x),
                self.shape(y)
            )));
        }
        let out = self.data(x).iter().zip(self.data(y)).map(|(a, b)| a + b).collect();
        Ok(self.record(self.shape(x).to_vec(), out, &[x, y], Op::Add(x, y)))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out = self.data(x).iter().map(|v| v * s).collect();
        self.record(self.shape(x).to_vec(), out, &[x], Op::Scale(x, s))
    }

    /// `Σ w·BCE(p, t) / max(Σ w, 1)` over `prob [N,1,H,W]`, with `p` clipped
    /// to `[ε, 1−ε]`. Pixels with zero weight get exactly zero gradient.
    pub fn bce_masked(&mut self, prob: Var, target: &[f64], weight: &[f64]) -> Result<Var, DiffError> {
        let [_, c, _, _] = nchw(self.shape(prob), "bce probability map")?;
        if c != 1 {
            return Err(DiffError::ShapeMismatch(format!("bce expects one channel, got {c}")));
        }
        let numel = self.data(prob).len();
        if target.len() != numel || weight.len() != numel {
            return Err(DiffError::ShapeMismatch(format!(
                "bce over {numel} pixels with {} targets and {} weights",
                target.len(),
                weight.len()
            )));
        }
        if let Some((index, &value)) = weight.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
            return Err(DiffError::NegativeWeight { index, value });
        }
        let (total, denom) = kernels::bce_forward(self.data(prob), target, weight);
        Ok(self.record(
            vec![1],
            vec![total / denom],
            &[prob],
            Op::BceMasked {
                prob,
                target: target.to_vec(),
                weight: weight.to_vec(),
                denom,
            },
        ))
    }

    /// Seeds `d root / d root = 1` and propagates gradients to every node
    /// that requires one. Gradients of earlier backward calls are discarded.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        if self.nodes[root.0].value.data.len() != 1 {
            return Err(DiffError::NotScalar(self.nodes[root.0].value.shape.clone()));
        }
        for node in &mut self.nodes {
            node.value.grad = None;
        }
        if !self.nodes[root.0].value.requires_grad {
            return Ok(());
        }
        self.nodes[root.0].value.grad = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(gout) = self.nodes[i].value.grad.take() else {
                continue;
            };
            let contributions = self.input_grads(i, &gout);
            self.nodes[i].value.grad = Some(gout);
            for (var, g) in contributions {
                let target = &mut self.nodes[var.0].value;
                if !target.requires_grad {
                    continue;
                }
                match &mut target.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => target.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, i: usize, gout: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let wants = |v: &Var| self.nodes[v.0].value.requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                let mut out = Vec::new();
                if wants(input) {
                    out.push((*input, kernels::conv2d_backward_input(geom, self.data(*kernel), gout)));
                }
                if wants(kernel) || wants(bias) {
                    let (gk, gb) = kernels::conv2d_backward_params(geom, self.data(*input), gout);
                    out.push((*kernel, gk));
                    out.push((*bias, gb));
                }
                out
            }
            Op::Relu(x) => {
                let g = self
                    .data(*x)
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
                    .collect();
                vec![(*x, g)]
            }
            Op::Sigmoid(x) => {
                let g = node
                    .value
                    .data
                    .iter()
                    .zip(gout)
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                vec![(*x, g)]
            }
            Op::Upsample { input, factor } => {
                let [n, c, h, w] = nchw(self.shape(*input), "").expect("checked in forward");
                vec![(*input, kernels::upsample_backward(gout, n * c, h, w, *factor))]
            }
            Op::Concat(xs) => {
                let [n, channels, h, w] = nchw(&node.value.shape, "").expect("checked in forward");
                let mut grads: Vec<Vec<f64>> = xs
                    .iter()
                    .map(|x| Vec::with_capacity(self.data(*x).len()))
                    .collect();
                for b in 0..n {
                    let mut offset = b * channels * h * w;
                    for (x, g) in xs.iter().zip(grads.iter_mut()) {
                        let plane = self.shape(*x)[1] * h * w;
                        g.extend_from_slice(&gout[offset..][..plane]);
                        offset += plane;
                    }
                }
                xs.iter().copied().zip(grads).collect()
            }
            Op::Add(x, y) => vec![(*x, gout.to_vec()), (*y, gout.to_vec())],
            Op::Scale(x, s) => vec![(*x, gout.iter().map(|g| g * s).collect())],
            Op::BceMasked {
                prob,
                target,
                weight,
                denom,
            } => vec![(
                *prob,
                kernels::bce_backward(self.data(*prob), target, weight, *denom, gout[0]),
            )],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> DiffTensor {
        DiffTensor::new(shape, data).unwrap()
    }

    #[test]
    fn relu_and_sigmoid_definitions() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![3], vec![-1.0, 2.0, 0.0]));
        let r = tape.relu(x);
        assert_eq!(tape.data(r), &[0.0, 2.0, 0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.data(s)[2], 0.5);
    }

    #[test]
    fn identity_kernel_and_constant_bias() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..18).map(|i| i as f64 * 0.5 - 3.0).collect();
        let x = tape.leaf(t(vec![1, 2, 3, 3], data.clone()));
        let k = tape.leaf(t(vec![2, 2, 1, 1], vec![1.0, 0.0, 0.0, 1.0]));
        let b = tape.leaf(t(vec![2], vec![0.0, 0.0]));
        let y = tape.conv2d(x, k, b, 1, 0).unwrap();
        assert_eq!(tape.data(y), &data[..]);

        let k0 = tape.leaf(t(vec![1, 2, 3, 3], vec![0.0; 18]));
        let b0 = tape.leaf(t(vec![1], vec![0.25]));
        let y0 = tape.conv2d(x, k0, b0, 1, 1).unwrap();
        assert!(tape.data(y0).iter().all(|&v| v == 0.25));
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![1, 2, 3, 3], vec![0.0; 18]));
        let k = tape.leaf(t(vec![1, 3, 1, 1], vec![0.0; 3]));
        let b = tape.leaf(t(vec![1], vec![0.0]));
        assert!(matches!(tape.conv2d(x, k, b, 1, 0), Err(DiffError::ShapeMismatch(_))));
    }

    #[test]
    fn bce_rejects_negative_weight_and_wrong_length() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(vec![1, 1, 1, 2], vec![0.3, 0.6]));
        assert_eq!(
            tape.bce_masked(p, &[1.0, 0.0], &[1.0, -0.5]),
            Err(DiffError::NegativeWeight { index: 1, value: -0.5 })
        );
        assert!(matches!(
            tape.bce_masked(p, &[1.0], &[1.0]),
            Err(DiffError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn empty_mask_gives_zero_loss_and_gradient() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(vec![1, 1, 2, 2], vec![0.1, 0.4, 0.7, 0.9]).requiring_grad());
        let loss = tape.bce_masked(p, &[1.0, 0.0, 1.0, 0.0], &[0.0; 4]).unwrap();
        assert_eq!(tape.data(loss), &[0.0]);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(p).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn perfect_prediction_has_tiny_loss() {
        let mut tape = Tape::new();
        let p = tape.leaf(t(vec![1, 1, 1, 4], vec![0.0, 1.0, 1.0, 0.0]));
        let loss = tape
            .bce_masked(p, &[0.0, 1.0, 1.0, 0.0], &[1.0, 0.5, 0.0, 2.0])
            .unwrap();
        assert!(tape.data(loss)[0] <= 1e-6);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![1], vec![0.3]).requiring_grad());
        let s = tape.sigmoid(x);
        let y = tape.add(s, s).unwrap();
        tape.backward(y).unwrap();
        let sig = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((tape.grad(x).unwrap()[0] - 2.0 * sig * (1.0 - sig)).abs() < 1e-15);
    }

    #[test]
    fn constants_are_not_differentiated() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(vec![2], vec![1.0, 2.0]));
        let y = tape.leaf(t(vec![2], vec![1.0, 2.0]).requiring_grad());
        let z = tape.add(x, y).unwrap();
        let p = tape.scale(z, 0.5);
        assert!(tape.value(p).requires_grad());
        assert!(matches!(tape.backward(p), Err(DiffError::NotScalar(_))));
    }
}
