use super::{DiffError, DiffTensor};

/// A named trainable tensor with its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: DiffTensor,
    pub velocity: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, mut tensor: DiffTensor) -> Self {
        tensor.set_requires_grad(true);
        let velocity = vec![0.0; tensor.numel()];
        Self {
            name: name.into(),
            tensor,
            velocity,
        }
    }
}

/// Momentum SGD: `v ← μ·v + g`, `θ ← θ − lr·v`, then gradients are zeroed.
///
/// Every parameter must carry a gradient; nothing is modified otherwise.
pub fn sgd_step(params: &mut [Param], lr: f64, momentum: f64) -> Result<(), DiffError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(DiffError::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(DiffError::InvalidArgument(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    if let Some(p) = params.iter().find(|p| p.tensor.grad().is_none()) {
        return Err(DiffError::MissingGradient(p.name.clone()));
    }
    for p in params.iter_mut() {
        let grad = p.tensor.grad().expect("checked above").to_vec();
        for ((v, g), theta) in p
            .velocity
            .iter_mut()
            .zip(&grad)
            .zip(p.tensor.data_mut().iter_mut())
        {
            *v = momentum * *v + g;
            *theta -= lr * *v;
        }
        p.tensor.zero_grad();
    }
    Ok(())
}
