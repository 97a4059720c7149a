use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<E: Scalar> {
    pub name: String,
    pub value: Tensor<E>,
    pub grad: Tensor<E>,
    /// Weight decay applies to convolution/linear weights only, not to
    /// biases or normalization scale/shift.
    pub decay: bool,
    /// When set, backprop may legitimately leave this parameter without a
    /// gradient (treated as zero) instead of reporting it disconnected.
    pub optional: bool,
    /// Frozen parameters are skipped entirely by the optimizer.
    pub frozen: bool,
}

impl<E: Scalar> Param<E> {
    pub fn new(name: impl Into<String>, value: Tensor<E>, decay: bool) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Param { name: name.into(), value, grad, decay, optional: false, frozen: false }
    }

    pub fn zero_grad(&mut self) {
        for g in self.grad.data_mut() {
            *g = E::zero();
        }
    }
}

/// Per-parameter velocity buffers for SGD with classic momentum.
pub struct SgdState<E: Scalar> {
    velocity: Vec<Tensor<E>>,
}

impl<E: Scalar> SgdState<E> {
    pub fn new(params: &[Param<E>]) -> Self {
        SgdState {
            velocity: params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect(),
        }
    }
}

/// v ← momentum·v + grad + weight_decay·value;  value ← value − lr·v.
pub fn sgd_step<E: Scalar>(
    params: &mut [Param<E>],
    state: &mut SgdState<E>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::invalid(format!("learning rate must be positive, got {}", lr)));
    }
    if params.len() != state.velocity.len() {
        return Err(Error::invalid("optimizer state does not match parameter list"));
    }
    let lr = E::from_f64(lr);
    let mom = E::from_f64(momentum);
    for (p, vel) in params.iter_mut().zip(&mut state.velocity) {
        if p.frozen {
            continue;
        }
        let wd = if p.decay { E::from_f64(weight_decay) } else { E::zero() };
        for ((v, g), val) in vel.data_mut().iter_mut().zip(p.grad.data()).zip(p.value.data_mut()) {
            *v = mom * *v + *g + wd * *val;
            *val = *val - lr * *v;
        }
    }
    Ok(())
}
