use super::{invalid, ParamStore, Real, Result, Tensor};

/// Classic momentum SGD: `v <- momentum * v + grad`, `p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum<T: Real = f64> {
    momentum: T,
    velocity: Vec<Tensor<T>>,
}

impl<T: Real> SgdMomentum<T> {
    pub fn new(momentum: T) -> Result<Self> {
        if !(momentum >= T::zero() && momentum < T::one()) {
            return Err(invalid("sgd_momentum", format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self { momentum, velocity: Vec::new() })
    }

    pub fn momentum(&self) -> T {
        self.momentum
    }

    pub fn velocity(&self) -> &[Tensor<T>] {
        &self.velocity
    }

    /// Applies one update. `lr` may be zero (a no-op on the parameters that
    /// still advances the velocity).
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: T) -> Result<()> {
        if !(lr >= T::zero()) || !lr.is_finite() {
            return Err(invalid("sgd_momentum", format!("learning rate {lr} must be finite and >= 0")));
        }
        if grads.len() != params.len() {
            return Err(invalid(
                "sgd_momentum",
                format!("{} gradients for {} parameters", grads.len(), params.len()),
            ));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(invalid(
                "sgd_momentum",
                format!("optimizer state has {} slots for {} parameters", self.velocity.len(), params.len()),
            ));
        }
        for (i, (vel, grad)) in self.velocity.iter_mut().zip(grads).enumerate() {
            let param = params.tensor_mut(i);
            if vel.shape() != grad.shape() || param.shape() != grad.shape() {
                return Err(invalid(
                    "sgd_momentum",
                    format!("shape mismatch: param {:?}, grad {:?}, state {:?}", param.shape(), grad.shape(), vel.shape()),
                ));
            }
            for ((v, &g), p) in vel.data_mut().iter_mut().zip(grad.data()).zip(param.data_mut()) {
                *v = self.momentum * *v + g;
                *p = *p - lr * *v;
            }
        }
        Ok(())
    }
}
