use super::layer::{GradientSet, Sequential};
use crate::error::{Error, Result};

/// `theta <- theta - lr * grad`.
pub fn sgd_step(model: &mut Sequential, grads: &GradientSet, lr: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("sgd_step gradients"));
    }
    model.update_with(grads, |_, p, g| *p -= lr * g)
}

/// Adam with bias correction. Used for surrogate training only; the
/// federated clients run plain SGD.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut Sequential, grads: &GradientSet) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("adam gradients"));
        }
        let n = model.parameter_count();
        if self.m.len() != n {
            self.m = vec![0.0; n];
            self.v = vec![0.0; n];
            self.step = 0;
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        model.update_with(grads, |i, p, g| {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            *p -= lr * mh / (vh.sqrt() + eps);
        })
    }
}
