use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerKind {
    /// Momentum SGD. With `lars_coefficient` set, each parameter tensor's
    /// step is scaled by the trust ratio `η·‖w‖/(‖g‖ + 1e-9)`.
    Sgd {
        momentum: f64,
        lars_coefficient: Option<f64>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn sgd_lars(momentum: f64, lars_coefficient: f64) -> Self {
        OptimizerKind::Sgd {
            momentum,
            lars_coefficient: Some(lars_coefficient),
        }
    }

    pub fn adam(beta1: f64, beta2: f64) -> Self {
        OptimizerKind::Adam {
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// One named parameter tensor and its gradient for a single step.
pub struct ParamSlot<'a> {
    pub name: &'a str,
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

const LARS_EPS: f64 = 1e-9;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::param(format!(
                "learning rate must be > 0, got {learning_rate}"
            )));
        }
        Ok(Self {
            kind,
            learning_rate,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn kind(&self) -> &OptimizerKind {
        &self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to every slot. Moment buffers are allocated on the
    /// first call and bound to slot order afterwards.
    pub fn step(&mut self, slots: &mut [ParamSlot<'_>]) -> Result<()> {
        for s in slots.iter() {
            if s.value.dims() != s.grad.dims() {
                return Err(Error::shape(format!(
                    "gradient for {} has dims {:?}, parameter {:?}",
                    s.name,
                    s.grad.dims(),
                    s.value.dims()
                )));
            }
            if !s.grad.is_finite() {
                return Err(Error::Training(format!(
                    "gradient for parameter {}",
                    s.name
                )));
            }
        }
        if self.first.is_empty() {
            self.first = slots
                .iter()
                .map(|s| Tensor::zeros(s.value.dims()))
                .collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        if self.first.len() != slots.len()
            || self
                .first
                .iter()
                .zip(slots.iter())
                .any(|(b, s)| b.dims() != s.value.dims())
        {
            return Err(Error::shape(
                "parameter set changed between optimizer steps",
            ));
        }
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd {
                momentum,
                lars_coefficient,
            } => {
                for (slot, buf) in slots.iter_mut().zip(self.first.iter_mut()) {
                    let trust = match lars_coefficient {
                        Some(eta) => {
                            let wn = slot.value.norm();
                            if wn == 0.0 {
                                1.0
                            } else {
                                eta * wn / (slot.grad.norm() + LARS_EPS)
                            }
                        }
                        None => 1.0,
                    };
                    for ((w, v), &g) in slot
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(buf.data_mut())
                        .zip(slot.grad.data())
                    {
                        *v = momentum * *v + trust * g;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for ((slot, m), v) in slots
                    .iter_mut()
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    for (((w, m), v), &g) in slot
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                        .zip(slot.grad.data())
                    {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(opt: &mut Optimizer, w: &mut Tensor, g: &Tensor) {
        opt.step(&mut [ParamSlot {
            name: "w",
            value: w,
            grad: g,
        }])
        .unwrap();
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        for kind in [
            OptimizerKind::sgd_lars(0.9, 0.01),
            OptimizerKind::adam(0.9, 0.99),
        ] {
            let mut opt = Optimizer::new(kind, 0.01).unwrap();
            let mut w = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
            let before = w.clone();
            one_step(&mut opt, &mut w, &Tensor::zeros(&[3]));
            assert_eq!(w, before);
        }
    }

    #[test]
    fn plain_sgd_first_step() {
        let kind = OptimizerKind::Sgd {
            momentum: 0.9,
            lars_coefficient: None,
        };
        let mut opt = Optimizer::new(kind, 0.1).unwrap();
        let mut w = Tensor::from_vec(vec![2.0]);
        one_step(&mut opt, &mut w, &Tensor::from_vec(vec![1.0]));
        assert!((w.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_learning_rate() {
        let mut opt = Optimizer::new(OptimizerKind::adam(0.9, 0.99), 0.01).unwrap();
        let mut w = Tensor::from_vec(vec![0.3]);
        one_step(&mut opt, &mut w, &Tensor::from_vec(vec![1.0]));
        // m̂ = v̂ = 1 after bias correction
        let expected = 0.3 - 0.01 / (1.0 + 1e-8);
        assert!((w.data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn lars_scales_by_trust_ratio() {
        let mut opt = Optimizer::new(OptimizerKind::sgd_lars(0.0, 0.01), 0.5).unwrap();
        let mut w = Tensor::from_vec(vec![3.0, 4.0]);
        let g = Tensor::from_vec(vec![0.0, 10.0]);
        one_step(&mut opt, &mut w, &g);
        let trust = 0.01 * 5.0 / (10.0 + 1e-9);
        assert!((w.data()[1] - (4.0 - 0.5 * trust * 10.0)).abs() < 1e-12);
        assert_eq!(w.data()[0], 3.0);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut opt = Optimizer::new(OptimizerKind::adam(0.9, 0.99), 0.01).unwrap();
        let mut w = Tensor::from_vec(vec![1.0]);
        let err = opt
            .step(&mut [ParamSlot {
                name: "head.weights",
                value: &mut w,
                grad: &Tensor::from_vec(vec![f64::NAN]),
            }])
            .unwrap_err();
        assert!(err.to_string().contains("head.weights"));
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut opt = Optimizer::new(OptimizerKind::sgd_lars(0.9, 0.01), 0.01).unwrap();
            let mut w = Tensor::from_vec(vec![0.1, 0.2, -0.3]);
            for i in 0..5 {
                let g = Tensor::from_vec(vec![i as f64, 1.0, -0.5]);
                one_step(&mut opt, &mut w, &g);
            }
            w
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_nonpositive_learning_rate() {
        assert!(Optimizer::new(OptimizerKind::adam(0.9, 0.99), 0.0).is_err());
    }
}
