use serde::{Deserialize, Serialize};

use super::net::{DenseNet, Gradients};
use crate::error::{Error, Result};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Moment accumulators for a fixed list of parameter tensors.
///
/// Tensors are passed as flat slices; the list must have the same shape on
/// every call. Moments are allocated on the first update.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn adam(learning_rate: T) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: T) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            ..Self::adam(learning_rate)
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: T) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(learning_rate),
            OptimizerKind::Sgd => Self::sgd(learning_rate),
        }
    }

    fn ensure_moments(&mut self, grads: &[&[T]]) -> Result<()> {
        if self.first_moment.is_empty() {
            self.first_moment = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.second_moment = self.first_moment.clone();
            return Ok(());
        }
        if self.first_moment.len() != grads.len() {
            return Err(Error::Dimension {
                expected: self.first_moment.len(),
                got: grads.len(),
                context: "optimizer tensor count",
            });
        }
        for (m, g) in self.first_moment.iter().zip(grads) {
            if m.len() != g.len() {
                return Err(Error::Dimension {
                    expected: m.len(),
                    got: g.len(),
                    context: "optimizer tensor size",
                });
            }
        }
        Ok(())
    }

    /// Applies one update. Non-finite gradients are rejected before any
    /// parameter is touched.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension {
                expected: params.len(),
                got: grads.len(),
                context: "gradient tensor count",
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::Dimension {
                    expected: p.len(),
                    got: g.len(),
                    context: "gradient tensor size",
                });
            }
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gradients"));
        }
        self.ensure_moments(grads)?;
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let t = self.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first_moment)
                    .zip(&mut self.second_moment)
                {
                    for (((pi, &gi), mi), vi) in
                        p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * gi;
                        *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                        let m_hat = *mi / c1;
                        let v_hat = *vi / c2;
                        *pi -= lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
        if params.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("parameters after update"));
        }
        Ok(())
    }
}

/// One optimizer step on every weight and bias of `net`.
pub fn adam_step<T: Scalar>(
    net: &mut DenseNet<T>,
    grads: &Gradients<T>,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let g = grads.slices();
    let mut p = net.params_mut();
    state.update(&mut p, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn net() -> DenseNet<f64> {
        DenseNet::init(&[2, 4, 1], Activation::Selu, 9).unwrap()
    }

    fn filled(net: &DenseNet<f64>, v: f64) -> Gradients<f64> {
        let mut g = Gradients::zeros_like(net);
        g.weights.iter_mut().for_each(|w| w.fill(v));
        g.biases.iter_mut().for_each(|b| b.fill(v));
        g
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut n = net();
        let before = n.clone();
        let mut st = OptimizerState::adam(0.005);
        let g = filled(&n, 0.0);
        adam_step(&mut n, &g, &mut st).unwrap();
        assert_eq!(n, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut n = net();
        let before = n.clone();
        let mut st = OptimizerState::adam(0.005);
        let g = filled(&n, 1.0);
        adam_step(&mut n, &g, &mut st).unwrap();
        // m_hat = 1, v_hat = 1 -> delta = lr / (1 + eps)
        let expected = 0.005 / (1.0 + 1e-8);
        for (a, b) in before.params().into_iter().flatten().zip(n.params().into_iter().flatten()) {
            assert!(((a - b) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_steps_move_monotonically() {
        let mut n = net();
        let g = filled(&n, 0.3);
        let mut st = OptimizerState::adam(0.01);
        let p0: Vec<f64> = n.params().into_iter().flatten().copied().collect();
        adam_step(&mut n, &g, &mut st).unwrap();
        let p1: Vec<f64> = n.params().into_iter().flatten().copied().collect();
        adam_step(&mut n, &g, &mut st).unwrap();
        let p2: Vec<f64> = n.params().into_iter().flatten().copied().collect();
        for i in 0..p0.len() {
            assert!(p1[i] < p0[i] && p2[i] < p1[i]);
        }
    }

    #[test]
    fn nan_gradient_rejected_without_mutation() {
        let mut n = net();
        let before = n.clone();
        let mut g = filled(&n, 0.1);
        g.biases[0][1] = f64::NAN;
        let mut st = OptimizerState::adam(0.005);
        assert!(matches!(adam_step(&mut n, &g, &mut st), Err(Error::NonFinite(_))));
        assert_eq!(n, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn sgd_step() {
        let mut n = net();
        let before = n.clone();
        let mut st = OptimizerState::sgd(0.1);
        let g = filled(&n, 2.0);
        adam_step(&mut n, &g, &mut st).unwrap();
        for (a, b) in before.params().into_iter().flatten().zip(n.params().into_iter().flatten()) {
            assert!(((a - b) - 0.2).abs() < 1e-15);
        }
    }
}
