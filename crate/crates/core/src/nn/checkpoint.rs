//! JSON checkpoints for networks and optimizer state.
//!
//! Every real is written as a decimal with 17 significant digits so that a
//! save/load cycle reproduces `f64` parameters bit for bit.

use ndarray::{Array1, Array2};
use serde::ser::{Error as _, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::activation::Activation;
use super::net::{DenseNet, Layer};
use super::optim::{OptimizerKind, OptimizerState};
use crate::error::{Error, Result};
use crate::num::{fmt17, Scalar};

/// Serde helpers emitting 17-significant-digit decimals.
pub mod num17 {
    use super::*;

    struct Num(f64);

    impl Serialize for Num {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            if !self.0.is_finite() {
                return Err(S::Error::custom("cannot serialize a non-finite number"));
            }
            RawValue::from_string(fmt17(self.0))
                .map_err(S::Error::custom)?
                .serialize(s)
        }
    }

    struct Seq<'a>(&'a [f64]);

    impl Serialize for Seq<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(self.0.len()))?;
            for &v in self.0 {
                seq.serialize_element(&Num(v))?;
            }
            seq.end()
        }
    }

    pub fn scalar<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        Num(*v).serialize(s)
    }

    pub fn vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        Seq(v).serialize(s)
    }

    pub fn nested<S: Serializer>(v: &[Vec<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for row in v {
            seq.serialize_element(&Seq(row))?;
        }
        seq.end()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerCheckpoint {
    pub kind: OptimizerKind,
    #[serde(serialize_with = "num17::scalar")]
    pub learning_rate: f64,
    #[serde(serialize_with = "num17::scalar")]
    pub beta1: f64,
    #[serde(serialize_with = "num17::scalar")]
    pub beta2: f64,
    #[serde(serialize_with = "num17::scalar")]
    pub eps: f64,
    pub step: u64,
    #[serde(serialize_with = "num17::nested")]
    pub first_moment: Vec<Vec<f64>>,
    #[serde(serialize_with = "num17::nested")]
    pub second_moment: Vec<Vec<f64>>,
}

fn to_f64_rows<T: Scalar>(rows: &[Vec<T>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect()
}

fn from_f64_rows<T: Scalar>(rows: &[Vec<f64>]) -> Vec<Vec<T>> {
    rows.iter()
        .map(|r| r.iter().map(|&v| T::lit(v)).collect())
        .collect()
}

impl OptimizerCheckpoint {
    pub fn capture<T: Scalar>(state: &OptimizerState<T>) -> Self {
        OptimizerCheckpoint {
            kind: state.kind,
            learning_rate: state.learning_rate.as_f64(),
            beta1: state.beta1.as_f64(),
            beta2: state.beta2.as_f64(),
            eps: state.eps.as_f64(),
            step: state.step,
            first_moment: to_f64_rows(&state.first_moment),
            second_moment: to_f64_rows(&state.second_moment),
        }
    }

    pub fn restore<T: Scalar>(&self) -> OptimizerState<T> {
        OptimizerState {
            kind: self.kind,
            learning_rate: T::lit(self.learning_rate),
            beta1: T::lit(self.beta1),
            beta2: T::lit(self.beta2),
            eps: T::lit(self.eps),
            step: self.step,
            first_moment: from_f64_rows(&self.first_moment),
            second_moment: from_f64_rows(&self.second_moment),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub layer_dims: Vec<usize>,
    /// Hidden-layer activation.
    pub activation: Activation,
    pub output_activation: Activation,
    /// Per layer, `[out x in]` in row-major order.
    #[serde(serialize_with = "num17::nested")]
    pub weights: Vec<Vec<f64>>,
    #[serde(serialize_with = "num17::nested")]
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
    pub optimizer: Option<OptimizerCheckpoint>,
}

impl NetCheckpoint {
    pub fn capture<T: Scalar>(net: &DenseNet<T>, optimizer: Option<&OptimizerState<T>>) -> Self {
        let n = net.layers.len();
        NetCheckpoint {
            layer_dims: net.layer_dims(),
            activation: net.layers[0].activation,
            output_activation: net.layers[n - 1].activation,
            weights: net
                .layers
                .iter()
                .map(|l| l.weights.iter().map(|v| v.as_f64()).collect())
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| l.bias.iter().map(|v| v.as_f64()).collect())
                .collect(),
            seed: net.seed,
            optimizer: optimizer.map(OptimizerCheckpoint::capture),
        }
    }

    pub fn restore<T: Scalar>(&self) -> Result<(DenseNet<T>, Option<OptimizerState<T>>)> {
        let n = self.layer_dims.len().saturating_sub(1);
        if n == 0 || self.weights.len() != n || self.biases.len() != n {
            return Err(Error::Config("checkpoint layer count mismatch".into()));
        }
        let mut layers = Vec::with_capacity(n);
        for k in 0..n {
            let (fan_in, fan_out) = (self.layer_dims[k], self.layer_dims[k + 1]);
            let w = Array2::from_shape_vec(
                (fan_out, fan_in),
                self.weights[k].iter().map(|&v| T::lit(v)).collect(),
            )
            .map_err(|e| Error::Config(format!("checkpoint weights of layer {k}: {e}")))?;
            let b: Array1<T> = self.biases[k].iter().map(|&v| T::lit(v)).collect();
            let act = if k + 1 == n {
                self.output_activation
            } else {
                self.activation
            };
            layers.push(Layer::new(w, b, act)?);
        }
        let net = DenseNet::new(layers, self.seed)?;
        Ok((net, self.optimizer.as_ref().map(|o| o.restore())))
    }
}
