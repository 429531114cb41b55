use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::activation::Activation;
use super::dropout::DropoutMask;
use crate::error::{Error, Result};
use crate::num::Scalar;

/// Affine map followed by an elementwise activation: `sigma(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `[out x in]`
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weights: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self> {
        if weights.nrows() != bias.len() {
            return Err(Error::Dimension {
                expected: weights.nrows(),
                got: bias.len(),
                context: "bias length",
            });
        }
        Ok(Layer {
            weights,
            bias,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn pre_activation(&self, x: &ArrayView2<'_, T>) -> Array2<T> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// A feed-forward stack of dense layers. Inputs are batches laid out as
/// `[batch x features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    pub layers: Vec<Layer<T>>,
    pub seed: u64,
}

/// Everything [`DenseNet::backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct GradientTape<T> {
    /// Input to each layer, after the previous layer's dropout.
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
    /// Scaled keep-masks on hidden outputs; `None` where no dropout ran.
    masks: Vec<Option<Array2<T>>>,
    consumed: bool,
}

impl<T> GradientTape<T> {
    pub fn is_consumed(&self) -> bool {
        self.consumed
    }
}

/// Parameter gradients, shaped exactly like the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &DenseNet<T>) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    /// Flat views in the order `W0, b0, W1, b1, ...`, matching
    /// [`DenseNet::params_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("standard layout"),
                    b.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn max_abs(&self) -> T {
        self.slices()
            .into_iter()
            .flatten()
            .fold(T::zero(), |m, g| m.max(g.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.slices().into_iter().flatten().all(|g| g.is_finite())
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn new(layers: Vec<Layer<T>>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Dimension {
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                    context: "adjacent layer widths",
                });
            }
        }
        Ok(DenseNet { layers, seed })
    }

    /// Fan-scaled uniform initialization with zero biases. Every layer but
    /// the last uses `hidden`; the output layer is linear.
    pub fn init(layer_dims: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer dims must list at least input and output widths, all positive: {layer_dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = layer_dims.len() - 1;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let s = T::lit((6.0 / (fan_in + fan_out) as f64).sqrt());
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-s..=s));
                let activation = if k + 1 == n {
                    Activation::Identity
                } else {
                    hidden
                };
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Ok(DenseNet { layers, seed })
    }

    /// Network computing `x -> x` on `dim` features with a single linear layer.
    pub fn identity(dim: usize) -> Self {
        DenseNet {
            layers: vec![Layer {
                weights: Array2::eye(dim),
                bias: Array1::zeros(dim),
                activation: Activation::Identity,
            }],
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat mutable views in the order `W0, b0, W1, b1, ...`.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weights.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params().into_iter().flatten().all(|p| p.is_finite())
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
                context: "network input",
            });
        }
        Ok(())
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in &self.layers {
            let mut z = layer.pre_activation(&a.view());
            let act = layer.activation;
            z.mapv_inplace(|v| act.apply(v));
            a = z;
        }
        Ok(a)
    }

    /// Forward pass recording a tape. When `dropout` is given, fresh masks
    /// are drawn for every hidden layer's output; the final layer is never
    /// masked.
    pub fn forward(
        &self,
        x: ArrayView2<'_, T>,
        mut dropout: Option<(&DropoutMask<T>, &mut dyn RngCore)>,
    ) -> Result<(Array2<T>, GradientTape<T>)> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut tape = GradientTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            consumed: false,
        };
        let mut a = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.pre_activation(&a.view());
            let act = layer.activation;
            let mut out = z.mapv(|v| act.apply(v));
            let mask = match dropout.as_mut() {
                Some((mask, rng)) if k + 1 < n => mask.sample(&mut **rng, out.dim()),
                _ => None,
            };
            if let Some(m) = &mask {
                out *= m;
            }
            tape.inputs.push(a);
            tape.pre.push(z);
            tape.masks.push(mask);
            a = out;
        }
        Ok((a, tape))
    }

    /// Reverse-mode pass. `d_out` is the loss gradient with respect to the
    /// forward output; returns parameter gradients and the loss gradient
    /// with respect to the input batch.
    pub fn backward(
        &self,
        tape: &mut GradientTape<T>,
        d_out: ArrayView2<'_, T>,
    ) -> Result<(Gradients<T>, Array2<T>)> {
        if tape.consumed {
            return Err(Error::TapeConsumed);
        }
        if tape.pre.len() != self.layers.len() {
            return Err(Error::Dimension {
                expected: self.layers.len(),
                got: tape.pre.len(),
                context: "tape depth",
            });
        }
        let last = &tape.pre[tape.pre.len() - 1];
        if d_out.dim() != last.dim() {
            return Err(Error::Dimension {
                expected: last.ncols(),
                got: d_out.ncols(),
                context: "output gradient",
            });
        }
        tape.consumed = true;
        let inputs = std::mem::take(&mut tape.inputs);
        let pre = std::mem::take(&mut tape.pre);
        let masks = std::mem::take(&mut tape.masks);

        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = d_out.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if let Some(m) = &masks[k] {
                delta *= m;
            }
            let act = layer.activation;
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(&pre[k])
                    .for_each(|d, &z| *d *= act.derivative(z));
            }
            let dw = delta.t().dot(&inputs[k]);
            weights.push(if dw.is_standard_layout() {
                dw
            } else {
                dw.as_standard_layout().into_owned()
            });
            biases.push(delta.sum_axis(Axis(0)));
            delta = delta.dot(&layer.weights);
        }
        weights.reverse();
        biases.reverse();
        Ok((Gradients { weights, biases }, delta))
    }
}

pub fn init_net<T: Scalar>(
    layer_dims: &[usize],
    activation: Activation,
    seed: u64,
) -> Result<DenseNet<T>> {
    DenseNet::init(layer_dims, activation, seed)
}
