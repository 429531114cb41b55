//! The four architectures compared here, behind one predict/loss interface.
//!
//! * [`Variant::ConjugacyAe`]: `h^-1 . phi^-1 . T_2 . phi . h`, the latent
//!   step is the exact tent/logistic conjugacy and has no parameters.
//! * [`Variant::LogisticAe`]: `h^-1 . L . h` with `L(y) = c1 y + c2 y^2` and
//!   trainable `c1`, `c2`.
//! * [`Variant::Fnn`]: one network trained on `(x, U(x))` pairs.
//! * [`Variant::Pinn`]: the same network with an additional residual term
//!   against the known map equation.
//!
//! Inputs are batches `[n x d]`; `d = 1` for pointwise data and `d = w` in
//! the sliding-window experiment, where the map equation is applied to the
//! last element of each window.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{ConjugacyPair, MapSpec, EPS_CLAMP};
use crate::nn::{
    Activation, DenseNet, DropoutMask, Gradients, NetCheckpoint, OptimizerCheckpoint,
    OptimizerKind, OptimizerState,
};
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Model 1
    ConjugacyAe,
    /// Model 2
    LogisticAe,
    /// Model 3
    Fnn,
    /// Model 4
    Pinn,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::ConjugacyAe,
        Variant::LogisticAe,
        Variant::Fnn,
        Variant::Pinn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ConjugacyAe => "conjugacy-ae",
            Variant::LogisticAe => "logistic-ae",
            Variant::Fnn => "fnn",
            Variant::Pinn => "pinn",
        }
    }

    /// 1-based model number used in reports.
    pub fn number(self) -> usize {
        match self {
            Variant::ConjugacyAe => 1,
            Variant::LogisticAe => 2,
            Variant::Fnn => 3,
            Variant::Pinn => 4,
        }
    }

    pub fn is_autoencoder(self) -> bool {
        matches!(self, Variant::ConjugacyAe | Variant::LogisticAe)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "m1" | "model1" | "conjugacy-ae" | "conjugacy" => Ok(Variant::ConjugacyAe),
            "2" | "m2" | "model2" | "logistic-ae" | "logistic" => Ok(Variant::LogisticAe),
            "3" | "m3" | "model3" | "fnn" => Ok(Variant::Fnn),
            "4" | "m4" | "model4" | "pinn" => Ok(Variant::Pinn),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig<T> {
    pub variant: Variant,
    /// Encoder dims for the autoencoders, the single network's dims otherwise.
    pub encoder_dims: Vec<usize>,
    /// Empty for the single-network variants.
    pub decoder_dims: Vec<usize>,
    pub activation: Activation,
    pub c1_init: T,
    pub c2_init: T,
    /// Map equation used by the residual term.
    pub target: Option<MapSpec<T>>,
    pub latent_clamp: T,
    pub recon_weight: T,
    pub pred_weight: T,
    pub residual_weight: T,
}

impl<T: Scalar> ModelConfig<T> {
    /// Standard layout. The encoder is `layers_in` activated layers of
    /// `width`, so the latent has `width` units and the latent map acts on
    /// each of them; the decoder is `layers_out - 1` activated layers
    /// followed by a linear readout. The single-network variants get the
    /// same number of weight layers (`layers_in + layers_out`).
    pub fn new(
        variant: Variant,
        input_dim: usize,
        width: usize,
        layers_in: usize,
        layers_out: usize,
        activation: Activation,
    ) -> Self {
        let (encoder_dims, decoder_dims) = if variant.is_autoencoder() {
            let mut enc = vec![input_dim];
            enc.extend(std::iter::repeat_n(width, layers_in.max(1)));
            let mut dec: Vec<usize> = std::iter::repeat_n(width, layers_out.max(1)).collect();
            dec.push(1);
            (enc, dec)
        } else {
            let mut d = vec![input_dim];
            d.extend(std::iter::repeat_n(width, (layers_in + layers_out).max(2) - 1));
            d.push(1);
            (d, Vec::new())
        };
        ModelConfig {
            variant,
            encoder_dims,
            decoder_dims,
            activation,
            c1_init: T::lit(3.5),
            c2_init: T::lit(-3.5),
            target: None,
            latent_clamp: T::lit(EPS_CLAMP),
            recon_weight: T::one(),
            pred_weight: T::one(),
            residual_weight: T::one(),
        }
    }

    pub fn with_latent_coeffs(mut self, c1: T, c2: T) -> Self {
        self.c1_init = c1;
        self.c2_init = c2;
        self
    }

    pub fn with_target(mut self, target: MapSpec<T>) -> Self {
        self.target = Some(target);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_dims[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_dims.len() < 2 {
            return Err(Error::Config("encoder needs input and output widths".into()));
        }
        if self.variant.is_autoencoder() {
            if self.decoder_dims.len() < 2 {
                return Err(Error::Config("autoencoder needs a decoder".into()));
            }
            if self.encoder_dims.last() != Some(&self.decoder_dims[0]) {
                return Err(Error::Config(format!(
                    "encoder output {:?} does not match decoder input {}",
                    self.encoder_dims.last(),
                    self.decoder_dims[0]
                )));
            }
        } else if !self.decoder_dims.is_empty() {
            return Err(Error::Config(format!("{} has a single network", self.variant)));
        }
        if self.variant == Variant::Pinn && self.target.is_none() {
            return Err(Error::Config("pinn needs a target map for its residual".into()));
        }
        if let Some(t) = &self.target {
            t.validate()?;
        }
        Ok(())
    }
}

/// A training batch. `recon_inputs[i]` is the encoder input whose
/// reconstruction should equal `targets[i]`; for pointwise data it is
/// `U(x_i)` itself.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub inputs: Array2<T>,
    pub targets: Array1<T>,
    pub recon_inputs: Array2<T>,
}

impl<T: Scalar> Batch<T> {
    /// Pointwise batch from `(x, U(x))` pairs.
    pub fn pointwise(xs: &[T], ys: &[T]) -> Self {
        let n = xs.len();
        Batch {
            inputs: Array2::from_shape_vec((n, 1), xs.to_vec()).expect("n x 1"),
            targets: Array1::from(ys.to_vec()),
            recon_inputs: Array2::from_shape_vec((n, 1), ys.to_vec()).expect("n x 1"),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub recon: T,
    pub pred: T,
    pub residual: T,
    pub total: T,
}

#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub encoder: Gradients<T>,
    pub decoder: Option<Gradients<T>>,
    /// `(dc1, dc2)` for the learnable logistic latent.
    pub latent: Option<[T; 2]>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn max_abs(&self) -> T {
        let mut m = self.encoder.max_abs();
        if let Some(d) = &self.decoder {
            m = m.max(d.max_abs());
        }
        if let Some([a, b]) = self.latent {
            m = m.max(a.abs()).max(b.abs());
        }
        m
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite()
            && self.decoder.as_ref().is_none_or(Gradients::all_finite)
            && self
                .latent
                .is_none_or(|[a, b]| a.is_finite() && b.is_finite())
    }
}

/// Trainable parameters of one model plus one optimizer state per
/// trainable tensor group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    pub config: ModelConfig<T>,
    pub encoder: DenseNet<T>,
    pub decoder: Option<DenseNet<T>>,
    /// `(c1, c2)`; present only for [`Variant::LogisticAe`].
    pub latent: Option<[T; 2]>,
    /// When false, `c1` and `c2` receive no updates.
    pub train_latent: bool,
    pub encoder_opt: OptimizerState<T>,
    pub decoder_opt: Option<OptimizerState<T>>,
    pub latent_opt: Option<OptimizerState<T>>,
}

/// Decorrelates the decoder's initialization stream from the encoder's.
fn decoder_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

impl<T: Scalar> ModelState<T> {
    pub fn init(
        config: ModelConfig<T>,
        seed: u64,
        optimizer: OptimizerKind,
        learning_rate: T,
    ) -> Result<Self> {
        config.validate()?;
        let mut encoder = DenseNet::init(&config.encoder_dims, config.activation, seed)?;
        let decoder = if config.variant.is_autoencoder() {
            // the latent is the activated output of the last encoder layer
            if let Some(last) = encoder.layers.last_mut() {
                last.activation = config.activation;
            }
            Some(DenseNet::init(
                &config.decoder_dims,
                config.activation,
                decoder_seed(seed),
            )?)
        } else {
            None
        };
        Self::from_parts(config, encoder, decoder, optimizer, learning_rate)
    }

    /// Assembles a state from explicit networks, e.g. identity-forced ones.
    pub fn from_parts(
        config: ModelConfig<T>,
        encoder: DenseNet<T>,
        decoder: Option<DenseNet<T>>,
        optimizer: OptimizerKind,
        learning_rate: T,
    ) -> Result<Self> {
        if config.variant.is_autoencoder() != decoder.is_some() {
            return Err(Error::Config(format!(
                "{} expects {} network(s)",
                config.variant,
                if config.variant.is_autoencoder() { 2 } else { 1 }
            )));
        }
        if let Some(d) = &decoder {
            if encoder.output_dim() != d.input_dim() {
                return Err(Error::Config("encoder and decoder disagree on the latent width".into()));
            }
        }
        if encoder.input_dim() != config.input_dim() {
            return Err(Error::Dimension {
                expected: config.input_dim(),
                got: encoder.input_dim(),
                context: "model input",
            });
        }
        let latent = (config.variant == Variant::LogisticAe).then_some([config.c1_init, config.c2_init]);
        Ok(ModelState {
            encoder_opt: OptimizerState::new(optimizer, learning_rate),
            decoder_opt: decoder
                .as_ref()
                .map(|_| OptimizerState::new(optimizer, learning_rate)),
            latent_opt: latent.map(|_| OptimizerState::new(optimizer, learning_rate)),
            train_latent: true,
            latent,
            config,
            encoder,
            decoder,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn all_finite(&self) -> bool {
        self.encoder.all_finite()
            && self.decoder.as_ref().is_none_or(DenseNet::all_finite)
            && self
                .latent
                .is_none_or(|[a, b]| a.is_finite() && b.is_finite())
    }

    fn pair(&self) -> ConjugacyPair<T> {
        ConjugacyPair {
            eps_clamp: self.config.latent_clamp,
        }
    }

    /// Latent transform applied elementwise, returning values and
    /// derivatives. For the conjugacy model the derivative includes the
    /// clamp gate (1 inside `[0, 1]`, 0 outside).
    fn latent_transform(&self, y: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        match (self.config.variant, self.latent) {
            (Variant::ConjugacyAe, _) => {
                let pair = self.pair();
                let mut vals = Array2::zeros(y.raw_dim());
                let mut ders = Array2::zeros(y.raw_dim());
                for ((v, d), &yi) in vals.iter_mut().zip(ders.iter_mut()).zip(y.iter()) {
                    let inside = yi >= T::zero() && yi <= T::one();
                    let c = yi.max(T::zero()).min(T::one());
                    let (fv, fd) = pair.latent_step_with_grad(c);
                    *v = fv;
                    *d = if inside { fd } else { T::zero() };
                }
                (vals, ders)
            }
            (Variant::LogisticAe, Some([c1, c2])) => {
                let vals = y.mapv(|yi| c1 * yi + c2 * yi * yi);
                let ders = y.mapv(|yi| c1 + T::lit(2.0) * c2 * yi);
                (vals, ders)
            }
            _ => unreachable!("latent transform only exists for autoencoders"),
        }
    }

    fn check_batch(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
                context: "model input",
            });
        }
        Ok(())
    }

    /// Deterministic prediction for a batch `[n x d]`.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>> {
        self.check_batch(&x)?;
        let enc = self.encoder.predict(x)?;
        let out = match &self.decoder {
            None => enc,
            Some(dec) => {
                let (v, _) = self.latent_transform(enc.view());
                dec.predict(v.view())?
            }
        };
        Ok(out.column(0).to_owned())
    }

    /// Prediction with fresh dropout masks on every hidden layer of every
    /// network and on the latent units entering the decoder. The latent
    /// transform itself is never masked.
    pub fn predict_stochastic(
        &self,
        x: ArrayView2<'_, T>,
        mask: &DropoutMask<T>,
        rng: &mut dyn RngCore,
    ) -> Result<Array1<T>> {
        self.check_batch(&x)?;
        let (enc, _) = self.encoder.forward(x, Some((mask, &mut *rng)))?;
        let out = match &self.decoder {
            None => enc,
            Some(dec) => {
                let (mut v, _) = self.latent_transform(enc.view());
                if let Some(m) = mask.sample(&mut *rng, v.dim()) {
                    v *= &m;
                }
                dec.forward(v.view(), Some((mask, rng)))?.0
            }
        };
        Ok(out.column(0).to_owned())
    }

    /// Scalar convenience wrapper around [`ModelState::predict`].
    pub fn predict_one(&self, x: T) -> Result<T> {
        let xs = Array2::from_elem((1, 1), x);
        Ok(self.predict(xs.view())?[0])
    }

    /// Loss terms and their gradients on one batch.
    ///
    /// `recon = MSE(U, h^-1(h(recon_inputs)))` and `pred = MSE(U, model(x))`
    /// for the autoencoders; `pred = MSE(U, net(x))` and
    /// `residual = MSE(net(x), f(x_last))` for the single-network variants.
    pub fn loss_and_grads(
        &self,
        batch: &Batch<T>,
        mut dropout: Option<(&DropoutMask<T>, &mut dyn RngCore)>,
    ) -> Result<(LossParts<T>, ModelGrads<T>)> {
        self.check_batch(&batch.inputs.view())?;
        let n = batch.len();
        if n == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let inv_n = T::one() / T::lit(n as f64);
        let two = T::lit(2.0);
        let cfg = &self.config;
        macro_rules! drop {
            () => {
                dropout
                    .as_mut()
                    .map(|(m, r)| (*m, &mut **r as &mut dyn RngCore))
            };
        }

        match &self.decoder {
            None => {
                let (out, mut tape) = self.encoder.forward(batch.inputs.view(), drop!())?;
                let pred_vals = out.column(0);
                let err = &pred_vals - &batch.targets;
                let pred = err.mapv(|e| e * e).sum() * inv_n;
                let mut d_out = err.mapv(|e| two * e * inv_n * cfg.pred_weight);
                let mut residual = T::zero();
                if cfg.variant == Variant::Pinn {
                    let target = cfg
                        .target
                        .as_ref()
                        .ok_or_else(|| Error::Config("pinn without target".into()))?;
                    let last = batch.inputs.column(batch.inputs.ncols() - 1);
                    let res = ndarray::Zip::from(&pred_vals)
                        .and(&last)
                        .map_collect(|&p, &x| p - target.apply(x));
                    residual = res.mapv(|e| e * e).sum() * inv_n;
                    d_out = d_out + res.mapv(|e| two * e * inv_n * cfg.residual_weight);
                }
                let total = cfg.pred_weight * pred + cfg.residual_weight * residual;
                let (g, _) = self
                    .encoder
                    .backward(&mut tape, d_out.insert_axis(Axis(1)).view())?;
                let parts = LossParts {
                    recon: T::zero(),
                    pred,
                    residual: if cfg.variant == Variant::Pinn { residual } else { T::zero() },
                    total,
                };
                check_loss(&parts)?;
                Ok((
                    parts,
                    ModelGrads {
                        encoder: g,
                        decoder: None,
                        latent: None,
                    },
                ))
            }
            Some(dec) => {
                // prediction path: x -> h -> latent step -> h^-1
                let (y, mut enc_tape) = self.encoder.forward(batch.inputs.view(), drop!())?;
                let (mut v, dv) = self.latent_transform(y.view());
                let v_mask = latent_mask(drop!(), v.dim());
                if let Some(m) = &v_mask {
                    v *= m;
                }
                let (out, mut dec_tape) = dec.forward(v.view(), drop!())?;
                let err = &out.column(0) - &batch.targets;
                let pred = err.mapv(|e| e * e).sum() * inv_n;
                let d_out = err.mapv(|e| two * e * inv_n * cfg.pred_weight);
                let (mut g_dec, mut d_v) = dec.backward(&mut dec_tape, d_out.insert_axis(Axis(1)).view())?;
                if let Some(m) = &v_mask {
                    d_v *= m;
                }
                let latent = self.latent.map(|_| {
                    let dc1 = (&d_v * &y).sum();
                    let dc2 = ndarray::Zip::from(&d_v)
                        .and(&y)
                        .fold(T::zero(), |acc, &d, &yi| acc + d * yi * yi);
                    [dc1, dc2]
                });
                let d_y = &d_v * &dv;
                let (mut g_enc, _) = self.encoder.backward(&mut enc_tape, d_y.view())?;

                // reconstruction path: U -> h -> h^-1
                let (mut y2, mut enc_tape2) = self.encoder.forward(batch.recon_inputs.view(), drop!())?;
                let y2_mask = latent_mask(drop!(), y2.dim());
                if let Some(m) = &y2_mask {
                    y2 *= m;
                }
                let (r, mut dec_tape2) = dec.forward(y2.view(), drop!())?;
                let err2 = &r.column(0) - &batch.targets;
                let recon = err2.mapv(|e| e * e).sum() * inv_n;
                let d_r = err2.mapv(|e| two * e * inv_n * cfg.recon_weight);
                let (g_dec2, mut d_y2) = dec.backward(&mut dec_tape2, d_r.insert_axis(Axis(1)).view())?;
                if let Some(m) = &y2_mask {
                    d_y2 *= m;
                }
                let (g_enc2, _) = self.encoder.backward(&mut enc_tape2, d_y2.view())?;
                g_enc.add_assign(&g_enc2);
                g_dec.add_assign(&g_dec2);

                let parts = LossParts {
                    recon,
                    pred,
                    residual: T::zero(),
                    total: cfg.recon_weight * recon + cfg.pred_weight * pred,
                };
                check_loss(&parts)?;
                Ok((
                    parts,
                    ModelGrads {
                        encoder: g_enc,
                        decoder: Some(g_dec),
                        latent,
                    },
                ))
            }
        }
    }

    /// Loss terms without gradients (no dropout).
    pub fn loss(&self, batch: &Batch<T>) -> Result<LossParts<T>> {
        Ok(self.loss_and_grads(batch, None)?.0)
    }

    /// One optimizer step on every trainable tensor group.
    pub fn apply_grads(&mut self, grads: &ModelGrads<T>) -> Result<()> {
        if !grads.all_finite() {
            return Err(Error::NonFinite("model gradients"));
        }
        {
            let g = grads.encoder.slices();
            let mut p = self.encoder.params_mut();
            self.encoder_opt.update(&mut p, &g)?;
        }
        if let (Some(dec), Some(opt), Some(g)) =
            (self.decoder.as_mut(), self.decoder_opt.as_mut(), grads.decoder.as_ref())
        {
            let g = g.slices();
            let mut p = dec.params_mut();
            opt.update(&mut p, &g)?;
        }
        if self.train_latent {
            if let (Some(c), Some(opt), Some(g)) =
                (self.latent.as_mut(), self.latent_opt.as_mut(), grads.latent.as_ref())
            {
                opt.update(&mut [&mut c[..]], &[&g[..]])?;
            }
        }
        Ok(())
    }
}

/// Mask for the decoder input, i.e. the latent units, which are hidden
/// activations of the whole model. The latent map itself is never masked.
fn latent_mask<T: Scalar>(
    dropout: Option<(&DropoutMask<T>, &mut dyn RngCore)>,
    dim: (usize, usize),
) -> Option<Array2<T>> {
    dropout.and_then(|(m, rng)| m.sample(rng, dim))
}

fn check_loss<T: Scalar>(parts: &LossParts<T>) -> Result<()> {
    if parts.total.is_finite() && parts.recon.is_finite() && parts.pred.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("loss"))
    }
}

/// Prediction of model 1 at a single point.
pub fn model1_predict<T: Scalar>(state: &ModelState<T>, x: T) -> Result<T> {
    expect_variant(state, Variant::ConjugacyAe)?;
    state.predict_one(x)
}

pub fn model2_predict<T: Scalar>(state: &ModelState<T>, x: T) -> Result<T> {
    expect_variant(state, Variant::LogisticAe)?;
    state.predict_one(x)
}

pub fn model3_predict<T: Scalar>(state: &ModelState<T>, x: T) -> Result<T> {
    expect_variant(state, Variant::Fnn)?;
    state.predict_one(x)
}

/// Data mismatch plus weighted residual for the physics-informed network.
pub fn model4_loss<T: Scalar>(state: &ModelState<T>, batch: &Batch<T>) -> Result<T> {
    expect_variant(state, Variant::Pinn)?;
    Ok(state.loss(batch)?.total)
}

/// `(recon, pred, total)` for any variant.
pub fn model_loss<T: Scalar>(state: &ModelState<T>, batch: &Batch<T>) -> Result<(T, T, T)> {
    let p = state.loss(batch)?;
    Ok((p.recon, p.pred, p.total))
}

fn expect_variant<T: Scalar>(state: &ModelState<T>, v: Variant) -> Result<()> {
    if state.variant() == v {
        Ok(())
    } else {
        Err(Error::Config(format!("expected {v}, got {}", state.variant())))
    }
}

/// JSON checkpoint of a model: the per-network checkpoints plus the
/// latent coefficients, the residual target and the model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub variant: Variant,
    pub config: ModelConfig<f64>,
    pub encoder: NetCheckpoint,
    pub decoder: Option<NetCheckpoint>,
    #[serde(serialize_with = "serialize_opt17")]
    pub c1: Option<f64>,
    #[serde(serialize_with = "serialize_opt17")]
    pub c2: Option<f64>,
    pub train_latent: bool,
    pub latent_optimizer: Option<OptimizerCheckpoint>,
    /// Map the model was trained to reproduce.
    pub target_spec: Option<MapSpec<f64>>,
    /// Hyperparameters of the run that produced the checkpoint.
    #[serde(default)]
    pub train_config: Option<crate::train::TrainConfig>,
}

fn serialize_opt17<S: serde::Serializer>(
    v: &Option<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) => crate::nn::checkpoint::num17::scalar(x, s),
        None => s.serialize_none(),
    }
}

fn map_to_f64<T: Scalar>(m: &MapSpec<T>) -> MapSpec<f64> {
    MapSpec {
        kind: m.kind,
        mu: m.mu.as_f64(),
        r: m.r.as_f64(),
        z: m.z.as_f64(),
        a: m.a.as_f64(),
    }
}

fn map_from_f64<T: Scalar>(m: &MapSpec<f64>) -> MapSpec<T> {
    MapSpec {
        kind: m.kind,
        mu: T::lit(m.mu),
        r: T::lit(m.r),
        z: T::lit(m.z),
        a: T::lit(m.a),
    }
}

impl<T: Scalar> ModelConfig<T> {
    pub fn to_f64(&self) -> ModelConfig<f64> {
        ModelConfig {
            variant: self.variant,
            encoder_dims: self.encoder_dims.clone(),
            decoder_dims: self.decoder_dims.clone(),
            activation: self.activation,
            c1_init: self.c1_init.as_f64(),
            c2_init: self.c2_init.as_f64(),
            target: self.target.as_ref().map(map_to_f64),
            latent_clamp: self.latent_clamp.as_f64(),
            recon_weight: self.recon_weight.as_f64(),
            pred_weight: self.pred_weight.as_f64(),
            residual_weight: self.residual_weight.as_f64(),
        }
    }

    pub fn from_f64(c: &ModelConfig<f64>) -> Self {
        ModelConfig {
            variant: c.variant,
            encoder_dims: c.encoder_dims.clone(),
            decoder_dims: c.decoder_dims.clone(),
            activation: c.activation,
            c1_init: T::lit(c.c1_init),
            c2_init: T::lit(c.c2_init),
            target: c.target.as_ref().map(map_from_f64),
            latent_clamp: T::lit(c.latent_clamp),
            recon_weight: T::lit(c.recon_weight),
            pred_weight: T::lit(c.pred_weight),
            residual_weight: T::lit(c.residual_weight),
        }
    }
}

impl ModelCheckpoint {
    pub fn capture<T: Scalar>(state: &ModelState<T>) -> Self {
        ModelCheckpoint {
            variant: state.variant(),
            config: state.config.to_f64(),
            encoder: NetCheckpoint::capture(&state.encoder, Some(&state.encoder_opt)),
            decoder: state
                .decoder
                .as_ref()
                .map(|d| NetCheckpoint::capture(d, state.decoder_opt.as_ref())),
            c1: state.latent.map(|c| c[0].as_f64()),
            c2: state.latent.map(|c| c[1].as_f64()),
            train_latent: state.train_latent,
            latent_optimizer: state.latent_opt.as_ref().map(OptimizerCheckpoint::capture),
            target_spec: state.config.target.as_ref().map(map_to_f64),
            train_config: None,
        }
    }

    pub fn restore<T: Scalar>(&self) -> Result<ModelState<T>> {
        let config = ModelConfig::from_f64(&self.config);
        config.validate()?;
        let (encoder, encoder_opt) = self.encoder.restore::<T>()?;
        let (decoder, decoder_opt) = match &self.decoder {
            Some(d) => {
                let (net, opt) = d.restore::<T>()?;
                (Some(net), opt)
            }
            None => (None, None),
        };
        let kind = encoder_opt.as_ref().map_or(OptimizerKind::Adam, |o| o.kind);
        let mut state = ModelState::from_parts(config, encoder, decoder, kind, T::lit(1e-3))?;
        if let Some(o) = encoder_opt {
            state.encoder_opt = o;
        }
        if decoder_opt.is_some() {
            state.decoder_opt = decoder_opt;
        }
        if let (Some(c1), Some(c2)) = (self.c1, self.c2) {
            state.latent = Some([T::lit(c1), T::lit(c2)]);
        }
        if let Some(o) = &self.latent_optimizer {
            state.latent_opt = Some(o.restore());
        }
        state.train_latent = self.train_latent;
        Ok(state)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::eval_map;

    fn identity_ae(variant: Variant) -> ModelState<f64> {
        let cfg = ModelConfig::new(variant, 1, 4, 1, 1, Activation::Selu).with_latent_coeffs(4.0, -4.0);
        ModelState::from_parts(
            cfg,
            DenseNet::identity(1),
            Some(DenseNet::identity(1)),
            OptimizerKind::Adam,
            0.005,
        )
        .unwrap()
    }

    fn identity_single(variant: Variant) -> ModelState<f64> {
        let cfg = ModelConfig::new(variant, 1, 4, 1, 1, Activation::Selu)
            .with_target(MapSpec::logistic(4.0));
        ModelState::from_parts(cfg, DenseNet::identity(1), None, OptimizerKind::Adam, 0.005).unwrap()
    }

    fn logistic_batch(xs: &[f64]) -> Batch<f64> {
        let spec = MapSpec::logistic(4.0);
        let ys: Vec<f64> = xs.iter().map(|&x| eval_map(&spec, x).unwrap()).collect();
        Batch::pointwise(xs, &ys)
    }

    #[test]
    fn model1_identity_examples() {
        let m = identity_ae(Variant::ConjugacyAe);
        assert!((model1_predict(&m, 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!((model1_predict(&m, 0.2).unwrap() - 0.64).abs() < 1e-12);
        assert_eq!(model1_predict(&m, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn model1_latent_fixed_point_returns_decoder_of_zero() {
        let mut m: ModelState<f64> =
            ModelState::init(ModelConfig::new(Variant::ConjugacyAe, 1, 8, 1, 1, Activation::Selu), 3, OptimizerKind::Adam, 0.005)
                .unwrap();
        // force the encoder output to exactly 0
        for l in &mut m.encoder.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        let dec0 = m.decoder.as_ref().unwrap().predict(Array2::zeros((1, 8)).view()).unwrap()[[0, 0]];
        for x in [0.0, 0.3, 0.9] {
            assert_eq!(model1_predict(&m, x).unwrap(), dec0);
        }
    }

    #[test]
    fn model2_examples() {
        let mut m = identity_ae(Variant::LogisticAe);
        assert_eq!(model2_predict(&m, 0.5).unwrap(), 1.0);
        m.latent = Some([3.5, -3.5]);
        assert_eq!(model2_predict(&m, 0.5).unwrap(), 0.875);
        m.latent = Some([0.0, 0.0]);
        assert_eq!(model2_predict(&m, 0.1).unwrap(), 0.0);
        assert_eq!(model2_predict(&m, 0.8).unwrap(), 0.0);
    }

    #[test]
    fn model3_examples() {
        let m = identity_single(Variant::Fnn);
        assert_eq!(model3_predict(&m, 0.3).unwrap(), 0.3);
        let mut z: ModelState<f64> = ModelState::init(
            ModelConfig::new(Variant::Fnn, 1, 8, 1, 1, Activation::Selu),
            1,
            OptimizerKind::Adam,
            0.005,
        )
        .unwrap();
        for l in &mut z.encoder.layers {
            l.weights.fill(0.0);
        }
        z.encoder.layers.last_mut().unwrap().bias.fill(0.37);
        assert_eq!(model3_predict(&z, 0.1).unwrap(), 0.37);
        assert_eq!(model3_predict(&z, 0.9).unwrap(), 0.37);
    }

    #[test]
    fn model4_examples() {
        let mut m = identity_single(Variant::Pinn);
        for l in &mut m.encoder.layers {
            l.weights.fill(0.0);
        }
        let b = logistic_batch(&[0.5]);
        assert_eq!(model4_loss(&m, &b).unwrap(), 2.0);

        // residual weight 0 reduces to the fnn loss
        let rand_pinn: ModelState<f64> = ModelState::init(
            ModelConfig::new(Variant::Pinn, 1, 8, 1, 1, Activation::Selu).with_target(MapSpec::logistic(4.0)),
            5,
            OptimizerKind::Adam,
            0.005,
        )
        .unwrap();
        let mut no_res = rand_pinn.clone();
        no_res.config.residual_weight = 0.0;
        let mut fnn = rand_pinn.clone();
        fnn.config.variant = Variant::Fnn;
        let batch = logistic_batch(&[0.1, 0.35, 0.7]);
        assert_eq!(model4_loss(&no_res, &batch).unwrap(), model_loss(&fnn, &batch).unwrap().2);
    }

    #[test]
    fn model4_perfect_net_has_zero_loss() {
        // identity net at the logistic fixed points 0 and 3/4, where
        // net(x) = x = U(x) = f(x)
        let m = identity_single(Variant::Pinn);
        let b = Batch::pointwise(&[0.0, 0.75], &[0.0, 0.75]);
        assert_eq!(model4_loss(&m, &b).unwrap(), 0.0);
    }

    #[test]
    fn loss_examples() {
        let m = identity_ae(Variant::ConjugacyAe);
        let b = logistic_batch(&[0.05, 0.2, 0.5, 0.77, 0.93]);
        let (recon, pred, total) = model_loss(&m, &b).unwrap();
        assert_eq!(recon, 0.0);
        assert!(pred < 1e-20);
        assert_eq!(total, recon + pred);

        let r: ModelState<f64> = ModelState::init(
            ModelConfig::new(Variant::ConjugacyAe, 1, 16, 1, 1, Activation::Selu),
            2,
            OptimizerKind::Adam,
            0.005,
        )
        .unwrap();
        let (recon, pred, total) = model_loss(&r, &b).unwrap();
        assert!(total > 0.0 && total.is_finite());
        assert_eq!(total, recon + pred);

        let fnn = identity_single(Variant::Fnn);
        assert_eq!(model_loss(&fnn, &b).unwrap().0, 0.0);
    }

    #[test]
    fn model_equivalence_on_grid() {
        let m1 = identity_ae(Variant::ConjugacyAe);
        let m2 = identity_ae(Variant::LogisticAe);
        for i in 0..1000 {
            let x = i as f64 / 999.0;
            let a = m1.predict_one(x).unwrap();
            let b = m2.predict_one(x).unwrap();
            assert!((a - b).abs() < 1e-12, "{x}: {a} vs {b}");
        }
    }

    #[test]
    fn one_step_moves_encoder() {
        let mut m: ModelState<f64> = ModelState::init(
            ModelConfig::new(Variant::ConjugacyAe, 1, 16, 1, 1, Activation::Selu),
            4,
            OptimizerKind::Adam,
            0.005,
        )
        .unwrap();
        let b = logistic_batch(&[0.1, 0.3, 0.6, 0.8]);
        let before = m.encoder.clone();
        let (parts, g) = m.loss_and_grads(&b, None).unwrap();
        assert!(parts.total > 0.0);
        m.apply_grads(&g).unwrap();
        assert_ne!(before, m.encoder);
    }

    #[test]
    fn variant_parsing() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(v.number().to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("transformer".parse::<Variant>().is_err());
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig::<f64>::new(Variant::Pinn, 1, 4, 1, 1, Activation::Relu);
        assert!(bad.validate().is_err());
        let ok = ModelConfig::<f64>::new(Variant::ConjugacyAe, 1, 4, 3, 3, Activation::Relu);
        assert_eq!(ok.encoder_dims, vec![1, 4, 4, 4]);
        assert_eq!(ok.decoder_dims, vec![4, 4, 4, 1]);
        let fnn = ModelConfig::<f64>::new(Variant::Fnn, 1, 4, 1, 1, Activation::Relu);
        assert_eq!(fnn.encoder_dims, vec![1, 4, 1]);
        let fnn = ModelConfig::<f64>::new(Variant::Fnn, 3, 4, 3, 3, Activation::Relu);
        assert_eq!(fnn.encoder_dims, vec![3, 4, 4, 4, 4, 4, 1]);
        assert!(fnn.decoder_dims.is_empty());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m: ModelState<f64> = ModelState::init(
            ModelConfig::new(Variant::LogisticAe, 1, 8, 1, 1, Activation::Selu).with_latent_coeffs(3.1, -3.1),
            8,
            OptimizerKind::Adam,
            0.005,
        )
        .unwrap();
        let b = logistic_batch(&[0.1, 0.4, 0.9]);
        let (_, g) = m.loss_and_grads(&b, None).unwrap();
        m.apply_grads(&g).unwrap();
        let ck = ModelCheckpoint::capture(&m);
        let text = ck.to_json().unwrap();
        let back = ModelCheckpoint::from_json(&text).unwrap().restore::<f64>().unwrap();
        assert_eq!(back, m);
    }
}
