//! Epoch loop, hyperparameter presets and the sliding-window experiment.

use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{window_samples, Dataset, Partition, Samples};
use crate::error::{Error, Result};
use crate::maps::{orbit, MapKind, MapSpec};
use crate::models::{ModelConfig, ModelState, Variant};
use crate::nn::{Activation, DropoutMask, OptimizerKind};
use crate::num::Scalar;

/// Gradients whose largest magnitude stays below this value for
/// [`VANISHING_PATIENCE`] consecutive epochs stop training.
pub const VANISHING_THRESHOLD: f64 = 1e-12;
pub const VANISHING_PATIENCE: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub layer_width: usize,
    pub layers_in: usize,
    pub layers_out: usize,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    /// Drop probability applied to hidden units while training.
    #[serde(default)]
    pub dropout: f64,
}

fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl TrainConfig {
    /// Hyperparameters per map family. The tent map is not part of the
    /// reference grid and borrows the doubling-map row.
    pub fn preset(kind: MapKind) -> Self {
        let activation = if kind.is_piecewise() {
            Activation::Relu
        } else {
            Activation::Selu
        };
        let (width, layers, epochs, lr) = match kind {
            MapKind::Logistic | MapKind::Custom | MapKind::KatsuraFukuda => (256, 1, 1000, 0.005),
            MapKind::Doubling | MapKind::Tent => (256, 3, 2000, 0.001),
            MapKind::PomeauManneville => (64, 3, 2000, 0.001),
        };
        TrainConfig {
            batch_size: 64,
            epochs,
            learning_rate: lr,
            layer_width: width,
            layers_in: layers,
            layers_out: layers,
            activation,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            dropout: 0.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.layer_width == 0 {
            return Err(Error::Config("batch size and layer width must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Model layout for `variant` under these hyperparameters.
    pub fn model_config<T: Scalar>(
        &self,
        variant: Variant,
        input_dim: usize,
        target: &MapSpec<T>,
    ) -> ModelConfig<T> {
        let cfg = ModelConfig::new(
            variant,
            input_dim,
            self.layer_width,
            self.layers_in,
            self.layers_out,
            self.activation,
        );
        if variant == Variant::Pinn {
            cfg.with_target(*target)
        } else {
            cfg
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Completed,
    VanishingGradient,
    NumericalFailure,
}

impl TrainStatus {
    pub fn is_completed(self) -> bool {
        self == TrainStatus::Completed
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainStatus::Completed => "completed",
            TrainStatus::VanishingGradient => "vanishing-gradient",
            TrainStatus::NumericalFailure => "numerical-failure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub recon: f64,
    pub pred: f64,
    pub residual: f64,
    /// Largest absolute gradient component seen during the epoch.
    pub max_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: Variant,
    pub history: Vec<EpochLoss>,
    pub train_mse: f64,
    pub test_mse: f64,
    pub wall_time_s: f64,
    pub status: TrainStatus,
    pub message: Option<String>,
}

impl TrainReport {
    /// Loss curve CSV: `epoch,total,recon,pred,residual,max_grad`.
    pub fn loss_curve_csv(&self) -> String {
        use crate::num::fmt17;
        let mut s = String::from("epoch,total,recon,pred,residual,max_grad\n");
        for (i, e) in self.history.iter().enumerate() {
            s.push_str(&format!(
                "{i},{},{},{},{},{}\n",
                fmt17(e.total),
                fmt17(e.recon),
                fmt17(e.pred),
                fmt17(e.residual),
                fmt17(e.max_grad)
            ));
        }
        s
    }
}

/// Independent ChaCha stream per purpose: 1 shuffles, 2 masks training
/// dropout, 3 masks inference passes.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains `model` on a pointwise dataset.
pub fn train<T: Scalar>(
    model: &ModelConfig<T>,
    data: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    train_samples(model, &data.samples(), cfg)
}

/// Trains on arbitrary samples: `epochs` passes of shuffled mini-batches
/// over the training partition. Numerical failures and vanishing gradients
/// end training early and are reported through the status, not as errors.
pub fn train_samples<T: Scalar>(
    model: &ModelConfig<T>,
    samples: &Samples<T>,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    cfg.validate()?;
    if samples.input_dim() != model.input_dim() {
        return Err(Error::Dimension {
            expected: model.input_dim(),
            got: samples.input_dim(),
            context: "training samples",
        });
    }
    let state = ModelState::init(
        model.clone(),
        cfg.seed,
        cfg.optimizer,
        T::lit(cfg.learning_rate),
    )?;
    train_state(state, samples, cfg)
}

/// Runs the epoch loop from an existing state (fresh or resumed).
pub fn train_state<T: Scalar>(
    mut state: ModelState<T>,
    samples: &Samples<T>,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, TrainReport)> {
    cfg.validate()?;
    if samples.input_dim() != state.input_dim() {
        return Err(Error::Dimension {
            expected: state.input_dim(),
            got: samples.input_dim(),
            context: "training samples",
        });
    }
    let start = Instant::now();
    let mut shuffle_rng = stream_rng(cfg.seed, 1);
    let mut dropout_rng = stream_rng(cfg.seed, 2);
    let mask = DropoutMask::from_drop_probability(T::lit(cfg.dropout))?;

    let mut order: Vec<usize> = samples.indices(Partition::Train).collect();
    if order.is_empty() {
        return Err(Error::Config("empty training partition".into()));
    }
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut status = TrainStatus::Completed;
    let mut message = None;
    let mut quiet_epochs = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut acc = EpochLoss {
            total: 0.0,
            recon: 0.0,
            pred: 0.0,
            residual: 0.0,
            max_grad: 0.0,
        };
        for chunk in order.chunks(cfg.batch_size) {
            let batch = samples.gather(chunk);
            let drop = if mask.is_identity() {
                None
            } else {
                Some((&mask, &mut dropout_rng as &mut dyn rand::RngCore))
            };
            let step = state
                .loss_and_grads(&batch, drop)
                .and_then(|(parts, grads)| {
                    let g = grads.max_abs().as_f64();
                    state.apply_grads(&grads)?;
                    Ok((parts, g))
                });
            let (parts, g) = match step {
                Ok(v) => v,
                Err(e @ (Error::NonFinite(_) | Error::TapeConsumed)) => {
                    status = TrainStatus::NumericalFailure;
                    message = Some(format!("epoch {epoch}: {e}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            let w = chunk.len() as f64 / order.len() as f64;
            acc.total += w * parts.total.as_f64();
            acc.recon += w * parts.recon.as_f64();
            acc.pred += w * parts.pred.as_f64();
            acc.residual += w * parts.residual.as_f64();
            acc.max_grad = acc.max_grad.max(g);
        }
        history.push(acc);
        if acc.max_grad < VANISHING_THRESHOLD {
            quiet_epochs += 1;
            if quiet_epochs >= VANISHING_PATIENCE {
                status = TrainStatus::VanishingGradient;
                message = Some(format!(
                    "max |gradient| below {VANISHING_THRESHOLD:e} for {VANISHING_PATIENCE} epochs (ended at epoch {epoch})"
                ));
                break;
            }
        } else {
            quiet_epochs = 0;
        }
    }

    let (train_mse, test_mse) = if status == TrainStatus::NumericalFailure {
        (f64::NAN, f64::NAN)
    } else {
        (
            evaluate_samples(&state, samples, Partition::Train)?.as_f64(),
            evaluate_samples(&state, samples, Partition::Test)?.as_f64(),
        )
    };
    if status == TrainStatus::Completed && !(train_mse.is_finite() && test_mse.is_finite()) {
        status = TrainStatus::NumericalFailure;
        message = Some("non-finite evaluation error".into());
    }
    let report = TrainReport {
        variant: state.variant(),
        history,
        train_mse,
        test_mse,
        wall_time_s: start.elapsed().as_secs_f64(),
        status,
        message,
    };
    Ok((state, report))
}

pub fn mse<T: Scalar>(pred: &Array1<T>, truth: &Array1<T>) -> T {
    let n = T::lit(pred.len().max(1) as f64);
    (pred - truth).mapv(|e| e * e).sum() / n
}

/// Mean squared prediction error over one partition.
pub fn evaluate<T: Scalar>(state: &ModelState<T>, data: &Dataset<T>, part: Partition) -> Result<T> {
    evaluate_samples(state, &data.samples(), part)
}

pub fn evaluate_samples<T: Scalar>(
    state: &ModelState<T>,
    samples: &Samples<T>,
    part: Partition,
) -> Result<T> {
    let batch = samples.partition(part);
    if batch.is_empty() {
        return Ok(T::zero());
    }
    let pred = state.predict(batch.inputs.view())?;
    Ok(mse(&pred, &batch.targets))
}

/// One model's outcome in the sliding-window experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRun {
    pub variant: Variant,
    pub status: TrainStatus,
    pub train_mse: f64,
    pub test_mse: f64,
    /// Predictions for every window, in orbit order.
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub window: usize,
    pub length: usize,
    pub x0: f64,
    pub split_index: usize,
    /// True when the orbit reached a fixed point or repeated a value.
    pub degenerate: bool,
    /// Window inputs, `[n][window]`.
    pub inputs: Vec<Vec<f64>>,
    pub truth: Vec<f64>,
    pub runs: Vec<WindowRun>,
}

pub fn is_degenerate_orbit<T: Scalar>(orbit: &[T]) -> bool {
    orbit
        .windows(2)
        .any(|w| (w[1] - w[0]).abs() < T::lit(1e-12))
}

/// Trains each variant on sliding windows over the orbit from `x0` and
/// reports window-level forecasts. Each window size is a fresh training run.
pub fn window_experiment<T: Scalar>(
    spec: &MapSpec<T>,
    x0: T,
    window: usize,
    length: usize,
    models: &[Variant],
    cfg: &TrainConfig,
) -> Result<WindowReport> {
    let traj = orbit(spec, x0, length)?;
    let degenerate = is_degenerate_orbit(&traj);
    if degenerate {
        log::warn!("orbit from {x0} is degenerate; results will be uninformative");
    }
    let samples = window_samples(&traj, window)?;
    let mut runs = Vec::with_capacity(models.len());
    for &variant in models {
        let mcfg = cfg.model_config(variant, window, spec);
        let (state, report) = train_samples(&mcfg, &samples, cfg)?;
        let predictions = if report.status == TrainStatus::NumericalFailure {
            vec![f64::NAN; samples.len()]
        } else {
            state
                .predict(samples.inputs.view())?
                .iter()
                .map(|v| v.as_f64())
                .collect()
        };
        runs.push(WindowRun {
            variant,
            status: report.status,
            train_mse: report.train_mse,
            test_mse: report.test_mse,
            predictions,
        });
    }
    Ok(WindowReport {
        window,
        length,
        x0: x0.as_f64(),
        split_index: samples.split_index,
        degenerate,
        inputs: samples
            .inputs
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect(),
        truth: samples.targets.iter().map(|v| v.as_f64()).collect(),
        runs,
    })
}

impl WindowReport {
    /// Trace CSV: `t,split,x0..x{w-1},true,<model>...`.
    pub fn trace_csv(&self) -> String {
        use crate::num::fmt17;
        let mut s = String::from("t,split");
        for j in 0..self.window {
            s.push_str(&format!(",x{j}"));
        }
        s.push_str(",true");
        for r in &self.runs {
            s.push_str(&format!(",model{}", r.variant.number()));
        }
        s.push('\n');
        for (t, (inp, truth)) in self.inputs.iter().zip(&self.truth).enumerate() {
            let split = if t < self.split_index { "train" } else { "test" };
            s.push_str(&format!("{t},{split}"));
            for v in inp {
                s.push(',');
                s.push_str(&fmt17(*v));
            }
            s.push(',');
            s.push_str(&fmt17(*truth));
            for r in &self.runs {
                s.push(',');
                let p = r.predictions[t];
                if p.is_finite() {
                    s.push_str(&fmt17(p));
                } else {
                    s.push_str("nan");
                }
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_dataset;

    fn quick(kind: MapKind, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            layer_width: 16,
            ..TrainConfig::preset(kind)
        }
    }

    #[test]
    fn presets_match_reference_rows() {
        let l = TrainConfig::preset(MapKind::Logistic);
        assert_eq!(
            (l.batch_size, l.layer_width, l.layers_in, l.layers_out, l.epochs, l.learning_rate),
            (64, 256, 1, 1, 1000, 0.005)
        );
        assert_eq!(l.activation, Activation::Selu);
        for k in [MapKind::Custom, MapKind::KatsuraFukuda] {
            assert_eq!(TrainConfig::preset(k), l);
        }
        let d = TrainConfig::preset(MapKind::Doubling);
        assert_eq!(
            (d.batch_size, d.layer_width, d.layers_in, d.layers_out, d.epochs, d.learning_rate),
            (64, 256, 3, 3, 2000, 0.001)
        );
        assert_eq!(d.activation, Activation::Relu);
        let p = TrainConfig::preset(MapKind::PomeauManneville);
        assert_eq!(
            (p.batch_size, p.layer_width, p.layers_in, p.layers_out, p.epochs, p.learning_rate),
            (64, 64, 3, 3, 2000, 0.001)
        );
        assert_eq!(p.activation, Activation::Relu);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let spec = MapSpec::logistic(4.0);
        let data = make_dataset(&spec, 100, 1).unwrap();
        let cfg = quick(MapKind::Logistic, 0).with_seed(5);
        let mc = cfg.model_config(Variant::ConjugacyAe, 1, &spec);
        let (state, report) = train(&mc, &data, &cfg).unwrap();
        let init = ModelState::init(mc, 5, OptimizerKind::Adam, 0.005).unwrap();
        assert_eq!(state, init);
        assert!(report.history.is_empty());
        assert_eq!(report.status, TrainStatus::Completed);
    }

    #[test]
    fn reproducible_history() {
        let spec = MapSpec::<f64>::custom();
        let data = make_dataset(&spec, 120, 2).unwrap();
        let cfg = quick(MapKind::Custom, 5).with_seed(9);
        for v in Variant::ALL {
            let mc = cfg.model_config(v, 1, &spec);
            let (_, a) = train(&mc, &data, &cfg).unwrap();
            let (_, b) = train(&mc, &data, &cfg).unwrap();
            assert_eq!(a.history, b.history, "{v}");
            assert_eq!(a.test_mse.to_bits(), b.test_mse.to_bits());
            assert!(a.history[0].total.is_finite() && a.history[0].total > 0.0);
        }
    }

    #[test]
    fn evaluate_constant_model_matches_brute_force() {
        let spec = MapSpec::logistic(4.0);
        let data = make_dataset(&spec, 200, 4).unwrap();
        let mc = ModelConfig::new(Variant::Fnn, 1, 4, 1, 1, Activation::Selu);
        let mut st = ModelState::init(mc, 0, OptimizerKind::Adam, 0.005).unwrap();
        for l in &mut st.encoder.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        st.encoder.layers.last_mut().unwrap().bias.fill(0.5);
        let got = evaluate(&st, &data, Partition::Test).unwrap();
        let r = data.range(Partition::Test);
        let want: f64 = data.ys[r.clone()].iter().map(|y| (y - 0.5) * (y - 0.5)).sum::<f64>() / r.len() as f64;
        assert!((got - want).abs() < 1e-15);

        // permuting the test partition leaves the error unchanged
        let mut shuffled = data.clone();
        shuffled.xs[r.clone()].reverse();
        shuffled.ys[r.clone()].reverse();
        assert!((evaluate(&st, &shuffled, Partition::Test).unwrap() - got).abs() < 1e-15);
    }

    #[test]
    fn window_orbit_and_counting() {
        let spec = MapSpec::logistic(4.0);
        let o = orbit(&spec, 0.4, 4).unwrap();
        let want = [0.4f64, 0.96, 0.1536, 0.52002816];
        for (a, b) in o.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        let cfg = quick(MapKind::Logistic, 2);
        let rep = window_experiment(&spec, 0.4, 5, 60, &[Variant::Fnn, Variant::Pinn], &cfg).unwrap();
        assert_eq!(rep.truth.len(), 55);
        assert_eq!(rep.inputs[0][0], 0.4);
        assert_eq!(rep.runs.len(), 2);
        assert_eq!(rep.trace_csv().lines().count(), 56);
    }

    #[test]
    fn degenerate_orbit_flagged_but_runs() {
        let spec = MapSpec::logistic(4.0);
        let cfg = quick(MapKind::Logistic, 1);
        let rep = window_experiment(&spec, 0.75, 2, 30, &[Variant::Fnn], &cfg).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.truth.len(), 28);
    }
}
