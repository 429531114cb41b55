//! MC-dropout and deep-ensemble confidence intervals.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Partition, Samples};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, ModelState};
use crate::nn::DropoutMask;
use crate::num::{fmt17, Scalar};
use crate::pool::parallel_map;
use crate::train::{stream_rng, train_samples, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UqMethod {
    McDropout,
    Ensemble,
}

impl UqMethod {
    pub fn name(self) -> &'static str {
        match self {
            UqMethod::McDropout => "mc-dropout",
            UqMethod::Ensemble => "ensemble",
        }
    }
}

/// Divisor used for the spread estimate: `n` (population) or `n - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StdEstimator {
    #[default]
    Population,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqConfig {
    pub method: UqMethod,
    pub passes: usize,
    pub ensemble_size: usize,
    /// Drop probability for the stochastic passes.
    pub dropout_p: f64,
    pub z_value: f64,
    #[serde(default)]
    pub estimator: StdEstimator,
    /// Seed for the dropout masks.
    #[serde(default)]
    pub seed: u64,
}

pub const Z_95: f64 = 1.96;

impl UqConfig {
    pub fn mc_dropout(passes: usize, dropout_p: f64) -> Self {
        UqConfig {
            method: UqMethod::McDropout,
            passes,
            ensemble_size: 0,
            dropout_p,
            z_value: Z_95,
            estimator: StdEstimator::Population,
            seed: 0,
        }
    }

    pub fn ensemble(ensemble_size: usize) -> Self {
        UqConfig {
            method: UqMethod::Ensemble,
            passes: 0,
            ensemble_size,
            dropout_p: 0.0,
            z_value: Z_95,
            estimator: StdEstimator::Population,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            UqMethod::McDropout if self.passes < 2 => {
                return Err(Error::Config(format!("MC dropout needs >= 2 passes, got {}", self.passes)))
            }
            UqMethod::Ensemble if self.ensemble_size < 2 => {
                return Err(Error::Config(format!(
                    "ensemble needs >= 2 members, got {}",
                    self.ensemble_size
                )))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        if !(self.z_value >= 0.0 && self.z_value.is_finite()) {
            return Err(Error::Config(format!("bad z value {}", self.z_value)));
        }
        Ok(())
    }
}

/// Per-point mean, spread and interval for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub method: UqMethod,
    pub x: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Average of `upper - lower` over all points.
    pub mean_width: f64,
    /// Number of prediction sets aggregated (passes or surviving members).
    pub members: usize,
}

impl PredictionSummary {
    /// Reduces `draws` (one prediction vector per pass or member) pointwise.
    pub fn from_draws(
        method: UqMethod,
        x: Vec<f64>,
        truth: Vec<f64>,
        draws: &[Vec<f64>],
        z_value: f64,
        estimator: StdEstimator,
    ) -> Result<Self> {
        let m = draws.len();
        if m < 2 {
            return Err(Error::InsufficientEnsemble { survivors: m });
        }
        let n = x.len();
        if truth.len() != n || draws.iter().any(|d| d.len() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: draws.iter().map(Vec::len).find(|&l| l != n).unwrap_or(truth.len()),
                context: "uncertainty draws",
            });
        }
        let div = match estimator {
            StdEstimator::Population => m as f64,
            StdEstimator::Sample => (m - 1) as f64,
        };
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for i in 0..n {
            // shifted by the first draw so identical draws give exactly 0
            let base = draws[0][i];
            let shift = draws.iter().map(|d| d[i] - base).sum::<f64>() / m as f64;
            let mu = base + shift;
            let var = draws
                .iter()
                .map(|d| (d[i] - base - shift).powi(2))
                .sum::<f64>()
                / div;
            mean[i] = mu;
            std[i] = var.sqrt();
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("uncertainty summary"));
        }
        let lower: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m - z_value * s).collect();
        let upper: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + z_value * s).collect();
        let mean_width = if n == 0 {
            0.0
        } else {
            upper.iter().zip(&lower).map(|(u, l)| u - l).sum::<f64>() / n as f64
        };
        Ok(PredictionSummary {
            method,
            x,
            truth,
            mean,
            std,
            lower,
            upper,
            mean_width,
            members: m,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV with header `x,true,mean,std,lower,upper`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for i in 0..self.len() {
            let row = [
                self.x[i],
                self.truth[i],
                self.mean[i],
                self.std[i],
                self.lower[i],
                self.upper[i],
            ];
            wr.write_record(row.iter().map(|v| fmt17(*v)))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, method: UqMethod, members: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Config(format!("unexpected summary header {headers:?}")));
        }
        let mut cols: [Vec<f64>; 6] = Default::default();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::Config("summary row must have 6 fields".into()));
            }
            for (col, field) in cols.iter_mut().zip(rec.iter()) {
                col.push(
                    field
                        .parse()
                        .map_err(|e| Error::Config(format!("bad number {field:?}: {e}")))?,
                );
            }
        }
        let [x, truth, mean, std, lower, upper] = cols;
        let n = x.len();
        let mean_width = if n == 0 {
            0.0
        } else {
            upper.iter().zip(&lower).map(|(u, l)| u - l).sum::<f64>() / n as f64
        };
        Ok(PredictionSummary {
            method,
            x,
            truth,
            mean,
            std,
            lower,
            upper,
            mean_width,
            members,
        })
    }

    /// Sidecar metadata: configuration and aggregate widths.
    pub fn sidecar(&self, cfg: &UqConfig, extra: serde_json::Value) -> serde_json::Value {
        let max_width = self
            .upper
            .iter()
            .zip(&self.lower)
            .map(|(u, l)| u - l)
            .fold(0.0, f64::max);
        serde_json::json!({
            "method": self.method.name(),
            "config": cfg,
            "points": self.len(),
            "members": self.members,
            "mean_width": self.mean_width,
            "max_width": max_width,
            "extra": extra,
        })
    }
}

const CSV_HEADER: [&str; 6] = ["x", "true", "mean", "std", "lower", "upper"];

/// The value plotted on the horizontal axis: the input itself for scalar
/// inputs, the most recent orbit value for windows.
fn abscissa<T: Scalar>(samples: &Samples<T>, idx: usize) -> f64 {
    samples.inputs[[idx, samples.input_dim() - 1]].as_f64()
}

fn test_axis<T: Scalar>(samples: &Samples<T>) -> (Vec<f64>, Vec<f64>) {
    samples
        .indices(Partition::Test)
        .map(|i| (abscissa(samples, i), samples.targets[i].as_f64()))
        .unzip()
}

/// `passes` stochastic forwards over the test partition with fresh masks
/// on every hidden layer.
pub fn mc_dropout_summary<T: Scalar>(
    state: &ModelState<T>,
    data: &Dataset<T>,
    cfg: &UqConfig,
) -> Result<PredictionSummary> {
    mc_dropout_summary_samples(state, &data.samples(), cfg)
}

pub fn mc_dropout_summary_samples<T: Scalar>(
    state: &ModelState<T>,
    samples: &Samples<T>,
    cfg: &UqConfig,
) -> Result<PredictionSummary> {
    if cfg.method != UqMethod::McDropout {
        return Err(Error::Config("mc_dropout_summary needs method mc-dropout".into()));
    }
    cfg.validate()?;
    let test = samples.partition(Partition::Test);
    let mask = DropoutMask::from_drop_probability(T::lit(cfg.dropout_p))?;
    let mut rng = stream_rng(cfg.seed, 3);
    let mut draws = Vec::with_capacity(cfg.passes);
    for _ in 0..cfg.passes {
        let p = state.predict_stochastic(test.inputs.view(), &mask, &mut rng)?;
        draws.push(p.iter().map(|v| v.as_f64()).collect());
    }
    let (x, truth) = test_axis(samples);
    PredictionSummary::from_draws(UqMethod::McDropout, x, truth, &draws, cfg.z_value, cfg.estimator)
}

/// Deterministic test-set predictions of already trained members.
pub fn members_summary<T: Scalar>(
    states: &[ModelState<T>],
    samples: &Samples<T>,
    cfg: &UqConfig,
) -> Result<PredictionSummary> {
    let test = samples.partition(Partition::Test);
    let draws = states
        .iter()
        .map(|s| Ok(s.predict(test.inputs.view())?.iter().map(|v| v.as_f64()).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let (x, truth) = test_axis(samples);
    PredictionSummary::from_draws(UqMethod::Ensemble, x, truth, &draws, cfg.z_value, cfg.estimator)
}

#[derive(Debug, Clone)]
pub struct EnsembleOutcome<T> {
    pub summary: PredictionSummary,
    pub members: Vec<ModelState<T>>,
    pub reports: Vec<(u64, TrainReport)>,
    /// Seeds whose training did not complete.
    pub excluded: Vec<u64>,
}

/// Trains one member per seed (in parallel, bounded by `workers`), drops
/// members that did not complete and summarizes the rest.
pub fn ensemble_summary<T: Scalar>(
    seeds: &[u64],
    model: &ModelConfig<T>,
    data: &Dataset<T>,
    train_cfg: &TrainConfig,
    cfg: &UqConfig,
    workers: usize,
) -> Result<EnsembleOutcome<T>> {
    ensemble_summary_samples(seeds, model, &data.samples(), train_cfg, cfg, workers)
}

pub fn ensemble_summary_samples<T: Scalar>(
    seeds: &[u64],
    model: &ModelConfig<T>,
    samples: &Samples<T>,
    train_cfg: &TrainConfig,
    cfg: &UqConfig,
    workers: usize,
) -> Result<EnsembleOutcome<T>> {
    if cfg.method != UqMethod::Ensemble {
        return Err(Error::Config("ensemble_summary needs method ensemble".into()));
    }
    if seeds.len() != cfg.ensemble_size {
        return Err(Error::Config(format!(
            "{} seeds for an ensemble of {}",
            seeds.len(),
            cfg.ensemble_size
        )));
    }
    cfg.validate()?;
    let runs = parallel_map(seeds, workers, |&seed| {
        train_samples(model, samples, &train_cfg.clone().with_seed(seed))
    });
    let mut members = Vec::new();
    let mut reports = Vec::new();
    let mut excluded = Vec::new();
    for (&seed, run) in seeds.iter().zip(runs) {
        let (state, report) = run?;
        if report.status.is_completed() {
            members.push(state);
        } else {
            log::warn!("ensemble member {seed} excluded: {:?}", report.status);
            excluded.push(seed);
        }
        reports.push((seed, report));
    }
    if members.len() < 2 {
        return Err(Error::InsufficientEnsemble {
            survivors: members.len(),
        });
    }
    let summary = members_summary(&members, samples, cfg)?;
    Ok(EnsembleOutcome {
        summary,
        members,
        reports,
        excluded,
    })
}
