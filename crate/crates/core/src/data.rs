//! Seeded datasets, train/test splits and their CSV form.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::maps::MapSpec;
use crate::models::Batch;
use crate::num::{fmt17, Scalar};

/// Fraction of samples assigned to the training partition (rounded down).
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn split_index(n: usize) -> usize {
    (n as f64 * TRAIN_FRACTION).floor() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    Train,
    Test,
}

/// `(x, U(x))` pairs sampled uniformly on `[0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub xs: Vec<T>,
    pub ys: Vec<T>,
    pub split_index: usize,
    pub seed: u64,
    pub source: MapSpec<T>,
}

pub fn make_dataset<T: Scalar>(spec: &MapSpec<T>, n: usize, seed: u64) -> Result<Dataset<T>> {
    Dataset::generate(spec, n, seed)
}

impl<T: Scalar> Dataset<T> {
    pub const MIN_LEN: usize = 10;

    pub fn generate(spec: &MapSpec<T>, n: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n < Self::MIN_LEN {
            return Err(Error::Config(format!(
                "dataset needs at least {} samples, got {n}",
                Self::MIN_LEN
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs: Vec<T> = (0..n).map(|_| T::lit(rng.gen::<f64>())).collect();
        xs.shuffle(&mut rng);
        let ys = xs.iter().map(|&x| spec.apply(x)).collect();
        Ok(Dataset {
            xs,
            ys,
            split_index: split_index(n),
            seed,
            source: *spec,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn range(&self, part: Partition) -> std::ops::Range<usize> {
        match part {
            Partition::Train => 0..self.split_index,
            Partition::Test => self.split_index..self.len(),
        }
    }

    pub fn samples(&self) -> Samples<T> {
        let n = self.len();
        Samples {
            inputs: Array2::from_shape_vec((n, 1), self.xs.clone()).expect("n x 1"),
            targets: Array1::from(self.ys.clone()),
            recon_inputs: Array2::from_shape_vec((n, 1), self.ys.clone()).expect("n x 1"),
            split_index: self.split_index,
        }
    }

    /// CSV with header `x,ux`, 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "ux"])?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            wr.write_record([fmt17(x.as_f64()), fmt17(y.as_f64())])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads `x,ux` rows; the split follows the standard 80/20 rule and
    /// `ys` is recomputed from `source` to guarantee exact targets.
    pub fn read_csv<R: Read>(r: R, source: MapSpec<T>, seed: u64) -> Result<Self> {
        let pairs = read_xy_csv(r)?;
        let xs: Vec<T> = pairs.iter().map(|p| T::lit(p.0)).collect();
        let ys: Vec<T> = xs.iter().map(|&x| source.apply(x)).collect();
        for (i, (y, p)) in ys.iter().zip(&pairs).enumerate() {
            if (y.as_f64() - p.1).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "row {i}: ux {} does not match {source} at x = {}",
                    p.1, p.0
                )));
            }
        }
        Ok(Dataset {
            split_index: split_index(xs.len()),
            xs,
            ys,
            seed,
            source,
        })
    }
}

pub fn read_xy_csv<R: Read>(r: R) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["x", "ux"] {
        return Err(Error::Config(format!("expected header `x,ux`, got {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| Error::Config("short csv row".into()))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number: {e}")))
        };
        out.push((parse(0)?, parse(1)?));
    }
    Ok(out)
}

/// Model-ready samples: inputs `[n x d]`, scalar targets, reconstruction
/// inputs `[n x d]` and the train/test boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub inputs: Array2<T>,
    pub targets: Array1<T>,
    pub recon_inputs: Array2<T>,
    pub split_index: usize,
}

impl<T: Scalar> Samples<T> {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn indices(&self, part: Partition) -> std::ops::Range<usize> {
        match part {
            Partition::Train => 0..self.split_index,
            Partition::Test => self.split_index..self.len(),
        }
    }

    pub fn gather(&self, idx: &[usize]) -> Batch<T> {
        Batch {
            inputs: self.inputs.select(Axis(0), idx),
            targets: self.targets.select(Axis(0), idx),
            recon_inputs: self.recon_inputs.select(Axis(0), idx),
        }
    }

    pub fn partition(&self, part: Partition) -> Batch<T> {
        let idx: Vec<usize> = self.indices(part).collect();
        self.gather(&idx)
    }
}

/// Sliding windows over an orbit: window `t` holds `x_t..x_{t+w-1}` and
/// predicts `x_{t+w}`; its reconstruction input is the successor window
/// `x_{t+1}..x_{t+w}`, whose last element is the target. The split is
/// chronological.
pub fn window_samples<T: Scalar>(orbit: &[T], window: usize) -> Result<Samples<T>> {
    if window == 0 || orbit.len() <= window {
        return Err(Error::Config(format!(
            "orbit of length {} too short for window {window}",
            orbit.len()
        )));
    }
    let n = orbit.len() - window;
    let inputs = Array2::from_shape_fn((n, window), |(t, j)| orbit[t + j]);
    let recon_inputs = Array2::from_shape_fn((n, window), |(t, j)| orbit[t + j + 1]);
    let targets = Array1::from_shape_fn(n, |t| orbit[t + window]);
    Ok(Samples {
        inputs,
        targets,
        recon_inputs,
        split_index: split_index(n),
    })
}
