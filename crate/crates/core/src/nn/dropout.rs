use ndarray::Array2;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Inverted dropout: each unit is kept with probability `p_keep` and kept
/// activations are divided by `p_keep`, so the expected activation is
/// unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutMask<T> {
    pub p_keep: T,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn new(p_keep: T) -> Result<Self> {
        if !(p_keep > T::zero() && p_keep <= T::one()) {
            return Err(Error::Config(format!("p_keep {p_keep} must lie in (0, 1]")));
        }
        Ok(DropoutMask { p_keep })
    }

    /// From a drop probability `p` in `[0, 1)`.
    pub fn from_drop_probability(p: T) -> Result<Self> {
        if !(p >= T::zero() && p < T::one()) {
            return Err(Error::Config(format!("dropout probability {p} must lie in [0, 1)")));
        }
        Self::new(T::one() - p)
    }

    pub fn is_identity(&self) -> bool {
        self.p_keep == T::one()
    }

    /// Draws a scaled keep-mask, or `None` when the mask is the identity.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R, dim: (usize, usize)) -> Option<Array2<T>> {
        if self.is_identity() {
            return None;
        }
        let keep = self.p_keep.as_f64();
        let scale = T::one() / self.p_keep;
        Some(Array2::from_shape_fn(dim, |_| {
            if rng.gen::<f64>() < keep {
                scale
            } else {
                T::zero()
            }
        }))
    }
}
