//! Soft and hard thresholding of amplitude spectra with per-channel thresholds
//! derived from the largest magnitude in each channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::Planes;

/// Upper bound on the threshold fraction `alpha`.
pub const MAX_ALPHA: f64 = 0.05;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Soft,
    Hard,
}

/// Thresholding operator plus the fraction of the channel maximum used as `T`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSpec<T> {
    mode: ThresholdMode,
    alpha: T,
}

impl<T: Scalar> ThresholdSpec<T> {
    pub fn new(mode: ThresholdMode, alpha: T) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(ThresholdSpec { mode, alpha })
    }

    pub fn soft(alpha: T) -> Result<Self> {
        Self::new(ThresholdMode::Soft, alpha)
    }

    pub fn hard(alpha: T) -> Result<Self> {
        Self::new(ThresholdMode::Hard, alpha)
    }

    pub fn mode(&self) -> ThresholdMode {
        self.mode
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn apply_scalar(&self, x: T, threshold: T) -> Result<T> {
        match self.mode {
            ThresholdMode::Soft => soft_threshold(x, threshold),
            ThresholdMode::Hard => hard_threshold(x, threshold),
        }
    }
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    // NaN fails both comparisons.
    if !(alpha >= T::zero() && alpha <= T::of(MAX_ALPHA)) {
        return Err(Error::invalid(
            "alpha",
            format!("{alpha} is outside [0, {MAX_ALPHA}]"),
        ));
    }
    Ok(())
}

fn check_threshold<T: Scalar>(threshold: T) -> Result<()> {
    if !(threshold >= T::zero()) {
        return Err(Error::invalid(
            "threshold",
            format!("{threshold} must be non-negative"),
        ));
    }
    Ok(())
}

/// Shrinks `x` toward zero by `threshold`; `|x| <= threshold` maps to zero.
pub fn soft_threshold<T: Scalar>(x: T, threshold: T) -> Result<T> {
    check_threshold(threshold)?;
    Ok(if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        T::zero()
    })
}

/// Keeps `x` when `|x| >= threshold`, otherwise zero.
pub fn hard_threshold<T: Scalar>(x: T, threshold: T) -> Result<T> {
    check_threshold(threshold)?;
    Ok(if x.abs() >= threshold { x } else { T::zero() })
}

/// `alpha * max(amp[c])` for each channel `c`.
pub fn dynamic_threshold<T: Scalar>(amp: &Planes<T>, alpha: T) -> Result<Vec<T>> {
    check_alpha(alpha)?;
    if amp.data().is_empty() {
        return Err(Error::Empty("amplitude plane"));
    }
    if amp.data().iter().any(|v| *v < T::zero()) {
        return Err(Error::invalid("amplitude", "contains negative values"));
    }
    Ok((0..amp.channels())
        .map(|c| {
            let max = amp.channel(c).iter().fold(T::zero(), |m, &v| m.max(v));
            alpha * max
        })
        .collect())
}

/// Element-wise thresholding of an amplitude plane with per-channel thresholds
/// from [`dynamic_threshold`].
pub fn apply_threshold<T: Scalar>(amp: &Planes<T>, spec: &ThresholdSpec<T>) -> Result<Planes<T>> {
    let thresholds = dynamic_threshold(amp, spec.alpha)?;
    let plane = amp.shape().plane_len();
    let data = amp
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| spec.apply_scalar(v, thresholds[i / plane]))
        .collect::<Result<Vec<_>>>()?;
    Planes::new(amp.shape(), data)
}
