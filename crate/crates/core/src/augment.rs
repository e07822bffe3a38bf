//! Cross-domain image synthesis by mixing a foreign amplitude spectrum into
//! the low-frequency band of a source image while keeping the source phase.
//!
//! The pipeline per image: forward DFT, split into amplitude and phase,
//! threshold the target amplitude with `T = alpha * max`, mix inside the
//! low-frequency mask, recombine with the source phase, inverse DFT, clamp.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{
    ensure_same_shape, forward_dft, inverse_dft_with_residue, recompose, Image, Planes,
};
use crate::threshold::{apply_threshold, ThresholdSpec};

pub const DEFAULT_BETA: f64 = 0.1;

/// Binary low-frequency selector over unshifted `H x W` frequency indices.
///
/// A bin is set when its signed frequency `(du, dv)` (the offset from DC after
/// an fftshift) satisfies `|du| <= beta * H / 2` and `|dv| <= beta * W / 2`.
/// The predicate depends on `|du|` and `|dv|` only, so the mask is symmetric
/// under `(u, v) -> (-u, -v) mod (H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    height: usize,
    width: usize,
    beta: f64,
    bits: Vec<bool>,
}

/// Offset of unshifted index `u` from DC, in `[-n/2, (n - 1)/2]`.
pub fn signed_frequency(u: usize, n: usize) -> isize {
    if u < n.div_ceil(2) {
        u as isize
    } else {
        u as isize - n as isize
    }
}

impl FrequencyMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.width + v]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Mask with every bin set or every bin cleared.
    pub fn uniform(height: usize, width: usize, value: bool) -> Self {
        FrequencyMask {
            height,
            width,
            beta: if value { 1.0 } else { 0.0 },
            bits: vec![value; height * width],
        }
    }
}

/// Builds the centered low-frequency band mask for a `height x width` spectrum.
pub fn make_low_freq_mask(height: usize, width: usize, beta: f64) -> Result<FrequencyMask> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid("beta", format!("{beta} is outside (0, 1]")));
    }
    if height == 0 || width == 0 {
        return Err(Error::EmptyDimension {
            channels: 1,
            height,
            width,
        });
    }
    let reach_u = beta * height as f64 / 2.0;
    let reach_v = beta * width as f64 / 2.0;
    let mut bits = Vec::with_capacity(height * width);
    for u in 0..height {
        let du = signed_frequency(u, height).unsigned_abs() as f64;
        for v in 0..width {
            let dv = signed_frequency(v, width).unsigned_abs() as f64;
            bits.push(du <= reach_u && dv <= reach_v);
        }
    }
    Ok(FrequencyMask {
        height,
        width,
        beta,
        bits,
    })
}

/// How the untouched region outside the mask is treated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixVariant {
    /// `(1 - l) A (1 - M) + l Thr(A~) M`: the out-of-band source amplitude is
    /// scaled by `1 - l` as well.
    #[default]
    #[serde(rename = "literal")]
    Literal,
    /// `A (1 - M) + [(1 - l) A + l Thr(A~)] M`: only the band is interpolated.
    #[serde(rename = "preserve-outside-mask")]
    PreserveOutsideMask,
}

impl std::str::FromStr for MixVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(MixVariant::Literal),
            "preserve-outside-mask" => Ok(MixVariant::PreserveOutsideMask),
            other => Err(Error::invalid("mix_variant", format!("unknown variant `{other}`"))),
        }
    }
}

fn check_lambda<T: Scalar>(lambda: T) -> Result<()> {
    if !(lambda > T::zero() && lambda <= T::one()) {
        return Err(Error::invalid("lambda", format!("{lambda} is outside (0, 1]")));
    }
    Ok(())
}

fn check_mask<T: Scalar>(amp: &Planes<T>, mask: &FrequencyMask) -> Result<()> {
    if amp.height() != mask.height || amp.width() != mask.width {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs spectrum {}",
            mask.height,
            mask.width,
            amp.shape()
        )));
    }
    Ok(())
}

/// Mixes the (optionally thresholded) target amplitude into the masked band of
/// the source amplitude. `threshold = None` mixes the raw target amplitude.
pub fn mix_amplitudes<T: Scalar>(
    source: &Planes<T>,
    target: &Planes<T>,
    lambda: T,
    mask: &FrequencyMask,
    threshold: Option<&ThresholdSpec<T>>,
    variant: MixVariant,
) -> Result<Planes<T>> {
    ensure_same_shape(source.shape(), target.shape())?;
    check_mask(source, mask)?;
    check_lambda(lambda)?;
    let filtered = match threshold {
        Some(spec) => apply_threshold(target, spec)?,
        None => target.clone(),
    };
    let plane = source.shape().plane_len();
    let keep = T::one() - lambda;
    let data = source
        .data()
        .iter()
        .zip(filtered.data())
        .enumerate()
        .map(|(i, (&a, &t))| {
            let inside = mask.bits[i % plane];
            match (variant, inside) {
                (MixVariant::Literal, true) => lambda * t,
                (MixVariant::Literal, false) => keep * a,
                (MixVariant::PreserveOutsideMask, true) => keep * a + lambda * t,
                (MixVariant::PreserveOutsideMask, false) => a,
            }
        })
        .collect();
    Planes::new(source.shape(), data)
}

/// Hyperparameters of one synthesis call.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentParams<T> {
    pub lambda: T,
    pub threshold: Option<ThresholdSpec<T>>,
    pub mask: FrequencyMask,
    pub variant: MixVariant,
}

impl<T: Scalar> AugmentParams<T> {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)
    }
}

/// Runs the synthesis pipeline without the final clamp. Returns the image and
/// the imaginary residue discarded by the inverse transform.
pub fn synthesize<T: Scalar>(
    source: &Image<T>,
    target_amplitude: &Planes<T>,
    params: &AugmentParams<T>,
) -> Result<(Image<T>, T)> {
    params.validate()?;
    ensure_same_shape(source.shape(), target_amplitude.shape())?;
    let (amplitude, phase) = forward_dft(source)?.into_parts();
    let mixed = mix_amplitudes(
        &amplitude,
        target_amplitude,
        params.lambda,
        &params.mask,
        params.threshold.as_ref(),
        params.variant,
    )?;
    inverse_dft_with_residue(&recompose(&mixed, &phase)?)
}

/// Synthesizes a new image from `source` and a foreign amplitude spectrum,
/// clamped to `[0, 1]`.
pub fn generate_augmented<T: Scalar>(
    source: &Image<T>,
    target_amplitude: &Planes<T>,
    params: &AugmentParams<T>,
) -> Result<Image<T>> {
    let (img, _) = synthesize(source, target_amplitude, params)?;
    Ok(img.clamped(T::zero(), T::one()))
}

/// Uniform draw from `(0, 1]`.
pub fn sample_lambda<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    T::of(1.0 - rng.random::<f64>())
}
