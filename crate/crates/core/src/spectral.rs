//! Per-channel 2D discrete Fourier transform and the amplitude/phase view of
//! a spectrum.
//!
//! Spectra are kept unshifted: the DC bin sits at index `(0, 0)` of every
//! channel. Frequency-centered views only appear in [`crate::augment`] where the
//! low-frequency mask is built.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft::{transform_2d, Direction};
use crate::scalar::Scalar;

/// Dimensions of a `C x H x W` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.plane_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDimension {
                channels: self.channels,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Real-valued `C x H x W` tensor stored row-major in `(c, h, w)` order.
///
/// Used for images as well as amplitude and phase planes. Every value is
/// finite and no dimension is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes<T> {
    shape: Shape,
    data: Vec<T>,
}

/// An image is a tensor of pixel values, nominally in `[0, 1]`.
pub type Image<T> = Planes<T>;

impl<T: Scalar> Planes<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values supplied for shape {shape}",
                data.len()
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Planes { shape, data })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for h in 0..shape.height {
                for w in 0..shape.width {
                    data.push(f(c, h, w));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, c: usize, h: usize, w: usize) -> T {
        self.data[(c * self.shape.height + h) * self.shape.width + w]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.shape.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Clamps every value into `[lo, hi]`.
    pub fn clamped(&self, lo: T, hi: T) -> Self {
        Planes {
            shape: self.shape,
            data: self.data.iter().map(|&v| v.max(lo).min(hi)).collect(),
        }
    }

    /// Largest absolute element-wise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        ensure_same_shape(self.shape, other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())))
    }

    pub fn cast<U: Scalar>(&self) -> Planes<U> {
        Planes {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

pub(crate) fn ensure_same_shape(a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{a} vs {b}")));
    }
    Ok(())
}

/// Frequency representation of an image as paired amplitude and phase planes.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    amplitude: Planes<T>,
    phase: Planes<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn amplitude(&self) -> &Planes<T> {
        &self.amplitude
    }

    pub fn phase(&self) -> &Planes<T> {
        &self.phase
    }

    pub fn shape(&self) -> Shape {
        self.amplitude.shape
    }

    pub fn into_parts(self) -> (Planes<T>, Planes<T>) {
        (self.amplitude, self.phase)
    }

    /// Complex coefficients `A * exp(+jP)` in `(c, u, v)` order.
    pub fn to_complex(&self) -> Vec<Complex<T>> {
        self.amplitude
            .data
            .iter()
            .zip(&self.phase.data)
            .map(|(&a, &p)| Complex::from_polar(a, p))
            .collect()
    }

    /// Polar decomposition of complex coefficients; phase lies in `(-pi, pi]`.
    pub fn from_complex(shape: Shape, coefficients: &[Complex<T>]) -> Result<Self> {
        shape.validate()?;
        if coefficients.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for shape {shape}",
                coefficients.len()
            )));
        }
        let amplitude = coefficients.iter().map(|z| z.norm()).collect();
        let phase = coefficients
            .iter()
            .map(|z| {
                let p = z.arg();
                if p <= -T::PI() {
                    T::PI()
                } else {
                    p
                }
            })
            .collect();
        Ok(Spectrum {
            amplitude: Planes::new(shape, amplitude)?,
            phase: Planes::new(shape, phase)?,
        })
    }
}

fn image_to_complex<T: Scalar>(img: &Image<T>) -> Vec<Complex<T>> {
    img.data.iter().map(|&v| Complex::new(v, T::zero())).collect()
}

/// Unnormalized forward transform of every channel, as complex coefficients.
pub fn forward_dft_complex<T: Scalar>(img: &Image<T>) -> Result<Vec<Complex<T>>> {
    let shape = img.shape();
    shape.validate()?;
    let mut buf = image_to_complex(img);
    for plane in buf.chunks_exact_mut(shape.plane_len()) {
        transform_2d(plane, shape.height, shape.width, Direction::Forward);
    }
    Ok(buf)
}

/// Per-channel 2D DFT of `img`, decomposed into amplitude and phase.
pub fn forward_dft<T: Scalar>(img: &Image<T>) -> Result<Spectrum<T>> {
    let coefficients = forward_dft_complex(img)?;
    Spectrum::from_complex(img.shape(), &coefficients)
}

/// Normalized inverse transform of complex coefficients. Returns the real part
/// together with the largest absolute imaginary residue.
pub fn inverse_dft_complex<T: Scalar>(
    shape: Shape,
    coefficients: &[Complex<T>],
) -> Result<(Image<T>, T)> {
    shape.validate()?;
    if coefficients.len() != shape.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for shape {shape}",
            coefficients.len()
        )));
    }
    let mut buf = coefficients.to_vec();
    let scale = T::one() / T::of_usize(shape.plane_len());
    let mut residue = T::zero();
    let mut data = Vec::with_capacity(shape.len());
    for plane in buf.chunks_exact_mut(shape.plane_len()) {
        transform_2d(plane, shape.height, shape.width, Direction::Inverse);
        for z in plane.iter() {
            residue = residue.max((z.im * scale).abs());
            data.push(z.re * scale);
        }
    }
    Ok((Image::new(shape, data)?, residue))
}

/// Inverse DFT of `spec` with the imaginary residue reported alongside.
pub fn inverse_dft_with_residue<T: Scalar>(spec: &Spectrum<T>) -> Result<(Image<T>, T)> {
    ensure_same_shape(spec.amplitude.shape, spec.phase.shape)?;
    inverse_dft_complex(spec.shape(), &spec.to_complex())
}

/// Real part of the normalized per-channel inverse DFT.
pub fn inverse_dft<T: Scalar>(spec: &Spectrum<T>) -> Result<Image<T>> {
    inverse_dft_with_residue(spec).map(|(img, _)| img)
}

/// Pairs an amplitude plane with a phase plane. Negative amplitudes are
/// clamped to zero.
pub fn recompose<T: Scalar>(amplitude: &Planes<T>, phase: &Planes<T>) -> Result<Spectrum<T>> {
    ensure_same_shape(amplitude.shape, phase.shape)?;
    Ok(Spectrum {
        amplitude: amplitude.clamped(T::zero(), T::infinity()),
        phase: phase.clone(),
    })
}
