//! Per-pixel logistic segmentation model over a small hand-built feature set.
//!
//! Features at pixel `p` are the raw channel values followed by the 3x3 mean
//! of each channel (edge replicated). Parameters are laid out as
//! `[w_raw(C), w_mean(C), bias]`, so `D = 2C + 1`.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binary::BinaryMask;
use crate::error::{Error, Result};
use crate::io_util::{read_array, read_f64, read_u16, read_u32};
use crate::scalar::Scalar;
use crate::spectral::Image;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FDGM";
pub const CHECKPOINT_VERSION: u16 = 1;
pub const DEFAULT_LR: f64 = 0.5;
/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the log loss.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    weights: Vec<T>,
}

pub fn param_dim(channels: usize) -> usize {
    2 * channels + 1
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if weights.len() < 3 || weights.len().is_multiple_of(2) {
            return Err(Error::invalid(
                "weights",
                format!("length {} is not 2C + 1 for some C >= 1", weights.len()),
            ));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(ModelParams { weights })
    }

    pub fn zeros(channels: usize) -> Self {
        ModelParams {
            weights: vec![T::zero(); param_dim(channels)],
        }
    }

    /// Small uniform weights in `[-0.01, 0.01]` drawn from `seed`.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelParams {
            weights: (0..param_dim(channels))
                .map(|_| T::of(rng.random_range(-0.01..=0.01)))
                .collect(),
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn channels(&self) -> usize {
        (self.weights.len() - 1) / 2
    }

    pub fn distance_sq(&self, other: &Self) -> T {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(10 + 8 * self.dim());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for w in &self.weights {
            buf.extend_from_slice(&w.as_f64().to_le_bytes());
        }
        buf
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&self.to_bytes())
            .map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        const FORMAT: &str = "model checkpoint";
        let magic: [u8; 4] = read_array(&mut input, FORMAT)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: format!("bad magic {magic:?}"),
            });
        }
        let version = read_u16(&mut input, FORMAT)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Malformed {
                format: FORMAT,
                reason: format!("unsupported version {version}"),
            });
        }
        let dim = read_u32(&mut input, FORMAT)? as usize;
        let weights = (0..dim)
            .map(|_| read_f64(&mut input, FORMAT).map(T::of))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(bytes.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> GradVector<T> {
    pub fn new(values: Vec<T>) -> Self {
        GradVector { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Per-pixel feature planes, stored feature-major: `data[f * pixels + p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Features<T> {
    height: usize,
    width: usize,
    count: usize,
    data: Vec<T>,
}

impl<T: Scalar> Features<T> {
    /// Wraps precomputed planes laid out feature-major.
    pub fn new(height: usize, width: usize, count: usize, data: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || count == 0 || data.len() != height * width * count {
            return Err(Error::ShapeMismatch(format!(
                "{} feature values for {count} planes of {height}x{width}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Features {
            height,
            width,
            count,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Number of features per pixel, excluding the bias.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn plane(&self, f: usize) -> &[T] {
        let n = self.pixels();
        &self.data[f * n..(f + 1) * n]
    }

    pub fn at(&self, f: usize, pixel: usize) -> T {
        self.data[f * self.pixels() + pixel]
    }
}

pub fn featurize<T: Scalar>(img: &Image<T>) -> Features<T> {
    let (c_n, h_n, w_n) = (img.channels(), img.height(), img.width());
    let mut data = Vec::with_capacity(2 * img.shape().len());
    data.extend_from_slice(img.data());
    let ninth = T::one() / T::of(9.0);
    for c in 0..c_n {
        let plane = img.channel(c);
        for h in 0..h_n {
            for w in 0..w_n {
                let mut sum = T::zero();
                for dh in [-1isize, 0, 1] {
                    let hh = (h as isize + dh).clamp(0, h_n as isize - 1) as usize;
                    for dw in [-1isize, 0, 1] {
                        let ww = (w as isize + dw).clamp(0, w_n as isize - 1) as usize;
                        sum += plane[hh * w_n + ww];
                    }
                }
                data.push(sum * ninth);
            }
        }
    }
    Features {
        height: h_n,
        width: w_n,
        count: 2 * c_n,
        data,
    }
}

fn check_dim<T: Scalar>(params: &ModelParams<T>, features: &Features<T>) -> Result<()> {
    if params.dim() != features.count + 1 {
        return Err(Error::DimensionMismatch {
            expected: features.count + 1,
            got: params.dim(),
        });
    }
    Ok(())
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

fn logits<T: Scalar>(params: &ModelParams<T>, features: &Features<T>) -> Vec<T> {
    let bias = params.weights[features.count];
    let mut z = vec![bias; features.pixels()];
    for f in 0..features.count {
        let w = params.weights[f];
        for (zp, x) in z.iter_mut().zip(features.plane(f)) {
            *zp += w * *x;
        }
    }
    z
}

pub fn predict_features<T: Scalar>(params: &ModelParams<T>, features: &Features<T>) -> Result<Vec<T>> {
    check_dim(params, features)?;
    Ok(logits(params, features).into_iter().map(sigmoid).collect())
}

/// Foreground probability `sigmoid(w . f(p) + b)` for every pixel, row-major.
pub fn predict<T: Scalar>(params: &ModelParams<T>, img: &Image<T>) -> Result<Vec<T>> {
    predict_features(params, &featurize(img))
}

fn check_prox<T: Scalar>(
    prox_center: Option<&ModelParams<T>>,
    mu: T,
    dim: usize,
) -> Result<Option<&ModelParams<T>>> {
    if !(mu >= T::zero()) {
        return Err(Error::invalid("mu", format!("{mu} must be non-negative")));
    }
    if mu > T::zero() {
        let center = prox_center
            .ok_or_else(|| Error::invalid("prox_center", "required when mu > 0"))?;
        if center.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: center.dim(),
            });
        }
        return Ok(Some(center));
    }
    Ok(None)
}

/// Mean binary cross-entropy over pixels plus `(mu / 2) * |theta - center|^2`,
/// with its exact gradient.
pub fn loss_and_grad_features<T: Scalar>(
    params: &ModelParams<T>,
    features: &Features<T>,
    mask: &BinaryMask,
    prox_center: Option<&ModelParams<T>>,
    mu: T,
) -> Result<(T, GradVector<T>)> {
    check_dim(params, features)?;
    if mask.height() != features.height || mask.width() != features.width {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.height(),
            mask.width(),
            features.height,
            features.width
        )));
    }
    let center = check_prox(prox_center, mu, params.dim())?;

    let eps = T::of(PROB_EPS);
    let n = T::of_usize(features.pixels());
    let z = logits(params, features);
    let mut loss = T::zero();
    // dL/dz per pixel, before the 1/N factor.
    let mut residual = Vec::with_capacity(z.len());
    for (zp, &y) in z.iter().zip(mask.bits()) {
        let p = sigmoid(*zp);
        let clamped = p.max(eps).min(T::one() - eps);
        let target = if y { T::one() } else { T::zero() };
        loss -= if y { clamped.ln() } else { (T::one() - clamped).ln() };
        residual.push(if p == clamped { p - target } else { T::zero() });
    }
    loss /= n;

    let mut grad = Vec::with_capacity(params.dim());
    for f in 0..features.count {
        let g: T = residual
            .iter()
            .zip(features.plane(f))
            .map(|(r, x)| *r * *x)
            .sum();
        grad.push(g / n);
    }
    grad.push(residual.iter().copied().sum::<T>() / n);

    if let Some(center) = center {
        let half = T::of(0.5);
        loss += half * mu * params.distance_sq(center);
        for (g, (w, c)) in grad.iter_mut().zip(params.weights.iter().zip(&center.weights)) {
            *g += mu * (*w - *c);
        }
    }
    Ok((loss, GradVector { values: grad }))
}

pub fn loss_and_grad<T: Scalar>(
    params: &ModelParams<T>,
    img: &Image<T>,
    mask: &BinaryMask,
    prox_center: Option<&ModelParams<T>>,
    mu: T,
) -> Result<(T, GradVector<T>)> {
    loss_and_grad_features(params, &featurize(img), mask, prox_center, mu)
}

fn check_lr<T: Scalar>(lr: T) -> Result<()> {
    if !(lr > T::zero()) || !lr.is_finite() {
        return Err(Error::invalid("lr", format!("{lr} must be positive")));
    }
    Ok(())
}

/// `theta - lr * grad`.
pub fn sgd_step<T: Scalar>(
    params: &ModelParams<T>,
    grad: &GradVector<T>,
    lr: T,
) -> Result<ModelParams<T>> {
    check_lr(lr)?;
    if grad.values.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: grad.values.len(),
        });
    }
    Ok(ModelParams {
        weights: params
            .weights
            .iter()
            .zip(&grad.values)
            .map(|(w, g)| *w - lr * *g)
            .collect(),
    })
}

/// Gradient step on the data loss followed by the exact proximal map of
/// `(mu / 2) * |theta - center|^2`:
/// `(theta - lr * grad + lr * mu * center) / (1 + lr * mu)`.
///
/// Stable for any `mu >= 0`; with `mu = 0` it is bit-identical to [`sgd_step`].
pub fn prox_sgd_step<T: Scalar>(
    params: &ModelParams<T>,
    data_grad: &GradVector<T>,
    lr: T,
    center: &ModelParams<T>,
    mu: T,
) -> Result<ModelParams<T>> {
    let stepped = sgd_step(params, data_grad, lr)?;
    check_prox(Some(center), mu, params.dim())?;
    if mu == T::zero() {
        return Ok(stepped);
    }
    let pull = lr * mu;
    let denom = T::one() + pull;
    Ok(ModelParams {
        weights: stepped
            .weights
            .iter()
            .zip(&center.weights)
            .map(|(w, c)| (*w + pull * *c) / denom)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Shape;

    fn random_image(seed: u64, shape: Shape) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(shape, |_, _, _| rng.random()).unwrap()
    }

    #[test]
    fn constant_image_features_are_constant() {
        let f = featurize(&Image::<f64>::filled(Shape::new(2, 4, 5), 0.3).unwrap());
        assert_eq!(f.count(), 4);
        for k in 0..4 {
            assert!(f.plane(k).iter().all(|v| (v - 0.3).abs() < 1e-15));
        }
    }

    #[test]
    fn interior_mean_is_neighbourhood_average() {
        let img = random_image(1, Shape::new(1, 5, 5));
        let f = featurize(&img);
        let mut sum = 0.0;
        for h in 1..4 {
            for w in 1..4 {
                sum += img.get(0, h, w);
            }
        }
        assert!((f.at(1, 2 * 5 + 2) - sum / 9.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_predict_one_half() {
        let img = random_image(2, Shape::new(3, 4, 4));
        let p = predict(&ModelParams::zeros(3), &img).unwrap();
        assert!(p.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn large_bias_saturates() {
        let img = random_image(3, Shape::new(1, 4, 4));
        let params = ModelParams::new(vec![0.0, 0.0, 40.0]).unwrap();
        assert!(predict(&params, &img).unwrap().iter().all(|v| *v > 1.0 - 1e-12));
    }

    #[test]
    fn dimension_mismatch_detected() {
        let img = random_image(4, Shape::new(3, 4, 4));
        assert!(matches!(
            predict(&ModelParams::zeros(1), &img),
            Err(Error::DimensionMismatch { expected: 7, got: 3 })
        ));
    }

    #[test]
    fn confident_correct_predictions_have_tiny_loss() {
        let img = Image::filled(Shape::new(1, 3, 3), 1.0).unwrap();
        let mask = BinaryMask::new(3, 3, vec![true; 9]).unwrap();
        let params = ModelParams::<f64>::new(vec![0.0, 0.0, 50.0]).unwrap();
        let (loss, grad) = loss_and_grad(&params, &img, &mask, None, 0.0).unwrap();
        assert!(loss < 1e-6);
        assert!(grad.values().iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn proximal_term_vanishes_at_center() {
        let img = random_image(5, Shape::new(2, 4, 4));
        let mask = BinaryMask::from_fn(4, 4, |h, w| h > w).unwrap();
        let params = ModelParams::seeded(2, 11);
        let (l0, g0) = loss_and_grad(&params, &img, &mask, None, 0.0).unwrap();
        for mu in [0.3, 5.0] {
            let (l, g) = loss_and_grad(&params, &img, &mask, Some(&params), mu).unwrap();
            assert_eq!(l, l0);
            assert_eq!(g, g0);
        }
    }

    #[test]
    fn mu_requires_center() {
        let img = random_image(6, Shape::new(1, 2, 2));
        let mask = BinaryMask::empty(2, 2).unwrap();
        assert!(loss_and_grad(&ModelParams::zeros(1), &img, &mask, None, 0.3).is_err());
        assert!(loss_and_grad(&ModelParams::zeros(1), &img, &mask, None, -1.0).is_err());
    }

    #[test]
    fn sgd_step_arithmetic() {
        let p = ModelParams::new(vec![1.0, -2.0, 0.5]).unwrap();
        let zero = GradVector::new(vec![0.0; 3]);
        assert_eq!(sgd_step(&p, &zero, 0.1).unwrap(), p);
        let same = GradVector::new(p.weights().to_vec());
        assert!(sgd_step(&p, &same, 1.0).unwrap().weights().iter().all(|w| *w == 0.0));
        assert!(sgd_step(&p, &zero, 0.0).is_err());
    }

    #[test]
    fn prox_step_with_zero_mu_is_plain_sgd() {
        let p = ModelParams::seeded(3, 1);
        let c = ModelParams::seeded(3, 2);
        let g = GradVector::new((0..7).map(|i| i as f64 * 0.1 - 0.3).collect());
        assert_eq!(prox_sgd_step(&p, &g, 0.5, &c, 0.0).unwrap(), sgd_step(&p, &g, 0.5).unwrap());
    }

    #[test]
    fn prox_step_pins_to_center_for_huge_mu() {
        let p = ModelParams::<f64>::seeded(3, 1);
        let c = ModelParams::seeded(3, 2);
        let g = GradVector::new(vec![1.0; 7]);
        let out = prox_sgd_step(&p, &g, 0.5, &c, 1e6).unwrap();
        assert!(out.distance_sq(&c).sqrt() < 1e-5);
    }

    #[test]
    fn gradient_descent_decreases_loss() {
        let img = random_image(8, Shape::new(3, 8, 8));
        let mask = BinaryMask::from_fn(8, 8, |h, w| img.get(0, h, w) > 0.5).unwrap();
        let mut params = ModelParams::seeded(3, 3);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (loss, grad) = loss_and_grad(&params, &img, &mask, None, 0.0).unwrap();
            assert!(loss <= last + 1e-15);
            last = loss;
            params = sgd_step(&params, &grad, 0.5).unwrap();
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ModelParams::<f64>::seeded(3, 99);
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"FDGM");
        assert_eq!(bytes.len(), 4 + 2 + 4 + 7 * 8);
        assert_eq!(ModelParams::read_checkpoint(bytes.as_slice()).unwrap(), p);
        assert!(ModelParams::<f64>::read_checkpoint(&bytes[..20]).is_err());
    }
}
