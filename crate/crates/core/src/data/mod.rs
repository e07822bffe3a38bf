//! Synthetic multi-domain segmentation data, deterministic splitting, and
//! on-disk datasets.
//!
//! Each domain renders a smooth textured background in its own colour and
//! brightness, with one to three elliptical foreground blobs. The foreground
//! mask is the exact union of the blob supports.

mod dataset;
pub mod pnm;

pub use dataset::{
    load_external_dataset, read_manifest, write_dataset, ManifestEntry, EXTERNAL_DOMAIN,
    MANIFEST_FILE,
};
pub use pnm::{read_image, read_mask, write_image, write_mask};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::binary::BinaryMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::spectral::{Image, Shape};

pub type DomainId = u16;

pub const DEFAULT_TRAIN_FRACTION: f64 = 0.9;
pub const DEFAULT_IMAGE_SIZE: usize = 64;
pub const DEFAULT_SAMPLES_PER_DOMAIN: usize = 60;

/// Rendering parameters of one synthetic domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub id: DomainId,
    /// Background colour per channel.
    pub base_color: Vec<f64>,
    /// Offset added to every pixel of every channel.
    pub brightness: f64,
    /// Peak amplitude of the smooth background texture.
    pub texture_amplitude: f64,
    /// Inclusive range of blobs per image; the minimum is at least 1.
    pub blob_count: (usize, usize),
    /// Inclusive range of ellipse semi-axes as a fraction of `min(H, W)`.
    pub radius_range: (f64, f64),
    pub foreground_color: Vec<f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DomainSpec {
    pub fn channels(&self) -> usize {
        self.base_color.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("domain spec", reason));
        if self.base_color.is_empty() || self.base_color.len() != self.foreground_color.len() {
            return bad("base and foreground colours need the same non-zero channel count".into());
        }
        if self.blob_count.0 == 0 || self.blob_count.0 > self.blob_count.1 {
            return bad(format!("blob count range {:?} must be 1 <= min <= max", self.blob_count));
        }
        let (rmin, rmax) = self.radius_range;
        if !(rmin > 0.0 && rmin <= rmax && rmax <= 0.5) {
            return bad(format!("radius range {:?} must satisfy 0 < min <= max <= 0.5", self.radius_range));
        }
        if !(self.noise_sigma >= 0.0 && self.texture_amplitude >= 0.0) {
            return bad("noise and texture amplitudes must be non-negative".into());
        }
        let finite = self
            .base_color
            .iter()
            .chain(&self.foreground_color)
            .chain([&self.brightness, &self.texture_amplitude, &self.noise_sigma])
            .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite colour parameter".into());
        }
        let in_range = self
            .base_color
            .iter()
            .chain(&self.foreground_color)
            .all(|c| (0.0..=1.0).contains(&(c + self.brightness)));
        if !in_range {
            return bad("colour plus brightness must stay within [0, 1]".into());
        }
        Ok(())
    }

    /// Mean background intensity over channels, ignoring texture and noise.
    pub fn mean_background(&self) -> f64 {
        self.base_color.iter().sum::<f64>() / self.channels() as f64 + self.brightness
    }
}

/// Four RGB domains; the first three are training clients and the last one is
/// held out. The held-out domain is lit more dimly than any training domain,
/// so a model that keys on absolute colour fails there.
pub fn default_domains(seed: u64) -> Vec<DomainSpec> {
    let domain = |id: DomainId, base: [f64; 3], brightness: f64, fg: [f64; 3], texture: f64, noise: f64| DomainSpec {
        id,
        base_color: base.to_vec(),
        brightness,
        texture_amplitude: texture,
        blob_count: (1, 3),
        radius_range: (0.08, 0.18),
        foreground_color: fg.to_vec(),
        noise_sigma: noise,
        seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(id as u64),
    };
    vec![
        domain(0, [0.34, 0.26, 0.24], 0.0, [0.78, 0.34, 0.30], 0.06, 0.03),
        domain(1, [0.50, 0.46, 0.40], 0.0, [0.86, 0.42, 0.36], 0.08, 0.03),
        domain(2, [0.58, 0.58, 0.66], 0.04, [0.90, 0.48, 0.50], 0.05, 0.02),
        domain(3, [0.30, 0.22, 0.20], -0.1, [0.60, 0.26, 0.24], 0.07, 0.03),
    ]
}

/// Rotated ellipse in pixel coordinates; a pixel `(h, w)` is inside when its
/// centre satisfies the ellipse inequality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center_row: f64,
    pub center_col: f64,
    pub radius_row: f64,
    pub radius_col: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn contains(&self, h: usize, w: usize) -> bool {
        let (dy, dx) = (h as f64 - self.center_row, w as f64 - self.center_col);
        let (s, c) = self.angle.sin_cos();
        let along = (dy * c + dx * s) / self.radius_row;
        let across = (dx * c - dy * s) / self.radius_col;
        along * along + across * across <= 1.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub id: String,
    pub domain: DomainId,
    pub image: Image<T>,
    pub mask: BinaryMask,
    /// Blob geometry for generated samples; empty for loaded data.
    pub blobs: Vec<Ellipse>,
}

/// Smooth background texture in `[-1, 1]`: an average of three low-frequency
/// plane waves with random orientation and phase.
fn texture_field(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let fy = rng.random_range(0.5..2.5) / height as f64;
            let fx = rng.random_range(0.5..2.5) / width as f64;
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (fy, fx, phase)
        })
        .collect();
    (0..height * width)
        .map(|i| {
            let (h, w) = ((i / width) as f64, (i % width) as f64);
            waves
                .iter()
                .map(|(fy, fx, ph)| (std::f64::consts::TAU * (fy * h + fx * w) + ph).sin())
                .sum::<f64>()
                / 3.0
        })
        .collect()
}

#[allow(clippy::needless_range_loop)]
fn render<T: Scalar>(
    spec: &DomainSpec,
    index: usize,
    height: usize,
    width: usize,
    clamp: bool,
) -> Result<Sample<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let channels = spec.channels();
    let short = height.min(width) as f64;

    let count = rng.random_range(spec.blob_count.0..=spec.blob_count.1);
    let blobs: Vec<Ellipse> = (0..count)
        .map(|_| {
            let radius_row = rng.random_range(spec.radius_range.0..=spec.radius_range.1) * short;
            let radius_col = rng.random_range(spec.radius_range.0..=spec.radius_range.1) * short;
            let reach = radius_row.max(radius_col);
            let span = |n: usize| {
                let n = n as f64;
                if n - 1.0 - reach > reach {
                    (reach, n - 1.0 - reach)
                } else {
                    (0.0, n - 1.0)
                }
            };
            let (r0, r1) = span(height);
            let (c0, c1) = span(width);
            Ellipse {
                center_row: rng.random_range(r0..=r1),
                center_col: rng.random_range(c0..=c1),
                radius_row,
                radius_col,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        })
        .collect();
    let mask = BinaryMask::from_fn(height, width, |h, w| blobs.iter().any(|b| b.contains(h, w)))?;

    let texture = texture_field(&mut rng, height, width);
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
    let plane = height * width;
    let mut data = Vec::with_capacity(channels * plane);
    for c in 0..channels {
        for p in 0..plane {
            let color = if mask.bits()[p] {
                spec.foreground_color[c]
            } else {
                spec.base_color[c]
            };
            let jitter = if spec.noise_sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            let v = color + spec.brightness + spec.texture_amplitude * texture[p] + jitter;
            data.push(T::of(if clamp { v.clamp(0.0, 1.0) } else { v }));
        }
    }
    Ok(Sample {
        id: format!("d{}_{index:04}", spec.id),
        domain: spec.id,
        image: Image::new(Shape::new(channels, height, width), data)?,
        mask,
        blobs,
    })
}

fn check_request(spec: &DomainSpec, n: usize, height: usize, width: usize) -> Result<()> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "at least one sample is required"));
    }
    if height < 4 || width < 4 {
        return Err(Error::invalid("size", format!("{height}x{width} is too small")));
    }
    Ok(())
}

/// Renders `n` samples of `spec`, pixel values clamped to `[0, 1]`. A pure
/// function of its arguments.
pub fn generate_domain<T: Scalar>(
    spec: &DomainSpec,
    n: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Sample<T>>> {
    check_request(spec, n, height, width)?;
    (0..n).map(|i| render(spec, i, height, width, true)).collect()
}

/// As [`generate_domain`] without the final clamp.
pub fn generate_domain_unclamped<T: Scalar>(
    spec: &DomainSpec,
    n: usize,
    height: usize,
    width: usize,
) -> Result<Vec<Sample<T>>> {
    check_request(spec, n, height, width)?;
    (0..n).map(|i| render(spec, i, height, width, false)).collect()
}

/// Seeded shuffle followed by a `train_fraction` / remainder split.
pub fn split<S>(samples: Vec<S>, train_fraction: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(
            "train_fraction",
            format!("{train_fraction} is outside (0, 1)"),
        ));
    }
    let n = samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (train_fraction * n as f64).round() as usize;
    let mut slots: Vec<Option<S>> = samples.into_iter().map(Some).collect();
    let mut shuffled = order.into_iter().map(|i| slots[i].take().expect("each index once"));
    let train: Vec<S> = shuffled.by_ref().take(n_train).collect();
    let test: Vec<S> = shuffled.collect();
    Ok((train, test))
}
