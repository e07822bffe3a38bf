//! Independent reference implementations used by the integration tests.
//! Everything here is written directly from the defining formulas, with no
//! calls into the crate's numeric code.

#![allow(dead_code)]

use std::f64::consts::TAU;

use fdg_core::spectral::{Image, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Image<f64> {
    let data = (0..c * h * w).map(|_| rng.random::<f64>()).collect();
    Image::new(Shape::new(c, h, w), data).unwrap()
}

/// Direct double-sum DFT of every channel; returns (re, im) in (c, u, v) order.
pub fn naive_dft(data: &[f64], c: usize, h: usize, w: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane = &data[ch * h * w..(ch + 1) * h * w];
        for u in 0..h {
            for v in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let angle = -TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        re += plane[y * w + x] * angle.cos();
                        im += plane[y * w + x] * angle.sin();
                    }
                }
                out.push((re, im));
            }
        }
    }
    out
}

/// Direct inverse DFT with `1 / (H W)`; returns real parts and the largest
/// imaginary magnitude.
pub fn naive_idft(coeffs: &[(f64, f64)], c: usize, h: usize, w: usize) -> (Vec<f64>, f64) {
    let mut out = Vec::with_capacity(c * h * w);
    let mut residue: f64 = 0.0;
    let norm = (h * w) as f64;
    for ch in 0..c {
        let plane = &coeffs[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for u in 0..h {
                    for v in 0..w {
                        let angle = TAU * ((u * y) as f64 / h as f64 + (v * x) as f64 / w as f64);
                        let (a, b) = plane[u * w + v];
                        re += a * angle.cos() - b * angle.sin();
                        im += a * angle.sin() + b * angle.cos();
                    }
                }
                out.push(re / norm);
                residue = residue.max((im / norm).abs());
            }
        }
    }
    (out, residue)
}

/// Low-frequency band membership via an explicit fftshift: index `u` sits at
/// `(u + n/2) mod n` in the centred layout, with DC at `n/2`.
pub fn band_oracle(u: usize, v: usize, h: usize, w: usize, beta: f64) -> bool {
    let centred = |i: usize, n: usize| ((i + n / 2) % n) as f64 - (n / 2) as f64;
    centred(u, h).abs() <= beta * h as f64 / 2.0 && centred(v, w).abs() <= beta * w as f64 / 2.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleThreshold {
    None,
    Soft,
    Hard,
}

pub fn threshold_oracle(x: f64, t: f64, mode: OracleThreshold) -> f64 {
    match mode {
        OracleThreshold::None => x,
        OracleThreshold::Soft => {
            if x.abs() <= t {
                0.0
            } else {
                x.signum() * (x.abs() - t)
            }
        }
        OracleThreshold::Hard => {
            if x.abs() >= t {
                x
            } else {
                0.0
            }
        }
    }
}

/// Element-wise amplitude mixing. `preserve` selects
/// `A (1 - M) + [(1 - l) A + l Thr(At)] M`; otherwise the literal
/// `(1 - l) A (1 - M) + l Thr(At) M`.
#[allow(clippy::too_many_arguments)]
pub fn mix_oracle(
    a: &[f64],
    at: &[f64],
    c: usize,
    h: usize,
    w: usize,
    lambda: f64,
    beta: f64,
    mode: OracleThreshold,
    alpha: f64,
    preserve: bool,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for ch in 0..c {
        let plane = &at[ch * h * w..(ch + 1) * h * w];
        let t = alpha * plane.iter().cloned().fold(0.0, f64::max);
        for u in 0..h {
            for v in 0..w {
                let i = ch * h * w + u * w + v;
                let m = if band_oracle(u, v, h, w, beta) { 1.0 } else { 0.0 };
                let thr = threshold_oracle(at[i], t, mode);
                out.push(if preserve {
                    a[i] * (1.0 - m) + ((1.0 - lambda) * a[i] + lambda * thr) * m
                } else {
                    (1.0 - lambda) * a[i] * (1.0 - m) + lambda * thr * m
                });
            }
        }
    }
    out
}

/// Full synthesis (DFT, mix, recompose, inverse DFT) composed from the oracles above, clamped to [0, 1].
#[allow(clippy::too_many_arguments)]
pub fn augment_oracle(
    src: &[f64],
    target: &[f64],
    c: usize,
    h: usize,
    w: usize,
    lambda: f64,
    beta: f64,
    mode: OracleThreshold,
    alpha: f64,
    preserve: bool,
) -> Vec<f64> {
    let xs = naive_dft(src, c, h, w);
    let xt = naive_dft(target, c, h, w);
    let amp: Vec<f64> = xs.iter().map(|(re, im)| re.hypot(*im)).collect();
    let phase: Vec<f64> = xs.iter().map(|(re, im)| im.atan2(*re)).collect();
    let amp_t: Vec<f64> = xt.iter().map(|(re, im)| re.hypot(*im)).collect();
    let mixed = mix_oracle(&amp, &amp_t, c, h, w, lambda, beta, mode, alpha, preserve);
    let coeffs: Vec<(f64, f64)> = mixed
        .iter()
        .zip(&phase)
        .map(|(m, p)| (m * p.cos(), m * p.sin()))
        .collect();
    naive_idft(&coeffs, c, h, w)
        .0
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect()
}

/// Symmetric Hausdorff distance by exhaustive search over all point pairs.
pub fn hausdorff_oracle(a: &[bool], b: &[bool], w: usize) -> Option<f64> {
    let pts = |m: &[bool]| -> Vec<(f64, f64)> {
        m.iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .map(|(i, _)| ((i / w) as f64, (i % w) as f64))
            .collect()
    };
    let (pa, pb) = (pts(a), pts(b));
    if pa.is_empty() || pb.is_empty() {
        return None;
    }
    let directed = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    Some(directed(&pa, &pb).max(directed(&pb, &pa)))
}

/// Mean clamped BCE of a per-pixel logistic model over raw features plus 3x3
/// means, written with scalar loops.
pub fn loss_oracle(weights: &[f64], img: &[f64], mask: &[bool], c: usize, h: usize, w: usize) -> f64 {
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let mut z = weights[2 * c];
            for ch in 0..c {
                let at = |yy: isize, xx: isize| {
                    let yy = yy.clamp(0, h as isize - 1) as usize;
                    let xx = xx.clamp(0, w as isize - 1) as usize;
                    img[ch * h * w + yy * w + xx]
                };
                let mut s = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        s += at(y as isize + dy, x as isize + dx);
                    }
                }
                z += weights[ch] * at(y as isize, x as isize) + weights[c + ch] * s / 9.0;
            }
            let p = (1.0 / (1.0 + (-z).exp())).clamp(1e-7, 1.0 - 1e-7);
            total -= if mask[y * w + x] { p.ln() } else { (1.0 - p).ln() };
        }
    }
    total / (h * w) as f64
}
