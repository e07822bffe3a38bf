//! Binary `H x W` planes: segmentation masks and binarized predictions.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::EmptyDimension {
                channels: 1,
                height,
                width,
            });
        }
        if bits.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} mask values for {height}x{width}",
                bits.len()
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            bits,
        })
    }

    pub fn empty(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height)
            .flat_map(|h| (0..width).map(move |w| (h, w)))
            .map(|(h, w)| f(h, w))
            .collect();
        Self::new(height, width, bits)
    }

    /// Foreground wherever `probabilities[p] >= cutoff`.
    pub fn from_probabilities<T: PartialOrd + Copy>(
        height: usize,
        width: usize,
        probabilities: &[T],
        cutoff: T,
    ) -> Result<Self> {
        Self::new(height, width, probabilities.iter().map(|p| *p >= cutoff).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, h: usize, w: usize) -> bool {
        self.bits[h * self.width + w]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Foreground pixel coordinates `(row, col)` in row-major order.
    pub fn points(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }
}
