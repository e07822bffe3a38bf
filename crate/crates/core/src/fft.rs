//! Separable 2D discrete Fourier transform on row-major complex buffers.
//!
//! Power-of-two axes use an iterative radix-2 Cooley-Tukey pass; any other
//! length falls back to direct summation along that axis. Both routes are
//! unnormalized; callers apply `1 / (H * W)` on the inverse.

use num_complex::Complex;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    Forward,
    Inverse,
}

impl Direction {
    fn sign<T: Scalar>(self) -> T {
        match self {
            Direction::Forward => -T::one(),
            Direction::Inverse => T::one(),
        }
    }
}

/// `exp(sign * i * 2 pi k / n)` for `k in 0..count`, each angle evaluated directly.
fn twiddles<T: Scalar>(n: usize, count: usize, direction: Direction) -> Vec<Complex<T>> {
    let base = direction.sign::<T>() * T::TAU() / T::of_usize(n);
    (0..count)
        .map(|k| Complex::from_polar(T::one(), base * T::of_usize(k)))
        .collect()
}

struct Plan<T> {
    len: usize,
    table: Vec<Complex<T>>,
    radix2: bool,
}

impl<T: Scalar> Plan<T> {
    fn new(len: usize, direction: Direction) -> Self {
        let radix2 = len.is_power_of_two();
        let count = if radix2 { len / 2 } else { len };
        Plan {
            len,
            table: twiddles(len, count, direction),
            radix2,
        }
    }

    fn process(&self, data: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>) {
        debug_assert_eq!(data.len(), self.len);
        if self.len <= 1 {
            return;
        }
        if self.radix2 {
            self.radix2_in_place(data);
        } else {
            self.direct(data, scratch);
        }
    }

    fn radix2_in_place(&self, data: &mut [Complex<T>]) {
        let n = self.len;
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                data.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for block in data.chunks_exact_mut(size) {
                let (lo, hi) = block.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = self.table[k * stride] * *b;
                    let u = *a;
                    *a = u + t;
                    *b = u - t;
                }
            }
            size *= 2;
        }
    }

    fn direct(&self, data: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>) {
        let n = self.len;
        scratch.clear();
        scratch.extend((0..n).map(|k| {
            data.iter()
                .enumerate()
                .fold(Complex::new(T::zero(), T::zero()), |acc, (j, x)| {
                    acc + *x * self.table[(j * k) % n]
                })
        }));
        data.copy_from_slice(scratch);
    }
}

/// In-place unnormalized 2D transform of one `height x width` row-major plane.
pub(crate) fn transform_2d<T: Scalar>(
    plane: &mut [Complex<T>],
    height: usize,
    width: usize,
    direction: Direction,
) {
    debug_assert_eq!(plane.len(), height * width);
    let mut scratch = Vec::new();

    let row_plan = Plan::new(width, direction);
    for row in plane.chunks_exact_mut(width) {
        row_plan.process(row, &mut scratch);
    }

    let col_plan = Plan::new(height, direction);
    let mut column = vec![Complex::new(T::zero(), T::zero()); height];
    for w in 0..width {
        for (h, slot) in column.iter_mut().enumerate() {
            *slot = plane[h * width + w];
        }
        col_plan.process(&mut column, &mut scratch);
        for (h, value) in column.iter().enumerate() {
            plane[h * width + w] = *value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_1d(input: &[Complex<f64>], sign: f64) -> Vec<Complex<f64>> {
        let n = input.len() as f64;
        (0..input.len())
            .map(|k| {
                input.iter().enumerate().fold(Complex::new(0.0, 0.0), |acc, (j, x)| {
                    let angle = sign * std::f64::consts::TAU * (j * k) as f64 / n;
                    acc + x * Complex::new(angle.cos(), angle.sin())
                })
            })
            .collect()
    }

    #[test]
    fn radix2_and_direct_paths_match_naive_sum() {
        for len in [1usize, 2, 3, 5, 8, 12, 16] {
            let input: Vec<Complex<f64>> = (0..len)
                .map(|i| Complex::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut data = input.clone();
            Plan::new(len, Direction::Forward).process(&mut data, &mut Vec::new());
            let expected = naive_1d(&input, -1.0);
            for (a, b) in data.iter().zip(&expected) {
                assert!((a - b).norm() < 1e-12, "len {len}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn inverse_direction_undoes_forward_up_to_scale() {
        let (h, w) = (4, 6);
        let original: Vec<Complex<f64>> = (0..h * w)
            .map(|i| Complex::new(i as f64 / 7.0, 0.0))
            .collect();
        let mut data = original.clone();
        transform_2d(&mut data, h, w, Direction::Forward);
        transform_2d(&mut data, h, w, Direction::Inverse);
        for (a, b) in data.iter().zip(&original) {
            assert!((a / (h * w) as f64 - b).norm() < 1e-12);
        }
    }
}
