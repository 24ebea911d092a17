//! In-place radix-2 complex FFT over row-major N-d arrays.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

struct Axis {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Axis {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let bits = n.trailing_zeros();
        let twiddles = (0..n / 2)
            .map(|k| {
                let th = -2.0 * PI * k as f64 / n as f64;
                Complex64::new(libm::cos(th), libm::sin(th))
            })
            .collect();
        let bitrev = (0..n)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        Self { n, twiddles, bitrev }
    }
}

/// Plan for a fixed array shape. Forward uses `e^{-2πi jk/n}`; inverse is
/// unnormalized, so `inverse(forward(x)) = len · x`.
pub(crate) struct FftNd {
    shape: Vec<usize>,
    axes: Vec<Axis>,
    len: usize,
}

impl FftNd {
    pub(crate) fn new(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            axes: shape.iter().map(|&n| Axis::new(n)).collect(),
            len: shape.iter().product(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.len
    }

    pub(crate) fn forward(&self, data: &mut [Complex64]) {
        self.run(data, false);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, true);
    }

    fn run(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len);
        for (a, axis) in self.axes.iter().enumerate() {
            let inner: usize = self.shape[a + 1..].iter().product();
            let outer = self.len / (axis.n * inner);
            for o in 0..outer {
                let block = &mut data[o * axis.n * inner..(o + 1) * axis.n * inner];
                transform_block(block, axis, inner, inverse);
            }
        }
    }
}

fn transform_block(block: &mut [Complex64], axis: &Axis, inner: usize, inverse: bool) {
    let n = axis.n;
    for i in 0..n {
        let j = axis.bitrev[i];
        if i < j {
            for s in 0..inner {
                block.swap(i * inner + s, j * inner + s);
            }
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let mut w = axis.twiddles[k * step];
                if inverse {
                    w = w.conj();
                }
                let lo = (start + k) * inner;
                let hi = (start + k + half) * inner;
                let (head, tail) = block.split_at_mut(hi);
                for (a, b) in head[lo..lo + inner].iter_mut().zip(&mut tail[..inner]) {
                    let t = *b * w;
                    *b = *a - t;
                    *a += t;
                }
            }
        }
        len <<= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn naive_dft(data: &[Complex64], shape: &[usize]) -> Vec<Complex64> {
        let len: usize = shape.iter().product();
        let unravel = |mut f: usize| {
            let mut idx = vec![0; shape.len()];
            for (s, &n) in idx.iter_mut().zip(shape).rev() {
                *s = f % n;
                f /= n;
            }
            idx
        };
        (0..len)
            .map(|k| {
                let ki = unravel(k);
                (0..len)
                    .map(|j| {
                        let ji = unravel(j);
                        let phase: f64 = ki
                            .iter()
                            .zip(&ji)
                            .zip(shape)
                            .map(|((&a, &b), &n)| -2.0 * PI * (a * b) as f64 / n as f64)
                            .sum();
                        data[j] * Complex64::new(libm::cos(phase), libm::sin(phase))
                    })
                    .sum()
            })
            .collect()
    }

    fn sample(len: usize) -> Vec<Complex64> {
        (0..len)
            .map(|i| {
                let x = i as f64;
                Complex64::new(libm::sin(0.37 * x + 0.1) + 0.2, libm::cos(1.3 * x * x))
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft() {
        for shape in [vec![8], vec![16], vec![8, 4], vec![4, 8, 2], vec![2, 2, 4, 4]] {
            let len = shape.iter().product();
            let x = sample(len);
            let plan = FftNd::new(&shape);
            let mut y = x.clone();
            plan.forward(&mut y);
            let expect = naive_dft(&x, &shape);
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).norm() < 1e-11, "{shape:?}: {a} vs {b}");
            }
            plan.inverse(&mut y);
            for (a, b) in y.iter().zip(&x) {
                assert!((a / len as f64 - b).norm() < 1e-13);
            }
        }
    }
}
