//! Radix-2 complex FFT with precomputed twiddles.

use alloc::vec::Vec;

use libm::{cos, sin};
use num_complex::Complex64;

/// FFT plan for one power-of-two size.
#[derive(Debug, Clone)]
pub struct Fft {
    n: usize,
    twiddles: Vec<Complex64>,
    rev: Vec<u32>,
}

impl Fft {
    /// Panics if `n` is not a power of two.
    pub fn new(n: usize) -> Self {
        assert!(n.is_power_of_two(), "fft size must be a power of two");
        let twiddles = (0..n / 2)
            .map(|k| {
                let a = -2.0 * core::f64::consts::PI * k as f64 / n as f64;
                Complex64::new(cos(a), sin(a))
            })
            .collect();
        let bits = n.trailing_zeros();
        let rev = (0..n as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Self { n, twiddles, rev }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn permute(&self, data: &mut [Complex64]) {
        for i in 0..self.n {
            let j = self.rev[i] as usize;
            if j > i {
                data.swap(i, j);
            }
        }
    }

    fn butterflies(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let mut half = 1;
        while half < n {
            let stride = n / (2 * half);
            for start in (0..n).step_by(2 * half) {
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let w = if inverse { w.conj() } else { w };
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            half *= 2;
        }
    }

    /// In-place forward transform (no scaling).
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        self.permute(data);
        self.butterflies(data, false);
    }

    /// In-place inverse transform, scaled by 1/n.
    pub fn inverse(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        self.permute(data);
        self.butterflies(data, true);
        let s = 1.0 / self.n as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    /// Forward transform of a real signal, zero-padded to the plan size.
    pub fn forward_real(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = alloc::vec![Complex64::new(0.0, 0.0); self.n];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward(&mut buf);
        buf
    }

    /// Inverse transform returning the real part.
    pub fn inverse_real(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut spec);
        spec.into_iter().map(|c| c.re).collect()
    }
}

/// Frequency in Hz of bin `k` for an `n`-point transform at `fs`.
pub fn bin_freq(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    libm::fabs(k) * fs / n as f64
}
