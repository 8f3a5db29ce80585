//! Uniformly partitioned overlap-save convolution.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::fft::Fft;

/// Default partition length in samples.
pub const DEFAULT_BLOCK: usize = 1024;

/// Convolution engine for one fixed impulse response.
#[derive(Debug, Clone)]
pub struct PartitionedConvolver {
    block: usize,
    fft: Fft,
    partitions: Vec<Vec<Complex64>>,
    ir_len: usize,
}

impl PartitionedConvolver {
    /// `block` must be a power of two.
    pub fn new(ir: &[f64], block: usize) -> Self {
        let fft = Fft::new(2 * block);
        let partitions = ir
            .chunks(block)
            .map(|c| fft.forward_real(c))
            .collect::<Vec<_>>();
        Self {
            block,
            fft,
            partitions,
            ir_len: ir.len(),
        }
    }

    /// Full linear convolution; the output has `x.len() + ir.len() - 1`
    /// samples (empty if either input is empty).
    pub fn convolve(&self, x: &[f64]) -> Vec<f64> {
        if x.is_empty() || self.ir_len == 0 {
            return Vec::new();
        }
        let b = self.block;
        let out_len = x.len() + self.ir_len - 1;
        let blocks = out_len.div_ceil(b);
        let p = self.partitions.len();
        let n = 2 * b;
        let mut fdl: Vec<Vec<Complex64>> = vec![vec![Complex64::new(0.0, 0.0); n]; p];
        let mut head = 0;
        let mut window = vec![0.0; n];
        let mut out = Vec::with_capacity(blocks * b);
        let mut acc = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..blocks {
            window.copy_within(b.., 0);
            let start = k * b;
            for i in 0..b {
                window[b + i] = x.get(start + i).copied().unwrap_or(0.0);
            }
            head = (head + p - 1) % p;
            fdl[head] = self.fft.forward_real(&window);
            acc.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for (j, h) in self.partitions.iter().enumerate() {
                let xs = &fdl[(head + j) % p];
                for ((a, xv), hv) in acc.iter_mut().zip(xs).zip(h) {
                    *a += xv * hv;
                }
            }
            let mut y = acc.clone();
            self.fft.inverse(&mut y);
            out.extend(y[b..].iter().map(|c| c.re));
        }
        out.truncate(out_len);
        out
    }
}

/// Full linear convolution via a single zero-padded FFT.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 {
        return direct_convolve(a, b);
    }
    let fft = Fft::new(len.next_power_of_two());
    let mut fa = fft.forward_real(a);
    let fb = fft.forward_real(b);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    let mut out = fft.inverse_real(fa);
    out.truncate(len);
    out
}

/// Time-domain convolution, intended for short kernels.
pub fn direct_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &av) in a.iter().enumerate() {
        if av == 0.0 {
            continue;
        }
        for (o, &bv) in out[i..].iter_mut().zip(b) {
            *o += av * bv;
        }
    }
    out
}
