//! Band-limited resampling with a Blackman-windowed sinc kernel.

use alloc::vec::Vec;

use libm::{cos, floor, round, sin};

const HALF_WIDTH: i64 = 32;
const PI: f64 = core::f64::consts::PI;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        sin(PI * x) / (PI * x)
    }
}

fn blackman(x: f64, half: f64) -> f64 {
    // x in [-half, half]
    let n = (x + half) / (2.0 * half);
    if !(0.0..=1.0).contains(&n) {
        return 0.0;
    }
    0.42 - 0.5 * cos(2.0 * PI * n) + 0.08 * cos(4.0 * PI * n)
}

/// Output length for a signal of `len` samples converted between rates.
pub fn resampled_len(len: usize, fs_in: f64, fs_out: f64) -> usize {
    round(len as f64 * fs_out / fs_in) as usize
}

/// Resample `x` from `fs_in` to `fs_out`. Downsampling lowers the cutoff to
/// the new Nyquist frequency.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    if (fs_in - fs_out).abs() < 1e-9 {
        return x.to_vec();
    }
    let ratio = fs_out / fs_in;
    let cutoff = 0.97 * ratio.min(1.0);
    let half = HALF_WIDTH as f64 / cutoff;
    let n_out = resampled_len(x.len(), fs_in, fs_out);
    (0..n_out)
        .map(|n| {
            let t = n as f64 / ratio;
            let centre = floor(t) as i64;
            let reach = libm::ceil(half) as i64;
            let mut acc = 0.0;
            for k in (centre - reach + 1)..=(centre + reach) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let d = t - k as f64;
                acc += x[k as usize] * cutoff * sinc(cutoff * d) * blackman(d, half);
            }
            acc
        })
        .collect()
}
