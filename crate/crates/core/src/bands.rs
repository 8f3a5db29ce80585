//! Octave band layout shared by absorption, delay-network attenuation,
//! stimulus coloring and analysis: ten bands, 31.5 Hz to 16 kHz.

use libm::{pow, sqrt};

pub const BAND_COUNT: usize = 10;

/// Per-band values in band order (lowest first).
pub type BandValues = [f64; BAND_COUNT];

/// Nominal centre frequencies as printed in reports.
pub const NOMINAL_CENTERS: [f64; BAND_COUNT] = [
    31.5, 63.0, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0, 16000.0,
];

/// Index of the 500 Hz band.
pub const BAND_500: usize = 4;
/// Index of the 1 kHz band.
pub const BAND_1K: usize = 5;

/// Exact base-two centre frequency of band `b` (1 kHz reference).
pub fn center(b: usize) -> f64 {
    1000.0 * pow(2.0, b as f64 - BAND_1K as f64)
}

/// Lower and upper -3 dB edges of band `b`.
pub fn edges(b: usize) -> (f64, f64) {
    let c = center(b);
    (c / sqrt(2.0), c * sqrt(2.0))
}

/// Bands whose centre lies safely below Nyquist at `fs`.
pub fn usable(b: usize, fs: f64) -> bool {
    center(b) < 0.45 * fs
}

pub fn uniform(v: f64) -> BandValues {
    [v; BAND_COUNT]
}

pub fn label(b: usize) -> &'static str {
    const LABELS: [&str; BAND_COUNT] = [
        "31.5", "63", "125", "250", "500", "1k", "2k", "4k", "8k", "16k",
    ];
    LABELS[b]
}
