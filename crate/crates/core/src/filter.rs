//! IIR building blocks: biquads, Butterworth octave filters, shelving and
//! peaking equalizers, and a cascaded graphic equalizer fit to band gains.

use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, log10, pow, sin, sqrt, tan};
use num_complex::Complex64;

use crate::bands::{self, BandValues, BAND_COUNT};
use crate::error::{Error, Result};

const PI: f64 = core::f64::consts::PI;

/// Second-order section, normalized so that a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    pub fn gain(g: f64) -> Biquad {
        Biquad {
            b0: g,
            ..Biquad::IDENTITY
        }
    }

    /// Complex response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::new(cos(w), -sin(w));
        let z2 = z1 * z1;
        (self.b0 + z1 * self.b1 + z2 * self.b2) / (1.0 + z1 * self.a1 + z2 * self.a2)
    }

    pub fn magnitude_db(&self, f: f64, fs: f64) -> f64 {
        20.0 * log10(self.response(2.0 * PI * f / fs).norm())
    }

    fn scale(mut self, g: f64) -> Biquad {
        self.b0 *= g;
        self.b1 *= g;
        self.b2 *= g;
        self
    }

    /// Low shelf with corner `fc`, shelf gain `gain_db`, slope S = 1.
    pub fn low_shelf(fc: f64, gain_db: f64, fs: f64) -> Biquad {
        let a = pow(10.0, gain_db / 40.0);
        let w = 2.0 * PI * fc / fs;
        let (cw, sw) = (cos(w), sin(w));
        let alpha = sw / 2.0 * sqrt(2.0);
        let sa = 2.0 * sqrt(a) * alpha;
        let a0 = (a + 1.0) + (a - 1.0) * cw + sa;
        Biquad {
            b0: a * ((a + 1.0) - (a - 1.0) * cw + sa) / a0,
            b1: 2.0 * a * ((a - 1.0) - (a + 1.0) * cw) / a0,
            b2: a * ((a + 1.0) - (a - 1.0) * cw - sa) / a0,
            a1: -2.0 * ((a - 1.0) + (a + 1.0) * cw) / a0,
            a2: ((a + 1.0) + (a - 1.0) * cw - sa) / a0,
        }
    }

    /// High shelf with corner `fc`, shelf gain `gain_db`, slope S = 1.
    pub fn high_shelf(fc: f64, gain_db: f64, fs: f64) -> Biquad {
        let a = pow(10.0, gain_db / 40.0);
        let w = 2.0 * PI * fc / fs;
        let (cw, sw) = (cos(w), sin(w));
        let alpha = sw / 2.0 * sqrt(2.0);
        let sa = 2.0 * sqrt(a) * alpha;
        let a0 = (a + 1.0) - (a - 1.0) * cw + sa;
        Biquad {
            b0: a * ((a + 1.0) + (a - 1.0) * cw + sa) / a0,
            b1: -2.0 * a * ((a - 1.0) + (a + 1.0) * cw) / a0,
            b2: a * ((a + 1.0) + (a - 1.0) * cw - sa) / a0,
            a1: 2.0 * ((a - 1.0) - (a + 1.0) * cw) / a0,
            a2: ((a + 1.0) - (a - 1.0) * cw - sa) / a0,
        }
    }

    /// Peaking equalizer at `fc` with quality `q`.
    pub fn peak(fc: f64, q: f64, gain_db: f64, fs: f64) -> Biquad {
        let a = pow(10.0, gain_db / 40.0);
        let w = 2.0 * PI * fc / fs;
        let alpha = sin(w) / (2.0 * q);
        let cw = cos(w);
        let a0 = 1.0 + alpha / a;
        Biquad {
            b0: (1.0 + alpha * a) / a0,
            b1: -2.0 * cw / a0,
            b2: (1.0 - alpha * a) / a0,
            a1: -2.0 * cw / a0,
            a2: (1.0 - alpha / a) / a0,
        }
    }
}

/// Cascade of biquads with direct-form-II-transposed state.
#[derive(Debug, Clone)]
pub struct Cascade {
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl Cascade {
    pub fn new(sections: Vec<Biquad>) -> Self {
        let state = vec![[0.0; 2]; sections.len()];
        Self { sections, state }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    #[inline]
    pub fn tick(&mut self, mut x: f64) -> f64 {
        for (s, z) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = s.b0 * x + z[0];
            z[0] = s.b1 * x - s.a1 * y + z[1];
            z[1] = s.b2 * x - s.a2 * y;
            x = y;
        }
        x
    }

    pub fn process(&mut self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.tick(v)).collect()
    }

    pub fn response(&self, w: f64) -> Complex64 {
        cascade_response(&self.sections, w)
    }

    pub fn magnitude_db(&self, f: f64, fs: f64) -> f64 {
        20.0 * log10(self.response(2.0 * PI * f / fs).norm())
    }
}

pub fn cascade_response(sections: &[Biquad], w: f64) -> Complex64 {
    sections
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
}

fn bilinear(s: Complex64, fs: f64) -> Complex64 {
    let k = 2.0 * fs;
    (k + s) / (k - s)
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let a = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::new(cos(a), sin(a))
        })
        .collect()
}

/// Pole pairs as denominators: each complex pole with positive imaginary
/// part pairs with its conjugate, real poles yield first-order sections.
fn denominators(poles: &[Complex64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for p in poles {
        if p.im > 1e-9 {
            out.push((-2.0 * p.re, p.norm_sqr()));
        } else if p.im.abs() <= 1e-9 {
            out.push((-p.re, 0.0));
        }
    }
    out
}

fn normalize_at(mut sections: Vec<Biquad>, f: f64, fs: f64) -> Vec<Biquad> {
    let g = cascade_response(&sections, 2.0 * PI * f / fs).norm();
    let per = pow(1.0 / g, 1.0 / sections.len() as f64);
    for s in sections.iter_mut() {
        *s = s.scale(per);
    }
    sections
}

/// Sixth-order Butterworth bandpass between `lo` and `hi` Hz, unity gain at
/// the geometric centre.
pub fn butterworth_bandpass(lo: f64, hi: f64, fs: f64) -> Vec<Biquad> {
    let wl = 2.0 * fs * tan(PI * lo / fs);
    let wh = 2.0 * fs * tan(PI * hi / fs);
    let w0 = sqrt(wl * wh);
    let bw = wh - wl;
    let mut poles = Vec::with_capacity(6);
    for p in prototype_poles(3) {
        let half = p * bw * 0.5;
        let disc = (half * half - w0 * w0).sqrt();
        poles.push(bilinear(half + disc, fs));
        poles.push(bilinear(half - disc, fs));
    }
    let sections = denominators(&poles)
        .into_iter()
        .map(|(a1, a2)| Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1,
            a2,
        })
        .collect();
    normalize_at(sections, sqrt(lo * hi), fs)
}

/// Third-order Butterworth highpass at `fc` Hz.
pub fn butterworth_highpass(fc: f64, fs: f64) -> Vec<Biquad> {
    let wc = 2.0 * fs * tan(PI * fc / fs);
    let poles: Vec<Complex64> = prototype_poles(3)
        .into_iter()
        .map(|p| bilinear(Complex64::new(wc, 0.0) / p, fs))
        .collect();
    let sections = denominators(&poles)
        .into_iter()
        .map(|(a1, a2)| {
            if a2 == 0.0 {
                Biquad {
                    b0: 1.0,
                    b1: -1.0,
                    b2: 0.0,
                    a1,
                    a2,
                }
            } else {
                Biquad {
                    b0: 1.0,
                    b1: -2.0,
                    b2: 1.0,
                    a1,
                    a2,
                }
            }
        })
        .collect();
    normalize_at(sections, 0.5 * fs, fs)
}

/// Octave analysis filter for band `b`. The top band degrades to a highpass
/// when its upper edge reaches Nyquist.
pub fn octave_filter(b: usize, fs: f64) -> Vec<Biquad> {
    let (lo, hi) = bands::edges(b);
    if hi >= 0.49 * fs {
        butterworth_highpass(lo, fs)
    } else {
        butterworth_bandpass(lo, hi, fs)
    }
}

/// Solve the square system `a x = b` by Gaussian elimination with partial
/// pivoting. Returns `None` for a singular matrix.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Structure of a fitted band-gain filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GainFilterKind {
    Flat,
    Shelves,
    Graphic,
}

const SHELF_LOW: f64 = 250.0;
const SHELF_HIGH: f64 = 2000.0;
const PEAK_Q: f64 = core::f64::consts::SQRT_2;
/// Cheaper structures are accepted once their worst band error is below this.
const CHEAP_FIT_DB: f64 = 0.05;
/// Worst permitted band error for the full graphic fit.
pub const MAX_FIT_ERROR_DB: f64 = 0.5;

/// Minimum-cost filter whose magnitude at the band centres follows a target.
#[derive(Debug, Clone)]
pub struct BandGainFilter {
    pub kind: GainFilterKind,
    pub sections: Vec<Biquad>,
    pub max_error_db: f64,
}

fn cascade_db(sections: &[Biquad], f: f64, fs: f64) -> f64 {
    20.0 * log10(cascade_response(sections, 2.0 * PI * f / fs).norm())
}

fn fit_error(sections: &[Biquad], target_db: &BandValues, fs: f64) -> f64 {
    (0..BAND_COUNT)
        .filter(|&b| bands::usable(b, fs))
        .map(|b| libm::fabs(cascade_db(sections, bands::center(b), fs) - target_db[b]))
        .fold(0.0, f64::max)
}

type Design<'a> = &'a dyn Fn(f64) -> Biquad;

/// Least-squares fit of `designs` (each a function of its gain in dB) plus a
/// flat gain to `target_db` at the usable band centres. The interaction
/// matrix is re-linearized around the current gains a few times.
fn fit_equalizer(designs: &[Design<'_>], target_db: &BandValues, fs: f64) -> Vec<Biquad> {
    let used: Vec<usize> = (0..BAND_COUNT).filter(|&b| bands::usable(b, fs)).collect();
    let m = designs.len();
    let mean = used.iter().map(|&b| target_db[b]).sum::<f64>() / used.len() as f64;
    let resid: Vec<f64> = used.iter().map(|&b| target_db[b] - mean).collect();
    let mut gains = vec![0.0; m];
    for _ in 0..4 {
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let g = if libm::fabs(gains[j]) > 0.05 { gains[j] } else { 1.0 };
                let s = designs[j](g);
                used.iter()
                    .map(|&b| s.magnitude_db(bands::center(b), fs) / g)
                    .collect()
            })
            .collect();
        let mut ata = vec![vec![0.0; m]; m];
        let mut atb = vec![0.0; m];
        for i in 0..m {
            for j in 0..m {
                ata[i][j] = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            }
            ata[i][i] += 1e-9;
            atb[i] = cols[i].iter().zip(&resid).map(|(a, b)| a * b).sum();
        }
        match solve(ata, atb) {
            Some(g) => gains = g,
            None => break,
        }
    }
    let mut sections = vec![Biquad::gain(pow(10.0, mean / 20.0))];
    sections.extend(designs.iter().zip(&gains).map(|(d, &g)| d(g)));
    sections
}

impl BandGainFilter {
    /// Fit a filter whose magnitude at each band centre matches `target_db`.
    /// Bands at or above 0.45 fs are ignored.
    pub fn fit(target_db: &BandValues, fs: f64) -> Result<Self> {
        let used: Vec<f64> = (0..BAND_COUNT)
            .filter(|&b| bands::usable(b, fs))
            .map(|b| target_db[b])
            .collect();
        if used.is_empty() || target_db.iter().any(|v| !v.is_finite()) {
            return Err(Error::Design("band gain target unusable".into()));
        }
        let mean = used.iter().sum::<f64>() / used.len() as f64;
        let flat = vec![Biquad::gain(pow(10.0, mean / 20.0))];
        let err = fit_error(&flat, target_db, fs);
        if err < CHEAP_FIT_DB {
            return Ok(Self {
                kind: GainFilterKind::Flat,
                sections: flat,
                max_error_db: err,
            });
        }
        let ls = |g: f64| Biquad::low_shelf(SHELF_LOW, g, fs);
        let hs = |g: f64| Biquad::high_shelf(SHELF_HIGH, g, fs);
        let shelves = fit_equalizer(&[&ls, &hs], target_db, fs);
        let err = fit_error(&shelves, target_db, fs);
        if err < CHEAP_FIT_DB {
            return Ok(Self {
                kind: GainFilterKind::Shelves,
                sections: shelves,
                max_error_db: err,
            });
        }
        let lo_corner = sqrt(bands::center(0) * bands::center(1));
        let hi_corner = sqrt(bands::center(8) * bands::center(9)).min(0.4 * fs);
        let gls = move |g: f64| Biquad::low_shelf(lo_corner, g, fs);
        let ghs = move |g: f64| Biquad::high_shelf(hi_corner, g, fs);
        let peaks: Vec<_> = (1..9)
            .map(|b| {
                let fc = bands::center(b);
                move |g: f64| Biquad::peak(fc, PEAK_Q, g, fs)
            })
            .collect();
        // Grow the equalizer one peak at a time at the worst band until the
        // fit is tight or every band has its peak.
        let mut chosen: Vec<usize> = Vec::new();
        let (sections, err) = loop {
            let mut designs: Vec<Design<'_>> = vec![&gls];
            let mut order = chosen.clone();
            order.sort_unstable();
            designs.extend(order.iter().map(|&b| &peaks[b - 1] as Design<'_>));
            designs.push(&ghs);
            let sections = fit_equalizer(&designs, target_db, fs);
            let err = fit_error(&sections, target_db, fs);
            if err < CHEAP_FIT_DB || chosen.len() == peaks.len() {
                break (sections, err);
            }
            let worst = (1..9)
                .filter(|b| !chosen.contains(b) && bands::usable(*b, fs))
                .max_by(|&a, &b| {
                    let e = |k: usize| libm::fabs(cascade_db(&sections, bands::center(k), fs) - target_db[k]);
                    e(a).total_cmp(&e(b))
                });
            match worst {
                Some(b) => chosen.push(b),
                None => break (sections, err),
            }
        };
        if err > MAX_FIT_ERROR_DB {
            return Err(Error::Design(alloc::format!(
                "attenuation filter fit error {err:.2} dB exceeds {MAX_FIT_ERROR_DB} dB"
            )));
        }
        Ok(Self {
            kind: GainFilterKind::Graphic,
            sections,
            max_error_db: err,
        })
    }

    /// Largest magnitude over a dense log-spaced grid including DC and Nyquist.
    pub fn peak_magnitude(&self, fs: f64) -> f64 {
        let n = 512;
        (0..=n)
            .map(|i| {
                let f = match i {
                    0 => 0.0,
                    i if i == n => 0.5 * fs,
                    _ => 10.0 * pow(0.5 * fs / 10.0, i as f64 / n as f64),
                };
                cascade_response(&self.sections, 2.0 * PI * f / fs).norm()
            })
            .fold(0.0, f64::max)
    }
}
