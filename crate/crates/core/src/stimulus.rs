//! Test signals: the pink pulse, its recolored variants, a synthetic
//! speech-like signal, loudness matching and stimulus convolution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, exp, log10, log2, pow, sin, sqrt};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::{self, BandValues, BAND_COUNT};
use crate::convolve::{PartitionedConvolver, DEFAULT_BLOCK};
use crate::error::{Error, Result};
use crate::fft::{bin_freq, Fft};
use crate::filter::{octave_filter, Biquad, Cascade};
use crate::render::ImpulseResponse;

const PI: f64 = core::f64::consts::PI;

/// Shortest pink pulse buffer.
pub const MIN_PULSE_LEN: usize = 4096;
/// Spectral range of the pink pulse.
pub const PINK_LO: f64 = 20.0;
pub const PINK_HI: f64 = 20_000.0;
/// Level change applied to each band of a variant.
pub const VARIANT_STEP_DB: f64 = 6.0;
/// Convergence bound for the measured band deltas of a variant.
const RECOLOR_TOLERANCE_DB: f64 = 0.01;
const RECOLOR_ITERATIONS: usize = 100;
/// Zero tail appended before band measurement so the filters ring out.
const MEASURE_TAIL_SECONDS: f64 = 0.25;
/// Samples more than this far below the peak power lie outside the active
/// region used for loudness matching.
pub const ACTIVE_THRESHOLD_DB: f64 = -60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StimulusKind {
    PinkPulse,
    PulseVariant,
    Speech,
}

/// Which bands of a variant are boosted (`true`) and which are cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BandPattern(pub [bool; BAND_COUNT]);

impl BandPattern {
    /// Seeded split into five boosted and five cut bands.
    pub fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut idx: [usize; BAND_COUNT] = core::array::from_fn(|i| i);
        idx.shuffle(rng);
        let mut up = [false; BAND_COUNT];
        for &i in &idx[..BAND_COUNT / 2] {
            up[i] = true;
        }
        BandPattern(up)
    }

    pub fn boosted(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Target level change per band in dB.
    pub fn deltas_db(&self) -> BandValues {
        core::array::from_fn(|b| if self.0[b] { VARIANT_STEP_DB } else { -VARIANT_STEP_DB })
    }

    /// Compact form such as `+-++--+-+-`, lowest band first.
    pub fn code(&self) -> alloc::string::String {
        self.0.iter().map(|&b| if b { '+' } else { '-' }).collect()
    }
}

/// Mono test signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub fs: f64,
    pub samples: Vec<f64>,
    pub kind: StimulusKind,
    #[serde(default)]
    pub pattern: Option<BandPattern>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Stimulus {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.pattern {
            if p.boosted() != BAND_COUNT / 2 {
                return crate::error::invalid("variant pattern has five boosted and five cut bands");
            }
        }
        if self.kind == StimulusKind::PulseVariant && self.pattern.is_none() {
            return crate::error::invalid("pulse variant carries its band pattern");
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Design length of the pink kernel: 4096 taps up to 48 kHz, doubled per
/// octave of sample rate above that.
pub fn pink_kernel_len(fs: f64) -> usize {
    let mut k = MIN_PULSE_LEN;
    while (k as f64) < MIN_PULSE_LEN as f64 * fs / 48_000.0 {
        k *= 2;
    }
    k
}

fn pink_magnitude(f: f64, fs: f64) -> f64 {
    let hi_stop = (PINK_HI * 1.1).min(0.5 * fs);
    let lo_stop = PINK_LO * 0.8;
    if f <= lo_stop || f >= hi_stop {
        return 0.0;
    }
    let taper = if f < PINK_LO {
        let u = (f - lo_stop) / (PINK_LO - lo_stop);
        0.5 - 0.5 * cos(PI * u)
    } else if f > PINK_HI {
        let u = (hi_stop - f) / (hi_stop - PINK_HI);
        0.5 - 0.5 * cos(PI * u)
    } else {
        1.0
    };
    taper / sqrt(f / 1000.0)
}

/// Pink pulse: a unit impulse through a linear-phase kernel with magnitude
/// proportional to f^-1/2, centred in a buffer of `len` samples and
/// normalized to unit peak.
pub fn make_pink_pulse(fs: f64, len: usize) -> Result<Stimulus> {
    let k = pink_kernel_len(fs);
    if len < MIN_PULSE_LEN || len < k {
        return Err(Error::Domain(format!(
            "pink pulse needs at least {} samples at {fs} Hz, got {len}",
            k.max(MIN_PULSE_LEN)
        )));
    }
    let fft = Fft::new(k);
    let mut spec: Vec<Complex64> = (0..k)
        .map(|i| {
            let bin = if i <= k / 2 { i } else { k - i };
            let a = pink_magnitude(bin_freq(bin, k, fs), fs);
            // delay of k/2 samples: (-1)^i
            Complex64::new(if i % 2 == 0 { a } else { -a }, 0.0)
        })
        .collect();
    fft.inverse(&mut spec);
    let kernel: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let peak = kernel.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut samples = vec![0.0; len];
    let start = len / 2 - k / 2;
    for (o, v) in samples[start..start + k].iter_mut().zip(&kernel) {
        *o = v / peak;
    }
    Ok(Stimulus {
        fs,
        samples,
        kind: StimulusKind::PinkPulse,
        pattern: None,
        seed: None,
    })
}

/// Energy per octave band as seen by the analysis filterbank.
pub fn band_energies(x: &[f64], fs: f64) -> Result<BandValues> {
    if !(fs > 2.0 * bands::center(BAND_COUNT - 1)) {
        return Err(Error::Config(format!("sample rate {fs} Hz too low for the 16 kHz octave band")));
    }
    let tail = (MEASURE_TAIL_SECONDS * fs) as usize;
    let mut out = [0.0; BAND_COUNT];
    for (b, e) in out.iter_mut().enumerate() {
        let mut c = Cascade::new(octave_filter(b, fs));
        let mut acc = 0.0;
        for &v in x.iter().chain(core::iter::repeat(&0.0).take(tail)) {
            let y = c.tick(v);
            acc += y * y;
        }
        *e = acc;
    }
    Ok(out)
}

/// Per-band level of `y` relative to `x`, dB.
pub fn band_deltas_db(x: &[f64], y: &[f64], fs: f64) -> Result<BandValues> {
    let ex = band_energies(x, fs)?;
    let ey = band_energies(y, fs)?;
    Ok(core::array::from_fn(|b| 10.0 * log10(ey[b] / ex[b])))
}

/// Gain nodes per octave band in the recoloring equalizer.
const NODES_PER_BAND: usize = 4;
const NODES: usize = NODES_PER_BAND * BAND_COUNT;

/// Node position in octaves above the lowest band centre.
fn node_position(j: usize) -> f64 {
    (j as f64 + 0.5) / NODES_PER_BAND as f64 - 0.5
}

/// Interpolation between the two nodes bracketing frequency `f`: returns
/// the lower node index and the weight of that node (the upper node gets
/// the rest). Nodes sit a quarter octave either side of every band centre.
fn node_pair(f: f64) -> (usize, f64) {
    let x = if f > 0.0 { log2(f / bands::center(0)) } else { f64::NEG_INFINITY };
    let first = node_position(0);
    let last = node_position(NODES - 1);
    if x <= first {
        return (0, 1.0);
    }
    if x >= last {
        return (NODES - 2, 0.0);
    }
    let u = (x - first) * NODES_PER_BAND as f64;
    let k = (u as usize).min(NODES - 2);
    let c = cos(0.5 * PI * (u - k as f64));
    (k, c * c)
}

#[cfg(test)]
fn node_weight(j: usize, f: f64) -> f64 {
    let (k, w) = node_pair(f);
    if j == k {
        w
    } else if j == k + 1 {
        1.0 - w
    } else {
        0.0
    }
}

fn bin_pairs(n: usize, fs: f64) -> Vec<(usize, f64)> {
    (0..n)
        .map(|i| node_pair(bin_freq(if i <= n / 2 { i } else { n - i }, n, fs)))
        .collect()
}

fn apply_nodes(x: &[f64], gains: &[f64], fft: &Fft, pairs: &[(usize, f64)]) -> Vec<f64> {
    let mut spec = fft.forward_real(x);
    for (s, &(k, w)) in spec.iter_mut().zip(pairs) {
        *s *= gains[k] * w + gains[k + 1] * (1.0 - w);
    }
    let mut y = fft.inverse_real(spec);
    y.truncate(x.len());
    y
}

/// Band energy of the equalized signal is a quadratic form in the node
/// gains. `gram[b][j][k]` is the inner product of the band-`b` outputs of
/// node components `j` and `k`.
fn band_grams(x: &[f64], fs: f64, fft: &Fft, pairs: &[(usize, f64)]) -> Vec<Vec<Vec<f64>>> {
    let tail = (MEASURE_TAIL_SECONDS * fs) as usize;
    let components: Vec<Vec<f64>> = (0..NODES)
        .map(|j| {
            let mut g = [0.0; NODES];
            g[j] = 1.0;
            apply_nodes(x, &g, fft, pairs)
        })
        .collect();
    (0..BAND_COUNT)
        .map(|b| {
            let filtered: Vec<Vec<f64>> = components
                .iter()
                .map(|c| {
                    let mut f = Cascade::new(octave_filter(b, fs));
                    c.iter()
                        .chain(core::iter::repeat(&0.0).take(tail))
                        .map(|&v| f.tick(v))
                        .collect()
                })
                .collect();
            let mut gram = vec![vec![0.0; NODES]; NODES];
            for j in 0..NODES {
                for k in j..NODES {
                    let v: f64 = filtered[j].iter().zip(&filtered[k]).map(|(p, q)| p * q).sum();
                    gram[j][k] = v;
                    gram[k][j] = v;
                }
            }
            gram
        })
        .collect()
}

fn quad(g: &[Vec<f64>], a: &[f64]) -> (f64, Vec<f64>) {
    let ga: Vec<f64> = g.iter().map(|row| row.iter().zip(a).map(|(p, q)| p * q).sum()).collect();
    (a.iter().zip(&ga).map(|(p, q)| p * q).sum(), ga)
}

/// Node gains whose band deltas match `target` under the analysis
/// filterbank. Damped minimum-norm Gauss-Newton steps in log gain, starting
/// from the plain per-band step.
fn solve_nodes(grams: &[Vec<Vec<f64>>], target: &BandValues) -> Vec<f64> {
    const DB: f64 = 8.685_889_638_065_037; // 20 / ln 10
    let ones = [1.0; NODES];
    let e0: Vec<f64> = grams.iter().map(|g| quad(g, &ones).0).collect();
    let eval = |u: &[f64]| {
        let a: Vec<f64> = u.iter().map(|v| exp(*v)).collect();
        let mut jac = vec![vec![0.0; NODES]; BAND_COUNT];
        let mut r = vec![0.0; BAND_COUNT];
        for b in 0..BAND_COUNT {
            let (e, ga) = quad(&grams[b], &a);
            r[b] = 10.0 * log10(e / e0[b]) - target[b];
            for j in 0..NODES {
                jac[b][j] = DB * a[j] * ga[j] / e;
            }
        }
        let cost: f64 = r.iter().map(|v| v * v).sum();
        (r, jac, cost)
    };
    let mut u: Vec<f64> = (0..NODES).map(|j| target[j / NODES_PER_BAND] / DB).collect();
    let (mut r, mut jac, mut cost) = eval(&u);
    let mut lambda = 1e-3;
    for _ in 0..RECOLOR_ITERATIONS {
        if r.iter().all(|v| v.abs() < RECOLOR_TOLERANCE_DB) {
            break;
        }
        // step = -J^T (J J^T + lambda D)^-1 r
        let mut jjt: Vec<Vec<f64>> = (0..BAND_COUNT)
            .map(|b| (0..BAND_COUNT).map(|c| jac[b].iter().zip(&jac[c]).map(|(p, q)| p * q).sum()).collect())
            .collect();
        for (b, row) in jjt.iter_mut().enumerate() {
            row[b] *= 1.0 + lambda;
        }
        let Some(y) = crate::filter::solve(jjt, r.clone()) else { break };
        let trial: Vec<f64> = (0..NODES)
            .map(|j| u[j] - (0..BAND_COUNT).map(|b| jac[b][j] * y[b]).sum::<f64>())
            .collect();
        let (tr, tj, tc) = eval(&trial);
        if tc < cost {
            (u, r, jac, cost) = (trial, tr, tj, tc);
            lambda = (lambda / 3.0).max(1e-9);
        } else {
            lambda *= 4.0;
        }
    }
    u.iter().map(|v| exp(*v)).collect()
}

/// Recolor a pink pulse: five seeded bands up and five down by 6 dB as
/// measured by the octave filterbank.
pub fn recolor_pulse(pulse: &Stimulus, seed: u64) -> Result<Stimulus> {
    if pulse.kind != StimulusKind::PinkPulse {
        return Err(Error::Domain("only a pink pulse can be recolored".into()));
    }
    let pattern = BandPattern::draw(&mut ChaCha8Rng::seed_from_u64(seed));
    recolor_with(pulse, pattern, seed)
}

fn recolor_with(pulse: &Stimulus, pattern: BandPattern, seed: u64) -> Result<Stimulus> {
    let fs = pulse.fs;
    if !(fs > 2.0 * bands::center(BAND_COUNT - 1)) {
        return Err(Error::Config(format!("sample rate {fs} Hz too low for the 16 kHz octave band")));
    }
    let fft = Fft::new((2 * pulse.samples.len()).next_power_of_two());
    let pairs = bin_pairs(fft.len(), fs);
    let grams = band_grams(&pulse.samples, fs, &fft, &pairs);
    let gains = solve_nodes(&grams, &pattern.deltas_db());
    Ok(Stimulus {
        fs,
        samples: apply_nodes(&pulse.samples, &gains, &fft, &pairs),
        kind: StimulusKind::PulseVariant,
        pattern: Some(pattern),
        seed: Some(seed),
    })
}

/// `count` variants with pairwise distinct patterns. Variant `i` starts from
/// seed `seed + i`; a seed whose pattern repeats an earlier one is skipped
/// in steps of `count` until a new pattern comes up. Each variant records the
/// seed that produced it.
pub fn pulse_variants(pulse: &Stimulus, seed: u64, count: usize) -> Result<Vec<Stimulus>> {
    if count > 252 {
        return Err(Error::Domain(format!("only 252 distinct patterns exist, asked for {count}")));
    }
    let mut used: Vec<BandPattern> = Vec::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let mut s = seed.wrapping_add(i as u64);
        let mut p = BandPattern::draw(&mut ChaCha8Rng::seed_from_u64(s));
        while used.contains(&p) {
            s = s.wrapping_add(count as u64);
            p = BandPattern::draw(&mut ChaCha8Rng::seed_from_u64(s));
        }
        used.push(p);
        out.push(recolor_with(pulse, p, s)?);
    }
    Ok(out)
}

/// Synthetic speech-like signal: voiced syllables with formant structure
/// and a pitch contour, fricative noise bursts and short pauses. Peak 0.9.
pub fn speech_like(fs: f64, seconds: f64, seed: u64) -> Stimulus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * fs) as usize;
    let mut out = vec![0.0; n];
    let mut t = (0.05 * fs) as usize;
    let mut phase = 0.0;
    while t < n {
        let dur = (rng.gen_range(0.12..0.28) * fs) as usize;
        let end = (t + dur).min(n);
        let fricative = rng.gen_bool(0.25);
        let f0 = rng.gen_range(100.0..140.0);
        let glide = rng.gen_range(-20.0..20.0);
        let formants = [
            rng.gen_range(300.0..800.0),
            rng.gen_range(900.0..2200.0),
            rng.gen_range(2400.0..3200.0),
        ];
        let mut chain = Cascade::new(if fricative {
            vec![
                Biquad::high_shelf(3000.0, 18.0, fs),
                Biquad::low_shelf(1500.0, -24.0, fs),
            ]
        } else {
            formants.iter().map(|&f| Biquad::peak(f, 6.0, 15.0, fs)).collect()
        });
        let len = end - t;
        for i in 0..len {
            let u = i as f64 / len as f64;
            let env = sin(PI * u) * (1.0 - 0.3 * u);
            let src = if fricative {
                0.3 * rng.gen_range(-1.0..1.0)
            } else {
                let f = f0 + glide * u;
                phase += f / fs;
                phase -= libm::floor(phase);
                // band-limited glottal-like source: decaying harmonic sum
                let mut s = 0.0;
                let mut h = 1;
                while (h as f64) * f < 4000.0 {
                    s += sin(2.0 * PI * h as f64 * phase) / h as f64;
                    h += 1;
                }
                s * exp(-0.5 * u)
            };
            out[t + i] = env * chain.tick(src);
        }
        t = end + (rng.gen_range(0.03..0.12) * fs) as usize;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    Stimulus {
        fs,
        samples: out,
        kind: StimulusKind::Speech,
        pattern: None,
        seed: Some(seed),
    }
}

/// RMS over the active region: from the first to the last sample whose
/// summed channel power is within `ACTIVE_THRESHOLD_DB` of the peak.
pub fn active_rms(channels: &[&[f64]]) -> f64 {
    let n = channels.iter().map(|c| c.len()).max().unwrap_or(0);
    let power: Vec<f64> = (0..n)
        .map(|i| channels.iter().filter_map(|c| c.get(i)).map(|v| v * v).sum())
        .collect();
    let peak = power.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return 0.0;
    }
    let floor = peak * pow(10.0, ACTIVE_THRESHOLD_DB / 10.0);
    let first = power.iter().position(|&p| p >= floor).unwrap_or(0);
    let last = power.iter().rposition(|&p| p >= floor).unwrap_or(0);
    let region = &power[first..=last];
    sqrt(region.iter().sum::<f64>() / region.len() as f64)
}

/// Gains that bring every stimulus of a set to the active-region RMS of the
/// quietest one, so no gain exceeds one.
pub fn normalize_loudness(set: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let rms: Vec<f64> = set
        .iter()
        .map(|s| active_rms(&s.iter().map(Vec::as_slice).collect::<Vec<_>>()))
        .collect();
    if let Some(i) = rms.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::Normalization(format!("stimulus {i} is silent")));
    }
    let target = rms.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(rms.iter().map(|r| target / r).collect())
}

/// Render a stimulus through every channel of an impulse response.
pub fn convolve(signal: &Stimulus, ir: &ImpulseResponse) -> Result<Vec<Vec<f64>>> {
    if (signal.fs - ir.fs).abs() > 1e-9 {
        return Err(Error::Format(format!(
            "stimulus at {} Hz, impulse response at {} Hz",
            signal.fs, ir.fs
        )));
    }
    Ok(ir
        .channels
        .iter()
        .map(|h| PartitionedConvolver::new(h, DEFAULT_BLOCK).convolve(&signal.samples))
        .collect())
}
