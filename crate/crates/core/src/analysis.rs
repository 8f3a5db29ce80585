//! Objective impulse response analysis: octave filterbank, Schroeder energy
//! decay, reverberation times, dual-slope knee detection and IR comparison.

use alloc::vec;
use alloc::vec::Vec;

use libm::{log10, pow};
use serde::{Deserialize, Serialize};

use crate::bands::{self, BAND_1K, BAND_500, BAND_COUNT};
use crate::error::{Error, Result};
use crate::fft::Fft;
use crate::filter::{octave_filter, Cascade};

/// Level assigned to EDC samples whose remaining energy is exactly zero.
pub const EDC_FLOOR_DB: f64 = -300.0;

/// Residual must shrink to this fraction of the single-line residual before
/// a knee is reported.
pub const KNEE_RESIDUAL_RATIO: f64 = 0.5;
/// Minimum relative slope difference, measured against the steeper slope.
pub const KNEE_SLOPE_DIFFERENCE: f64 = 0.3;
/// Candidate knee grid step in dB.
pub const KNEE_GRID_DB: f64 = 0.5;
/// Upper end of the two-slope fit range.
pub const KNEE_RANGE_START_DB: f64 = -5.0;

/// Split `x` into the ten octave bands. Requires a sample rate above twice
/// the top band centre.
pub fn octave_filterbank(x: &[f64], fs: f64) -> Result<Vec<Vec<f64>>> {
    if !(fs > 2.0 * bands::center(BAND_COUNT - 1)) {
        return Err(Error::Config(alloc::format!(
            "sample rate {fs} Hz too low for the 16 kHz octave band"
        )));
    }
    Ok((0..BAND_COUNT)
        .map(|b| Cascade::new(octave_filter(b, fs)).process(x))
        .collect())
}

/// Schroeder backward integral in dB, normalized to 0 dB at the start.
/// Multiple channels are combined by summing their energies.
pub fn schroeder_edc_multi(channels: &[&[f64]]) -> Result<Vec<f64>> {
    let n = channels.iter().map(|c| c.len()).max().unwrap_or(0);
    let mut energy = vec![0.0; n];
    for c in channels {
        for (e, v) in energy.iter_mut().zip(c.iter()) {
            *e += v * v;
        }
    }
    edc_from_energy(&energy)
}

pub fn schroeder_edc(ir: &[f64]) -> Result<Vec<f64>> {
    schroeder_edc_multi(&[ir])
}

fn edc_from_energy(energy: &[f64]) -> Result<Vec<f64>> {
    let mut acc = 0.0;
    let mut cum = vec![0.0; energy.len()];
    for (c, e) in cum.iter_mut().zip(energy).rev() {
        acc += e;
        *c = acc;
    }
    let total = acc;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Analysis("silent or non-finite impulse response".into()));
    }
    let mut out: Vec<f64> = cum
        .iter()
        .map(|&c| if c > 0.0 { 10.0 * log10(c / total) } else { EDC_FLOOR_DB })
        .collect();
    // Rounding can make a tail sum exceed its predecessor by an ulp.
    for i in 1..out.len() {
        if out[i] > out[i - 1] {
            out[i] = out[i - 1];
        }
    }
    out[0] = 0.0;
    Ok(out)
}

/// Least-squares line through `(t, y)`; returns (slope, intercept, sse).
pub fn fit_line(t: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = t.len() as f64;
    if t.len() < 2 {
        return None;
    }
    let mt = t.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in t.iter().zip(y) {
        sxy += (a - mt) * (b - my);
        sxx += (a - mt) * (a - mt);
    }
    if sxx <= 0.0 {
        return None;
    }
    let s = sxy / sxx;
    let c = my - s * mt;
    let sse = t.iter().zip(y).map(|(a, b)| { let r = b - (s * a + c); r * r }).sum();
    Some((s, c, sse))
}

fn first_below(edc: &[f64], level: f64) -> Option<usize> {
    edc.iter().position(|&v| v <= level)
}

/// Reverberation time from a line fit between `hi_db` and `lo_db`,
/// extrapolated to 60 dB. `None` if the EDC never reaches `lo_db`.
pub fn decay_time(edc: &[f64], fs: f64, hi_db: f64, lo_db: f64) -> Option<f64> {
    let i0 = first_below(edc, hi_db)?;
    let i1 = first_below(edc, lo_db)?;
    if i1 <= i0 {
        return None;
    }
    let t: Vec<f64> = (i0..=i1).map(|i| i as f64 / fs).collect();
    let (s, _, _) = fit_line(&t, &edc[i0..=i1])?;
    (s < 0.0).then(|| -60.0 / s)
}

/// Two-slope description of a coupled-volume decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualSlope {
    /// Level of the intersection of the two decay lines, dB re EDC peak.
    pub knee_db: f64,
    /// Early and late decay slopes in dB per second.
    pub early_slope: f64,
    pub late_slope: f64,
    /// Residual of the two-slope model divided by the single-line residual.
    pub residual_ratio: f64,
}

/// Decay parameters of a single EDC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayEstimate {
    pub t30: f64,
    pub t20: f64,
    pub edt: f64,
    /// Lowest level used for dual-slope detection.
    pub floor_db: f64,
    pub dual_slope: Option<DualSlope>,
}

/// Lowest trustworthy EDC level: 10 dB above the level reached at 90% of the
/// curve's duration, where truncation starts bending the curve, and never
/// below -60 dB.
pub fn usable_floor(edc: &[f64]) -> f64 {
    let i = (edc.len() * 9 / 10).min(edc.len().saturating_sub(1));
    (edc[i] + 10.0).max(-60.0)
}

/// T30, T20 and EDT of an EDC sampled at `fs`, plus dual-slope detection.
pub fn estimate_decay(edc: &[f64], fs: f64) -> Result<DecayEstimate> {
    if edc.is_empty() {
        return Err(Error::Analysis("empty decay curve".into()));
    }
    let floor_db = usable_floor(edc);
    let range = || Error::Range {
        floor_db,
        required_db: -35.0,
    };
    if floor_db > -35.0 {
        return Err(range());
    }
    let t30 = decay_time(edc, fs, -5.0, -35.0).ok_or_else(range)?;
    let t20 = decay_time(edc, fs, -5.0, -25.0).ok_or_else(range)?;
    let edt = decay_time(edc, fs, 0.0, -10.0).ok_or_else(range)?;
    Ok(DecayEstimate {
        t30,
        t20,
        edt,
        floor_db,
        dual_slope: detect_knee(edc, fs, KNEE_RANGE_START_DB, floor_db),
    })
}

/// Two-slope fit over the EDC range `[hi_db, lo_db]`.
///
/// For each candidate level on a 0.5 dB grid, the late line is fit to the
/// EDC below the candidate and its energy is removed from the curve above
/// it; the early line is fit to what remains. The model is the energy sum
/// of both lines and the candidate with the smallest residual over the full
/// range wins. A knee is reported at the intersection of the two lines if
/// the residual falls to half the single-line residual, the slopes differ by
/// at least 30%, the late decay is the slower one and the intersection lies
/// inside the range.
pub fn detect_knee(edc: &[f64], fs: f64, hi_db: f64, lo_db: f64) -> Option<DualSlope> {
    let step = ((fs / 1000.0) as usize).max(1);
    let i0 = first_below(edc, hi_db)?;
    let i1 = first_below(edc, lo_db).unwrap_or(edc.len() - 1);
    if i1 <= i0 + 20 * step {
        return None;
    }
    let idx: Vec<usize> = (i0..=i1).step_by(step).collect();
    let t: Vec<f64> = idx.iter().map(|&i| i as f64 / fs).collect();
    let y: Vec<f64> = idx.iter().map(|&i| edc[i]).collect();
    let (_, _, r0) = fit_line(&t, &y)?;
    if r0 <= 0.0 {
        return None;
    }
    let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None;
    let mut lc = hi_db - 3.0;
    while lc > lo_db + 10.0 {
        lc -= KNEE_GRID_DB;
        let Some(ib) = y.iter().position(|&v| v <= lc) else {
            continue;
        };
        if ib < 5 || y.len() - ib < 5 {
            continue;
        }
        let Some((s2, b2, _)) = fit_line(&t[ib..], &y[ib..]) else {
            continue;
        };
        if s2 >= 0.0 {
            continue;
        }
        let (mut pt, mut py) = (Vec::new(), Vec::new());
        for k in 0..=ib {
            let e = pow(10.0, y[k] / 10.0) - pow(10.0, (s2 * t[k] + b2) / 10.0);
            if e > 0.0 {
                pt.push(t[k]);
                py.push(10.0 * log10(e));
            }
        }
        if pt.len() < 5 {
            continue;
        }
        let Some((s1, b1, _)) = fit_line(&pt, &py) else {
            continue;
        };
        if s1 >= 0.0 {
            continue;
        }
        let r: f64 = t
            .iter()
            .zip(&y)
            .map(|(&tt, &yy)| {
                let m = 10.0
                    * log10(pow(10.0, (s1 * tt + b1) / 10.0) + pow(10.0, (s2 * tt + b2) / 10.0));
                (yy - m) * (yy - m)
            })
            .sum();
        if best.is_none_or(|b| r < b.0) {
            best = Some((r, s1, b1, s2, b2, lc));
        }
    }
    let (r, s1, b1, s2, b2, _) = best?;
    if s1 == s2 {
        return None;
    }
    let tx = (b2 - b1) / (s1 - s2);
    let knee = s1 * tx + b1;
    let ratio = r / r0;
    let steeper = s1.abs().max(s2.abs());
    let accepted = ratio <= KNEE_RESIDUAL_RATIO
        && (s1 - s2).abs() / steeper >= KNEE_SLOPE_DIFFERENCE
        && s2.abs() < s1.abs()
        && knee <= hi_db
        && knee >= lo_db
        && tx >= t[0];
    accepted.then_some(DualSlope {
        knee_db: knee,
        early_slope: s1,
        late_slope: s2,
        residual_ratio: ratio,
    })
}

/// Decay parameters of one octave band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDecay {
    pub center_hz: f64,
    /// Band energy summed over channels.
    pub energy: f64,
    pub t30: Option<f64>,
    pub t20: Option<f64>,
    pub edt: Option<f64>,
}

/// Complete decay analysis of a (possibly multichannel) impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayAnalysis {
    pub fs: f64,
    /// Unfiltered EDC, channel energies summed.
    pub edc_db: Vec<f64>,
    /// EDC of the 500 Hz and 1 kHz bands combined; the broadband decay
    /// parameters and the dual-slope fit refer to this curve.
    pub mid_edc_db: Vec<f64>,
    pub t30: f64,
    pub t20: f64,
    pub edt: f64,
    pub bands: Vec<BandDecay>,
    pub dual_slope: Option<DualSlope>,
    /// Samples discarded as noise before integration.
    pub truncated_at: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalysisOptions {
    /// Cut the IR where it sinks into its noise floor before integrating.
    pub truncate_noise: bool,
}

/// Sample index where a noisy IR's 10 ms energy envelope last lies more
/// than 10 dB above the noise floor estimated from its final 10%. `None`
/// when the tail is not noise-limited.
pub fn noise_truncation_point(channels: &[&[f64]], fs: f64) -> Option<usize> {
    let n = channels.iter().map(|c| c.len()).max()?;
    let block = ((0.01 * fs) as usize).max(1);
    let nb = n / block;
    if nb < 20 {
        return None;
    }
    let levels: Vec<f64> = (0..nb)
        .map(|k| {
            let e: f64 = channels
                .iter()
                .flat_map(|c| c.iter().skip(k * block).take(block))
                .map(|v| v * v)
                .sum();
            10.0 * log10(e / block as f64 + 1e-300)
        })
        .collect();
    let tail = &levels[nb * 9 / 10..];
    let noise = tail.iter().sum::<f64>() / tail.len() as f64;
    let peak = levels.iter().copied().fold(f64::MIN, f64::max);
    if peak - noise > 80.0 {
        return None;
    }
    let last = levels.iter().rposition(|&l| l > noise + 10.0)?;
    Some((last + 1) * block)
}

fn weighted(a: Option<f64>, ea: f64, b: Option<f64>, eb: f64) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) if ea + eb > 0.0 => Some((ea * x + eb * y) / (ea + eb)),
        (Some(x), None) => Some(x),
        (None, Some(y)) => Some(y),
        _ => None,
    }
}

/// Filterbank, EDCs and decay parameters of an impulse response.
pub fn analyze_ir(channels: &[&[f64]], fs: f64, opts: AnalysisOptions) -> Result<DecayAnalysis> {
    if channels.is_empty() || channels.iter().all(|c| c.is_empty()) {
        return Err(Error::Analysis("empty impulse response".into()));
    }
    let truncated_at = if opts.truncate_noise {
        noise_truncation_point(channels, fs)
    } else {
        None
    };
    let cut: Vec<&[f64]> = channels
        .iter()
        .map(|c| &c[..truncated_at.unwrap_or(c.len()).min(c.len())])
        .collect();
    let edc_db = schroeder_edc_multi(&cut)?;
    let mut band_energy = vec![vec![0.0; edc_db.len()]; BAND_COUNT];
    for c in &cut {
        for (b, sig) in octave_filterbank(c, fs)?.into_iter().enumerate() {
            for (e, v) in band_energy[b].iter_mut().zip(sig) {
                *e += v * v;
            }
        }
    }
    let mut bands_out = Vec::with_capacity(BAND_COUNT);
    for (b, energy) in band_energy.iter().enumerate() {
        let total: f64 = energy.iter().sum();
        let est = edc_from_energy(energy).ok().and_then(|e| estimate_decay(&e, fs).ok());
        bands_out.push(BandDecay {
            center_hz: bands::NOMINAL_CENTERS[b],
            energy: total,
            t30: est.as_ref().map(|e| e.t30),
            t20: est.as_ref().map(|e| e.t20),
            edt: est.as_ref().map(|e| e.edt),
        });
    }
    let mid: Vec<f64> = band_energy[BAND_500]
        .iter()
        .zip(&band_energy[BAND_1K])
        .map(|(a, b)| a + b)
        .collect();
    let mid_edc_db = edc_from_energy(&mid)?;
    let reached = mid_edc_db.iter().copied().fold(0.0, f64::min);
    let (e5, e1) = (bands_out[BAND_500].energy, bands_out[BAND_1K].energy);
    let pick = |f: fn(&BandDecay) -> Option<f64>| {
        weighted(f(&bands_out[BAND_500]), e5, f(&bands_out[BAND_1K]), e1).ok_or(Error::Range {
            floor_db: reached,
            required_db: -35.0,
        })
    };
    let t30 = pick(|b| b.t30)?;
    let t20 = pick(|b| b.t20)?;
    let edt = pick(|b| b.edt)?;
    let floor = usable_floor(&mid_edc_db);
    let dual_slope = detect_knee(&mid_edc_db, fs, KNEE_RANGE_START_DB, floor);
    Ok(DecayAnalysis {
        fs,
        edc_db,
        mid_edc_db,
        t30,
        t20,
        edt,
        bands: bands_out,
        dual_slope,
        truncated_at,
    })
}

/// Objective differences between two impulse responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// RMS log-spectral distance per octave band in dB.
    pub band_spectral_distance_db: Vec<f64>,
    /// Integral of the absolute EDC difference in dB·s.
    pub edc_difference_area: f64,
    /// T30(b) - T30(a) from the broadband analysis, when both are defined.
    pub t30_delta: Option<f64>,
}

/// Levels below this are clamped before EDC differencing.
const COMPARE_FLOOR_DB: f64 = -100.0;

/// Compare two IRs with equal rate and channel count.
pub fn compare_irs(a: &[&[f64]], b: &[&[f64]], fs: f64) -> Result<ComparisonReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Comparison(alloc::format!(
            "channel layouts differ ({} vs {} channels)",
            a.len(),
            b.len()
        )));
    }
    let n = a.iter().chain(b.iter()).map(|c| c.len()).max().unwrap_or(0);
    let fft = Fft::new(n.max(2).next_power_of_two());
    let power = |chs: &[&[f64]]| {
        let mut p = vec![0.0; fft.len() / 2 + 1];
        for c in chs {
            let s = fft.forward_real(c);
            for (k, v) in p.iter_mut().enumerate() {
                *v += s[k].norm_sqr();
            }
        }
        p
    };
    let (pa, pb) = (power(a), power(b));
    let floor = 1e-12 * pa.iter().chain(&pb).copied().fold(0.0, f64::max);
    let band_spectral_distance_db = (0..BAND_COUNT)
        .map(|band| {
            let (lo, hi) = bands::edges(band);
            let (mut acc, mut count) = (0.0, 0usize);
            for k in 0..pa.len() {
                let f = k as f64 * fs / fft.len() as f64;
                if f >= lo && f < hi && pa[k] > floor && pb[k] > floor {
                    let d = 10.0 * log10(pa[k] / pb[k]);
                    acc += d * d;
                    count += 1;
                }
            }
            if count == 0 {
                0.0
            } else {
                libm::sqrt(acc / count as f64)
            }
        })
        .collect();
    let ea = schroeder_edc_multi(a)?;
    let eb = schroeder_edc_multi(b)?;
    let len = ea.len().max(eb.len());
    let at = |e: &[f64], i: usize| e.get(i).copied().unwrap_or(EDC_FLOOR_DB).max(COMPARE_FLOOR_DB);
    let edc_difference_area = (0..len)
        .map(|i| (at(&ea, i) - at(&eb, i)).abs())
        .sum::<f64>()
        / fs;
    let opts = AnalysisOptions::default();
    let t30_delta = match (analyze_ir(a, fs, opts), analyze_ir(b, fs, opts)) {
        (Ok(x), Ok(y)) => Some(y.t30 - x.t30),
        _ => None,
    };
    Ok(ComparisonReport {
        band_spectral_distance_db,
        edc_difference_area,
        t30_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn exp_noise(t60: f64, fs: f64, secs: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (fs * secs) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (rng.gen::<f64>() * 2.0 - 1.0) * pow(10.0, -3.0 * t / t60)
            })
            .collect()
    }

    #[test]
    fn ideal_exponential_edc_is_straight() {
        let fs = 8000.0;
        let ir: Vec<f64> = (0..(fs as usize * 2))
            .map(|i| pow(10.0, -3.0 * i as f64 / fs))
            .collect();
        let edc = schroeder_edc(&ir).unwrap();
        assert_eq!(edc[0], 0.0);
        let t = decay_time(&edc, fs, -5.0, -35.0).unwrap();
        assert!((t - 1.0).abs() < 1e-3, "{t}");
    }

    #[test]
    fn edc_is_monotone_and_rejects_silence() {
        let ir = exp_noise(0.5, 8000.0, 1.0, 3);
        let edc = schroeder_edc(&ir).unwrap();
        assert!(edc.windows(2).all(|w| w[1] <= w[0]));
        assert!(matches!(schroeder_edc(&[0.0; 10]), Err(Error::Analysis(_))));
    }

    #[test]
    fn range_error_reports_floor() {
        let ir: Vec<f64> = (0..1000).map(|i| pow(10.0, -i as f64 / 1000.0)).collect();
        let edc = schroeder_edc(&ir).unwrap();
        match estimate_decay(&edc, 1000.0) {
            Err(Error::Range { floor_db, .. }) => assert!(floor_db > -35.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_slope_noise_has_no_knee() {
        for seed in 0..10 {
            let ir = exp_noise(0.8, 16000.0, 1.6, seed);
            let edc = schroeder_edc(&ir).unwrap();
            let est = estimate_decay(&edc, 16000.0).unwrap();
            assert!(est.dual_slope.is_none(), "seed {seed}: {:?}", est.dual_slope);
            assert!((est.t30 - 0.8).abs() < 0.04);
        }
    }

    #[test]
    fn filterbank_rejects_low_rate() {
        assert!(matches!(octave_filterbank(&[1.0], 16000.0), Err(Error::Config(_))));
    }

    #[test]
    fn tone_lands_in_its_band() {
        let fs = 44100.0;
        let x: Vec<f64> = (0..44100)
            .map(|i| libm::sin(2.0 * core::f64::consts::PI * 1000.0 * i as f64 / fs))
            .collect();
        let out = octave_filterbank(&x, fs).unwrap();
        let e: Vec<f64> = out.iter().map(|b| b.iter().map(|v| v * v).sum()).collect();
        let total: f64 = e.iter().sum();
        assert!(e[BAND_1K] / total > 0.95);
    }

    #[test]
    fn comparison_identity_and_gain() {
        let fs = 44100.0;
        let a = exp_noise(0.3, fs, 0.6, 9);
        let r = compare_irs(&[&a], &[&a], fs).unwrap();
        assert!(r.band_spectral_distance_db.iter().all(|&d| d == 0.0));
        assert_eq!(r.edc_difference_area, 0.0);
        assert_eq!(r.t30_delta, Some(0.0));
        let b: Vec<f64> = a.iter().map(|v| v * 0.5).collect();
        let r = compare_irs(&[&a], &[&b], fs).unwrap();
        for d in &r.band_spectral_distance_db {
            assert!((d - 20.0 * log10(2.0)).abs() < 1e-9);
        }
        assert!(r.edc_difference_area < 1e-9);
        assert!(compare_irs(&[&a], &[&a, &a], fs).is_err());
    }

    #[test]
    fn zero_signal_gives_zero_bands() {
        let out = octave_filterbank(&[0.0; 256], 44100.0).unwrap();
        assert!(out.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn truncation_finds_noise_onset() {
        let fs = 8000.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ir = exp_noise(0.5, fs, 2.0, 4);
        for v in ir.iter_mut() {
            *v += 1e-3 * (rng.gen::<f64>() - 0.5);
        }
        let cut = noise_truncation_point(&[&ir], fs).unwrap();
        // Decay meets the noise near 0.5 s (about -50 dB).
        assert!(cut > 2000 && cut < 6000, "{cut}");
        let clean = exp_noise(0.5, fs, 2.0, 4);
        assert!(noise_truncation_point(&[&clean], fs).is_none());
    }
}
