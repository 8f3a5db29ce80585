use alod_core::analysis::*;
use alod_core::bands;
use alod_core::fft::Fft;
use alod_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 44100.0;

/// Exponentially decaying uniform noise with energy envelope
/// `sum_i a_i * 10^(-6 t / T_i)`.
fn decaying_noise(seed: u64, secs: f64, parts: &[(f64, f64)]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (secs * FS) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / FS;
            let env: f64 = parts.iter().map(|&(a, t60)| a * 10f64.powf(-6.0 * t / t60)).sum();
            rng.gen_range(-1.0..1.0) * env.sqrt()
        })
        .collect()
}

/// Periodic pink noise: random phases, 1/f power between the lowest band
/// edge and Nyquist, nothing outside.
fn pink_noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fft = Fft::new(n);
    let lo = bands::edges(0).0;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..n / 2 {
        let f = k as f64 * FS / n as f64;
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        if f >= lo {
            spec[k] = Complex64::from_polar(f.powf(-0.5), phase);
            spec[n - k] = spec[k].conj();
        }
    }
    fft.inverse_real(spec)
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[test]
fn single_slope_t60_is_recovered_within_two_percent() {
    for (k, t60) in [0.3, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let ir = decaying_noise(k as u64, 1.5 * t60, &[(1.0, t60)]);
        let est = estimate_decay(&schroeder_edc(&ir).unwrap(), FS).unwrap();
        assert!((est.t30 / t60 - 1.0).abs() < 0.02, "{t60}: {}", est.t30);
        assert!(est.dual_slope.is_none());
        // band filtering adds its own decay at short T60
        let a = analyze_ir(&[&ir], FS, AnalysisOptions::default()).unwrap();
        assert!((a.t30 / t60 - 1.0).abs() < 0.05, "{t60}: mid-band {}", a.t30);
    }
}

#[test]
fn no_false_knees_on_seeded_single_slopes() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut false_knees = 0;
    for seed in 0..100 {
        let t60 = rng.gen_range(0.3..2.0);
        let ir = decaying_noise(1000 + seed, 1.5 * t60, &[(1.0, t60)]);
        let edc = schroeder_edc(&ir).unwrap();
        if estimate_decay(&edc, FS).unwrap().dual_slope.is_some() {
            false_knees += 1;
        }
    }
    assert_eq!(false_knees, 0);
}

/// Energy weight of the slow part so the two Schroeder lines of
/// `(1, t1)` and `(w, t2)` intersect at `knee_db`.
fn slow_weight(t1: f64, t2: f64, knee_db: f64) -> f64 {
    let level = |w: f64| {
        // remaining energies: tau_i * a_i, with tau = T / (6 ln 10)
        let (e1, e2) = (t1, w * t2);
        let beta = e2 / e1;
        let tx = -10.0 * beta.log10() / (60.0 / t1 - 60.0 / t2);
        10.0 * (e1 / (e1 + e2)).log10() - 60.0 * tx / t1
    };
    let (mut lo, mut hi) = (1e-9f64, 1.0f64);
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if level(mid) < knee_db {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[test]
fn constructed_knee_is_found() {
    let (t1, t2) = (1.0, 3.0);
    let w = slow_weight(t1, t2, -15.0);
    let ir = decaying_noise(7, 5.0, &[(1.0, t1), (w, t2)]);
    let est = estimate_decay(&schroeder_edc(&ir).unwrap(), FS).unwrap();
    let knee = est.dual_slope.expect("knee").knee_db;
    assert!((-18.0..=-12.0).contains(&knee), "{knee}");
}

#[test]
fn exponential_edc_is_a_straight_line() {
    // deterministic amplitude decay with T60 = 1 s
    let ir: Vec<f64> = (0..(3.0 * FS) as usize)
        .map(|i| 10f64.powf(-3.0 * i as f64 / FS))
        .collect();
    let edc = schroeder_edc(&ir).unwrap();
    assert_eq!(edc[0], 0.0);
    for s in [0.25, 0.5, 1.0] {
        let i = (s * FS) as usize;
        assert!((edc[i] + 60.0 * s).abs() < 0.01, "{s}: {}", edc[i]);
    }
}

#[test]
fn time_reversal_keeps_normalization() {
    let ir = decaying_noise(3, 1.0, &[(1.0, 0.5)]);
    let rev: Vec<f64> = ir.iter().rev().copied().collect();
    assert!((power(&ir) - power(&rev)).abs() < 1e-15);
    assert_eq!(schroeder_edc(&rev).unwrap()[0], 0.0);
}

#[test]
fn silent_channel_is_an_analysis_error() {
    assert!(matches!(schroeder_edc(&[0.0; 100]), Err(Error::Analysis(_))));
}

#[test]
fn short_decay_is_a_range_error() {
    let ir = decaying_noise(4, 0.2, &[(1.0, 5.0)]);
    match estimate_decay(&schroeder_edc(&ir).unwrap(), FS) {
        Err(Error::Range { floor_db, required_db }) => {
            assert!(floor_db > -35.0);
            assert_eq!(required_db, -35.0);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn pink_noise_bands_are_flat_and_sum_to_broadband() {
    let x = pink_noise(11, 1 << 20);
    let bands = octave_filterbank(&x, FS).unwrap();
    let p: Vec<f64> = bands.iter().map(|b| power(b)).collect();
    let mean_db = p.iter().map(|v| 10.0 * v.log10()).sum::<f64>() / p.len() as f64;
    for (b, v) in p.iter().enumerate() {
        assert!((10.0 * v.log10() - mean_db).abs() < 1.0, "band {b}");
    }
    let sum: f64 = p.iter().sum();
    let d = 10.0 * (sum / power(&x)).log10();
    assert!(d.abs() < 1.0, "{d}");
}

#[test]
fn tone_lands_in_its_band() {
    let x: Vec<f64> = (0..(2.0 * FS) as usize)
        .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / FS).sin())
        .collect();
    let bands = octave_filterbank(&x, FS).unwrap();
    let total: f64 = x.iter().map(|v| v * v).sum();
    let in_band: f64 = bands[5].iter().map(|v| v * v).sum();
    assert!(in_band / total > 0.95, "{}", in_band / total);
}

#[test]
fn zero_signal_gives_zero_bands() {
    let bands = octave_filterbank(&[0.0; 4096], FS).unwrap();
    assert_eq!(bands.len(), 10);
    assert!(bands.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn low_rate_is_a_config_error() {
    assert!(matches!(octave_filterbank(&[0.0; 16], 22050.0), Err(Error::Config(_))));
}

#[test]
fn identical_irs_compare_to_zero() {
    let a = decaying_noise(5, 1.0, &[(1.0, 0.4)]);
    let b = decaying_noise(6, 1.0, &[(1.0, 0.4)]);
    let r = compare_irs(&[&a, &b], &[&a, &b], FS).unwrap();
    assert!(r.band_spectral_distance_db.iter().all(|&d| d == 0.0));
    assert_eq!(r.edc_difference_area, 0.0);
    assert_eq!(r.t30_delta, Some(0.0));
}

#[test]
fn gain_offset_shows_only_in_spectrum() {
    let a = decaying_noise(8, 1.0, &[(1.0, 0.4)]);
    let b: Vec<f64> = a.iter().map(|v| v * 0.5).collect();
    let r = compare_irs(&[&a], &[&b], FS).unwrap();
    let offset = 20.0 * 2f64.log10();
    for d in &r.band_spectral_distance_db {
        assert!((d - offset).abs() < 1e-9, "{d}");
    }
    assert!(r.edc_difference_area.abs() < 1e-9);
}

#[test]
fn layout_mismatch_is_a_comparison_error() {
    let a = vec![1.0; 10];
    assert!(matches!(compare_irs(&[&a], &[&a, &a], FS), Err(Error::Comparison(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn edc_is_non_increasing(x in prop::collection::vec(-1.0f64..1.0, 2..400)) {
        prop_assume!(x.iter().any(|&v| v != 0.0));
        let e = schroeder_edc(&x).unwrap();
        prop_assert_eq!(e[0], 0.0);
        prop_assert!(e.windows(2).all(|w| w[1] <= w[0]));
    }
}

