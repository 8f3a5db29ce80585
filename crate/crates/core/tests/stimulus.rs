use alod_core::render::{ChannelLayout, ImpulseResponse};
use alod_core::stimulus::*;
use alod_core::Error;

const FS: f64 = 44100.0;

fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[test]
fn pink_pulse_is_flat_per_octave() {
    let p = make_pink_pulse(FS, 16384).unwrap();
    assert_eq!(p.kind, StimulusKind::PinkPulse);
    let e = band_energies(&p.samples, FS).unwrap();
    for w in e.windows(2) {
        assert!((db(w[1]) - db(w[0])).abs() < 1.0);
    }
    let peak = p.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert_eq!(peak, 1.0);
}

#[test]
fn doubling_length_keeps_band_ratios() {
    let a = band_energies(&make_pink_pulse(FS, 8192).unwrap().samples, FS).unwrap();
    let b = band_energies(&make_pink_pulse(FS, 16384).unwrap().samples, FS).unwrap();
    for k in 1..a.len() {
        let ra = db(a[k]) - db(a[0]);
        let rb = db(b[k]) - db(b[0]);
        assert!((ra - rb).abs() < 0.1, "band {k}");
    }
}

#[test]
fn short_pulse_is_a_domain_error() {
    assert!(matches!(make_pink_pulse(FS, 1000), Err(Error::Domain(_))));
}

#[test]
fn eight_variants_are_distinct_and_exact() {
    let pulse = make_pink_pulse(FS, 8192).unwrap();
    let vars = pulse_variants(&pulse, 42, 8).unwrap();
    assert_eq!(vars.len(), 8);
    let mut codes: Vec<String> = vars.iter().map(|v| v.pattern.unwrap().code()).collect();
    codes.sort();
    codes.dedup();
    assert_eq!(codes.len(), 8);
    for v in &vars {
        let pat = v.pattern.unwrap();
        assert_eq!(pat.boosted(), 5);
        let d = band_deltas_db(&pulse.samples, &v.samples, FS).unwrap();
        let want = pat.deltas_db();
        let (mut up, mut down) = (0, 0);
        for b in 0..10 {
            assert!((d[b] - want[b]).abs() < 0.5, "band {b}: {} vs {}", d[b], want[b]);
            if (d[b] - 6.0).abs() < 0.5 {
                up += 1;
            }
            if (d[b] + 6.0).abs() < 0.5 {
                down += 1;
            }
        }
        assert_eq!((up, down), (5, 5));
    }
}

#[test]
fn recoloring_is_deterministic() {
    let pulse = make_pink_pulse(FS, 4096).unwrap();
    let a = recolor_pulse(&pulse, 9).unwrap();
    let b = recolor_pulse(&pulse, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.kind, StimulusKind::PulseVariant);
    assert_eq!(a.seed, Some(9));
}

#[test]
fn only_pink_pulses_can_be_recolored() {
    let s = speech_like(FS, 1.0, 1);
    assert!(recolor_pulse(&s, 0).is_err());
}

#[test]
fn identical_signals_get_equal_gains() {
    let x = speech_like(FS, 1.0, 4).samples;
    let g = normalize_loudness(&[vec![x.clone()], vec![x]]).unwrap();
    assert_eq!(g[0], g[1]);
}

#[test]
fn normalized_set_has_tight_rms_spread() {
    let set: Vec<Vec<Vec<f64>>> = (0..6)
        .map(|k| {
            let s = speech_like(FS, 1.5, k).samples;
            let g = 0.1 + 0.3 * k as f64;
            vec![s.iter().map(|v| v * g).collect(), s.iter().map(|v| v * g * 0.7).collect()]
        })
        .collect();
    let gains = normalize_loudness(&set).unwrap();
    let levels: Vec<f64> = set
        .iter()
        .zip(&gains)
        .map(|(chs, g)| {
            let scaled: Vec<Vec<f64>> = chs.iter().map(|c| c.iter().map(|v| v * g).collect()).collect();
            let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
            20.0 * active_rms(&refs).log10()
        })
        .collect();
    let hi = levels.iter().copied().fold(f64::MIN, f64::max);
    let lo = levels.iter().copied().fold(f64::MAX, f64::min);
    assert!(hi - lo < 0.1, "{}", hi - lo);
}

#[test]
fn convolution_checks_rates_and_lengths() {
    let s = speech_like(FS, 0.5, 2);
    let ir = ImpulseResponse::new(FS, ChannelLayout::Binaural, vec![vec![1.0, 0.5, 0.25]; 2]).unwrap();
    let y = convolve(&s, &ir).unwrap();
    assert_eq!(y.len(), 2);
    assert_eq!(y[0].len(), s.samples.len() + 2);
    let other = ImpulseResponse::new(48000.0, ChannelLayout::Binaural, vec![vec![1.0]; 2]).unwrap();
    assert!(matches!(convolve(&s, &other), Err(Error::Format(_))));
}

#[test]
fn speech_like_signal_is_seeded() {
    assert_eq!(speech_like(FS, 1.0, 5), speech_like(FS, 1.0, 5));
    assert_ne!(speech_like(FS, 1.0, 5), speech_like(FS, 1.0, 6));
}
