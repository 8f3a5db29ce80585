use std::path::Path;

use alod::error::{Category, Error};
use alod::hrir::{decode_hrir, encode_hrir, load_hrir, write_hrir};
use alod::layout::{resolve_layout, LayoutFile};
use alod::scene_io::{parse_scene, read_scene, resolve_scene, scene_to_toml, write_scene};
use alod::wav::{read_wav, write_wav};
use alod_core::scene::{self, SCHEMA_VERSION};
use alod_core::spatial::{HrirSet, SpeakerLayout};
use proptest::prelude::*;

#[test]
fn every_preset_survives_a_toml_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for name in scene::PRESET_NAMES {
        let s = scene::preset(name).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        write_scene(&path, &s).unwrap();
        assert_eq!(read_scene(&path).unwrap(), s, "{name}");
    }
}

#[test]
fn other_schema_versions_are_rejected() {
    let text = scene_to_toml(&scene::pub_scene());
    let bumped = text.replace(
        &format!("schema_version = {SCHEMA_VERSION}"),
        &format!("schema_version = {}", SCHEMA_VERSION + 1),
    );
    assert_ne!(text, bumped);
    let e = parse_scene(&bumped, Path::new("bumped.toml")).unwrap_err();
    assert!(matches!(e, Error::Parse { .. }), "{e}");
    assert_eq!(e.category(), Category::Validation);
    assert!(e.to_string().contains("schema_version"));

    let missing: String = text.lines().filter(|l| !l.starts_with("schema_version")).collect::<Vec<_>>().join("\n");
    assert!(parse_scene(&missing, Path::new("m.toml")).is_err());
}

#[test]
fn invalid_geometry_in_a_file_is_a_validation_error() {
    let text = scene_to_toml(&scene::pub_scene()).replacen("17.76", "-17.76", 1);
    let e = parse_scene(&text, Path::new("bad.toml")).unwrap_err();
    assert!(matches!(e, Error::Core(_)), "{e}");
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn files_win_over_preset_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pub");
    let mut s = scene::pub_scene();
    s.name = "renamed".into();
    write_scene(&path, &s).unwrap();
    assert_eq!(resolve_scene(path.to_str().unwrap()).unwrap().name, "renamed");
    assert_eq!(resolve_scene("pub").unwrap().name, "pub");
    let e = resolve_scene("no_such_scene").unwrap_err();
    assert_eq!(e.category(), Category::Io);
}

#[test]
fn wav_round_trip_is_float_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let a: Vec<f64> = (0..1000).map(|i| ((i as f64) * 0.37).sin() as f32 as f64).collect();
    let b: Vec<f64> = a.iter().map(|v| -v * 0.25).collect();
    write_wav(&path, 48000.0, &[a.clone(), b.clone()]).unwrap();
    let (fs, ch) = read_wav(&path).unwrap();
    assert_eq!(fs, 48000.0);
    assert_eq!(ch, vec![a, b]);
}

#[test]
fn wav_header_is_32_bit_float() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.wav");
    write_wav(&path, 44100.0, &[vec![0.5; 10]]).unwrap();
    let spec = hound::WavReader::open(&path).unwrap().spec();
    assert_eq!(spec.bits_per_sample, 32);
    assert_eq!(spec.sample_format, hound::SampleFormat::Float);
}

#[test]
fn integer_wav_is_scaled_to_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 44100,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [16384i16, -32768, 0] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    assert_eq!(read_wav(&path).unwrap().1, vec![vec![0.5, -1.0, 0.0]]);
}

#[test]
fn fractional_rate_cannot_be_written() {
    let dir = tempfile::tempdir().unwrap();
    assert!(write_wav(&dir.path().join("f.wav"), 44100.5, &[vec![0.0]]).is_err());
}

#[test]
fn hrir_container_round_trip() {
    let set = HrirSet::from_head_model(10.0, 44100.0, 343.0).unwrap();
    let set = HrirSet::new(
        set.fs,
        set.entries
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.left.iter_mut().for_each(|v| *v = *v as f32 as f64);
                e.right.iter_mut().for_each(|v| *v = *v as f32 as f64);
                e
            })
            .collect(),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.hrir");
    write_hrir(&path, &set).unwrap();
    let back = load_hrir(&path, 44100.0).unwrap();
    assert_eq!(back.entries, set.entries);

    let bytes = encode_hrir(set.fs, &set.entries);
    let n = set.entries.len();
    assert_eq!(bytes.len(), 28 + n * 16 + n * set.len() * 8);
    assert!(decode_hrir(&bytes[..bytes.len() - 1], &path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_hrir(&bad, &path), Err(Error::Parse { .. })));
}

#[test]
fn hrir_at_another_rate_is_resampled() {
    let set = HrirSet::from_head_model(10.0, 48000.0, 343.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h48.hrir");
    write_hrir(&path, &set).unwrap();
    let back = load_hrir(&path, 44100.0).unwrap();
    assert_eq!(back.fs, 44100.0);
    assert_eq!(back.entries.len(), set.entries.len());
}

#[test]
fn layout_file_round_trip_keeps_order() {
    let vr = SpeakerLayout::vr_lab();
    let file = LayoutFile::from_layout(&vr);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lab.toml");
    std::fs::write(&path, toml::to_string(&file).unwrap()).unwrap();
    let back = resolve_layout(path.to_str().unwrap()).unwrap();
    assert_eq!(back.len(), vr.len());
    for (a, b) in back.directions.iter().zip(&vr.directions) {
        assert!((*a - *b).norm() < 1e-12);
    }
    assert_eq!(back.distances, vr.distances);
    assert_eq!(resolve_layout("vr_lab").unwrap().len(), vr.len());
}

#[test]
fn two_speaker_layout_is_rejected() {
    let text = "name = \"pair\"\n[[speaker]]\nazimuth = 30.0\nelevation = 0.0\ndistance = 2.0\n\
                [[speaker]]\nazimuth = -30.0\nelevation = 0.0\ndistance = 2.0\n";
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pair.toml");
    std::fs::write(&path, text).unwrap();
    let e = resolve_layout(path.to_str().unwrap()).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn wav_bytes_round_trip(x in prop::collection::vec(-1.0f32..1.0, 1..300), ch in 1usize..4) {
        let channels: Vec<Vec<f64>> = (0..ch)
            .map(|c| x.iter().map(|&v| f64::from(v) / f64::from(1u32 << c)).collect())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.wav");
        write_wav(&path, 44100.0, &channels).unwrap();
        prop_assert_eq!(read_wav(&path).unwrap().1, channels);
    }
}
