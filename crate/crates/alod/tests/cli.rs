use std::path::Path;
use std::process::{Command, Output};

fn alod(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alod"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn pub_ism_headphone_synthesis_writes_wav_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["brir", "synth", "--scene", "pub", "--alod", "ism", "--mode", "hp", "--seed", "1", "--out", "pub.wav"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (fs, ch) = alod::wav::read_wav(&dir.path().join("pub.wav")).unwrap();
    assert_eq!(fs, 44100.0);
    assert_eq!(ch.len(), 2);
    let s = alod::provenance::read_sidecar(&dir.path().join("pub.provenance.json")).unwrap();
    assert_eq!(s.provenance.seed, Some(1));
    assert_eq!(s.provenance.command, "brir synth");
    assert!(alod::provenance::replay(&s).unwrap().identical());
}

#[test]
fn unknown_alod_is_a_usage_error_with_validation_exit() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["brir", "synth", "--scene", "pub", "--alod", "razr2", "--mode", "hp"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[usage]:"), "{err}");
    assert!(err.contains("razr1"), "{err}");
}

#[test]
fn unknown_mode_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["brir", "synth", "--scene", "pub", "--alod", "ism", "--mode", "stereo"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn unknown_flag_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["brir", "synth", "--scene", "pub", "--alod", "ism", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[usage]:"));
    let o = alod(dir.path(), &["replay"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_file_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["analyze", "--ir", "absent.wav"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).starts_with("error[io]:"));
    let o = alod(dir.path(), &["brir", "synth", "--scene", "absent.toml", "--alod", "ism"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn failed_validation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = alod::scene_io::scene_to_toml(&alod_core::scene::pub_scene()).replacen("17.76", "0.0", 1);
    std::fs::write(dir.path().join("flat.toml"), text).unwrap();
    let o = alod(dir.path(), &["scene", "validate", "flat.toml"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[validation]:"), "{}", stderr(&o));
}

#[test]
fn scene_validate_writes_a_loadable_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["scene", "validate", "living_room", "--out", "lr.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = alod(dir.path(), &["scene", "validate", "lr.toml"]);
    assert!(stdout(&o).contains("living_room: valid (2 rooms)"));
}

#[test]
fn underground_analysis_shows_the_coupled_decay() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["brir", "synth", "--scene", "underground", "--alod", "razr", "--out", "ug.wav"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = alod(dir.path(), &["analyze", "--ir", "ug.wav", "--report", "ug.json", "--csv", "plots"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("ug.json")).unwrap()).unwrap();
    let t30 = r["t30_s"].as_f64().unwrap();
    assert!((t30 / 1.6 - 1.0).abs() < 0.1, "{t30}");
    let knee = r["dual_slope"]["knee_db"].as_f64().unwrap();
    assert!((-18.0..=-12.0).contains(&knee), "{knee}");
    assert_eq!(r["bands"].as_array().unwrap().len(), 10);
    let edc = std::fs::read_to_string(dir.path().join("plots/edc.csv")).unwrap();
    assert!(edc.starts_with("time_s,edc_db,mid_edc_db"));
}

#[test]
fn pulse_variants_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = alod(dir.path(), &["stimulus", "pulse", "--variants", "8", "--seed", "2", "--out", "stim"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table: Vec<alod::jobs::VariantInfo> =
        serde_json::from_slice(&std::fs::read(dir.path().join("stim/variants.json")).unwrap()).unwrap();
    assert_eq!(table.len(), 8);
    for v in &table {
        assert_eq!(v.pattern.matches('+').count(), 5);
        assert!(dir.path().join("stim").join(&v.file).is_file());
    }
    assert!(dir.path().join("stim/provenance.json").is_file());

    for (alod_name, out) in [("razr", "a.wav"), ("razr1", "b.wav")] {
        let o = alod(dir.path(), &["brir", "synth", "--scene", "living_room", "--alod", alod_name, "--length", "1", "--out", out]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let o = alod(dir.path(), &["compare", "a.wav", "b.wav", "--report", "cmp.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("cmp.json")).unwrap()).unwrap();
    assert!(r["edc_difference_area_db_s"].as_f64().unwrap() > 0.0);

    let o = alod(dir.path(), &["render", "--ir", "a.wav", "--signal", "stim/pulse.wav", "--out", "wet.wav"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("wet.provenance.json").is_file());
}

#[test]
fn loudspeaker_render_has_one_channel_per_speaker() {
    let dir = tempfile::tempdir().unwrap();
    let layout = "name = \"quad\"\n\
        [[speaker]]\nazimuth = 45.0\nelevation = 0.0\ndistance = 2.0\n\
        [[speaker]]\nazimuth = 135.0\nelevation = 0.0\ndistance = 2.0\n\
        [[speaker]]\nazimuth = -135.0\nelevation = 0.0\ndistance = 2.0\n\
        [[speaker]]\nazimuth = -45.0\nelevation = 0.0\ndistance = 2.0\n";
    std::fs::write(dir.path().join("quad.toml"), layout).unwrap();
    let o = alod(dir.path(), &["brir", "synth", "--scene", "pub", "--alod", "razr1", "--mode", "ls", "--layout", "quad.toml", "--length", "0.5", "--out", "ls.wav"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let (_, ch) = alod::wav::read_wav(&dir.path().join("ls.wav")).unwrap();
    assert_eq!(ch.len(), 4);
}

#[test]
fn results_stats_of_an_empty_log_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("logs")).unwrap();
    let o = alod(dir.path(), &["results", "stats", "--log", "logs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 0);
    let o = alod(dir.path(), &["results", "stats", "--log", "nowhere"]);
    assert_eq!(o.status.code(), Some(4));
}
