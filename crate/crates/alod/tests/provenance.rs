use alod::jobs::{BrirJob, InputRef, Job, Mode, PulseJob, RenderJob};
use alod::provenance::{execute, read_sidecar, replay, Destination};
use alod::wav::write_wav;
use alod_core::scene::{self, AlodPreset};

fn brir(alod: AlodPreset, seed: u64) -> Job {
    Job::BrirSynth(BrirJob {
        scene: scene::living_room(),
        alod,
        mode: Mode::Hp,
        seed,
        fs: 44100.0,
        length: Some(0.5),
        air_absorption: true,
        hrir: None,
        layout: None,
        diagnostics: true,
    })
}

#[test]
fn recorded_brir_replays_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    let dest = Destination::for_file(&dir.path().join("lr.wav"));
    let (sidecar, _) = execute(&brir(AlodPreset::RazrFull, 9), &dest, vec!["test".into()]).unwrap();
    let names: Vec<&str> = sidecar.outputs.iter().map(|o| o.file.as_str()).collect();
    assert_eq!(names, ["lr.wav", "lr.taps.csv", "lr.fdn.json"]);

    let back = read_sidecar(&dest.sidecar).unwrap();
    assert_eq!(back, sidecar);
    let r = replay(&back).unwrap();
    assert_eq!(r.checked, 3);
    assert!(r.identical(), "{:?}", r.mismatched);

    for o in &sidecar.outputs {
        let bytes = std::fs::read(dir.path().join(&o.file)).unwrap();
        assert_eq!(alod::jobs::sha256_hex(&bytes), o.sha256);
    }
}

#[test]
fn sidecar_carries_versions_seed_and_digest() {
    let dir = tempfile::tempdir().unwrap();
    let dest = Destination::for_file(&dir.path().join("a.wav"));
    let (s, out) = execute(&brir(AlodPreset::Razr1stOrder, 3), &dest, vec![]).unwrap();
    assert_eq!(s.provenance.seed, Some(3));
    assert_eq!(s.provenance.core_version, alod_core::VERSION);
    assert_eq!(s.provenance.alod_version, env!("CARGO_PKG_VERSION"));
    assert!(s.provenance.plan_digest.is_some());
    assert_eq!(s.provenance.plan_digest, out.plan_digest);
}

#[test]
fn different_seed_changes_the_output() {
    let a = brir(AlodPreset::RazrFull, 1).run("x").unwrap();
    let b = brir(AlodPreset::RazrFull, 2).run("x").unwrap();
    assert_ne!(a.artifacts[0].bytes, b.artifacts[0].bytes);
}

#[test]
fn tampered_record_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let job = Job::StimulusPulse(PulseJob {
        variants: 8,
        seed: 5,
        fs: 44100.0,
        samples: 8192,
    });
    let dest = Destination::for_dir(dir.path(), "pulse");
    let (mut s, _) = execute(&job, &dest, vec![]).unwrap();
    assert_eq!(s.outputs.len(), 10);
    assert!(replay(&s).unwrap().identical());
    s.outputs[3].sha256 = "0".repeat(64);
    assert_eq!(replay(&s).unwrap().mismatched, vec![s.outputs[3].file.clone()]);
}

#[test]
fn render_job_checks_its_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let ir_path = dir.path().join("ir.wav");
    let sig_path = dir.path().join("sig.wav");
    write_wav(&ir_path, 44100.0, &[vec![1.0, 0.5], vec![0.25, 0.0]]).unwrap();
    write_wav(&sig_path, 44100.0, &[vec![1.0, 0.0, -1.0]]).unwrap();
    let job = Job::Render(RenderJob {
        ir: InputRef::hash(&ir_path).unwrap(),
        signal: InputRef::hash(&sig_path).unwrap(),
        gain: 1.0,
    });
    let dest = Destination::for_file(&dir.path().join("out.wav"));
    let (s, _) = execute(&job, &dest, vec![]).unwrap();
    let (_, y) = alod::wav::read_wav(&dir.path().join("out.wav")).unwrap();
    let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-6);
    assert!(close(&y[0], &[1.0, 0.5, -1.0, -0.5]), "{:?}", y[0]);
    assert!(close(&y[1], &[0.25, 0.0, -0.25, 0.0]), "{:?}", y[1]);
    assert!(replay(&s).unwrap().identical());

    write_wav(&sig_path, 44100.0, &[vec![0.0, 1.0]]).unwrap();
    let e = replay(&s).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
}
