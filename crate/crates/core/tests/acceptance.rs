//! One PASS/FAIL line per acceptance criterion, written to stderr.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use alod_core::analysis::{analyze_ir, estimate_decay, schroeder_edc, AnalysisOptions};
use alod_core::convolve::{PartitionedConvolver, DEFAULT_BLOCK};
use alod_core::experiment::*;
use alod_core::ism;
use alod_core::render::{plan_taps, synthesize_ir, Backend, ImpulseResponse, RenderContext};
use alod_core::scene::{self, AlodPreset, PlanOptions, Presentation, SimulationPlan};
use alod_core::stimulus::{band_deltas_db, make_pink_pulse, pulse_variants, speech_like};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 44100.0;

struct Report {
    lines: Vec<(bool, String)>,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        let line = format!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        // direct handle write, not captured by the test harness
        let _ = writeln!(std::io::stderr(), "{line}");
        self.lines.push((ok, line));
    }
}

fn plan(name: &str, p: AlodPreset) -> SimulationPlan {
    scene::expand_alod_preset(&scene::preset(name).unwrap(), p, Presentation::Headphones, PlanOptions::default()).unwrap()
}

fn head() -> RenderContext<'static> {
    RenderContext::new(Backend::AnalyticHead)
}

fn analyze(ir: &ImpulseResponse) -> alod_core::analysis::DecayAnalysis {
    analyze_ir(&ir.channel_refs(), ir.fs, AnalysisOptions::default()).unwrap()
}

fn best_of<T>(n: usize, mut f: impl FnMut() -> T) -> Duration {
    (0..n)
        .map(|_| {
            let t = Instant::now();
            std::hint::black_box(f());
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn lattice_count(order: i64) -> usize {
    let mut n = 0;
    for x in -order..=order {
        for y in -order..=order {
            for z in -order..=order {
                if x.abs() + y.abs() + z.abs() <= order {
                    n += 1;
                }
            }
        }
    }
    n
}

fn ism_criterion(r: &mut Report) {
    let s = scene::pub_scene();
    let room = s.rooms[0].geometry;
    let src = s.source.position;
    let abs = scene::calibrate_absorption(&room, &s.rooms[0].target).unwrap();
    let t = Instant::now();
    let mut ok = true;
    let mut counts = Vec::new();
    for order in 0..=15u32 {
        let set = ism::enumerate_images(&room, src, order, &abs).unwrap();
        ok &= set.images.len() == lattice_count(order as i64);
        counts.push(set.images.len());
    }
    // positions against the mirror lattice at order 15
    let set = ism::enumerate_images(&room, src, 15, &abs).unwrap();
    for img in &set.images {
        let ism::Provenance::Lattice(v) = img.provenance else {
            ok = false;
            continue;
        };
        for a in 0..3 {
            let n = v[a];
            let (l, o, p) = (room.dims.get(a), room.origin.get(a), src.get(a) - room.origin.get(a));
            let m = (n + n.rem_euclid(2)) / 2;
            let q = n.rem_euclid(2);
            let want = o + (1 - 2 * q) as f64 * p + 2.0 * m as f64 * l;
            ok &= img.position.get(a) == want;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= counts[15] == 4991 && secs < 1.0;
    r.check(
        "ism lattice orders 0-15",
        ok,
        format!("order-15 total {} (want 4991), positions exact, {:.3} s (< 1 s)", counts[15], secs),
    );
}

fn t30_criterion(r: &mut Report) -> BTreeMap<&'static str, ImpulseResponse> {
    let t = Instant::now();
    let mut irs = BTreeMap::new();
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, target) in [("living_room", 0.54), ("pub", 0.7), ("underground", 1.6)] {
        let ir = synthesize_ir(&plan(name, AlodPreset::RazrFull), &head()).unwrap();
        let t30 = analyze(&ir).t30;
        let dev = t30 / target - 1.0;
        ok &= dev.abs() <= 0.1;
        parts.push(format!("{name} {t30:.3} s ({:+.1}%)", 100.0 * dev));
        irs.insert(name, ir);
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    r.check("RazrFull T30 within 10%", ok, format!("{}; {secs:.1} s total", parts.join(", ")));
    irs
}

fn dual_slope_criterion(r: &mut Report, full: &ImpulseResponse) {
    let knee = analyze(full).dual_slope.map(|d| d.knee_db);
    let simple = synthesize_ir(&plan("underground", AlodPreset::RazrSimple), &head()).unwrap();
    let simple_knee = analyze(&simple).dual_slope.map(|d| d.knee_db);
    let ok = knee.is_some_and(|k| (k + 15.0).abs() <= 3.0) && simple_knee.is_none();
    r.check(
        "underground dual slope",
        ok,
        format!("RazrFull knee {knee:?} dB (want -15 +/- 3), RazrSimple knee {simple_knee:?} (want none)"),
    );
}

fn decay_criterion(r: &mut Report) {
    let noise = |seed: u64, t60: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..(1.5 * t60 * FS) as usize)
            .map(|i| rng.gen_range(-1.0..1.0) * 10f64.powf(-3.0 * i as f64 / FS / t60))
            .collect::<Vec<f64>>()
    };
    let mut worst: f64 = 0.0;
    for (k, t60) in [0.3, 0.5, 1.0, 2.0].into_iter().enumerate() {
        let est = estimate_decay(&schroeder_edc(&noise(k as u64, t60)).unwrap(), FS).unwrap();
        worst = worst.max((est.t30 / t60 - 1.0).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut knees = 0;
    for seed in 0..100 {
        let t60 = rng.gen_range(0.3..2.0);
        let edc = schroeder_edc(&noise(1000 + seed, t60)).unwrap();
        knees += estimate_decay(&edc, FS).unwrap().dual_slope.is_some() as usize;
    }
    r.check(
        "decay estimator oracle",
        worst < 0.02 && knees == 0,
        format!("worst T60 error {:.2}% (< 2%), {knees} false knees of 100", 100.0 * worst),
    );
}

fn convolution_criterion(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..44100).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..2048).map(|i| rng.gen_range(-1.0..1.0) * (-(i as f64) / 400.0).exp()).collect();
    let got = PartitionedConvolver::new(&h, DEFAULT_BLOCK).convolve(&x);
    let mut want = vec![0.0; x.len() + h.len() - 1];
    for (i, a) in x.iter().enumerate() {
        for (j, b) in h.iter().enumerate() {
            want[i + j] += a * b;
        }
    }
    let d: f64 = got.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).sum();
    let e: f64 = want.iter().map(|b| b * b).sum();
    let rel = (d / e).sqrt();
    r.check("convolution vs direct", rel < 1e-6 && got.len() == want.len(), format!("relative RMS {rel:.2e} (< 1e-6)"));
}

fn stimulus_criterion(r: &mut Report) {
    let pulse = make_pink_pulse(FS, 8192).unwrap();
    let vars = pulse_variants(&pulse, 2024, 8).unwrap();
    let mut ok = vars.len() == 8;
    let mut worst: f64 = 0.0;
    let mut patterns: Vec<String> = Vec::new();
    for v in &vars {
        let d = band_deltas_db(&pulse.samples, &v.samples, FS).unwrap();
        let up = d.iter().filter(|x| (**x - 6.0).abs() <= 0.5).count();
        let down = d.iter().filter(|x| (**x + 6.0).abs() <= 0.5).count();
        ok &= up == 5 && down == 5;
        for x in d {
            worst = worst.max((x.abs() - 6.0).abs());
        }
        patterns.push(v.pattern.unwrap().code());
    }
    patterns.sort();
    patterns.dedup();
    ok &= patterns.len() == 8;
    r.check(
        "pulse variants +/-6 dB",
        ok,
        format!("8 variants, 5 up and 5 down each, worst band error {worst:.3} dB (< 0.5), {} distinct patterns", patterns.len()),
    );
}

fn diotic_criterion(r: &mut Report) {
    let ok = scene::PRESET_NAMES.iter().all(|n| {
        let ir = synthesize_ir(&plan(n, AlodPreset::Diotic), &head()).unwrap();
        ir.channels.len() == 2 && ir.channels[0] == ir.channels[1]
    });
    r.check("diotic channels identical", ok, "all scenes, bit-identical left and right".into());
}

fn catalog() -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for c in Condition::ALL {
        for kind in [SignalKind::Speech, SignalKind::Pulse] {
            for index in 0..8 {
                out.push(CatalogEntry {
                    key: format!("{}-{kind:?}-{index}", c.name()),
                    scene: "pub".into(),
                    presentation: Presentation::Headphones,
                    condition: c,
                    signal: Signal { kind, index },
                });
            }
        }
    }
    out
}

fn session_spec(id: &str, paradigm: Paradigm, conditions: Vec<Condition>) -> SessionSpec {
    SessionSpec {
        session_id: id.into(),
        participant: "p".into(),
        paradigm,
        scene: "pub".into(),
        presentation: Presentation::Headphones,
        conditions,
        seed: 3,
        phase: Phase::Test,
        training: false,
        plausibility_playbacks: Some(1),
    }
}

fn experiment_criterion(r: &mut Report) {
    let cat = catalog();
    let sched = build_session(&session_spec("s", Paradigm::Plausibility, vec![Condition::RazrFull]), &cat).unwrap();
    let mut counts: BTreeMap<(Condition, Signal), usize> = BTreeMap::new();
    for t in &sched.trials {
        *counts.entry((t.items[0].condition, t.items[0].signal)).or_default() += 1;
    }
    let balanced = sched.trials.len() == 48 && counts.len() == 16 && counts.values().all(|&n| n == 3);

    let mut st = SessionState::new(sched);
    let mut real = 0;
    while st.status() == SessionStatus::InProgress {
        let speech = st.schedule.trials[st.cursor()].items[0].signal.kind == SignalKind::Speech;
        let c = if speech && real < 17 {
            real += 1;
            Choice::Real
        } else {
            Choice::Simulated
        };
        let rec = ResponseRecord {
            session_id: "s".into(),
            trial: st.cursor(),
            payload: ResponsePayload::Choice(c),
            timestamp_ms: 0,
            playback_count: 1,
        };
        st.record_response(rec).unwrap();
    }
    let stats = compute_stats(std::slice::from_ref(&st));
    let pct = stats
        .cells
        .iter()
        .find(|c| c.signal == SignalKind::Speech)
        .map(|c| c.median)
        .unwrap_or(f64::NAN);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_r: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(3..30);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let nf = n as f64;
        let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let brute = (nf * sxy - sx * sy) / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
        worst_r = worst_r.max((pearson(&x, &y).unwrap() - brute).abs());
    }

    let labels = Condition::identifying_strings();
    let mut leaks = 0;
    let mut views = 0;
    for (paradigm, conds) in [
        (Paradigm::Plausibility, vec![Condition::Measured]),
        (Paradigm::OverallDifference, default_conditions(Paradigm::OverallDifference, Presentation::Headphones)),
        (Paradigm::Externalization, default_conditions(Paradigm::Externalization, Presentation::Headphones)),
    ] {
        let mut st = SessionState::new(build_session(&session_spec("b", paradigm, conds), &cat).unwrap());
        while let Some(v) = st.next_view() {
            let json = serde_json::to_string(&v).unwrap().to_lowercase();
            leaks += labels.iter().filter(|l| json.contains(&format!("\"{l}\""))).count();
            views += 1;
            let payload = match paradigm {
                Paradigm::Plausibility => ResponsePayload::Choice(Choice::Real),
                _ => ResponsePayload::Ratings(vec![0.0; v.stimuli.len()]),
            };
            let rec = ResponseRecord {
                session_id: "b".into(),
                trial: st.cursor(),
                payload,
                timestamp_ms: 0,
                playback_count: 1,
            };
            st.record_response(rec).unwrap();
        }
    }
    let ok = balanced && (pct - 70.8).abs() < 0.05 && worst_r < 1e-12 && leaks == 0;
    r.check(
        "experiment protocol",
        ok,
        format!(
            "48 trials balanced {balanced}; 17/24 -> {pct:.1}%; Pearson max diff {worst_r:.1e}; {leaks} labels in {views} views"
        ),
    );
}

fn determinism_criterion(r: &mut Report) {
    let p = plan("living_room", AlodPreset::RazrFull);
    let irs = synthesize_ir(&p, &head()).unwrap() == synthesize_ir(&p, &head()).unwrap();
    let pulse = make_pink_pulse(FS, 4096).unwrap();
    let stim = pulse_variants(&pulse, 1, 2).unwrap() == pulse_variants(&pulse, 1, 2).unwrap()
        && speech_like(FS, 1.0, 4) == speech_like(FS, 1.0, 4);
    let spec = session_spec("d", Paradigm::Plausibility, vec![Condition::PlainIsm]);
    let sched = build_session(&spec, &catalog()).unwrap() == build_session(&spec, &catalog()).unwrap();
    r.check(
        "determinism",
        irs && stim && sched,
        format!("IRs {irs}, stimuli {stim}, schedules {sched}"),
    );
}

fn performance_criterion(r: &mut Report) {
    let mut ctx = head();
    ctx.length = Some(2.0);
    let mut parts = Vec::new();
    let mut ok = true;
    for name in scene::PRESET_NAMES {
        let p = plan(name, AlodPreset::RazrFull);
        let ms = best_of(3, || synthesize_ir(&p, &ctx).unwrap()).as_secs_f64() * 1e3;
        ok &= ms < 250.0;
        parts.push(format!("{name} {ms:.0} ms"));
    }
    let ism = plan("underground", AlodPreset::PlainIsm);
    let taps_ms = best_of(3, || plan_taps(&ism).unwrap()).as_secs_f64() * 1e3;
    ok &= taps_ms < 50.0;
    r.check(
        "performance",
        ok,
        format!("RazrFull binaural 2 s: {} (< 250 ms); order-15 taps {taps_ms:.1} ms (< 50 ms)", parts.join(", ")),
    );
}

#[test]
fn acceptance() {
    let mut r = Report { lines: Vec::new() };
    ism_criterion(&mut r);
    let irs = t30_criterion(&mut r);
    dual_slope_criterion(&mut r, &irs["underground"]);
    decay_criterion(&mut r);
    convolution_criterion(&mut r);
    stimulus_criterion(&mut r);
    diotic_criterion(&mut r);
    experiment_criterion(&mut r);
    determinism_criterion(&mut r);
    performance_criterion(&mut r);
    let failed: Vec<&String> = r.lines.iter().filter(|l| !l.0).map(|l| &l.1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
