//! Artifact-producing commands as plain data, so a provenance sidecar can
//! carry everything needed to run them again.

use std::path::{Path, PathBuf};

use alod_core::render::{self, Backend, ChannelLayout, ImpulseResponse, RenderContext};
use alod_core::scene::{self, AlodPreset, PlanOptions, Presentation, SceneConfig};
use alod_core::stimulus::{self, BandPattern};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hrir;
use crate::layout::LayoutFile;
use crate::wav;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Headphone or loudspeaker rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Hp,
    Ls,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hp" => Ok(Mode::Hp),
            "ls" => Ok(Mode::Ls),
            _ => Err(Error::Usage(format!("unknown mode '{s}' (expected hp or ls)"))),
        }
    }

    pub fn presentation(self) -> Presentation {
        match self {
            Mode::Hp => Presentation::Headphones,
            Mode::Ls => Presentation::Loudspeakers,
        }
    }
}

pub fn parse_alod(s: &str) -> Result<AlodPreset> {
    AlodPreset::from_cli_name(s).ok_or_else(|| {
        let names: Vec<&str> = AlodPreset::ALL.iter().map(|p| p.cli_name()).collect();
        Error::Usage(format!("unknown ALOD preset '{s}' (expected one of {})", names.join(", ")))
    })
}

/// An input file identified by its content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRef {
    pub path: PathBuf,
    pub sha256: String,
}

impl InputRef {
    pub fn hash(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(InputRef {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }

    /// Read the file and check it still has the recorded content.
    pub fn verify(&self) -> Result<()> {
        let now = Self::hash(&self.path)?;
        if now.sha256 != self.sha256 {
            return Err(Error::Invalid(format!(
                "{} changed since it was recorded (sha256 {} vs {})",
                self.path.display(),
                now.sha256,
                self.sha256
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrirJob {
    pub scene: SceneConfig,
    pub alod: AlodPreset,
    pub mode: Mode,
    pub seed: u64,
    pub fs: f64,
    /// Fixed output length in seconds.
    pub length: Option<f64>,
    pub air_absorption: bool,
    /// Measured HRIR set; the analytic head model when absent.
    pub hrir: Option<InputRef>,
    /// Loudspeaker layout, embedded in full.
    pub layout: Option<LayoutFile>,
    /// Also write the tap table and delay-network design.
    pub diagnostics: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseJob {
    pub variants: usize,
    pub seed: u64,
    pub fs: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderJob {
    pub ir: InputRef,
    pub signal: InputRef,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Job {
    BrirSynth(BrirJob),
    StimulusPulse(PulseJob),
    Render(RenderJob),
}

/// One output of a job, not yet written.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Result of running a job.
#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub artifacts: Vec<Artifact>,
    pub plan_digest: Option<String>,
    /// Short human-readable summary lines.
    pub summary: Vec<String>,
}

impl Job {
    pub fn seed(&self) -> Option<u64> {
        match self {
            Job::BrirSynth(j) => Some(j.seed),
            Job::StimulusPulse(j) => Some(j.seed),
            Job::Render(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Job::BrirSynth(_) => "brir synth",
            Job::StimulusPulse(_) => "stimulus pulse",
            Job::Render(_) => "render",
        }
    }

    /// Run the job. `stem` names the main output file.
    pub fn run(&self, stem: &str) -> Result<JobOutput> {
        match self {
            Job::BrirSynth(j) => run_brir(j, stem),
            Job::StimulusPulse(j) => run_pulse(j),
            Job::Render(j) => run_render(j, stem),
        }
    }
}

fn run_brir(j: &BrirJob, stem: &str) -> Result<JobOutput> {
    let opts = PlanOptions {
        fs: j.fs,
        seed: j.seed,
        air_absorption: j.air_absorption,
    };
    let plan = scene::expand_alod_preset(&j.scene, j.alod, j.mode.presentation(), opts)?;
    let hrirs = match &j.hrir {
        Some(r) => {
            r.verify()?;
            Some(hrir::load_hrir(&r.path, j.fs)?)
        }
        None => None,
    };
    let layout = match (&j.layout, j.mode) {
        (Some(l), _) => Some(l.build()?),
        (None, Mode::Ls) => Some(alod_core::spatial::SpeakerLayout::vr_lab()),
        (None, Mode::Hp) => None,
    };
    let backend = match (j.mode, &hrirs, &layout) {
        (Mode::Ls, _, Some(l)) => Backend::Layout(l),
        (Mode::Hp, Some(h), _) => Backend::Hrir(h),
        _ => Backend::AnalyticHead,
    };
    let mut ctx = RenderContext::new(backend);
    ctx.length = j.length;
    let syn = render::synthesize(&plan, &ctx)?;
    let mut artifacts = vec![Artifact {
        name: format!("{stem}.wav"),
        bytes: wav::wav_bytes(syn.ir.fs, &syn.ir.channels)?,
    }];
    if j.diagnostics {
        artifacts.push(Artifact {
            name: format!("{stem}.taps.csv"),
            bytes: taps_csv(&syn.taps)?,
        });
        let design = serde_json::json!({ "fdn": syn.fdn, "tail": syn.tail });
        artifacts.push(Artifact {
            name: format!("{stem}.fdn.json"),
            bytes: serde_json::to_vec_pretty(&design).expect("design serializes"),
        });
    }
    let summary = vec![
        format!(
            "{} / {} / {}: {} channels ({}), {:.3} s at {} Hz, {} early taps",
            j.scene.name,
            j.alod.cli_name(),
            match j.mode {
                Mode::Hp => "hp",
                Mode::Ls => "ls",
            },
            syn.ir.channels.len(),
            syn.ir.layout.tag(),
            syn.ir.duration(),
            syn.ir.fs,
            syn.taps.len()
        ),
    ];
    Ok(JobOutput {
        artifacts,
        plan_digest: Some(plan.digest()),
        summary,
    })
}

fn taps_csv(taps: &alod_core::ism::TapList) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "delay_s".to_string(),
        "distance_m".into(),
        "amplitude".into(),
        "dir_x".into(),
        "dir_y".into(),
        "dir_z".into(),
        "order".into(),
        "smear".into(),
    ];
    header.extend((0..alod_core::bands::BAND_COUNT).map(|b| format!("gain_{}", alod_core::bands::label(b))));
    let csv_err = |e: csv::Error| Error::Invalid(format!("tap table: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for t in &taps.taps {
        let mut row = vec![
            t.delay.to_string(),
            t.distance.to_string(),
            t.amplitude.to_string(),
            t.direction.x.to_string(),
            t.direction.y.to_string(),
            t.direction.z.to_string(),
            t.order.to_string(),
            t.smear.to_string(),
        ];
        row.extend(t.gains.iter().map(f64::to_string));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(format!("tap table: {e}")))
}

/// Band pattern of a variant as stored next to the audio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantInfo {
    pub file: String,
    pub seed: u64,
    /// `+` boosted, `-` cut, lowest band first.
    pub pattern: String,
    pub deltas_db: Vec<f64>,
}

fn run_pulse(j: &PulseJob) -> Result<JobOutput> {
    let pulse = stimulus::make_pink_pulse(j.fs, j.samples)?;
    let variants = stimulus::pulse_variants(&pulse, j.seed, j.variants)?;
    let mut artifacts = vec![Artifact {
        name: "pulse.wav".into(),
        bytes: wav::wav_bytes(j.fs, std::slice::from_ref(&pulse.samples))?,
    }];
    let mut info = Vec::new();
    for (i, v) in variants.iter().enumerate() {
        let name = format!("pulse_variant_{i:02}.wav");
        artifacts.push(Artifact {
            name: name.clone(),
            bytes: wav::wav_bytes(j.fs, std::slice::from_ref(&v.samples))?,
        });
        let p: BandPattern = v.pattern.expect("variants carry their pattern");
        info.push(VariantInfo {
            file: name,
            seed: v.seed.unwrap_or(j.seed),
            pattern: p.code(),
            deltas_db: p.deltas_db().to_vec(),
        });
    }
    artifacts.push(Artifact {
        name: "variants.json".into(),
        bytes: serde_json::to_vec_pretty(&info).expect("variant table serializes"),
    });
    let summary = info.iter().map(|v| format!("{} {}", v.file, v.pattern)).collect();
    Ok(JobOutput {
        artifacts,
        plan_digest: None,
        summary,
    })
}

/// Channel layout implied by a channel count.
pub fn layout_for(channels: usize) -> ChannelLayout {
    match channels {
        1 => ChannelLayout::Mono,
        2 => ChannelLayout::Binaural,
        n => ChannelLayout::Speakers(format!("{n}ch")),
    }
}

/// Read an impulse response WAV.
pub fn read_ir(path: &Path) -> Result<ImpulseResponse> {
    let (fs, channels) = wav::read_wav(path)?;
    let n = channels.len();
    Ok(ImpulseResponse::new(fs, layout_for(n), channels)?)
}

fn run_render(j: &RenderJob, stem: &str) -> Result<JobOutput> {
    j.ir.verify()?;
    j.signal.verify()?;
    let ir = read_ir(&j.ir.path)?;
    let (fs, sig) = wav::read_wav(&j.signal.path)?;
    if sig.len() != 1 {
        return Err(Error::Invalid(format!(
            "{}: dry signal must be mono, found {} channels",
            j.signal.path.display(),
            sig.len()
        )));
    }
    if (fs - ir.fs).abs() > 1e-9 {
        return Err(Error::Invalid(format!("signal at {fs} Hz, impulse response at {} Hz", ir.fs)));
    }
    let mut out = render::auralize(&sig[0], &ir);
    for c in out.iter_mut() {
        c.iter_mut().for_each(|v| *v *= j.gain);
    }
    let summary = vec![format!(
        "{} channels, {:.3} s",
        out.len(),
        out.first().map_or(0, Vec::len) as f64 / fs
    )];
    Ok(JobOutput {
        artifacts: vec![Artifact {
            name: format!("{stem}.wav"),
            bytes: wav::wav_bytes(fs, &out)?,
        }],
        plan_digest: None,
        summary,
    })
}
