//! Command line front end.

use std::path::{Path, PathBuf};

use alod_core::analysis::{analyze_ir, compare_irs, AnalysisOptions};
use alod_core::experiment::compute_stats;
use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::jobs::{self, BrirJob, InputRef, Job, Mode, PulseJob, RenderJob};
use crate::layout::{resolve_layout, LayoutFile};
use crate::provenance::{execute, Destination};
use crate::report::{write_json, write_plot_csv, AnalysisReport, CompareReport, IrInfo};
use crate::scene_io::resolve_scene;
use crate::service::{load_sessions, Service, ServiceConfig};

pub const DEFAULT_FS: f64 = 44100.0;
pub const DEFAULT_PULSE_SAMPLES: usize = 8192;

#[derive(Debug, Parser)]
#[command(name = "alod", version, about = "Room impulse response synthesis at selectable levels of detail")]
pub struct Cli {
    /// Random seed for jitter, smearing and stimulus variants.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Sampling rate in Hz.
    #[arg(long, global = true, default_value_t = DEFAULT_FS)]
    pub fs: f64,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scene files.
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Room impulse responses.
    #[command(subcommand)]
    Brir(BrirCmd),
    /// Test signals.
    #[command(subcommand)]
    Stimulus(StimulusCmd),
    /// Convolve a mono signal with an impulse response.
    Render(RenderArgs),
    /// Decay analysis of an impulse response.
    Analyze(AnalyzeArgs),
    /// Compare two impulse responses.
    Compare(CompareArgs),
    /// Listening-test service.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Listening-test results.
    #[command(subcommand)]
    Results(ResultsCmd),
}

#[derive(Debug, Subcommand)]
pub enum SceneCmd {
    /// Check a scene file or preset name; with --out, write it as TOML.
    Validate { scene: String },
}

#[derive(Debug, Subcommand)]
pub enum BrirCmd {
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scene file or preset name.
    #[arg(long)]
    pub scene: String,
    /// razr, razr1, simple, ism or diotic.
    #[arg(long)]
    pub alod: String,
    /// hp (headphones) or ls (loudspeakers).
    #[arg(long, default_value = "hp")]
    pub mode: String,
    /// HRIR set in the binary container format.
    #[arg(long)]
    pub hrir: Option<PathBuf>,
    /// Loudspeaker layout file or `vr_lab`.
    #[arg(long)]
    pub layout: Option<String>,
    /// Output length in seconds.
    #[arg(long)]
    pub length: Option<f64>,
    /// Disable frequency-dependent air absorption.
    #[arg(long)]
    pub no_air: bool,
    /// Also write the tap table and delay-network design.
    #[arg(long)]
    pub diagnostics: bool,
}

#[derive(Debug, Subcommand)]
pub enum StimulusCmd {
    /// Pink pulse and its octave-band variants, written to the --out directory.
    Pulse {
        #[arg(long, default_value_t = 8)]
        variants: usize,
        #[arg(long, default_value_t = DEFAULT_PULSE_SAMPLES)]
        samples: usize,
    },
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub ir: PathBuf,
    #[arg(long)]
    pub signal: PathBuf,
    /// Linear output gain.
    #[arg(long, default_value_t = 1.0)]
    pub gain: f64,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ir: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for plot CSV files.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Cut the response at its noise floor first.
    #[arg(long)]
    pub truncate_noise: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCmd {
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Debug, Subcommand)]
pub enum ResultsCmd {
    /// Statistics over every session stored in a log directory.
    Stats {
        #[arg(long)]
        log: PathBuf,
    },
}

/// Parse `argv` and run. Returns the process exit code; diagnostics go to
/// stderr as one `error[<category>]: <message>` line.
pub fn main_with(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            if code == 0 {
                let _ = e.print();
            } else {
                let msg = e.kind().to_string();
                let detail = e.to_string();
                let first = detail.lines().next().unwrap_or(&msg).trim_start_matches("error: ");
                eprintln!("error[usage]: {first}");
            }
            return code;
        }
    };
    match run(cli, argv) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

fn check_fs(fs: f64) -> Result<f64> {
    if fs.is_finite() && fs > 0.0 && fs.fract() == 0.0 {
        Ok(fs)
    } else {
        Err(Error::Usage(format!("sampling rate must be a positive integer, got {fs}")))
    }
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<Vec<String>> {
    let Cli { seed, fs, out, command } = cli;
    match command {
        Command::Scene(SceneCmd::Validate { scene }) => {
            let s = resolve_scene(&scene)?;
            let mut lines = vec![format!("{}: valid ({} rooms)", s.name, s.rooms.len())];
            if let Some(path) = out {
                crate::scene_io::write_scene(&path, &s)?;
                lines.push(format!("wrote {}", path.display()));
            }
            Ok(lines)
        }
        Command::Brir(BrirCmd::Synth(a)) => {
            let alod = jobs::parse_alod(&a.alod)?;
            let mode = Mode::parse(&a.mode)?;
            let fs = check_fs(fs)?;
            let scene = resolve_scene(&a.scene)?;
            let hrir = a.hrir.as_deref().map(InputRef::hash).transpose()?;
            let layout = match &a.layout {
                Some(l) => Some(LayoutFile::from_layout(&resolve_layout(l)?)),
                None => None,
            };
            if mode == Mode::Hp && layout.is_some() {
                return Err(Error::Usage("--layout needs --mode ls".into()));
            }
            let out = out.unwrap_or_else(|| PathBuf::from(format!("{}_{}_{}.wav", scene.name, a.alod, a.mode)));
            let job = Job::BrirSynth(BrirJob {
                scene,
                alod,
                mode,
                seed,
                fs,
                length: a.length,
                air_absorption: !a.no_air,
                hrir,
                layout,
                diagnostics: a.diagnostics,
            });
            emit(&job, &Destination::for_file(&out), argv)
        }
        Command::Stimulus(StimulusCmd::Pulse { variants, samples }) => {
            let job = Job::StimulusPulse(PulseJob {
                variants,
                seed,
                fs: check_fs(fs)?,
                samples,
            });
            let dir = out.unwrap_or_else(|| PathBuf::from("stimuli"));
            emit(&job, &Destination::for_dir(&dir, "pulse"), argv)
        }
        Command::Render(a) => {
            let job = Job::Render(RenderJob {
                ir: InputRef::hash(&a.ir)?,
                signal: InputRef::hash(&a.signal)?,
                gain: a.gain,
            });
            let out = out.unwrap_or_else(|| PathBuf::from("rendered.wav"));
            emit(&job, &Destination::for_file(&out), argv)
        }
        Command::Analyze(a) => analyze(&a, out),
        Command::Compare(a) => compare(&a, out),
        Command::Experiment(ExperimentCmd::Serve { config, port, host }) => {
            let cfg = ServiceConfig::load(&config)?;
            let svc = Service::start(cfg)?;
            let addr: std::net::SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Error::Usage(format!("bad listen address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Service(format!("runtime: {e}")))?;
            eprintln!("listening on http://{addr}");
            rt.block_on(crate::service::serve(svc, addr))?;
            Ok(Vec::new())
        }
        Command::Results(ResultsCmd::Stats { log }) => {
            if !log.is_dir() {
                return Err(Error::io(&log, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
            let sessions = load_sessions(&log)?;
            let stats = compute_stats(&sessions);
            let text = serde_json::to_string_pretty(&stats).expect("stats serialize");
            match out {
                Some(path) => {
                    write_json(&path, &stats)?;
                    Ok(vec![format!("{} sessions, wrote {}", sessions.len(), path.display())])
                }
                None => Ok(vec![text]),
            }
        }
    }
}

fn emit(job: &Job, dest: &Destination, argv: Vec<String>) -> Result<Vec<String>> {
    let (sidecar, output) = execute(job, dest, argv)?;
    let mut lines = output.summary;
    for o in &sidecar.outputs {
        lines.push(format!("wrote {}", dest.dir.join(&o.file).display()));
    }
    lines.push(format!("wrote {}", dest.sidecar.display()));
    Ok(lines)
}

fn ir_info(path: &Path) -> Result<(IrInfo, alod_core::render::ImpulseResponse)> {
    let file = InputRef::hash(path)?;
    let ir = jobs::read_ir(path)?;
    let info = IrInfo {
        file,
        fs: ir.fs,
        channels: ir.channels.len(),
        samples: ir.len(),
    };
    Ok((info, ir))
}

fn analyze(a: &AnalyzeArgs, out: Option<PathBuf>) -> Result<Vec<String>> {
    let (info, ir) = ir_info(&a.ir)?;
    let opts = AnalysisOptions {
        truncate_noise: a.truncate_noise,
    };
    let res = analyze_ir(&ir.channel_refs(), ir.fs, opts)?;
    let report = AnalysisReport::new(info, &res);
    let mut lines = report.summary();
    if let Some(path) = a.report.as_ref().or(out.as_ref()) {
        write_json(path, &report)?;
        lines.push(format!("wrote {}", path.display()));
    }
    if let Some(dir) = &a.csv {
        write_plot_csv(dir, &res)?;
        lines.push(format!("wrote {}", dir.display()));
    }
    Ok(lines)
}

fn compare(a: &CompareArgs, out: Option<PathBuf>) -> Result<Vec<String>> {
    let (ia, ra) = ir_info(&a.a)?;
    let (ib, rb) = ir_info(&a.b)?;
    if ra.fs != rb.fs {
        return Err(Error::Invalid(format!("sampling rates differ: {} vs {} Hz", ra.fs, rb.fs)));
    }
    let r = compare_irs(&ra.channel_refs(), &rb.channel_refs(), ra.fs)?;
    let report = CompareReport::new(ia, ib, &r);
    let mut lines = vec![format!("EDC difference area {:.3} dB s", report.edc_difference_area_db_s)];
    if let Some(d) = report.t30_delta_s {
        lines.push(format!("T30 delta {d:+.3} s"));
    }
    for b in &report.band_spectral_distance {
        lines.push(format!("{:>6} Hz  {:6.2} dB", b.center_hz, b.distance_db));
    }
    if let Some(path) = a.report.as_ref().or(out.as_ref()) {
        write_json(path, &report)?;
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(lines)
}
