//! Impulse-response synthesis from a simulation plan: image-source taps,
//! per-band coloration, diffuse-reflection smearing, the FDN tail and the
//! direction-dependent output backends.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{ceil, cos, exp, log10, pow, round, sqrt};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::{self, BandValues, BAND_1K, BAND_500, BAND_COUNT};
use crate::convolve::fft_convolve;
use crate::decay::{self, DualSlopeMix};
use crate::error::{Error, Result};
use crate::fft::{bin_freq, Fft};
use crate::filter::{octave_filter, Cascade};
use crate::geom::Vec3;
use crate::ism::{self, ImageSource, Provenance, Tap, TapList};
use crate::reverb::{self, FdnSpec};
use crate::scene::{CoupledMode, OutputMode, ReverbTarget, SimulationPlan, EYRING_CONSTANT};
use crate::spatial::{self, HrirSet, SpeakerLayout, LEFT_EAR, RIGHT_EAR};

/// Length of the windowed-sinc fractional delay.
pub const FRACTIONAL_TAPS: usize = 32;
const FRACTIONAL_LEAD: isize = 15;
/// Fade-in of the diffuse tail after its onset, seconds.
pub const CROSSFADE_SECONDS: f64 = 0.005;
/// Zero padding in front of the band trains that absorbs the pre-ringing
/// of the zero-phase band weighting.
const BAND_PAD: usize = 4096;
/// Air absorption applies to paths longer than this, metres.
pub const AIR_ABSORPTION_MIN_DISTANCE: f64 = 10.0;
/// Air attenuation per band, dB per metre (zero below 2 kHz).
pub const AIR_ABSORPTION_DB_PER_M: BandValues = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0099, 0.029, 0.105, 0.37];
/// Smearing kernel length per reflection order, seconds.
pub const SMEAR_SECONDS_PER_ORDER: f64 = 1e-3;
/// Highest combined order of paths through an aperture.
pub const PORTAL_MAX_ORDER: u32 = 8;
/// Shortest rendered length when a diffuse tail is present, seconds.
pub const MIN_IR_SECONDS: f64 = 2.0;
/// The tail runs at least this many late decay times past its onset.
const TAIL_DECAYS: f64 = 1.5;
const MODEL_RATE: f64 = 4000.0;

const PI: f64 = core::f64::consts::PI;

/// Channel arrangement of an impulse response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelLayout {
    Binaural,
    Diotic,
    Mono,
    Speakers(String),
}

impl ChannelLayout {
    pub fn tag(&self) -> String {
        match self {
            ChannelLayout::Binaural => "binaural".into(),
            ChannelLayout::Diotic => "diotic".into(),
            ChannelLayout::Mono => "mono".into(),
            ChannelLayout::Speakers(n) => format!("speakers:{n}"),
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "binaural" => Some(ChannelLayout::Binaural),
            "diotic" => Some(ChannelLayout::Diotic),
            "mono" => Some(ChannelLayout::Mono),
            _ => s.strip_prefix("speakers:").map(|n| ChannelLayout::Speakers(n.into())),
        }
    }
}

/// Multichannel impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub fs: f64,
    pub layout: ChannelLayout,
    pub channels: Vec<Vec<f64>>,
    /// Digest of the plan that produced it.
    #[serde(default)]
    pub plan_digest: Option<String>,
    #[serde(default)]
    pub measured: bool,
    /// Original sample rate when the data was resampled on ingest.
    #[serde(default)]
    pub resampled_from: Option<f64>,
}

impl ImpulseResponse {
    pub fn new(fs: f64, layout: ChannelLayout, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::Format("sample rate must be positive".into()));
        }
        if channels.is_empty() || channels[0].is_empty() {
            return Err(Error::Format("impulse response has no samples".into()));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Format("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("impulse response contains non-finite samples".into()));
        }
        Ok(Self {
            fs,
            layout,
            channels,
            plan_digest: None,
            measured: false,
            resampled_from: None,
        })
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.fs
    }

    pub fn channel_refs(&self) -> Vec<&[f64]> {
        self.channels.iter().map(Vec::as_slice).collect()
    }

    pub fn energy(&self) -> f64 {
        self.channels.iter().flatten().map(|v| v * v).sum()
    }
}

/// Accept a measured binaural response: exactly two channels, resampled to `fs`
/// when recorded at another rate.
pub fn ingest_measured(channels: Vec<Vec<f64>>, fs_in: f64, fs: f64) -> Result<ImpulseResponse> {
    if channels.len() != 2 {
        return Err(Error::Format(format!(
            "measured response needs 2 channels, got {}",
            channels.len()
        )));
    }
    let resampled = (fs_in - fs).abs() > 1e-9;
    let channels = if resampled {
        channels
            .iter()
            .map(|c| crate::resample::resample(c, fs_in, fs))
            .collect()
    } else {
        channels
    };
    let mut ir = ImpulseResponse::new(fs, ChannelLayout::Binaural, channels)?;
    ir.measured = true;
    ir.resampled_from = resampled.then_some(fs_in);
    Ok(ir)
}

/// Output backend for direction-dependent rendering.
#[derive(Debug, Clone, Copy)]
pub enum Backend<'a> {
    /// Spherical head: Woodworth ear delays plus a head-shadow filter.
    AnalyticHead,
    Hrir(&'a HrirSet),
    Layout(&'a SpeakerLayout),
    /// Single omnidirectional channel.
    Omni,
}

/// Rendering options that are not part of the plan.
#[derive(Debug, Clone, Copy)]
pub struct RenderContext<'a> {
    pub backend: Backend<'a>,
    /// Output length in seconds; derived from the decay when unset.
    pub length: Option<f64>,
}

impl<'a> RenderContext<'a> {
    pub fn new(backend: Backend<'a>) -> Self {
        Self { backend, length: None }
    }
}

/// 32-tap Blackman-windowed sinc for a fractional delay in `[0, 1)`.
/// Entry `j` sits at offset `j - 15` from the integer part.
pub fn fractional_delay_kernel(frac: f64) -> [f64; FRACTIONAL_TAPS] {
    let mut h = [0.0; FRACTIONAL_TAPS];
    let half = FRACTIONAL_TAPS as f64 / 2.0;
    for (j, v) in h.iter_mut().enumerate() {
        let x = (j as isize - FRACTIONAL_LEAD) as f64 - frac;
        let sinc = if x.abs() < 1e-12 { 1.0 } else { libm::sin(PI * x) / (PI * x) };
        let n = (x + half) / (2.0 * half);
        let w = 0.42 - 0.5 * cos(2.0 * PI * n) + 0.08 * cos(4.0 * PI * n);
        *v = sinc * w;
    }
    let s: f64 = h.iter().sum();
    for v in h.iter_mut() {
        *v /= s;
    }
    h
}

/// `kernel` delayed by a fractional number of samples: start index and
/// samples. Whole-sample delays are placed exactly.
fn placed(delay_samples: f64, kernel: &[f64]) -> (isize, Vec<f64>) {
    let (i, f) = spatial::split_delay(delay_samples.max(0.0));
    if f < 1e-9 {
        return (i as isize, kernel.to_vec());
    }
    if f > 1.0 - 1e-9 {
        return (i as isize + 1, kernel.to_vec());
    }
    let fd = fractional_delay_kernel(f);
    let mut out = vec![0.0; FRACTIONAL_TAPS + kernel.len() - 1];
    for (j, &h) in fd.iter().enumerate() {
        for (k, &v) in kernel.iter().enumerate() {
            out[j + k] += h * v;
        }
    }
    (i as isize - FRACTIONAL_LEAD, out)
}

fn add_at(out: &mut [f64], start: isize, gain: f64, samples: &[f64]) {
    for (k, &v) in samples.iter().enumerate() {
        let idx = start + k as isize;
        if idx >= 0 && (idx as usize) < out.len() {
            out[idx as usize] += gain * v;
        }
    }
}

/// Add `gain · kernel` delayed by `delay_samples` (fractional) to `out`.
pub fn add_fractional(out: &mut [f64], delay_samples: f64, gain: f64, kernel: &[f64]) {
    let (start, s) = placed(delay_samples, kernel);
    add_at(out, start, gain, &s);
}

/// Band gains after air absorption over `distance` metres.
pub fn air_absorption(gains: &BandValues, distance: f64) -> BandValues {
    if distance <= AIR_ABSORPTION_MIN_DISTANCE {
        return *gains;
    }
    core::array::from_fn(|b| gains[b] * pow(10.0, -AIR_ABSORPTION_DB_PER_M[b] * distance / 20.0))
}

/// Zero-phase weight of band `b` at frequency `f`: raised-cosine crossfades
/// in log frequency between neighbouring centres. The weights sum to one.
pub fn band_weight(b: usize, f: f64) -> f64 {
    let (k, w) = band_split(f);
    if b == k {
        w
    } else if b == k + 1 {
        1.0 - w
    } else {
        0.0
    }
}

/// Lower of the two bands sharing frequency `f` and its weight; band
/// `k + 1` gets the complement.
fn band_split(f: f64) -> (usize, f64) {
    let c0 = bands::center(0);
    let top = bands::center(BAND_COUNT - 1);
    if f <= c0 {
        return (0, 1.0);
    }
    if f >= top {
        return (BAND_COUNT - 2, 0.0);
    }
    let x = libm::log2(f / c0);
    let k = (x as usize).min(BAND_COUNT - 2);
    let c = cos(0.5 * PI * (x - k as f64));
    (k, c * c)
}

/// Seeded decaying-noise kernel for smearing a tap of reflection `order`,
/// normalized to unit energy.
pub fn smear_kernel(order: u32, fs: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let len = (round(SMEAR_SECONDS_PER_ORDER * order as f64 * fs) as usize).max(1);
    let tau = (len as f64 / 3.0).max(1e-9);
    let mut k: Vec<f64> = (0..len)
        .map(|n| rng.gen_range(-1.0..=1.0) * exp(-(n as f64) / tau))
        .collect();
    let e: f64 = k.iter().map(|v| v * v).sum();
    if e > 0.0 {
        let g = 1.0 / sqrt(e);
        k.iter_mut().for_each(|v| *v *= g);
    } else {
        k[0] = 1.0;
    }
    k
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Filter source for one output channel of a tap.
#[derive(Debug, Clone, Copy)]
enum KernelSrc {
    Unit,
    Shadow(f64),
    Hrir(usize, bool),
}

#[derive(Debug, Clone, Copy)]
struct Route {
    channel: usize,
    /// Extra delay, seconds.
    delay: f64,
    gain: f64,
    src: KernelSrc,
}

/// Per-channel rendering data for one arrival direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelKernel {
    pub channel: usize,
    /// Delay on top of the propagation delay, seconds.
    pub delay: f64,
    pub gain: f64,
    pub ir: Vec<f64>,
}

struct Spatializer<'a> {
    backend: Backend<'a>,
    fs: f64,
    c: f64,
    single_speaker: Option<usize>,
    hrir_index: Vec<Vec3>,
}

impl<'a> Spatializer<'a> {
    fn new(backend: Backend<'a>, plan: &SimulationPlan) -> Result<Self> {
        let single_speaker = match (backend, plan.single_speaker) {
            (Backend::Layout(l), true) => Some(l.nearest(Vec3::X)),
            _ => None,
        };
        let hrir_index = match backend {
            Backend::Hrir(h) => {
                if (h.fs - plan.fs).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "HRIR rate {} Hz differs from plan rate {} Hz",
                        h.fs, plan.fs
                    )));
                }
                h.entries
                    .iter()
                    .map(|e| Vec3::from_angles_deg(e.azimuth, e.elevation))
                    .collect()
            }
            _ => Vec::new(),
        };
        Ok(Self {
            backend,
            fs: plan.fs,
            c: plan.speed_of_sound,
            single_speaker,
            hrir_index,
        })
    }

    fn channels(&self) -> usize {
        match self.backend {
            Backend::AnalyticHead | Backend::Hrir(_) => 2,
            Backend::Layout(l) => l.len(),
            Backend::Omni => 1,
        }
    }

    fn layout(&self) -> ChannelLayout {
        match self.backend {
            Backend::AnalyticHead | Backend::Hrir(_) => ChannelLayout::Binaural,
            Backend::Layout(l) => ChannelLayout::Speakers(l.name.clone()),
            Backend::Omni => ChannelLayout::Mono,
        }
    }

    fn max_kernel(&self) -> usize {
        match self.backend {
            Backend::AnalyticHead => spatial::SHADOW_TAPS + 64,
            Backend::Hrir(h) => h.entries.iter().map(|e| e.left.len().max(e.right.len())).max().unwrap_or(1),
            _ => 1,
        }
    }

    fn hrir_nearest(&self, d: Vec3) -> usize {
        let d = d.normalized();
        (0..self.hrir_index.len())
            .max_by(|&a, &b| d.dot(self.hrir_index[a]).total_cmp(&d.dot(self.hrir_index[b])))
            .unwrap_or(0)
    }

    fn routes(&self, direction: Vec3) -> Vec<Route> {
        match self.backend {
            Backend::AnalyticHead => [LEFT_EAR, RIGHT_EAR]
                .iter()
                .enumerate()
                .map(|(ch, &ear)| {
                    let psi = direction.angle_to(ear);
                    Route {
                        channel: ch,
                        delay: spatial::ear_delay(psi, self.c),
                        gain: 1.0,
                        src: KernelSrc::Shadow(psi),
                    }
                })
                .collect(),
            Backend::Hrir(_) => {
                let i = self.hrir_nearest(direction);
                (0..2)
                    .map(|ch| Route {
                        channel: ch,
                        delay: 0.0,
                        gain: 1.0,
                        src: KernelSrc::Hrir(i, ch == 1),
                    })
                    .collect()
            }
            Backend::Layout(l) => {
                if let Some(s) = self.single_speaker {
                    return vec![Route {
                        channel: s,
                        delay: 0.0,
                        gain: 1.0,
                        src: KernelSrc::Unit,
                    }];
                }
                l.pan(direction)
                    .gains
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| **g > 0.0)
                    .map(|(ch, &g)| Route {
                        channel: ch,
                        delay: 0.0,
                        gain: g,
                        src: KernelSrc::Unit,
                    })
                    .collect()
            }
            Backend::Omni => vec![Route {
                channel: 0,
                delay: 0.0,
                gain: 1.0,
                src: KernelSrc::Unit,
            }],
        }
    }

    fn kernel(&self, src: KernelSrc) -> Vec<f64> {
        match (src, self.backend) {
            (KernelSrc::Unit, _) => vec![1.0],
            (KernelSrc::Shadow(psi), _) => spatial::head_shadow_ir(psi, self.fs, self.c).to_vec(),
            (KernelSrc::Hrir(i, right), Backend::Hrir(h)) => {
                let e = &h.entries[i];
                if right { e.right.clone() } else { e.left.clone() }
            }
            _ => vec![1.0],
        }
    }
}

/// Channel kernels for a head-frame arrival direction.
pub fn spatialize_tap(direction: Vec3, backend: Backend<'_>, fs: f64, c: f64) -> Vec<ChannelKernel> {
    let sp = Spatializer {
        backend,
        fs,
        c,
        single_speaker: None,
        hrir_index: match backend {
            Backend::Hrir(h) => h
                .entries
                .iter()
                .map(|e| Vec3::from_angles_deg(e.azimuth, e.elevation))
                .collect(),
            _ => Vec::new(),
        },
    };
    sp.routes(direction.normalized())
        .into_iter()
        .map(|r| ChannelKernel {
            channel: r.channel,
            delay: r.delay,
            gain: r.gain,
            ir: sp.kernel(r.src),
        })
        .collect()
}

fn mean(g: &BandValues) -> f64 {
    g.iter().sum::<f64>() / BAND_COUNT as f64
}

/// Render early taps into `len` samples per channel. Each tap's broadband
/// mean gain goes into a main train and its per-band deviations into ten
/// band trains, which are weighted in the frequency domain and summed.
fn render_taps(taps: &[Tap], sp: &Spatializer<'_>, smear_seed: Option<u64>, len: usize) -> Vec<Vec<f64>> {
    let fs = sp.fs;
    let n_ch = sp.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(smear_seed.unwrap_or(0));
    let smears: Vec<Option<Vec<f64>>> = taps
        .iter()
        .map(|t| match smear_seed {
            Some(_) if t.smear => Some(smear_kernel(t.order, fs, &mut rng)),
            _ => None,
        })
        .collect();
    let mut per_channel: Vec<Vec<(usize, Route)>> = vec![Vec::new(); n_ch];
    for (i, t) in taps.iter().enumerate() {
        for r in sp.routes(t.direction) {
            per_channel[r.channel].push((i, r));
        }
    }
    let work = len + 2 * BAND_PAD;
    let nfft = work.next_power_of_two();
    let fft = Fft::new(nfft);
    let split: Vec<(usize, f64)> = (0..nfft).map(|k| band_split(bin_freq(k.min(nfft - k), nfft, fs))).collect();
    let mut out = vec![vec![0.0; len]; n_ch];
    for (ch, routes) in per_channel.iter().enumerate() {
        if routes.is_empty() {
            continue;
        }
        let mut main = vec![0.0; work];
        let mut band = vec![vec![0.0; work]; BAND_COUNT];
        let mut band_used = [false; BAND_COUNT];
        for &(i, r) in routes {
            let t = &taps[i];
            let mut k = sp.kernel(r.src);
            if let Some(s) = &smears[i] {
                let e0 = energy(&k);
                let mut sk = fft_convolve(s, &k);
                let e1 = energy(&sk);
                if e1 > 0.0 {
                    let g = sqrt(e0 / e1);
                    sk.iter_mut().for_each(|v| *v *= g);
                }
                k = sk;
            }
            let pos = (t.delay + r.delay) * fs + BAND_PAD as f64;
            let (start, s) = placed(pos, &k);
            let amp = t.amplitude * r.gain;
            let gm = mean(&t.gains);
            add_at(&mut main, start, amp * gm, &s);
            for b in 0..BAND_COUNT {
                let d = t.gains[b] - gm;
                if d.abs() > 1e-15 {
                    band_used[b] = true;
                    add_at(&mut band[b], start, amp * d, &s);
                }
            }
        }
        // Two real band trains share one complex transform.
        let used: Vec<usize> = (0..BAND_COUNT).filter(|&b| band_used[b]).collect();
        let mut spectra: Vec<Option<Vec<Complex64>>> = vec![None; BAND_COUNT];
        for pair in used.chunks(2) {
            let mut z = vec![Complex64::new(0.0, 0.0); nfft];
            for (v, &x) in z.iter_mut().zip(&band[pair[0]]) {
                v.re = x;
            }
            if let Some(&b) = pair.get(1) {
                for (v, &x) in z.iter_mut().zip(&band[b]) {
                    v.im = x;
                }
            }
            fft.forward(&mut z);
            let mut sa = vec![Complex64::new(0.0, 0.0); nfft];
            let mut sb = vec![Complex64::new(0.0, 0.0); nfft];
            for k in 0..nfft {
                let (p, q) = (z[k], z[(nfft - k) % nfft].conj());
                sa[k] = (p + q) * 0.5;
                sb[k] = (p - q) * Complex64::new(0.0, -0.5);
            }
            spectra[pair[0]] = Some(sa);
            if let Some(&b) = pair.get(1) {
                spectra[b] = Some(sb);
            }
        }
        if !used.is_empty() {
            let mut acc = vec![Complex64::new(0.0, 0.0); nfft];
            for (k, (a, &(lo, w))) in acc.iter_mut().zip(&split).enumerate() {
                if let Some(s) = &spectra[lo] {
                    *a += s[k] * w;
                }
                if let Some(s) = &spectra[lo + 1] {
                    *a += s[k] * (1.0 - w);
                }
            }
            let y = fft.inverse_real(acc);
            for (m, v) in main.iter_mut().zip(&y) {
                *m += v;
            }
        }
        out[ch].copy_from_slice(&main[BAND_PAD..BAND_PAD + len]);
    }
    out
}

/// Images for a plan, excluding aperture paths.
fn room_images(plan: &SimulationPlan, room: usize, source: Vec3, order: u32, jitter_seed: u64) -> Result<Vec<ImageSource>> {
    let r = &plan.rooms[room];
    let set = ism::enumerate_images(&r.geometry, source, order, &r.absorption)?;
    let set = if plan.jitter {
        ism::apply_jitter(&set, jitter_seed)
    } else {
        set
    };
    Ok(set.images)
}

/// Minimum distance from `p` to images of exactly `order`, unjittered.
fn min_image_distance(plan: &SimulationPlan, room: usize, source: Vec3, order: u32, p: Vec3) -> Result<f64> {
    let r = &plan.rooms[room];
    let set = ism::enumerate_images(&r.geometry, source, order, &r.absorption)?;
    Ok(set
        .images
        .iter()
        .filter(|i| i.order == order)
        .map(|i| i.position.distance(p))
        .fold(f64::INFINITY, f64::min))
}

struct Portal {
    area: f64,
    axis: usize,
    /// Aperture points on the source side and the receiver side.
    src_point: Vec3,
    rcv_point: Vec3,
}

fn portal(plan: &SimulationPlan, src_room: usize, rcv_room: usize) -> Result<Portal> {
    let (a, b) = (&plan.rooms[src_room].id, &plan.rooms[rcv_room].id);
    let ap = plan
        .apertures
        .iter()
        .find(|ap| ap.connects.iter().any(|c| c == a) && ap.connects.iter().any(|c| c == b))
        .ok_or_else(|| Error::Config(format!("no aperture joins '{a}' and '{b}'")))?;
    let host = plan
        .rooms
        .iter()
        .find(|r| r.id == ap.host_room)
        .ok_or_else(|| Error::Config(format!("unknown host room '{}'", ap.host_room)))?;
    let c = ap.center(&host.geometry);
    let out = ap.wall.outward() * crate::scene::APERTURE_INSET;
    let (inside, outside) = (c - out, c + out);
    let (src_point, rcv_point) = if *a == ap.host_room { (inside, outside) } else { (outside, inside) };
    Ok(Portal {
        area: ap.area(),
        axis: ap.wall.axis(),
        src_point,
        rcv_point,
    })
}

/// Paths from the source through the aperture to the receiver: source-room
/// images reaching the aperture, continued by receiver-room images of the
/// aperture point, with combined order up to `order`.
fn portal_images(plan: &SimulationPlan, order: u32) -> Result<Vec<ImageSource>> {
    let p = portal(plan, plan.source_room, plan.receiver_room)?;
    let order = order.min(PORTAL_MAX_ORDER);
    let first = room_images(plan, plan.source_room, plan.source.position, order, plan.seed.wrapping_add(1))?;
    let second = room_images(plan, plan.receiver_room, p.rcv_point, order, plan.seed.wrapping_add(2))?;
    let rcv = plan.receiver.position;
    let mut out = Vec::new();
    for k in &first {
        let leg1 = k.position - p.src_point;
        let r1 = leg1.norm();
        let cos1 = (leg1.get(p.axis).abs() / r1).max(0.05);
        for l in second.iter().filter(|l| l.order + k.order <= order) {
            let leg2 = rcv - l.position;
            let r2 = leg2.norm();
            let cos2 = (leg2.get(p.axis).abs() / r2).max(0.05);
            let amp = (sqrt(p.area * cos1 * cos2 / PI) / (r1 * r2)).min(1.0 / (r1 + r2));
            let (Provenance::Lattice(a), Provenance::Lattice(b)) = (&k.provenance, &l.provenance) else {
                continue;
            };
            out.push(ImageSource {
                position: l.position,
                order: k.order + l.order,
                gains: core::array::from_fn(|b| k.gains[b] * l.gains[b]),
                provenance: Provenance::Portal(*a, *b),
                extra_path: r1,
                amplitude: amp * (r1 + r2),
            });
        }
    }
    Ok(out)
}

/// Earliest arrival of a path one order above `order`, seconds.
fn tail_onset(plan: &SimulationPlan, order: u32, through_portal: bool) -> Result<f64> {
    let next = order + 1;
    let rcv = plan.receiver.position;
    let d = if through_portal {
        let p = portal(plan, plan.source_room, plan.receiver_room)?;
        let mut best = f64::INFINITY;
        for ok in 0..=next {
            let r1 = min_image_distance(plan, plan.source_room, plan.source.position, ok, p.src_point)?;
            let r2 = min_image_distance(plan, plan.receiver_room, p.rcv_point, next - ok, rcv)?;
            best = best.min(r1 + r2);
        }
        best
    } else {
        min_image_distance(plan, plan.receiver_room, plan.source.position, next, rcv)?
    };
    Ok(d / plan.speed_of_sound)
}

/// Taps of the early part for the plan's own source and receiver.
pub fn plan_taps(plan: &SimulationPlan) -> Result<TapList> {
    let mut images = if plan.source_room == plan.receiver_room {
        room_images(plan, plan.receiver_room, plan.source.position, plan.ism_order, plan.seed)?
    } else {
        portal_images(plan, plan.ism_order)?
    };
    if plan.reflectors_included && !plan.reflectors.is_empty() {
        images.extend(ism::reflect_finite_surfaces(&plan.source, &plan.receiver, &plan.reflectors));
    }
    let mut taps = ism::image_taps(&images, &plan.receiver, plan.speed_of_sound)?;
    for t in taps.taps.iter_mut() {
        if plan.air_absorption {
            t.gains = air_absorption(&t.gains, t.distance);
        }
        t.smear = plan.smearing && t.order >= 2;
    }
    Ok(taps)
}

/// How the diffuse tail is shaped and scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailDesign {
    pub onset: f64,
    /// Fast (main-room) decay after refinement.
    pub main: ReverbTarget,
    /// Slow decay of the coupled volume, when present.
    pub coupled: Option<ReverbTarget>,
    /// Knee level used for the tail alone, dB re its start.
    pub tail_knee_db: Option<f64>,
    /// Scale applied to the planned decay times.
    pub time_scale: f64,
    /// Mid-band tail energy remaining at onset.
    pub tail_energy: f64,
    /// Combined T30 the model predicts for the rendered response.
    pub predicted_t30: f64,
}

/// Early events for the decay model: arrival time and mid-band energy.
fn early_events(taps: &TapList) -> Vec<(f64, f64)> {
    taps.taps
        .iter()
        .map(|t| {
            let g = 0.5 * (t.gains[BAND_500] * t.gains[BAND_500] + t.gains[BAND_1K] * t.gains[BAND_1K]);
            (t.delay, t.amplitude * t.amplitude * g)
        })
        .collect()
}

enum CouplingKind {
    None,
    /// Both decay times scale together.
    Ratio(f64),
    /// The coupled decay is fixed.
    Fixed(f64),
}

struct TailModel {
    onset: f64,
    early: Vec<(f64, f64)>,
    t1: f64,
    kind: CouplingKind,
    knee_db: f64,
    /// Main-component energy at onset as a function of the main decay.
    main_energy: fn(&TailGeometry, f64, f64) -> f64,
    geo: TailGeometry,
}

#[derive(Clone, Copy)]
struct TailGeometry {
    volume: f64,
    /// Aperture area and the absorption area of the source room when the
    /// source sits behind an aperture.
    portal: Option<(f64, f64)>,
}

fn diffuse_energy(g: &TailGeometry, t1: f64, onset: f64) -> f64 {
    let a1 = EYRING_CONSTANT * g.volume / t1;
    let base = match g.portal {
        None => 16.0 * PI / a1,
        Some((s, ak)) => 16.0 * PI * s / ((ak + s) * (a1 + s)),
    };
    base * exp(-decay::decay_rate(t1) * onset)
}

impl TailModel {
    fn times(&self, s: f64) -> (f64, Option<f64>) {
        match self.kind {
            CouplingKind::None => (s * self.t1, None),
            CouplingKind::Ratio(t2) => (s * self.t1, Some(s * t2)),
            CouplingKind::Fixed(t2) => (s * self.t1, Some(t2)),
        }
    }

    /// Mix, tail knee and tail energy for time scale `s`, with the knee
    /// shifted so that it lands at the requested level in the full EDC.
    fn solve(&self, s: f64) -> (DualSlopeMix, Option<f64>, f64) {
        let (t1, t2) = self.times(s);
        let main = (self.main_energy)(&self.geo, t1, self.onset);
        let early: f64 = self.early.iter().map(|e| e.1).sum();
        let Some(t2) = t2.filter(|&t2| t2 > t1) else {
            return (DualSlopeMix::single(t1), None, main);
        };
        let mut knee = self.knee_db;
        let mut mix = DualSlopeMix::single(t1);
        let mut tail = main;
        for _ in 0..12 {
            match decay::mix_for_knee(t1, t2, knee) {
                Ok(m) => mix = m,
                Err(_) => break,
            }
            tail = main / mix.a;
            knee = self.knee_db + 10.0 * log10((early + tail) / tail);
        }
        (mix, Some(knee), tail)
    }

    fn predicted_t30(&self, s: f64) -> f64 {
        let (mix, _, tail) = self.solve(s);
        let slow = mix.t2.max(mix.t1);
        let edc = decay::model_edc(&self.early, &mix, tail, self.onset, MODEL_RATE, self.onset + 3.0 * slow);
        crate::analysis::decay_time(&edc, MODEL_RATE, -5.0, -35.0).unwrap_or(mix.t1)
    }
}

/// Refine the tail so the modelled response reaches `target` T30. Returns
/// the design and the time scale.
fn design_tail(model: &TailModel, target: f64, main_shape: &ReverbTarget, coupled_shape: Option<&ReverbTarget>) -> TailDesign {
    let (lo, hi) = (0.3, 3.0);
    // The predicted T30 is close to proportional to the scale, so a few
    // proportional steps usually land; bisection is the fallback.
    let mut s = 1.0;
    let mut done = false;
    for _ in 0..8 {
        let p = model.predicted_t30(s);
        if (p / target - 1.0).abs() < 1e-7 {
            done = true;
            break;
        }
        s = (s * target / p).clamp(lo, hi);
    }
    if !done {
        s = if model.predicted_t30(lo) > target || model.predicted_t30(hi) < target {
            1.0
        } else {
            decay::bisect(lo, hi, target, |s| model.predicted_t30(s))
        };
    }
    let (_, knee, tail) = model.solve(s);
    let coupled = match (&model.kind, coupled_shape) {
        (CouplingKind::Ratio(_), Some(c)) => Some(c.scaled(s)),
        (CouplingKind::Fixed(_), Some(c)) => Some(c.clone()),
        _ => None,
    };
    TailDesign {
        onset: model.onset,
        main: main_shape.scaled(s),
        coupled: coupled.filter(|_| knee.is_some()),
        tail_knee_db: knee,
        time_scale: s,
        tail_energy: tail,
        predicted_t30: model.predicted_t30(s),
    }
}

/// Raised-cosine fade-in starting at `onset` samples.
fn fade_in(x: &mut [f64], onset: usize, len: usize) {
    for (n, v) in x.iter_mut().enumerate() {
        if n < onset {
            *v = 0.0;
        } else if n < onset + len {
            let p = (n - onset) as f64 / len as f64;
            *v *= 0.5 - 0.5 * cos(PI * p);
        }
    }
}

/// Mid-band energy fraction of a unit impulse through the octave filters.
fn mid_band_fraction(fs: f64) -> f64 {
    let n = (0.2 * fs) as usize;
    let mut imp = vec![0.0; n];
    imp[0] = 1.0;
    let e = |b: usize| energy(&Cascade::new(octave_filter(b, fs)).process(&imp));
    0.5 * (e(BAND_500) + e(BAND_1K))
}

/// Render and scale the FDN tail channels so their mid-band energy over
/// the first half second matches the design.
fn render_tail(spec: &FdnSpec, design: &TailDesign, len: usize) -> Result<Vec<Vec<f64>>> {
    let fs = spec.fs;
    let mut chans = reverb::run_fdn(spec, len)?;
    let onset = round(design.onset * fs) as usize;
    let fade = (CROSSFADE_SECONDS * fs) as usize;
    for c in chans.iter_mut() {
        fade_in(c, onset, fade);
    }
    let win = (0.5 * fs) as usize;
    let end = (onset + win).min(len);
    let w = (end - onset) as f64 / fs;
    let mut measured = 0.0;
    for c in &chans {
        for b in [BAND_500, BAND_1K] {
            let y = Cascade::new(octave_filter(b, fs)).process(&c[..end]);
            measured += 0.5 * energy(&y[onset..end]);
        }
    }
    let t1 = design.main.broadband_t30;
    let (a, b, t2) = match (&spec.coupled, &design.coupled) {
        (Some(cs), Some(c)) => {
            let r = pow(10.0, cs.mix_db / 10.0);
            (1.0 / (1.0 + r), r / (1.0 + r), c.broadband_t30)
        }
        _ => (1.0, 0.0, t1),
    };
    let in_window = a * (1.0 - exp(-decay::decay_rate(t1) * w)) + b * (1.0 - exp(-decay::decay_rate(t2) * w));
    let target = design.tail_energy * in_window * mid_band_fraction(fs);
    if measured > 0.0 {
        let g = sqrt(target / measured);
        for c in chans.iter_mut() {
            c.iter_mut().for_each(|v| *v *= g);
        }
    }
    Ok(chans)
}

/// Spatialize FDN channels from fixed directions spread over the sphere.
fn spatialize_tail(chans: &[Vec<f64>], sp: &Spatializer<'_>, len: usize) -> Vec<Vec<f64>> {
    let n = chans.len();
    let mut out = vec![vec![0.0; len]; sp.channels()];
    for (i, ch) in chans.iter().enumerate() {
        let dir = spatial::tail_direction(i, n);
        for r in sp.routes(dir) {
            let o = &mut out[r.channel];
            match r.src {
                KernelSrc::Unit => {
                    let shift = round(r.delay * sp.fs) as usize;
                    for t in shift..len {
                        o[t] += r.gain * ch[t - shift];
                    }
                }
                KernelSrc::Shadow(psi) => {
                    let (b0, b1, a1) = spatial::head_shadow(psi, sp.fs, sp.c);
                    let shift = round(r.delay * sp.fs) as usize;
                    let (mut x1, mut y1) = (0.0, 0.0);
                    for t in 0..len.saturating_sub(shift) {
                        let x = ch[t];
                        let y = b0 * x + b1 * x1 - a1 * y1;
                        x1 = x;
                        y1 = y;
                        o[t + shift] += r.gain * y;
                    }
                }
                KernelSrc::Hrir(..) => {
                    let k = sp.kernel(r.src);
                    let y = fft_convolve(ch, &k);
                    for (a, b) in o.iter_mut().zip(&y) {
                        *a += r.gain * b;
                    }
                }
            }
        }
    }
    out
}

/// Full synthesis result with intermediate products.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub ir: ImpulseResponse,
    pub taps: TapList,
    pub fdn: Option<FdnSpec>,
    pub tail: Option<TailDesign>,
}

fn check_backend(plan: &SimulationPlan, backend: Backend<'_>) -> Result<()> {
    let ok = match (plan.output_mode, backend) {
        (_, Backend::Omni) => true,
        (OutputMode::Binaural | OutputMode::Diotic, Backend::AnalyticHead | Backend::Hrir(_)) => true,
        (OutputMode::Loudspeaker, Backend::Layout(_)) => true,
        _ => false,
    };
    if !ok {
        return Err(Error::Config(format!(
            "backend does not match the plan's {:?} output",
            plan.output_mode
        )));
    }
    if plan.single_speaker && !matches!(backend, Backend::Layout(_)) {
        return Err(Error::Config("single-speaker plans need a loudspeaker layout".into()));
    }
    Ok(())
}

/// Weight of an early tap arriving at `t` when the tail starts at
/// `onset`: one before, a raised-cosine fade-out across the crossfade and
/// zero after.
pub fn early_weight(t: f64, onset: f64) -> f64 {
    if t <= onset {
        1.0
    } else if t >= onset + CROSSFADE_SECONDS {
        0.0
    } else {
        0.5 + 0.5 * cos(PI * (t - onset) / CROSSFADE_SECONDS)
    }
}

fn tap_span(taps: &TapList, fs: f64, kernel: usize) -> usize {
    let last = taps.taps.last().map_or(0.0, |t| t.delay);
    let smear = taps
        .taps
        .iter()
        .filter(|t| t.smear)
        .map(|t| SMEAR_SECONDS_PER_ORDER * t.order as f64)
        .fold(0.0, f64::max);
    ceil((last + smear + 0.01) * fs) as usize + FRACTIONAL_TAPS + kernel
}

/// Synthesize the early part and tail for a plan with source and receiver
/// geometry as given. `through_portal` routes the tail energy through the
/// aperture; `coupled` enables the slow second stage.
fn synthesize_room(plan: &SimulationPlan, ctx: &RenderContext<'_>, mut taps: TapList, through_portal: bool, coupled: bool) -> Result<Synthesis> {
    let fs = plan.fs;
    let sp = Spatializer::new(ctx.backend, plan)?;
    let main_room = &plan.rooms[plan.receiver_room];
    let mut fdn = None;
    let mut tail = None;
    let len;
    let mut out;
    if plan.fdn {
        let onset = tail_onset(plan, plan.ism_order, through_portal)?;
        taps.taps.retain_mut(|t| {
            t.amplitude *= early_weight(t.delay, onset);
            t.amplitude != 0.0
        });
        let coupling = plan.coupling.as_ref().filter(|_| coupled);
        let kind = match coupling {
            None => CouplingKind::None,
            Some(c) if c.decay_ratio.is_some() => CouplingKind::Ratio(c.decay.broadband_t30),
            Some(c) => CouplingKind::Fixed(c.decay.broadband_t30),
        };
        let portal_geo = if through_portal {
            let p = portal(plan, plan.source_room, plan.receiver_room)?;
            let src = &plan.rooms[plan.source_room];
            let ak = EYRING_CONSTANT * src.geometry.volume() / src.target.broadband_t30;
            Some((p.area, ak))
        } else {
            None
        };
        let model = TailModel {
            onset,
            early: early_events(&taps),
            t1: main_room.own_decay.broadband_t30,
            kind,
            knee_db: coupling.map_or(-100.0, |c| c.knee_db),
            main_energy: diffuse_energy,
            geo: TailGeometry {
                volume: main_room.geometry.volume(),
                portal: portal_geo,
            },
        };
        let target = if coupling.is_some() {
            main_room.target.broadband_t30
        } else {
            main_room.own_decay.broadband_t30
        };
        let design = design_tail(&model, target, &main_room.own_decay, coupling.map(|c| &c.decay));
        let slow = design
            .coupled
            .as_ref()
            .map_or(design.main.broadband_t30, |c| c.broadband_t30);
        let secs = ctx
            .length
            .unwrap_or_else(|| MIN_IR_SECONDS.max(onset + TAIL_DECAYS * slow));
        len = ceil(secs * fs) as usize;
        let mut spec = reverb::design_fdn_with(&main_room.geometry, &design.main, fs, reverb::DEFAULT_LINES, plan.speed_of_sound)?;
        spec.onset = onset;
        if let (Some(c), Some(knee), Some(slow_t)) = (coupling, design.tail_knee_db, &design.coupled) {
            spec = reverb::couple_volumes(spec, &c.geometry, slow_t, knee)?;
        }
        let chans = render_tail(&spec, &design, len)?;
        out = spatialize_tail(&chans, &sp, len);
        fdn = Some(spec);
        tail = Some(design);
    } else {
        len = match ctx.length {
            Some(s) => ceil(s * fs) as usize,
            None => tap_span(&taps, fs, sp.max_kernel()),
        };
        out = vec![vec![0.0; len]; sp.channels()];
    }
    let span = tap_span(&taps, fs, sp.max_kernel()).min(len);
    let early = render_taps(&taps.taps, &sp, plan.smearing.then_some(plan.seed ^ 0x5eed_5eed), span);
    for (o, e) in out.iter_mut().zip(&early) {
        for (a, b) in o.iter_mut().zip(e) {
            *a += b;
        }
    }
    let ir = ImpulseResponse::new(fs, sp.layout(), out)?;
    Ok(Synthesis { ir, taps, fdn, tail })
}

/// Plan with a different source and receiver in one room, rendered like
/// the original but without coupling.
fn stage_plan(plan: &SimulationPlan, room: usize, source: Vec3, receiver: Vec3) -> SimulationPlan {
    let mut p = plan.clone();
    p.source_room = room;
    p.receiver_room = room;
    p.source.position = source;
    p.receiver.position = receiver;
    p.coupled_mode = CoupledMode::Off;
    p.coupling = None;
    p
}

/// The two stages of a cascaded render: the source room picked up by an
/// omnidirectional point at the aperture, and the receiver room excited by
/// an omnidirectional source at the aperture. The second stage includes
/// the aperture radiation factor.
pub fn cascade_stages(plan: &SimulationPlan, ctx: &RenderContext<'_>) -> Result<(ImpulseResponse, ImpulseResponse)> {
    if plan.source_room == plan.receiver_room {
        return Err(Error::Config("cascade needs source and receiver in different rooms".into()));
    }
    let p = portal(plan, plan.source_room, plan.receiver_room)?;
    let mut first = stage_plan(plan, plan.source_room, plan.source.position, p.src_point);
    first.receiver.yaw = 0.0;
    first.receiver.pitch = 0.0;
    first.output_mode = OutputMode::Binaural;
    first.single_speaker = false;
    first.seed = plan.seed.wrapping_add(11);
    let mut second = stage_plan(plan, plan.receiver_room, p.rcv_point, plan.receiver.position);
    second.seed = plan.seed.wrapping_add(12);
    let mut source_ctx = *ctx;
    source_ctx.backend = Backend::Omni;
    let taps1 = plan_taps(&first)?;
    let s1 = synthesize_room(&first, &source_ctx, taps1, false, false)?;
    let taps2 = plan_taps(&second)?;
    let mut s2 = synthesize_room(&second, ctx, taps2, false, false)?;
    let g = sqrt(p.area / PI);
    for c in s2.ir.channels.iter_mut() {
        c.iter_mut().for_each(|v| *v *= g);
    }
    Ok((s1.ir, s2.ir))
}

fn diotic(mut s: Synthesis) -> Result<Synthesis> {
    s.ir.channels = spatial::diotic_collapse(&s.ir.channels)?;
    s.ir.layout = ChannelLayout::Diotic;
    Ok(s)
}

/// Synthesize an impulse response with its intermediate products.
pub fn synthesize(plan: &SimulationPlan, ctx: &RenderContext<'_>) -> Result<Synthesis> {
    check_backend(plan, ctx.backend)?;
    let mut s = if plan.coupled_mode == CoupledMode::Cascade && plan.source_room != plan.receiver_room {
        let (a, b) = cascade_stages(plan, ctx)?;
        let len = a.len().max(b.len());
        let channels = b
            .channels
            .iter()
            .map(|c| {
                let mut y = fft_convolve(&a.channels[0], c);
                y.resize(len, 0.0);
                y
            })
            .collect();
        Synthesis {
            ir: ImpulseResponse::new(plan.fs, b.layout.clone(), channels)?,
            taps: TapList::default(),
            fdn: None,
            tail: None,
        }
    } else {
        let taps = plan_taps(plan)?;
        let through_portal = plan.source_room != plan.receiver_room;
        let coupled = plan.coupled_mode == CoupledMode::Full && plan.coupling.is_some();
        synthesize_room(plan, ctx, taps, through_portal, coupled)?
    };
    if plan.output_mode == OutputMode::Diotic && s.ir.channels.len() == 2 {
        s = diotic(s)?;
    }
    s.ir.plan_digest = Some(plan.digest());
    Ok(s)
}

/// Synthesize the impulse response for a plan.
pub fn synthesize_ir(plan: &SimulationPlan, ctx: &RenderContext<'_>) -> Result<ImpulseResponse> {
    synthesize(plan, ctx).map(|s| s.ir)
}

/// Convolve a mono signal with every channel of an impulse response.
pub fn auralize(signal: &[f64], ir: &ImpulseResponse) -> Vec<Vec<f64>> {
    ir.channels
        .iter()
        .map(|h| {
            crate::convolve::PartitionedConvolver::new(h, crate::convolve::DEFAULT_BLOCK).convolve(signal)
        })
        .collect()
}

/// Geometry helper for tests and reports: onset of the diffuse tail for a
/// plan.
pub fn plan_tail_onset(plan: &SimulationPlan) -> Result<f64> {
    tail_onset(plan, plan.ism_order, plan.source_room != plan.receiver_room)
}
