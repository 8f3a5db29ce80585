//! Feedback delay network (FDN) for the diffuse tail, with delays derived
//! from room path lengths, per-band decay filters and an optional parallel
//! coupled-volume stage.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::f64::consts::PI;

use libm::{cos, pow, round, sqrt};
use serde::{Deserialize, Serialize};

use crate::bands::{BandValues, BAND_COUNT};
use crate::decay;
use crate::error::{Error, Result};
use crate::filter::{BandGainFilter, Biquad, GainFilterKind};
use crate::scene::{ReverbTarget, RoomGeometry, DEFAULT_SPEED_OF_SOUND};

pub const DEFAULT_LINES: usize = 12;

/// Per-line loop attenuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineAttenuation {
    /// Linear target gain per band for one pass through the line.
    pub band_gains: BandValues,
    pub sections: Vec<[f64; 5]>,
    pub kind: String,
    pub fit_error_db: f64,
}

impl LineAttenuation {
    fn biquads(&self) -> Vec<Biquad> {
        self.sections
            .iter()
            .map(|s| Biquad {
                b0: s[0],
                b1: s[1],
                b2: s[2],
                a1: s[3],
                a2: s[4],
            })
            .collect()
    }

    fn from_filter(band_gains: BandValues, f: &BandGainFilter) -> Self {
        Self {
            band_gains,
            sections: f
                .sections
                .iter()
                .map(|b| [b.b0, b.b1, b.b2, b.a1, b.a2])
                .collect(),
            kind: match f.kind {
                GainFilterKind::Flat => "flat",
                GainFilterKind::Shelves => "shelves",
                GainFilterKind::Graphic => "graphic",
            }
            .into(),
            fit_error_db: f.max_error_db,
        }
    }
}

/// Second, slower FDN mixed in parallel with the main one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledStage {
    pub spec: FdnSpec,
    /// Energy of the coupled tail relative to the main tail, dB.
    pub mix_db: f64,
    pub knee_db: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdnSpec {
    pub fs: f64,
    pub delays: Vec<usize>,
    /// Row-major N×N orthonormal feedback matrix.
    pub matrix: Vec<f64>,
    pub attenuation: Vec<LineAttenuation>,
    pub input_gains: Vec<f64>,
    pub output_gains: Vec<f64>,
    /// Time of the first output sample, seconds.
    pub onset: f64,
    pub t30: ReverbTarget,
    pub coupled: Option<Box<CoupledStage>>,
}

impl FdnSpec {
    pub fn lines(&self) -> usize {
        self.delays.len()
    }

    /// Largest |Q^T Q - I| entry.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.lines();
        let q = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| q[k * n + i] * q[k * n + j]).sum();
                let e = if i == j { s - 1.0 } else { s };
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    /// Fail unless every loop has gain strictly below one.
    pub fn check_stability(&self) -> Result<()> {
        if self.orthonormality_error() > 1e-9 {
            return Err(Error::Stability("feedback matrix is not orthonormal".into()));
        }
        for (i, a) in self.attenuation.iter().enumerate() {
            let f = BandGainFilter {
                kind: GainFilterKind::Graphic,
                sections: a.biquads(),
                max_error_db: a.fit_error_db,
            };
            let peak = f.peak_magnitude(self.fs);
            if !(peak < 1.0) {
                return Err(Error::Stability(format!(
                    "line {i} loop gain {peak:.6} is not below one"
                )));
            }
        }
        if let Some(c) = &self.coupled {
            c.spec.check_stability()?;
        }
        Ok(())
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Room path lengths: three axial, three face diagonals and the space
/// diagonal, sorted ascending.
pub fn room_paths(g: &RoomGeometry) -> [f64; 7] {
    let d = g.dims;
    let mut p = [
        d.x,
        d.y,
        d.z,
        sqrt(d.x * d.x + d.y * d.y),
        sqrt(d.x * d.x + d.z * d.z),
        sqrt(d.y * d.y + d.z * d.z),
        d.norm(),
    ];
    p.sort_by(|a, b| a.total_cmp(b));
    p
}

/// Longest line as a multiple of the mean free path `4V/S`.
pub const MAX_LINE_FREE_PATHS: f64 = 3.0;

/// `n` path lengths spread over the room paths, with geometric
/// interpolation between neighbours when more than seven are needed. In
/// elongated rooms the spread is compressed in log space so the longest
/// line stays within a few mean free paths.
pub fn line_lengths(g: &RoomGeometry, n: usize) -> Vec<f64> {
    let p = room_paths(g);
    let cap = MAX_LINE_FREE_PATHS * 4.0 * g.volume() / g.surface_area();
    let squeeze = if p[6] > cap && cap > p[0] {
        libm::log(cap / p[0]) / libm::log(p[6] / p[0])
    } else {
        1.0
    };
    (0..n)
        .map(|i| {
            let x = if n == 1 { 0.0 } else { i as f64 * 6.0 / (n - 1) as f64 };
            let k = (x as usize).min(5);
            let f = x - k as f64;
            let l = p[k] * pow(p[k + 1] / p[k], f);
            p[0] * pow(l / p[0], squeeze)
        })
        .collect()
}

/// Round each target to the nearest integer that is coprime with all
/// earlier choices, searching at most 25% away.
pub fn coprime_delays(targets: &[f64]) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = Vec::with_capacity(targets.len());
    for &t in targets {
        let centre = round(t) as i64;
        let reach = ((0.25 * t) as i64).max(1);
        let mut found = None;
        for step in 0..=2 * reach {
            let off = if step % 2 == 0 { step / 2 } else { -(step + 1) / 2 };
            let c = centre + off;
            if c < 2 {
                continue;
            }
            let c = c as usize;
            if out.iter().all(|&d| d != c && gcd(d, c) == 1) {
                found = Some(c);
                break;
            }
        }
        match found {
            Some(c) => out.push(c),
            None => {
                return Err(Error::Design(format!(
                    "no coprime delay near {t:.1} samples; room too small for {} lines",
                    targets.len()
                )))
            }
        }
    }
    Ok(out)
}

/// Householder reflection `I - 2/N·11ᵀ` followed by a cyclic shift of the
/// rows, so no line feeds mostly back into itself.
pub fn feedback_matrix(n: usize) -> Vec<f64> {
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        let src = (i + 1) % n;
        for j in 0..n {
            let h = if src == j { 1.0 } else { 0.0 } - 2.0 / n as f64;
            q[i * n + j] = h;
        }
    }
    q
}

/// Orthonormal DCT-IV readout from lines to output channels.
pub fn output_mix(n: usize) -> Vec<f64> {
    let scale = sqrt(2.0 / n as f64);
    let mut m = vec![0.0; n * n];
    for k in 0..n {
        for i in 0..n {
            m[k * n + i] = scale * cos(PI / n as f64 * (k as f64 + 0.5) * (i as f64 + 0.5));
        }
    }
    m
}

/// Per-pass gain of a line of `m` samples for a 60 dB decay in `t30` s.
pub fn line_gain(m: usize, fs: f64, t30: f64) -> f64 {
    pow(10.0, -3.0 * m as f64 / (fs * t30))
}

/// Design an `n_lines` FDN for a room and per-band decay target.
pub fn design_fdn(
    geometry: &RoomGeometry,
    target: &ReverbTarget,
    fs: f64,
    n_lines: usize,
) -> Result<FdnSpec> {
    design_fdn_with(geometry, target, fs, n_lines, DEFAULT_SPEED_OF_SOUND)
}

pub fn design_fdn_with(
    geometry: &RoomGeometry,
    target: &ReverbTarget,
    fs: f64,
    n_lines: usize,
    c: f64,
) -> Result<FdnSpec> {
    if n_lines < 4 || n_lines % 2 != 0 {
        return Err(Error::Design(format!(
            "line count must be even and at least 4, got {n_lines}"
        )));
    }
    geometry.validate()?;
    target.validate()?;
    let lengths: Vec<f64> = line_lengths(geometry, n_lines)
        .into_iter()
        .map(|l| l / c * fs)
        .collect();
    let delays = coprime_delays(&lengths)?;
    let mut attenuation = Vec::with_capacity(n_lines);
    for &m in &delays {
        let band_gains: BandValues =
            core::array::from_fn(|b| line_gain(m, fs, target.t30_per_band[b]));
        let db = band_gains.map(|g| 20.0 * libm::log10(g));
        let f = BandGainFilter::fit(&db, fs)?;
        attenuation.push(LineAttenuation::from_filter(band_gains, &f));
    }
    let scale = 1.0 / sqrt(n_lines as f64);
    let input_gains = (0..n_lines)
        .map(|i| if i % 2 == 0 { scale } else { -scale })
        .collect();
    Ok(FdnSpec {
        fs,
        delays,
        matrix: feedback_matrix(n_lines),
        attenuation,
        input_gains,
        output_gains: vec![1.0; n_lines],
        onset: 0.0,
        t30: target.clone(),
        coupled: None,
    })
}

/// Add a slower parallel stage for `coupled_geometry` whose EDC crosses
/// the main decay `knee_level_db` below the start of the tail.
pub fn couple_volumes(
    main: FdnSpec,
    coupled_geometry: &RoomGeometry,
    coupled_t30: &ReverbTarget,
    knee_level_db: f64,
) -> Result<FdnSpec> {
    let (t1, t2) = (main.t30.broadband_t30, coupled_t30.broadband_t30);
    if !(t2 > t1) {
        return Err(Error::Config(format!(
            "coupled decay {t2} s must be slower than main decay {t1} s"
        )));
    }
    let mix = decay::mix_for_knee(t1, t2, knee_level_db)?;
    let mut spec = design_fdn(coupled_geometry, coupled_t30, main.fs, main.lines())?;
    spec.onset = main.onset;
    // A different sign pattern keeps the two stages uncorrelated.
    for (i, g) in spec.input_gains.iter_mut().enumerate() {
        if i % 3 == 0 {
            *g = -*g;
        }
    }
    let mut out = main;
    out.coupled = Some(Box::new(CoupledStage {
        spec,
        mix_db: mix.mix_db(),
        knee_db: knee_level_db,
        description: format!(
            "parallel stage, T30 {t2:.3} s, knee {knee_level_db:.1} dB"
        ),
    }));
    Ok(out)
}

/// Render one FDN stage: an impulse enters every line at `inject` samples,
/// outputs are read before the loop attenuation.
fn run_stage(spec: &FdnSpec, inject: usize, len: usize) -> Vec<Vec<f64>> {
    let n = spec.lines();
    // Attenuation cascades run in lockstep across lines, one coefficient
    // array per biquad term, padded with identity sections to a common depth.
    let depth = spec.attenuation.iter().map(|a| a.sections.len()).max().unwrap_or(0);
    let mut coef = [(); 5].map(|_| vec![0.0; depth * n]);
    for k in 0..depth {
        coef[0][k * n..(k + 1) * n].fill(1.0);
    }
    for (i, a) in spec.attenuation.iter().enumerate() {
        for (k, c) in a.sections.iter().enumerate() {
            for (m, v) in c.iter().enumerate() {
                coef[m][k * n + i] = *v;
            }
        }
    }
    let [b0, b1, b2, a1, a2] = &coef;
    let mut z0 = vec![0.0; depth * n];
    let mut z1 = vec![0.0; depth * n];
    let mut qt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            qt[j * n + i] = spec.matrix[i * n + j];
        }
    }
    let mut lines: Vec<Vec<f64>> = spec.delays.iter().map(|&d| vec![0.0; d]).collect();
    let mut pos = vec![0usize; n];
    let mut out = vec![vec![0.0; len]; n];
    let mut x = vec![0.0; n];
    let mut acc = vec![0.0; n];
    for t in 0..len {
        for i in 0..n {
            let v = lines[i][pos[i]];
            out[i][t] = v * spec.output_gains[i];
            x[i] = v;
        }
        for k in 0..depth {
            let r = k * n..(k + 1) * n;
            let (b0, b1, b2, a1, a2) = (&b0[r.clone()], &b1[r.clone()], &b2[r.clone()], &a1[r.clone()], &a2[r.clone()]);
            let (z0, z1) = (&mut z0[r.clone()], &mut z1[r]);
            for i in 0..n {
                let xi = x[i];
                let y = b0[i] * xi + z0[i];
                z0[i] = b1[i] * xi - a1[i] * y + z1[i];
                z1[i] = b2[i] * xi - a2[i] * y;
                x[i] = y;
            }
        }
        let u = if t == inject { 1.0 } else { 0.0 };
        for (a, g) in acc.iter_mut().zip(&spec.input_gains) {
            *a = g * u;
        }
        for (j, &xj) in x.iter().enumerate() {
            for (a, q) in acc.iter_mut().zip(&qt[j * n..(j + 1) * n]) {
                *a += q * xj;
            }
        }
        for i in 0..n {
            lines[i][pos[i]] = acc[i];
            pos[i] += 1;
            if pos[i] == lines[i].len() {
                pos[i] = 0;
            }
        }
    }
    out
}

/// Apply the orthonormal readout to raw line outputs.
fn mix_outputs(raw: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = raw.len();
    let mix = output_mix(n);
    let len = raw.first().map_or(0, Vec::len);
    (0..n)
        .map(|k| {
            let mut o = vec![0.0; len];
            for (m, r) in mix[k * n..(k + 1) * n].iter().zip(raw) {
                for (a, b) in o.iter_mut().zip(r) {
                    *a += m * b;
                }
            }
            o
        })
        .collect()
}

fn energy(chs: &[Vec<f64>]) -> f64 {
    chs.iter().flat_map(|c| c.iter()).map(|v| v * v).sum()
}

/// Render `len` samples of the multichannel tail. The first output of the
/// shortest line appears at `spec.onset`. A coupled stage is scaled to
/// its mix level and summed channel by channel.
pub fn run_fdn(spec: &FdnSpec, len: usize) -> Result<Vec<Vec<f64>>> {
    spec.check_stability()?;
    let onset = round(spec.onset * spec.fs) as usize;
    let shortest = spec.delays.iter().copied().min().unwrap_or(0);
    if onset >= len {
        return Err(Error::Config("tail length must exceed the onset".into()));
    }
    let inject = onset.saturating_sub(shortest);
    let mut out = run_stage(spec, inject, len);
    if let Some(c) = &spec.coupled {
        let cshort = c.spec.delays.iter().copied().min().unwrap_or(0);
        let second = run_stage(&c.spec, onset.saturating_sub(cshort), len);
        let (e1, e2) = (energy(&out), energy(&second));
        if e1 > 0.0 && e2 > 0.0 {
            let g = sqrt(e1 / e2 * pow(10.0, c.mix_db / 10.0));
            for (o, s) in out.iter_mut().zip(&second) {
                for (a, b) in o.iter_mut().zip(s) {
                    *a += g * b;
                }
            }
        }
    }
    Ok(mix_outputs(&out))
}

/// Zero every loop gain, leaving only the first pass through each line.
pub fn fully_absorbing(mut spec: FdnSpec) -> FdnSpec {
    for a in spec.attenuation.iter_mut() {
        a.band_gains = [0.0; BAND_COUNT];
        a.sections = vec![[0.0, 0.0, 0.0, 0.0, 0.0]];
        a.kind = "flat".into();
    }
    spec
}
