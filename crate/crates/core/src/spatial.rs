//! Direction-dependent rendering backends: measured HRIRs, an analytic
//! spherical head, loudspeaker panning (VBAP) and diotic collapse.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, floor, sqrt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::resample;

/// Head radius, metres.
pub const HEAD_RADIUS: f64 = 0.0875;
/// Length of the truncated head-shadow impulse response.
pub const SHADOW_TAPS: usize = 64;
/// Largest permitted angle from any direction to the nearest HRIR, degrees.
pub const MAX_COVERAGE_GAP_DEG: f64 = 15.0;

const PI: f64 = core::f64::consts::PI;

/// Ear axes in the head frame: left is +y.
pub const LEFT_EAR: Vec3 = Vec3::Y;
pub const RIGHT_EAR: Vec3 = Vec3::new(0.0, -1.0, 0.0);

/// Extra travel time to an ear on a rigid sphere for incidence angle `psi`
/// from the ear axis (radians), offset so frontal incidence gives `a/c`.
pub fn ear_delay(psi: f64, c: f64) -> f64 {
    let a = HEAD_RADIUS;
    let extra = if psi < PI / 2.0 {
        -(a / c) * cos(psi)
    } else {
        (a / c) * (psi - PI / 2.0)
    };
    extra + a / c
}

/// Interaural time difference (left minus right arrival, seconds) for a
/// head-frame direction. Positive when the source is on the right.
pub fn itd(direction: Vec3, c: f64) -> f64 {
    let d = direction.normalized();
    ear_delay(d.angle_to(LEFT_EAR), c) - ear_delay(d.angle_to(RIGHT_EAR), c)
}

/// First-order head-shadow filter for incidence angle `psi` (radians from
/// the ear axis), discretized with the bilinear transform. Returns
/// (b0, b1, a1) with a0 = 1.
pub fn head_shadow(psi: f64, fs: f64, c: f64) -> (f64, f64, f64) {
    let alpha_min = 0.1;
    let theta_min = 150.0f64.to_radians();
    let alpha = (1.0 + alpha_min / 2.0) + (1.0 - alpha_min / 2.0) * cos(psi / theta_min * PI);
    let w0 = c / HEAD_RADIUS;
    // H(s) = (alpha s + 2 w0) / (s + 2 w0)
    let k = 2.0 * fs;
    let (n1, n0) = (alpha, 2.0 * w0);
    let (d1, d0) = (1.0, 2.0 * w0);
    let a0 = d1 * k + d0;
    ((n1 * k + n0) / a0, (n0 - n1 * k) / a0, (d0 - d1 * k) / a0)
}

/// Truncated impulse response of [`head_shadow`].
pub fn head_shadow_ir(psi: f64, fs: f64, c: f64) -> [f64; SHADOW_TAPS] {
    let (b0, b1, a1) = head_shadow(psi, fs, c);
    let mut h = [0.0; SHADOW_TAPS];
    let mut y_prev = 0.0;
    for (n, v) in h.iter_mut().enumerate() {
        let x = if n == 0 { 1.0 } else { 0.0 };
        let x_prev = if n == 1 { 1.0 } else { 0.0 };
        let y = b0 * x + b1 * x_prev - a1 * y_prev;
        *v = y;
        y_prev = y;
    }
    h
}

/// Per-ear rendering data for one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct EarKernel {
    /// Delay added on top of the propagation delay, seconds.
    pub delay: f64,
    /// Filter applied after the delay.
    pub ir: Vec<f64>,
}

/// One measured direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrirEntry {
    pub azimuth: f64,
    pub elevation: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

/// Set of head-related impulse responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HrirSet {
    pub fs: f64,
    pub entries: Vec<HrirEntry>,
    #[serde(skip)]
    dirs: Vec<Vec3>,
    /// Set when the data was resampled on load.
    #[serde(default)]
    pub resampled_from: Option<f64>,
}

/// Quasi-uniform points on the unit sphere.
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = PI * (3.0 - sqrt(5.0));
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = sqrt(1.0 - z * z);
            let phi = golden * i as f64;
            Vec3::new(r * cos(phi), r * libm::sin(phi), z)
        })
        .collect()
}

impl HrirSet {
    /// Validate and build a set at its native rate.
    pub fn new(fs: f64, entries: Vec<HrirEntry>) -> Result<Self> {
        if entries.is_empty() || !(fs > 0.0) {
            return Err(Error::Format("HRIR set is empty or has no rate".into()));
        }
        let len = entries[0].left.len();
        if len == 0
            || entries
                .iter()
                .any(|e| e.left.len() != len || e.right.len() != len)
        {
            return Err(Error::Format("HRIR entries must share one length".into()));
        }
        if entries
            .iter()
            .flat_map(|e| e.left.iter().chain(&e.right))
            .any(|v| !v.is_finite())
        {
            return Err(Error::Format("HRIR samples must be finite".into()));
        }
        let dirs: Vec<Vec3> = entries
            .iter()
            .map(|e| Vec3::from_angles_deg(e.azimuth, e.elevation))
            .collect();
        let set = Self {
            fs,
            entries,
            dirs,
            resampled_from: None,
        };
        let gap = set.coverage_gap_deg();
        if gap > MAX_COVERAGE_GAP_DEG {
            return Err(Error::Coverage(format!(
                "directions leave a {gap:.1} degree gap (limit {MAX_COVERAGE_GAP_DEG})"
            )));
        }
        Ok(set)
    }

    /// Build at `fs`, resampling when the data rate differs.
    pub fn at_rate(fs_data: f64, entries: Vec<HrirEntry>, fs: f64) -> Result<Self> {
        if (fs_data - fs).abs() < 1e-9 {
            return Self::new(fs, entries);
        }
        let entries = entries
            .into_iter()
            .map(|e| HrirEntry {
                left: resample::resample(&e.left, fs_data, fs),
                right: resample::resample(&e.right, fs_data, fs),
                ..e
            })
            .collect();
        let mut set = Self::new(fs, entries)?;
        set.resampled_from = Some(fs_data);
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.entries[0].left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Largest angle from a dense probe grid to its nearest direction.
    pub fn coverage_gap_deg(&self) -> f64 {
        fibonacci_sphere(2000)
            .into_iter()
            .map(|p| self.nearest_angle(p).1)
            .fold(0.0, f64::max)
            .to_degrees()
    }

    fn nearest_angle(&self, d: Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, v) in self.dirs.iter().enumerate() {
            let a = d.angle_to(*v);
            if a < best.1 {
                best = (i, a);
            }
        }
        best
    }

    /// Entry closest to `direction` (head frame).
    pub fn nearest(&self, direction: Vec3) -> &HrirEntry {
        &self.entries[self.nearest_angle(direction).0]
    }

    /// Synthetic set from the analytic head on an azimuth/elevation grid.
    pub fn from_head_model(step_deg: f64, fs: f64, c: f64) -> Result<Self> {
        let n = (48e-4 * fs) as usize + SHADOW_TAPS;
        let mut entries = Vec::new();
        let mut el: f64 = -90.0;
        while el <= 90.0 + 1e-9 {
            let ring = ((360.0 * cos(el.to_radians()) / step_deg) as usize).max(1);
            for k in 0..ring {
                let az = -180.0 + 360.0 * k as f64 / ring as f64;
                let d = Vec3::from_angles_deg(az, el);
                let ear = |axis: Vec3| {
                    let psi = d.angle_to(axis);
                    let shadow = head_shadow_ir(psi, fs, c);
                    let mut h = vec![0.0; n];
                    crate::render::add_fractional(&mut h, ear_delay(psi, c) * fs, 1.0, &shadow);
                    h
                };
                entries.push(HrirEntry {
                    azimuth: az,
                    elevation: el,
                    left: ear(LEFT_EAR),
                    right: ear(RIGHT_EAR),
                });
            }
            el += step_deg;
        }
        Self::new(fs, entries)
    }
}

/// Loudspeaker positions around the listening spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerLayout {
    pub name: String,
    /// Unit directions in the listener frame.
    pub directions: Vec<Vec3>,
    pub distances: Vec<f64>,
    /// Speakers per ring with their elevation, for documentation.
    pub rings: Vec<(f64, usize)>,
    #[serde(skip)]
    triangles: Vec<[usize; 3]>,
    #[serde(skip)]
    inverses: Vec<[[f64; 3]; 3]>,
}

/// Panning result.
#[derive(Debug, Clone, PartialEq)]
pub struct PanGains {
    pub gains: Vec<f64>,
    /// True when no triangle contained the direction and the nearest
    /// speaker was used instead.
    pub fallback: bool,
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inverse3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let d = det3(m);
    if d.abs() < 1e-12 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / d;
        }
    }
    Some(inv)
}

/// Triangulated convex hull of unit vectors. Faces with more than three
/// coplanar points are fan-triangulated once.
fn hull_triangles(p: &[Vec3]) -> Vec<[usize; 3]> {
    let n = p.len();
    let eps = 1e-9;
    let mut tris: Vec<[usize; 3]> = Vec::new();
    let mut faces_done: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let mut nrm = (p[j] - p[i]).cross(p[k] - p[i]);
                if nrm.norm() < 1e-12 {
                    continue;
                }
                nrm = nrm.normalized();
                let off = nrm.dot(p[i]);
                let (mut above, mut below) = (false, false);
                let mut on = Vec::new();
                for (m, q) in p.iter().enumerate() {
                    let s = nrm.dot(*q) - off;
                    if s > eps {
                        above = true;
                    } else if s < -eps {
                        below = true;
                    } else {
                        on.push(m);
                    }
                    if above && below {
                        break;
                    }
                }
                if above && below {
                    continue;
                }
                if on.len() == 3 {
                    tris.push([i, j, k]);
                } else if !faces_done.contains(&on) {
                    // Sort the coplanar points by angle around their centroid.
                    let c = on.iter().fold(Vec3::ZERO, |a, &m| a + p[m]) * (1.0 / on.len() as f64);
                    let u = (p[on[0]] - c).normalized();
                    let v = nrm.cross(u);
                    let mut ring = on.clone();
                    ring.sort_by(|&a, &b| {
                        let ang = |m: usize| libm::atan2((p[m] - c).dot(v), (p[m] - c).dot(u));
                        ang(a).total_cmp(&ang(b))
                    });
                    for t in 1..ring.len() - 1 {
                        tris.push([ring[0], ring[t], ring[t + 1]]);
                    }
                    faces_done.push(on);
                }
            }
        }
    }
    tris
}

impl SpeakerLayout {
    pub fn new(name: impl Into<String>, directions: Vec<Vec3>, distances: Vec<f64>, rings: Vec<(f64, usize)>) -> Result<Self> {
        if directions.len() < 3 || directions.len() != distances.len() {
            return Err(Error::Format("layout needs at least three speakers with distances".into()));
        }
        let directions: Vec<Vec3> = directions.into_iter().map(|d| d.normalized()).collect();
        let triangles = hull_triangles(&directions);
        let inverses = triangles
            .iter()
            .map(|t| {
                let m = [
                    <[f64; 3]>::from(directions[t[0]]),
                    <[f64; 3]>::from(directions[t[1]]),
                    <[f64; 3]>::from(directions[t[2]]),
                ];
                inverse3(&m).unwrap_or([[0.0; 3]; 3])
            })
            .collect();
        Ok(Self {
            name: name.into(),
            directions,
            distances,
            rings,
            triangles,
            inverses,
        })
    }

    /// 86-speaker lab array: 48 on the horizontal ring, 12 at ±30°, 6 at
    /// ±60° and one at each pole, all at 2.4 m.
    pub fn vr_lab() -> Self {
        let rings = [
            (0.0, 48usize),
            (30.0, 12),
            (-30.0, 12),
            (60.0, 6),
            (-60.0, 6),
            (90.0, 1),
            (-90.0, 1),
        ];
        let mut dirs = Vec::new();
        for &(el, count) in &rings {
            for k in 0..count {
                dirs.push(Vec3::from_angles_deg(360.0 * k as f64 / count as f64, el));
            }
        }
        let n = dirs.len();
        Self::new("vr_lab", dirs, vec![2.4; n], rings.to_vec()).expect("valid preset layout")
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Index of the speaker closest to `direction`.
    pub fn nearest(&self, direction: Vec3) -> usize {
        let d = direction.normalized();
        (0..self.len())
            .max_by(|&a, &b| d.dot(self.directions[a]).total_cmp(&d.dot(self.directions[b])))
            .unwrap_or(0)
    }

    /// Power-normalized VBAP gains.
    pub fn pan(&self, direction: Vec3) -> PanGains {
        let d = direction.normalized();
        let mut gains = vec![0.0; self.len()];
        let mut best: Option<(usize, [f64; 3])> = None;
        for (t, inv) in self.inverses.iter().enumerate() {
            let g: [f64; 3] = core::array::from_fn(|j| inv[0][j] * d.x + inv[1][j] * d.y + inv[2][j] * d.z);
            let worst = g.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= -1e-9 && best.is_none_or(|(_, b)| worst > b.iter().copied().fold(f64::INFINITY, f64::min)) {
                best = Some((t, g));
            }
        }
        match best {
            Some((t, g)) => {
                let norm = sqrt(g.iter().map(|v| v.max(0.0) * v.max(0.0)).sum::<f64>());
                for (j, &s) in self.triangles[t].iter().enumerate() {
                    gains[s] = g[j].max(0.0) / norm;
                }
                PanGains {
                    gains,
                    fallback: false,
                }
            }
            None => {
                gains[self.nearest(d)] = 1.0;
                PanGains {
                    gains,
                    fallback: true,
                }
            }
        }
    }
}

/// Copy the left channel onto the right.
pub fn diotic_collapse(stereo: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if stereo.len() != 2 {
        return Err(Error::Format(format!(
            "diotic collapse needs 2 channels, got {}",
            stereo.len()
        )));
    }
    Ok(vec![stereo[0].clone(), stereo[0].clone()])
}

/// The 12 vertices of an icosahedron, used as fixed tail directions.
pub fn icosahedron() -> [Vec3; 12] {
    let phi = (1.0 + sqrt(5.0)) / 2.0;
    let raw = [
        (0.0, 1.0, phi),
        (0.0, -1.0, phi),
        (0.0, 1.0, -phi),
        (0.0, -1.0, -phi),
        (1.0, phi, 0.0),
        (-1.0, phi, 0.0),
        (1.0, -phi, 0.0),
        (-1.0, -phi, 0.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, 1.0),
        (phi, 0.0, -1.0),
        (-phi, 0.0, -1.0),
    ];
    raw.map(|(x, y, z)| Vec3::new(x, y, z).normalized())
}

/// Tail direction for FDN line `i` of `n`.
pub fn tail_direction(i: usize, n: usize) -> Vec3 {
    if n == 12 {
        icosahedron()[i]
    } else {
        fibonacci_sphere(n)[i]
    }
}

/// Whole-sample part of a delay and its fraction.
pub fn split_delay(samples: f64) -> (usize, f64) {
    let i = floor(samples);
    (i as usize, samples - i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lateral_itd_matches_woodworth() {
        let c = 343.0;
        let expect = HEAD_RADIUS / c * (PI / 2.0 + 1.0);
        assert!((itd(RIGHT_EAR, c) - expect).abs() < 1e-12);
        assert!((itd(LEFT_EAR, c) + expect).abs() < 1e-12);
        assert_eq!(itd(Vec3::X, c), 0.0);
        assert!(itd(-Vec3::X, c).abs() < 1e-15);
    }

    #[test]
    fn vr_lab_has_86_speakers_and_identity_panning() {
        let l = SpeakerLayout::vr_lab();
        assert_eq!(l.len(), 86);
        for (i, d) in l.directions.iter().enumerate() {
            let g = l.pan(*d);
            assert!(!g.fallback);
            assert!((g.gains[i] - 1.0).abs() < 1e-9, "speaker {i}");
        }
    }

    #[test]
    fn vbap_power_normalized() {
        let l = SpeakerLayout::vr_lab();
        for d in fibonacci_sphere(300) {
            let g = l.pan(d);
            let p: f64 = g.gains.iter().map(|v| v * v).sum();
            assert!((p - 1.0).abs() < 1e-9);
            assert!(g.gains.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn horizontal_only_hrirs_fail_coverage() {
        let entries = (0..72)
            .map(|k| HrirEntry {
                azimuth: 5.0 * k as f64,
                elevation: 0.0,
                left: vec![1.0],
                right: vec![1.0],
            })
            .collect();
        assert!(matches!(HrirSet::new(44100.0, entries), Err(Error::Coverage(_))));
    }

    #[test]
    fn diotic_is_bit_exact() {
        let s = vec![vec![0.1, -0.2, 0.3], vec![9.0, 9.0, 9.0]];
        let d = diotic_collapse(&s).unwrap();
        assert_eq!(d[0], s[0]);
        assert_eq!(d[1], s[0]);
        assert_eq!(diotic_collapse(&d).unwrap(), d);
    }

    #[test]
    fn shadow_boosts_ipsilateral_highs() {
        let fs = 44100.0;
        let (b0, b1, a1) = head_shadow(0.0, fs, 343.0);
        // Nyquist gain (z = -1) equals alpha = 2 for psi = 0; DC gain 1.
        assert!(((b0 - b1) / (1.0 - a1) - 2.0).abs() < 1e-9);
        assert!(((b0 + b1) / (1.0 + a1) - 1.0).abs() < 1e-12);
    }
}
