//! Shoebox image sources, jitter, finite reflectors and tap extraction.
//!
//! Per axis the image lattice index `v` encodes both the mirror parity and
//! the period: with `p = v mod 2` and `n = (v + p) / 2`, the image
//! coordinate is `(1 - 2p)·s + 2nL` (room-local). Its path hits the low wall
//! `|n - p|` times and the high wall `|n|` times, so `|v|` reflections in
//! total.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bands::{BandValues, BAND_COUNT};
use crate::error::{Error, Result};
use crate::geom::{world_to_head, Vec3};
use crate::scene::{AbsorptionProfile, FiniteReflector, Pose, RoomGeometry};

/// Jitter amplitude per reflection order and axis, metres.
pub const JITTER_PER_ORDER: f64 = 0.05;
/// Jitter never moves an image by more than this fraction of its distance
/// to the room, so images stay outside the room.
const JITTER_CLEARANCE: f64 = 0.45;

/// Where an image came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Lattice([i32; 3]),
    Reflector(String),
    /// Lattice indices in the source room and in the receiver room of a
    /// path through an aperture.
    Portal([i32; 3], [i32; 3]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSource {
    pub position: Vec3,
    pub order: u32,
    /// Cumulative pressure reflection gain per band.
    pub gains: BandValues,
    pub provenance: Provenance,
    /// Path length travelled before reaching `position`'s lattice, e.g. the
    /// leg in the source room of a path through an aperture.
    #[serde(default)]
    pub extra_path: f64,
    /// Amplitude factor applied on top of spherical spreading.
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

/// Images of one source in one room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSet {
    pub room: RoomGeometry,
    pub source: Vec3,
    pub images: Vec<ImageSource>,
}

/// Image coordinate along one axis (room-local) and wall hit counts.
pub fn lattice_coordinate(v: i32, s: f64, len: f64) -> (f64, u32, u32) {
    let p = v.rem_euclid(2);
    let n = (v + p) / 2;
    let x = (1 - 2 * p) as f64 * s + 2.0 * n as f64 * len;
    ((x), (n - p).unsigned_abs(), n.unsigned_abs())
}

/// Number of lattice images of exactly order `o`.
pub fn images_of_order(o: u32) -> usize {
    if o == 0 {
        1
    } else {
        4 * (o as usize) * (o as usize) + 2
    }
}

/// All lattice images with reflection order up to `max_order`, ordered by
/// order and then lexicographically by lattice index.
pub fn enumerate_images(
    room: &RoomGeometry,
    source: Vec3,
    max_order: u32,
    absorption: &AbsorptionProfile,
) -> Result<ImageSet> {
    room.validate()?;
    if !room.contains(source) {
        return Err(Error::Domain("source lies outside the room".into()));
    }
    let refl = absorption.reflection_factors();
    let local = source - room.origin;
    let m = max_order as i32;
    let total: usize = (0..=max_order).map(images_of_order).sum();
    let mut images = Vec::with_capacity(total);
    let mut pow_cache: Vec<BandValues> = Vec::with_capacity(max_order as usize + 1);
    let mut g = [1.0; BAND_COUNT];
    for _ in 0..=max_order {
        pow_cache.push(g);
        for b in 0..BAND_COUNT {
            g[b] *= refl[b];
        }
    }
    for order in 0..=m {
        for vx in -order..=order {
            let rest = order - vx.abs();
            for vy in -rest..=rest {
                let rz = rest - vy.abs();
                let zs: &[i32] = if rz == 0 { &[0] } else { &[-rz, rz] };
                for &vz in zs {
                    let v = [vx, vy, vz];
                    let mut pos = room.origin;
                    for a in 0..3 {
                        let (x, _, _) = lattice_coordinate(v[a], local.get(a), room.dims.get(a));
                        pos.set(a, room.origin.get(a) + x);
                    }
                    images.push(ImageSource {
                        position: pos,
                        order: order as u32,
                        gains: pow_cache[order as usize],
                        provenance: Provenance::Lattice(v),
                        extra_path: 0.0,
                        amplitude: 1.0,
                    });
                }
            }
        }
    }
    Ok(ImageSet {
        room: *room,
        source,
        images,
    })
}

/// Displace every reflected image by a seeded uniform offset of at most
/// `0.05 m × order` per axis. The direct sound is never moved.
pub fn apply_jitter(set: &ImageSet, seed: u64) -> ImageSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = set.clone();
    for img in out.images.iter_mut() {
        if img.order == 0 {
            continue;
        }
        let amp = JITTER_PER_ORDER * img.order as f64;
        let mut off = Vec3::new(
            rng.gen_range(-amp..=amp),
            rng.gen_range(-amp..=amp),
            rng.gen_range(-amp..=amp),
        );
        let limit = JITTER_CLEARANCE * set.room.distance_to(img.position);
        let n = off.norm();
        if n > limit {
            off = off * (limit / n);
        }
        img.position += off;
    }
    out
}

/// Mirror `p` in the plane through `c` with unit normal `n`.
fn mirror(p: Vec3, c: Vec3, n: Vec3) -> Vec3 {
    p - n * (2.0 * (p - c).dot(n))
}

/// First-order images of `source` in each reflector whose specular point
/// for `receiver` lies on the reflector.
pub fn reflect_finite_surfaces(
    source: &Pose,
    receiver: &Pose,
    reflectors: &[FiniteReflector],
) -> Vec<ImageSource> {
    let mut out = Vec::new();
    for r in reflectors {
        let n = r.normal.normalized();
        let (s, x) = (source.position, receiver.position);
        if (s - r.center).dot(n) <= 0.0 || (x - r.center).dot(n) <= 0.0 {
            continue;
        }
        let img = mirror(s, r.center, n);
        let denom = (x - img).dot(n);
        if denom.abs() < 1e-12 {
            continue;
        }
        let t = (r.center - img).dot(n) / denom;
        if !(0.0..=1.0).contains(&t) {
            continue;
        }
        let p = img + (x - img) * t;
        let (u, v) = r.tangents();
        let d = p - r.center;
        if d.dot(u).abs() > 0.5 * r.extents[0] || d.dot(v).abs() > 0.5 * r.extents[1] {
            continue;
        }
        out.push(ImageSource {
            position: img,
            order: 1,
            gains: r.alpha_per_band.map(|a| libm::sqrt(1.0 - a)),
            provenance: Provenance::Reflector(r.label.clone()),
            extra_path: 0.0,
            amplitude: 1.0,
        });
    }
    out
}

/// One propagation path as seen by the receiver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    /// Propagation delay, seconds.
    pub delay: f64,
    pub distance: f64,
    /// Linear amplitude: spreading loss times any extra path factor.
    pub amplitude: f64,
    /// Unit arrival direction in the receiver's head frame.
    pub direction: Vec3,
    pub gains: BandValues,
    pub order: u32,
    pub smear: bool,
}

/// Taps sorted by delay.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TapList {
    pub taps: Vec<Tap>,
}

impl TapList {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Convert images to taps for `receiver`: delay `d / c`, amplitude `1 / d`
/// and the arrival direction rotated into the head frame.
pub fn image_taps(images: &[ImageSource], receiver: &Pose, c: f64) -> Result<TapList> {
    if !(c > 0.0) {
        return Err(Error::Domain("speed of sound must be positive".into()));
    }
    let mut taps = Vec::with_capacity(images.len());
    for img in images {
        let rel = img.position - receiver.position;
        let leg = rel.norm();
        let d = leg + img.extra_path;
        if !(d > 1e-9) || leg <= 1e-12 {
            return Err(Error::DegenerateDistance(alloc::format!(
                "image at {:?} coincides with the receiver",
                <[f64; 3]>::from(img.position)
            )));
        }
        taps.push(Tap {
            delay: d / c,
            distance: d,
            amplitude: img.amplitude / d,
            direction: world_to_head(rel * (1.0 / leg), receiver.yaw, receiver.pitch),
            gains: img.gains,
            order: img.order,
            smear: img.order >= 2,
        });
    }
    taps.sort_by(|a, b| a.delay.total_cmp(&b.delay));
    Ok(TapList { taps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{calibrate_absorption, ReverbTarget};

    fn room() -> RoomGeometry {
        RoomGeometry::new(Vec3::new(5.0, 4.0, 3.0), Vec3::new(1.0, -2.0, 0.5)).unwrap()
    }

    fn absorb() -> AbsorptionProfile {
        calibrate_absorption(&room(), &ReverbTarget::uniform(0.5)).unwrap()
    }

    #[test]
    fn counts_per_order() {
        let set = enumerate_images(&room(), Vec3::new(2.0, 0.0, 1.0), 6, &absorb()).unwrap();
        for o in 0..=6 {
            let n = set.images.iter().filter(|i| i.order == o).count();
            assert_eq!(n, images_of_order(o));
        }
    }

    #[test]
    fn first_order_images_are_wall_mirrors() {
        let r = room();
        let s = Vec3::new(2.0, 0.0, 1.0);
        let set = enumerate_images(&r, s, 1, &absorb()).unwrap();
        let hi = r.max_corner();
        let expect = [
            Vec3::new(2.0 * r.origin.x - s.x, s.y, s.z),
            Vec3::new(2.0 * hi.x - s.x, s.y, s.z),
            Vec3::new(s.x, 2.0 * r.origin.y - s.y, s.z),
            Vec3::new(s.x, 2.0 * hi.y - s.y, s.z),
            Vec3::new(s.x, s.y, 2.0 * r.origin.z - s.z),
            Vec3::new(s.x, s.y, 2.0 * hi.z - s.z),
        ];
        for e in expect {
            assert!(set.images.iter().any(|i| (i.position - e).norm() < 1e-12));
        }
    }

    #[test]
    fn source_outside_is_domain_error() {
        let e = enumerate_images(&room(), Vec3::new(100.0, 0.0, 0.0), 1, &absorb());
        assert!(matches!(e, Err(Error::Domain(_))));
    }

    #[test]
    fn jitter_keeps_images_outside_room() {
        let r = room();
        let set = enumerate_images(&r, Vec3::new(1.05, -1.95, 0.55), 3, &absorb()).unwrap();
        let j = apply_jitter(&set, 11);
        for (a, b) in set.images.iter().zip(&j.images) {
            if a.order == 0 {
                assert_eq!(a.position, b.position);
            } else {
                assert!(r.distance_to(b.position) > 0.0);
            }
        }
    }

    #[test]
    fn infinite_floor_reflection() {
        let s = Pose::at(Vec3::new(0.0, 0.0, 1.0));
        let x = Pose::at(Vec3::new(3.0, 0.0, 2.0));
        let floor = FiniteReflector {
            label: "floor".into(),
            center: Vec3::ZERO,
            normal: Vec3::Z,
            extents: [1e9, 1e9],
            alpha_per_band: [0.2; BAND_COUNT],
        };
        let imgs = reflect_finite_surfaces(&s, &x, &[floor]);
        assert_eq!(imgs.len(), 1);
        assert!((imgs[0].position - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((imgs[0].gains[3] - libm::sqrt(0.8)).abs() < 1e-15);
    }

    #[test]
    fn coincident_image_is_degenerate() {
        let set = enumerate_images(&room(), Vec3::new(2.0, 0.0, 1.0), 0, &absorb()).unwrap();
        let e = image_taps(&set.images, &Pose::at(Vec3::new(2.0, 0.0, 1.0)), 343.0);
        assert!(matches!(e, Err(Error::DegenerateDistance(_))));
    }
}
