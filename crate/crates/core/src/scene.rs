//! Scene description, validation, absorption calibration and expansion of
//! an acoustic level of detail (ALOD) preset into a simulation plan.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use libm::{exp, log};
use serde::{Deserialize, Serialize};

use crate::bands::{BandValues, BAND_COUNT};
use crate::decay;
use crate::error::{invalid, Error, Result};
use crate::geom::Vec3;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_FS: f64 = 44100.0;
/// Sabine/Eyring constant in s/m.
pub const EYRING_CONSTANT: f64 = 0.161;

/// Relative per-band reverberation times applied when a target gives only a
/// broadband value: longer at low frequencies, shorter at high ones.
pub const DEFAULT_BAND_SHAPE: BandValues = [1.25, 1.2, 1.12, 1.05, 1.0, 1.0, 0.96, 0.9, 0.8, 0.66];

/// Axis-aligned box room.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomGeometry {
    /// Length (x), width (y), height (z) in metres.
    pub dims: Vec3,
    /// World position of the room corner with the smallest coordinates.
    #[serde(default)]
    pub origin: Vec3,
}

impl RoomGeometry {
    pub fn new(dims: Vec3, origin: Vec3) -> Result<Self> {
        let g = Self { dims, origin };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if !(d.x > 0.0 && d.y > 0.0 && d.z > 0.0) || !(d.x.is_finite() && d.y.is_finite() && d.z.is_finite()) {
            return invalid("room dimensions must be finite and strictly positive");
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }

    pub fn surface_area(&self) -> f64 {
        let d = self.dims;
        2.0 * (d.x * d.y + d.x * d.z + d.y * d.z)
    }

    pub fn max_corner(&self) -> Vec3 {
        self.origin + self.dims
    }

    /// Closed-box containment test.
    pub fn contains(&self, p: Vec3) -> bool {
        let hi = self.max_corner();
        (0..3).all(|a| p.get(a) >= self.origin.get(a) && p.get(a) <= hi.get(a))
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to(&self, p: Vec3) -> f64 {
        let hi = self.max_corner();
        let mut d = Vec3::ZERO;
        for a in 0..3 {
            let v = p.get(a);
            let gap = if v < self.origin.get(a) {
                self.origin.get(a) - v
            } else if v > hi.get(a) {
                v - hi.get(a)
            } else {
                0.0
            };
            d.set(a, gap);
        }
        d.norm()
    }
}

/// Reverberation time targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ReverbTargetRaw", into = "ReverbTargetRaw")]
pub struct ReverbTarget {
    pub t30_per_band: BandValues,
    pub broadband_t30: f64,
}

#[derive(Serialize, Deserialize)]
struct ReverbTargetRaw {
    t30: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t30_per_band: Option<BandValues>,
}

impl From<ReverbTargetRaw> for ReverbTarget {
    fn from(r: ReverbTargetRaw) -> Self {
        match r.t30_per_band {
            Some(b) => ReverbTarget {
                t30_per_band: b,
                broadband_t30: r.t30,
            },
            None => ReverbTarget::shaped(r.t30),
        }
    }
}

impl From<ReverbTarget> for ReverbTargetRaw {
    fn from(t: ReverbTarget) -> Self {
        let shaped = ReverbTarget::shaped(t.broadband_t30);
        ReverbTargetRaw {
            t30: t.broadband_t30,
            t30_per_band: (shaped.t30_per_band != t.t30_per_band).then_some(t.t30_per_band),
        }
    }
}

impl ReverbTarget {
    /// Broadband value spread over the bands with [`DEFAULT_BAND_SHAPE`].
    pub fn shaped(t30: f64) -> Self {
        Self {
            t30_per_band: core::array::from_fn(|b| t30 * DEFAULT_BAND_SHAPE[b]),
            broadband_t30: t30,
        }
    }

    pub fn uniform(t30: f64) -> Self {
        Self {
            t30_per_band: [t30; BAND_COUNT],
            broadband_t30: t30,
        }
    }

    /// Same shape, every band multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            t30_per_band: self.t30_per_band.map(|t| t * factor),
            broadband_t30: self.broadband_t30 * factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.t30_per_band.iter().chain(core::iter::once(&self.broadband_t30));
        if all.clone().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return invalid("reverberation times must be finite and strictly positive");
        }
        let lo = self.t30_per_band.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.t30_per_band.iter().copied().fold(0.0, f64::max);
        if self.broadband_t30 < lo - 1e-12 || self.broadband_t30 > hi + 1e-12 {
            return invalid("broadband T30 must lie within the per-band range");
        }
        Ok(())
    }
}

/// Uniform wall absorption per octave band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionProfile {
    pub alpha_per_band: BandValues,
}

impl AbsorptionProfile {
    pub fn validate(&self) -> Result<()> {
        if self.alpha_per_band.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return invalid("absorption coefficients must lie in (0, 1)");
        }
        Ok(())
    }

    /// Pressure reflection factor sqrt(1 - alpha) per band.
    pub fn reflection_factors(&self) -> BandValues {
        self.alpha_per_band.map(|a| libm::sqrt(1.0 - a))
    }

    /// Equivalent absorption area -S·ln(1 - alpha) per band.
    pub fn absorption_area(&self, geometry: &RoomGeometry) -> BandValues {
        self.alpha_per_band
            .map(|a| -geometry.surface_area() * log(1.0 - a))
    }
}

/// Absorption coefficient reproducing `t30` in a room of volume `v` and
/// surface `s` under Eyring's formula.
pub fn eyring_alpha(v: f64, s: f64, t30: f64) -> f64 {
    1.0 - exp(-EYRING_CONSTANT * v / (s * t30))
}

/// Eyring reverberation time for absorption `alpha`.
pub fn eyring_t30(v: f64, s: f64, alpha: f64) -> f64 {
    EYRING_CONSTANT * v / (-s * log(1.0 - alpha))
}

/// Uniform absorption that reproduces `target` per band under Eyring.
pub fn calibrate_absorption(geometry: &RoomGeometry, target: &ReverbTarget) -> Result<AbsorptionProfile> {
    geometry.validate()?;
    target.validate()?;
    let (v, s) = (geometry.volume(), geometry.surface_area());
    let mut alpha = [0.0; BAND_COUNT];
    for (b, &t) in target.t30_per_band.iter().enumerate() {
        let a = eyring_alpha(v, s, t);
        if !(a > 0.0 && a < 1.0) {
            return Err(Error::Calibration(format!(
                "T30 {t} s in band {b} needs alpha {a:.6}, outside (0, 1)"
            )));
        }
        alpha[b] = a;
    }
    Ok(AbsorptionProfile { alpha_per_band: alpha })
}

/// One of the six walls of a box room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Wall {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Wall {
    pub fn axis(self) -> usize {
        match self {
            Wall::XMin | Wall::XMax => 0,
            Wall::YMin | Wall::YMax => 1,
            Wall::ZMin | Wall::ZMax => 2,
        }
    }

    pub fn is_max(self) -> bool {
        matches!(self, Wall::XMax | Wall::YMax | Wall::ZMax)
    }

    /// The two in-plane axes, in increasing order.
    pub fn plane_axes(self) -> (usize, usize) {
        match self.axis() {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    /// Outward normal of the wall.
    pub fn outward(self) -> Vec3 {
        let mut n = Vec3::ZERO;
        n.set(self.axis(), if self.is_max() { 1.0 } else { -1.0 });
        n
    }
}

/// Rectangular opening in a wall connecting two rooms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aperture {
    pub host_room: String,
    pub wall: Wall,
    /// Lower corner in the wall plane, relative to the room origin, along
    /// the wall's two in-plane axes (x before y before z).
    pub position: [f64; 2],
    pub size: [f64; 2],
    pub connects: [String; 2],
}

impl Aperture {
    pub fn area(&self) -> f64 {
        self.size[0] * self.size[1]
    }

    /// World position of the opening centre.
    pub fn center(&self, host: &RoomGeometry) -> Vec3 {
        let (u, v) = self.wall.plane_axes();
        let mut c = host.origin;
        let a = self.wall.axis();
        c.set(a, host.origin.get(a) + if self.wall.is_max() { host.dims.get(a) } else { 0.0 });
        c.set(u, host.origin.get(u) + self.position[0] + 0.5 * self.size[0]);
        c.set(v, host.origin.get(v) + self.position[1] + 0.5 * self.size[1]);
        c
    }
}

/// Finite planar reflector such as a tabletop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteReflector {
    pub label: String,
    pub center: Vec3,
    /// Unit normal pointing to the reflecting side.
    pub normal: Vec3,
    /// Width along the first tangent and height along the second, metres.
    pub extents: [f64; 2],
    pub alpha_per_band: BandValues,
}

impl FiniteReflector {
    /// In-plane unit axes: the first is horizontal unless the plane is
    /// horizontal, in which case it is +x.
    pub fn tangents(&self) -> (Vec3, Vec3) {
        let n = self.normal.normalized();
        let u = if n.z.abs() > 0.9 {
            Vec3::X
        } else {
            Vec3::Z.cross(n).normalized()
        };
        let u = (u - n * u.dot(n)).normalized();
        (u, n.cross(u))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.extents[0] > 0.0 && self.extents[1] > 0.0) {
            return invalid(format!("reflector '{}' extents must be positive", self.label));
        }
        if (self.normal.norm() - 1.0).abs() > 1e-6 {
            return invalid(format!("reflector '{}' normal must be unit length", self.label));
        }
        if self.alpha_per_band.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return invalid(format!("reflector '{}' absorption must lie in (0, 1)", self.label));
        }
        Ok(())
    }
}

/// Position and look direction of a source or receiver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    /// Degrees counterclockwise from +x.
    #[serde(default)]
    pub yaw: f64,
    /// Degrees upward from the horizontal plane.
    #[serde(default)]
    pub pitch: f64,
}

impl Pose {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            yaw: 0.0,
            pitch: 0.0,
        }
    }
}

/// A named room with its reverberation target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub id: String,
    #[serde(flatten)]
    pub geometry: RoomGeometry,
    pub target: ReverbTarget,
}

/// Secondary volume that adds a slower decay to the receiver room.
///
/// Either `room` names a scene room (its target gives the coupled decay) or
/// `dims` describes an external volume whose decay is `decay_ratio` times
/// slower than the main one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledVolume {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_ratio: Option<f64>,
    /// Level where the two decay lines cross, dB re EDC peak.
    pub knee_db: f64,
}

/// The scene feature that the simplified preset removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Simplification {
    /// Source room and receiver room rendered separately and chained through
    /// an omnidirectional point at the connecting aperture.
    Cascade,
    /// Finite reflectors dropped.
    RemoveReflectors,
    /// Coupled volume ignored.
    DropCoupledVolume,
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_c() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

/// Complete scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub name: String,
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    pub source: Pose,
    pub receiver: Pose,
    pub rooms: Vec<Room>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub apertures: Vec<Aperture>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reflectors: Vec<FiniteReflector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupled_volume: Option<CoupledVolume>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simplification: Option<Simplification>,
}

/// Distance of aperture points from the opening plane, into each room.
pub const APERTURE_INSET: f64 = 0.05;

impl SceneConfig {
    pub fn room(&self, id: &str) -> Option<&Room> {
        self.rooms.iter().find(|r| r.id == id)
    }

    /// Index of the single room containing `p`.
    pub fn room_of(&self, p: Vec3) -> Result<usize> {
        let hits: Vec<usize> = (0..self.rooms.len())
            .filter(|&i| self.rooms[i].geometry.contains(p))
            .collect();
        match hits.as_slice() {
            [i] => Ok(*i),
            [] => invalid(format!("position {:?} lies in no room", <[f64; 3]>::from(p))),
            _ => invalid(format!("position {:?} lies in more than one room", <[f64; 3]>::from(p))),
        }
    }

    pub fn source_room(&self) -> Result<usize> {
        self.room_of(self.source.position)
    }

    pub fn receiver_room(&self) -> Result<usize> {
        self.room_of(self.receiver.position)
    }

    /// Aperture joining rooms `a` and `b`, if any.
    pub fn aperture_between(&self, a: &str, b: &str) -> Option<&Aperture> {
        self.apertures
            .iter()
            .find(|ap| ap.connects.iter().any(|c| c == a) && ap.connects.iter().any(|c| c == b))
    }

    /// Points just inside each side of an aperture, ordered as `(room_a, room_b)`.
    pub fn aperture_points(&self, ap: &Aperture, room_a: &str) -> Result<(Vec3, Vec3)> {
        let host = self
            .room(&ap.host_room)
            .ok_or_else(|| Error::Config(format!("unknown host room '{}'", ap.host_room)))?;
        let c = ap.center(&host.geometry);
        let out = ap.wall.outward() * APERTURE_INSET;
        let (inside_host, outside_host) = (c - out, c + out);
        Ok(if room_a == ap.host_room {
            (inside_host, outside_host)
        } else {
            (outside_host, inside_host)
        })
    }

    /// Check every type invariant and cross-reference.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version must be {SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        if !(self.speed_of_sound > 0.0) {
            return invalid("speed of sound must be positive");
        }
        if self.rooms.is_empty() {
            return invalid("scene needs at least one room");
        }
        for (i, r) in self.rooms.iter().enumerate() {
            r.geometry
                .validate()
                .map_err(|_| Error::Validation {
                    invariant: format!("room '{}' dimensions must be finite and strictly positive", r.id),
                })?;
            r.target.validate().map_err(|e| match e {
                Error::Validation { invariant } => Error::Validation {
                    invariant: format!("room '{}': {invariant}", r.id),
                },
                e => e,
            })?;
            if self.rooms[..i].iter().any(|o| o.id == r.id) {
                return invalid(format!("room id '{}' is not unique", r.id));
            }
        }
        for ap in &self.apertures {
            self.validate_aperture(ap)?;
        }
        for r in &self.reflectors {
            r.validate()?;
        }
        let (src, rcv) = (self.source_room()?, self.receiver_room()?);
        for p in [&self.source, &self.receiver] {
            if !(p.yaw.is_finite() && p.pitch.is_finite()) {
                return invalid("pose orientation must be finite");
            }
        }
        if src != rcv
            && self
                .aperture_between(&self.rooms[src].id, &self.rooms[rcv].id)
                .is_none()
        {
            return invalid("source and receiver rooms must be joined by an aperture");
        }
        if let Some(cv) = &self.coupled_volume {
            if !(cv.knee_db < 0.0) {
                return invalid("coupled volume knee level must be negative");
            }
            match (&cv.room, cv.dims) {
                (Some(id), None) => {
                    let Some(r) = self.room(id) else {
                        return invalid(format!("coupled volume refers to unknown room '{id}'"));
                    };
                    if r.id == self.rooms[rcv].id {
                        return invalid("coupled volume must differ from the receiver room");
                    }
                    if self.aperture_between(id, &self.rooms[rcv].id).is_none() {
                        return invalid("coupled room must share an aperture with the receiver room");
                    }
                    if r.target.broadband_t30 <= self.rooms[rcv].target.broadband_t30 {
                        return invalid("coupled room must decay slower than the receiver room");
                    }
                }
                (None, Some(d)) => {
                    RoomGeometry::new(d, Vec3::ZERO).map_err(|_| Error::Validation {
                        invariant: "coupled volume dimensions must be strictly positive".into(),
                    })?;
                    match cv.decay_ratio {
                        Some(q) if q > 1.0 && q.is_finite() => {}
                        _ => return invalid("external coupled volume needs decay_ratio > 1"),
                    }
                }
                _ => return invalid("coupled volume needs exactly one of 'room' or 'dims'"),
            }
        }
        match self.simplification {
            Some(Simplification::Cascade) => {
                if src == rcv {
                    return invalid("cascade simplification needs source and receiver in different rooms");
                }
            }
            Some(Simplification::RemoveReflectors) if self.reflectors.is_empty() => {
                return invalid("reflector removal declared but the scene has no reflectors");
            }
            Some(Simplification::DropCoupledVolume) if self.coupled_volume.is_none() => {
                return invalid("coupled-volume removal declared but the scene has no coupled volume");
            }
            _ => {}
        }
        Ok(())
    }

    fn validate_aperture(&self, ap: &Aperture) -> Result<()> {
        let Some(host) = self.room(&ap.host_room) else {
            return invalid(format!("aperture host room '{}' does not exist", ap.host_room));
        };
        if !ap.connects.iter().any(|c| c == &ap.host_room) {
            return invalid("aperture must connect its host room");
        }
        let other_id = ap.connects.iter().find(|c| *c != &ap.host_room);
        let Some(other) = other_id.and_then(|id| self.room(id)) else {
            return invalid("aperture must connect two existing rooms");
        };
        let (u, v) = ap.wall.plane_axes();
        let g = &host.geometry;
        let within = |p: f64, s: f64, len: f64| p >= -1e-9 && s > 0.0 && p + s <= len + 1e-9;
        if !within(ap.position[0], ap.size[0], g.dims.get(u))
            || !within(ap.position[1], ap.size[1], g.dims.get(v))
        {
            return invalid("aperture rectangle must lie within its host wall");
        }
        // The other room must have the facing wall in the same plane and
        // cover the opening.
        let a = ap.wall.axis();
        let plane = g.origin.get(a) + if ap.wall.is_max() { g.dims.get(a) } else { 0.0 };
        let og = &other.geometry;
        let facing = if ap.wall.is_max() {
            og.origin.get(a)
        } else {
            og.origin.get(a) + og.dims.get(a)
        };
        let c = ap.center(g);
        let covers = [u, v].iter().all(|&ax| {
            let lo = c.get(ax) - 0.5 * ap.size[if ax == u { 0 } else { 1 }];
            let hi = c.get(ax) + 0.5 * ap.size[if ax == u { 0 } else { 1 }];
            lo >= og.origin.get(ax) - 1e-9 && hi <= og.origin.get(ax) + og.dims.get(ax) + 1e-9
        });
        if (facing - plane).abs() > 1e-6 || !covers {
            return invalid("aperture must open onto a wall of the connected room");
        }
        Ok(())
    }
}

/// Names of the bundled scene presets.
pub const PRESET_NAMES: [&str; 3] = ["living_room", "pub", "underground"];

/// Bundled scene by name.
pub fn preset(name: &str) -> Option<SceneConfig> {
    match name {
        "living_room" => Some(living_room()),
        "pub" => Some(pub_scene()),
        "underground" => Some(underground()),
        _ => None,
    }
}

fn room(id: &str, dims: [f64; 3], origin: [f64; 3], t30: f64) -> Room {
    Room {
        id: id.to_string(),
        geometry: RoomGeometry {
            dims: dims.into(),
            origin: origin.into(),
        },
        target: ReverbTarget::shaped(t30),
    }
}

/// Living room with a kitchen behind an open door; the talker stands in
/// the kitchen, out of sight.
pub fn living_room() -> SceneConfig {
    SceneConfig {
        schema_version: SCHEMA_VERSION,
        name: "living_room".into(),
        speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        source: Pose::at(Vec3::new(3.0, 5.2, 1.5)),
        receiver: Pose::at(Vec3::new(1.0, 1.308, 1.2)),
        rooms: vec![
            room("living", [4.97, 3.78, 2.71], [0.0, 0.0, 0.0], 0.54),
            room("kitchen", [4.97, 2.0, 2.71], [0.0, 3.78, 0.0], 0.66),
        ],
        apertures: vec![Aperture {
            host_room: "living".into(),
            wall: Wall::YMax,
            position: [3.55, 0.0],
            size: [0.9, 2.0],
            connects: ["living".into(), "kitchen".into()],
        }],
        reflectors: Vec::new(),
        coupled_volume: Some(CoupledVolume {
            room: Some("kitchen".into()),
            dims: None,
            decay_ratio: None,
            knee_db: -25.0,
        }),
        simplification: Some(Simplification::Cascade),
    }
}

/// Pub with a talker across a table and a chalkboard beside it.
pub fn pub_scene() -> SceneConfig {
    SceneConfig {
        schema_version: SCHEMA_VERSION,
        name: "pub".into(),
        speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        source: Pose::at(Vec3::new(8.97, 5.0, 1.2)),
        receiver: Pose::at(Vec3::new(8.0, 5.0, 1.2)),
        rooms: vec![room("pub", [17.76, 10.2, 2.9], [0.0, 0.0, 0.0], 0.7)],
        apertures: Vec::new(),
        reflectors: vec![
            FiniteReflector {
                label: "tabletop".into(),
                center: Vec3::new(8.485, 5.0, 0.75),
                normal: Vec3::Z,
                extents: [1.2, 0.8],
                alpha_per_band: [0.1; BAND_COUNT],
            },
            FiniteReflector {
                label: "chalkboard".into(),
                center: Vec3::new(8.3, 6.2, 1.3),
                normal: -Vec3::Y,
                extents: [1.2, 0.9],
                alpha_per_band: [0.05; BAND_COUNT],
            },
        ],
        coupled_volume: None,
        simplification: Some(Simplification::RemoveReflectors),
    }
}

/// Underground platform hall with tunnels and escalators acting as a
/// coupled volume.
pub fn underground() -> SceneConfig {
    SceneConfig {
        schema_version: SCHEMA_VERSION,
        name: "underground".into(),
        speed_of_sound: DEFAULT_SPEED_OF_SOUND,
        source: Pose::at(Vec3::new(66.37, 5.0, 1.6)),
        receiver: Pose::at(Vec3::new(60.0, 5.0, 1.6)),
        rooms: vec![room("platform", [120.0, 15.7, 4.16], [0.0, 0.0, 0.0], 1.6)],
        apertures: Vec::new(),
        reflectors: Vec::new(),
        coupled_volume: Some(CoupledVolume {
            room: None,
            dims: Some(Vec3::new(100.0, 6.0, 5.27)),
            decay_ratio: Some(2.0),
            knee_db: -15.0,
        }),
        simplification: Some(Simplification::DropCoupledVolume),
    }
}

/// Fidelity tier of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlodPreset {
    RazrFull,
    Razr1stOrder,
    RazrSimple,
    PlainIsm,
    Diotic,
}

impl AlodPreset {
    pub const ALL: [AlodPreset; 5] = [
        AlodPreset::RazrFull,
        AlodPreset::Razr1stOrder,
        AlodPreset::RazrSimple,
        AlodPreset::PlainIsm,
        AlodPreset::Diotic,
    ];

    /// Command-line name.
    pub fn cli_name(self) -> &'static str {
        match self {
            AlodPreset::RazrFull => "razr",
            AlodPreset::Razr1stOrder => "razr1",
            AlodPreset::RazrSimple => "simple",
            AlodPreset::PlainIsm => "ism",
            AlodPreset::Diotic => "diotic",
        }
    }

    pub fn from_cli_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.cli_name() == s)
    }
}

/// Playback situation the plan renders for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presentation {
    Headphones,
    Loudspeakers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    Binaural,
    Loudspeaker,
    Diotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoupledMode {
    Full,
    Cascade,
    Off,
}

/// Room of a plan with its calibrated absorption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRoom {
    pub id: String,
    pub geometry: RoomGeometry,
    pub target: ReverbTarget,
    /// Decay of the room on its own, without the coupled volume.
    pub own_decay: ReverbTarget,
    pub absorption: AbsorptionProfile,
}

/// Coupled volume of a plan with both decay times resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCoupling {
    pub label: String,
    pub geometry: RoomGeometry,
    /// Slow decay of the coupled volume.
    pub decay: ReverbTarget,
    pub knee_db: f64,
    /// Set when both decay times scale together to meet the combined target.
    pub decay_ratio: Option<f64>,
    /// Index into the plan rooms when the coupled volume is a scene room.
    pub room_index: Option<usize>,
}

/// Concrete, immutable instructions for one impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub scene_name: String,
    pub preset: AlodPreset,
    pub rooms: Vec<ResolvedRoom>,
    pub source: Pose,
    pub receiver: Pose,
    pub source_room: usize,
    pub receiver_room: usize,
    pub reflectors: Vec<FiniteReflector>,
    pub apertures: Vec<Aperture>,
    pub speed_of_sound: f64,
    pub ism_order: u32,
    pub jitter: bool,
    pub smearing: bool,
    pub fdn: bool,
    pub coupled_mode: CoupledMode,
    pub coupling: Option<ResolvedCoupling>,
    pub reflectors_included: bool,
    pub output_mode: OutputMode,
    /// Loudspeaker diotic variant: everything on the frontal speaker.
    pub single_speaker: bool,
    pub air_absorption: bool,
    pub fs: f64,
    pub seed: u64,
}

/// Numeric options that do not come from the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub fs: f64,
    pub seed: u64,
    pub air_absorption: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            fs: DEFAULT_FS,
            seed: 0,
            air_absorption: true,
        }
    }
}

/// Per-band decay of the receiver room alone and of the coupled volume,
/// chosen so the coupled combination meets the receiver-room target.
fn resolve_coupling(
    scene: &SceneConfig,
    rcv: usize,
) -> Result<(ReverbTarget, Option<ResolvedCoupling>)> {
    let main = &scene.rooms[rcv];
    let Some(cv) = &scene.coupled_volume else {
        return Ok((main.target.clone(), None));
    };
    let target = main.target.broadband_t30;
    if let Some(id) = &cv.room {
        let idx = scene
            .rooms
            .iter()
            .position(|r| &r.id == id)
            .ok_or_else(|| Error::Config(format!("unknown coupled room '{id}'")))?;
        let coupled = &scene.rooms[idx];
        let t1 = decay::solve_main_t30(coupled.target.broadband_t30, cv.knee_db, target)?;
        Ok((
            main.target.scaled(t1 / target),
            Some(ResolvedCoupling {
                label: id.clone(),
                geometry: coupled.geometry,
                decay: coupled.target.clone(),
                knee_db: cv.knee_db,
                decay_ratio: None,
                room_index: Some(idx),
            }),
        ))
    } else {
        let ratio = cv.decay_ratio.unwrap_or(2.0);
        let dims = cv
            .dims
            .ok_or_else(|| Error::Config("coupled volume without geometry".into()))?;
        let t2 = decay::solve_coupled_t30(ratio, cv.knee_db, target)?;
        let t1 = t2 / ratio;
        Ok((
            main.target.scaled(t1 / target),
            Some(ResolvedCoupling {
                label: "coupled".into(),
                geometry: RoomGeometry {
                    dims,
                    origin: Vec3::ZERO,
                },
                decay: main.target.scaled(t2 / target),
                knee_db: cv.knee_db,
                decay_ratio: Some(ratio),
                room_index: None,
            }),
        ))
    }
}

/// Expand `preset` for `scene` into a simulation plan.
pub fn expand_alod_preset(
    scene: &SceneConfig,
    preset: AlodPreset,
    presentation: Presentation,
    opts: PlanOptions,
) -> Result<SimulationPlan> {
    scene.validate()?;
    if !(opts.fs > 0.0) {
        return Err(Error::Config("sample rate must be positive".into()));
    }
    let src = scene.source_room()?;
    let rcv = scene.receiver_room()?;
    let (main_decay, coupling) = resolve_coupling(scene, rcv)?;
    let mut rooms = Vec::with_capacity(scene.rooms.len());
    for (i, r) in scene.rooms.iter().enumerate() {
        let own = if i == rcv {
            main_decay.clone()
        } else {
            r.target.clone()
        };
        rooms.push(ResolvedRoom {
            id: r.id.clone(),
            geometry: r.geometry,
            target: r.target.clone(),
            absorption: calibrate_absorption(&r.geometry, &own)?,
            own_decay: own,
        });
    }
    let mut plan = SimulationPlan {
        scene_name: scene.name.clone(),
        preset,
        rooms,
        source: scene.source,
        receiver: scene.receiver,
        source_room: src,
        receiver_room: rcv,
        reflectors: scene.reflectors.clone(),
        apertures: scene.apertures.clone(),
        speed_of_sound: scene.speed_of_sound,
        ism_order: 3,
        jitter: true,
        smearing: true,
        fdn: true,
        coupled_mode: CoupledMode::Full,
        coupling,
        reflectors_included: true,
        output_mode: match presentation {
            Presentation::Headphones => OutputMode::Binaural,
            Presentation::Loudspeakers => OutputMode::Loudspeaker,
        },
        single_speaker: false,
        air_absorption: opts.air_absorption,
        fs: opts.fs,
        seed: opts.seed,
    };
    match preset {
        AlodPreset::RazrFull => {}
        AlodPreset::Razr1stOrder => plan.ism_order = 1,
        AlodPreset::RazrSimple => match scene.simplification {
            Some(Simplification::Cascade) => plan.coupled_mode = CoupledMode::Cascade,
            Some(Simplification::RemoveReflectors) => plan.reflectors_included = false,
            Some(Simplification::DropCoupledVolume) => plan.coupled_mode = CoupledMode::Off,
            None => {
                return Err(Error::Config(format!(
                    "scene '{}' declares no feature for the simplified preset",
                    scene.name
                )))
            }
        },
        AlodPreset::PlainIsm => {
            plan.ism_order = 15;
            plan.jitter = false;
            plan.smearing = false;
            plan.fdn = false;
            plan.reflectors_included = false;
        }
        AlodPreset::Diotic => match presentation {
            Presentation::Headphones => plan.output_mode = OutputMode::Diotic,
            Presentation::Loudspeakers => plan.single_speaker = true,
        },
    }
    if plan.coupled_mode == CoupledMode::Off && src != rcv {
        return Err(Error::Config(
            "source and receiver rooms differ but coupling is disabled".into(),
        ));
    }
    Ok(plan)
}

/// 64-bit FNV-1a hasher used for plan digests.
struct Fnv(u64);

impl Write for Fnv {
    fn write_str(&mut self, s: &str) -> core::fmt::Result {
        for b in s.bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
        Ok(())
    }
}

impl SimulationPlan {
    /// Stable hex digest of every plan field.
    pub fn digest(&self) -> String {
        let mut h = Fnv(0xcbf2_9ce4_8422_2325);
        let _ = write!(h, "{self:?}");
        format!("{:016x}", h.0)
    }

    pub fn receiver_geometry(&self) -> &RoomGeometry {
        &self.rooms[self.receiver_room].geometry
    }
}
