//! Loudspeaker layout files.
//!
//! ```toml
//! name = "my_array"
//! [[speaker]]
//! azimuth = 30.0     # degrees, counterclockwise from front
//! elevation = 0.0    # degrees, upward
//! distance = 2.4     # metres
//! ```
//!
//! Output channels follow the order of the `speaker` entries.

use std::collections::BTreeMap;
use std::path::Path;

use alod_core::geom::Vec3;
use alod_core::spatial::SpeakerLayout;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEntry {
    pub azimuth: f64,
    pub elevation: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub name: String,
    pub speaker: Vec<SpeakerEntry>,
}

impl LayoutFile {
    pub fn build(&self) -> Result<SpeakerLayout> {
        let dirs = self
            .speaker
            .iter()
            .map(|s| Vec3::from_angles_deg(s.azimuth, s.elevation))
            .collect();
        let dist = self.speaker.iter().map(|s| s.distance).collect();
        let mut rings: BTreeMap<i64, (f64, usize)> = BTreeMap::new();
        for s in &self.speaker {
            let e = rings.entry((s.elevation * 1000.0).round() as i64).or_insert((s.elevation, 0));
            e.1 += 1;
        }
        Ok(SpeakerLayout::new(self.name.clone(), dirs, dist, rings.into_values().collect())?)
    }

    pub fn from_layout(layout: &SpeakerLayout) -> Self {
        LayoutFile {
            name: layout.name.clone(),
            speaker: layout
                .directions
                .iter()
                .zip(&layout.distances)
                .map(|(d, &distance)| {
                    let (azimuth, elevation) = d.to_angles_deg();
                    SpeakerEntry {
                        azimuth,
                        elevation,
                        distance,
                    }
                })
                .collect(),
        }
    }
}

/// The bundled `vr_lab` preset or a layout file.
pub fn resolve_layout(arg: &str) -> Result<SpeakerLayout> {
    let path = Path::new(arg);
    if !path.exists() && arg == "vr_lab" {
        return Ok(SpeakerLayout::vr_lab());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: LayoutFile = toml::from_str(&text).map_err(|e| Error::parse(path, e.message()))?;
    file.build()
}
