//! Scene files: TOML with a `schema_version` field.

use std::path::Path;

use alod_core::scene::{self, SceneConfig, SCHEMA_VERSION};

use crate::error::{Error, Result};

/// Parse and validate scene TOML. `origin` names the source in messages.
pub fn parse_scene(text: &str, origin: &Path) -> Result<SceneConfig> {
    let value: toml::Value = toml::from_str(text).map_err(|e| Error::parse(origin, e.message()))?;
    match value.get("schema_version").and_then(toml::Value::as_integer) {
        Some(v) if v == SCHEMA_VERSION as i64 => {}
        Some(v) => {
            return Err(Error::parse(
                origin,
                format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
            ))
        }
        None => return Err(Error::parse(origin, "missing integer field schema_version")),
    }
    let scene: SceneConfig = value.try_into().map_err(|e: toml::de::Error| Error::parse(origin, e.message()))?;
    scene.validate()?;
    Ok(scene)
}

pub fn read_scene(path: &Path) -> Result<SceneConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scene(&text, path)
}

pub fn scene_to_toml(scene: &SceneConfig) -> String {
    toml::to_string_pretty(scene).expect("scene serializes to TOML")
}

pub fn write_scene(path: &Path, scene: &SceneConfig) -> Result<()> {
    std::fs::write(path, scene_to_toml(scene)).map_err(|e| Error::io(path, e))
}

/// A bundled preset name or a path to a scene file. Existing files win.
pub fn resolve_scene(arg: &str) -> Result<SceneConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return read_scene(path);
    }
    match scene::preset(arg) {
        Some(s) => Ok(s),
        None => Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("no such file and no preset of that name (presets: {})", scene::PRESET_NAMES.join(", ")),
            ),
        )),
    }
}
