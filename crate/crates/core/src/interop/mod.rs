//! File formats and exchange: object JSON, URDF, per-vertex extraction.

mod json;
mod mask;
mod physx;
mod urdf;

use std::io::Write;
use std::path::Path;

pub use json::{
    from_json_str, load_object, normalize_json, object_from_value, object_to_value, round_sig9, save_object, save_object_with,
    to_json_string, FloatFormat, FORMAT_VERSION,
};
pub use mask::{load_mask, mask_from_json, mask_to_json, save_mask};
pub use physx::{extract_physx_parts, majority, VertexPrediction, MIN_MEAN_AXIS};
pub use urdf::{export_urdf, parse_urdf, UrdfBox, UrdfJoint, UrdfLink, UrdfModel};

use crate::error::Result;

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
