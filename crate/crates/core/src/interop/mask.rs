//! Part-mask files: `{"height":H,"width":W,"values":[...]}` in row-major order, `-1` for background.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::MaskMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct MaskFile {
    height: usize,
    width: usize,
    values: Vec<i64>,
}

/// Reads a mask, mapping `-1` to `background` (the reserved table row).
pub fn mask_from_json(text: &str, background: usize) -> Result<MaskMap> {
    let f: MaskFile = serde_json::from_str(text)?;
    let mut values = Vec::with_capacity(f.values.len());
    for (i, &v) in f.values.iter().enumerate() {
        values.push(match v {
            -1 => background,
            v if v >= 0 && (v as usize) < background => v as usize,
            v => return Err(Error::schema(format!("values[{i}]"), format!("part index {v} outside 0..{background} (or -1)"))),
        });
    }
    MaskMap::new(f.height, f.width, values)
}

pub fn mask_to_json(mask: &MaskMap, background: usize) -> Result<String> {
    let f = MaskFile {
        height: mask.height,
        width: mask.width,
        values: mask.values.iter().map(|&v| if v == background { -1 } else { v as i64 }).collect(),
    };
    Ok(serde_json::to_string(&f)? + "\n")
}

pub fn load_mask(path: &Path, background: usize) -> Result<MaskMap> {
    mask_from_json(&std::fs::read_to_string(path)?, background)
}

pub fn save_mask(mask: &MaskMap, path: &Path, background: usize) -> Result<()> {
    super::write_atomic(path, mask_to_json(mask, background)?.as_bytes())
}
