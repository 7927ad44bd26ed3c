//! Module export: `peg.obj`, `plate.obj` (ASCII, meters) and `module.json`.
//!
//! `module.json` schema (format_version 1):
//!
//! ```text
//! {
//!   "format_version": 1,
//!   "params": { ...every ModuleParams field... },
//!   "hole_depth": f64, "plate_thickness": f64,
//!   "entrance_frame": { "translation": [x, y, z], "rotation6d": [6 values] },
//!   "bottom_frame":   { "translation": [x, y, z], "rotation6d": [6 values] },
//!   "canonical_insert_rotation6d": [6 values]
//! }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::procgen::{AssemblyModule, ModuleParams, TriMesh};
use crate::spatial::{rot6d_encode, PoseRecord};

pub const MODULE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleMetadata {
    pub format_version: u32,
    pub params: ModuleParams,
    pub hole_depth: f64,
    pub plate_thickness: f64,
    pub entrance_frame: PoseRecord,
    pub bottom_frame: PoseRecord,
    pub canonical_insert_rotation6d: [f64; 6],
}

impl ModuleMetadata {
    pub fn from_module(module: &AssemblyModule) -> Self {
        Self {
            format_version: MODULE_FORMAT_VERSION,
            params: module.params.clone(),
            hole_depth: module.hole_depth,
            plate_thickness: module.plate_thickness,
            entrance_frame: module.entrance_frame.to_record(),
            bottom_frame: module.bottom_frame.to_record(),
            canonical_insert_rotation6d: rot6d_encode(&module.canonical_insert_rotation)
                .expect("canonical rotation is orthonormal")
                .0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes") + "\n"
    }

    /// SHA-256 of the serialized metadata, hex encoded.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.to_json().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExportedModule {
    pub metadata: ModuleMetadata,
    pub peg: TriMesh,
    pub plate: TriMesh,
}

pub fn export_meshes(module: &AssemblyModule, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let seed = module.params.seed;
    let peg_path = dir.join("peg.obj");
    let plate_path = dir.join("plate.obj");
    let json_path = dir.join("module.json");
    module
        .peg_mesh
        .write_obj(&peg_path, &format!("peg, module seed {seed}, meters"))?;
    module
        .plate_mesh
        .write_obj(&plate_path, &format!("plate, module seed {seed}, meters"))?;
    let metadata = ModuleMetadata::from_module(module);
    std::fs::write(&json_path, metadata.to_json()).map_err(|e| Error::io(&json_path, e))?;
    Ok(vec![peg_path, plate_path, json_path])
}

pub fn import_module(dir: &Path) -> Result<ExportedModule> {
    let json_path = dir.join("module.json");
    let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let metadata: ModuleMetadata =
        serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    if metadata.format_version != MODULE_FORMAT_VERSION {
        return Err(Error::Malformed {
            path: json_path,
            line: 1,
            message: format!("unsupported format_version {}", metadata.format_version),
        });
    }
    Ok(ExportedModule {
        metadata,
        peg: TriMesh::read_obj(&dir.join("peg.obj"))?,
        plate: TriMesh::read_obj(&dir.join("plate.obj"))?,
    })
}
