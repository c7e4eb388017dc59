//! Lossless JSON checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! save → load → save reproduces the same bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Am3Model;

pub const FORMAT: &str = "am3-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn to_bytes(model: &Am3Model) -> Result<Vec<u8>> {
    let envelope = Envelope {
        format: FORMAT.to_string(),
        version: VERSION,
        model,
    };
    let mut bytes = serde_json::to_vec_pretty(&envelope)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Am3Model> {
    let envelope: Envelope<Am3Model> = serde_json::from_slice(bytes)?;
    if envelope.format != FORMAT || envelope.version != VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
            envelope.format, envelope.version
        )));
    }
    envelope.model.check_shapes()?;
    Ok(envelope.model)
}

pub fn save(model: &Am3Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Am3Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
