//! Checkpoint files on disk; the byte layout lives in `deblur_core::model::checkpoint`.

use std::fs;
use std::path::Path;

use deblur_core::model::checkpoint;
use deblur_core::{ModelConfig, ParamStore};

use crate::error::{with_path, CliError, CliResult};

/// Writes through a temporary sibling and renames, so a reader never sees
/// a half-written file.
pub fn save(path: &Path, cfg: &ModelConfig, params: &ParamStore<f32>) -> CliResult<()> {
    let bytes = checkpoint::encode(cfg, params).map_err(|e| CliError::from_core("encoding checkpoint", e))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(with_path(dir))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    fs::write(&tmp, bytes).map_err(with_path(&tmp))?;
    fs::rename(&tmp, path).map_err(with_path(path))
}

pub fn load(path: &Path) -> CliResult<(ModelConfig, ParamStore<f32>)> {
    if !path.is_file() {
        return Err(CliError::missing(path));
    }
    let bytes = fs::read(path).map_err(with_path(path))?;
    checkpoint::decode(&bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
