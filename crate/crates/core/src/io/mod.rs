//! Run configuration, checkpoints and run manifests.

mod checkpoint;
mod config;
mod manifest;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{ConfigParseError, DataConfig, ExperimentConfig, LoadedData};
pub use manifest::RunManifest;

use std::fs;
use std::io::Write;
use std::path::Path;

/// Writes `bytes` to a sibling temporary file, syncs it, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    {
        let mut f = fs::File::create(tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)
}
