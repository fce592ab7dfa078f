//! Files: run configs, datasets, checkpoints and metric tables.
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! readers never observe a partial write.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod tables;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Shortest decimal that reads back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Reads the train and test files named by `cfg`.
pub fn load_run_data(cfg: &config::RunConfig) -> Result<crate::trainer::TrainData> {
    Ok(crate::trainer::TrainData {
        train: dataset::read(&cfg.data.train)?,
        test: dataset::read(&cfg.data.test)?,
    })
}

/// Trains per `cfg` and writes the run directory: `config.cfg`,
/// `trajectory.csv`, `timing.csv` and `checkpoint.json`.
pub fn train_run(cfg: &config::RunConfig, out: &Path) -> Result<crate::trainer::TrainOutput> {
    let data = load_run_data(cfg)?;
    atomic_write(&out.join("config.cfg"), cfg.to_text().as_bytes())?;
    let result = crate::trainer::train(&cfg.train, &data)?;
    tables::write_trajectory(&out.join("trajectory.csv"), &result.trajectory)?;
    tables::write_timing(&out.join("timing.csv"), &result.trajectory)?;
    checkpoint::write(&out.join("checkpoint.json"), &result.checkpoint)?;
    Ok(result)
}
