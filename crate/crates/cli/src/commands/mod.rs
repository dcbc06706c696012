pub mod eval_cmd;
pub mod run_cmd;
pub mod synth;
pub mod train_cmd;

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// Log verbosity from the DEHAZE_LOG environment variable:
/// "quiet" silences progress, anything else (or unset) prints it.
pub fn verbose() -> bool {
    std::env::var("DEHAZE_LOG")
        .map(|v| v != "quiet")
        .unwrap_or(true)
}

macro_rules! progress {
    ($($arg:tt)*) => {
        if $crate::commands::verbose() {
            eprintln!($($arg)*);
        }
    };
}
pub(crate) use progress;

pub fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path)
        .with_context(|| format!("creating directory {}", path.display()))
}

/// Fresh run directory `run_<unix-seconds>_s<seed>` under `out`, suffixed
/// when a same-second run already claimed the name. Never reuses an
/// existing directory.
pub fn new_run_dir(out: &Path, seed: u64) -> Result<PathBuf> {
    ensure_dir(out)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    for attempt in 0..10_000u32 {
        let name = if attempt == 0 {
            format!("run_{stamp}_s{seed}")
        } else {
            format!("run_{stamp}_s{seed}_{attempt}")
        };
        let dir = out.join(name);
        if !dir.exists() {
            ensure_dir(&dir)?;
            return Ok(dir);
        }
    }
    anyhow::bail!("could not allocate a run directory under {}", out.display());
}
