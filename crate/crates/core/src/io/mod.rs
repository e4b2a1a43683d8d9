//! File formats, configuration, checkpoints, and synthetic data.

pub mod checkpoint;
pub mod config;
pub mod cpct;
pub mod dataset_dir;
pub mod pgm;
pub mod synth;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::Invalid(format!("`{}` is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Environment variable capping the worker-thread count.
pub const THREADS_VAR: &str = "CPCA_THREADS";

/// Sizes the global rayon pool from `CPCA_THREADS` (all cores when unset).
/// Returns the thread count in effect.
pub fn configure_threads() -> Result<usize> {
    let requested = match std::env::var(THREADS_VAR) {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
            if n == 0 {
                return Err(Error::Config(format!("{THREADS_VAR} must be at least 1")));
            }
            Some(n)
        }
        Err(_) => None,
    };
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = requested {
        b = b.num_threads(n);
    }
    // a second call in the same process keeps the first pool
    let _ = b.build_global();
    Ok(rayon::current_num_threads())
}
