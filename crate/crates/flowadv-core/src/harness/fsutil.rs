//! Atomic file writes: no partial artifacts survive a failed run.

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

/// Writes to a sibling temp file then renames over the destination, so the
/// destination is either absent, the old content, or the complete new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let to_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(to_err)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp.{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        to_err(e)
    })
}
