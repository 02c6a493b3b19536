//! Atomic file writing: outputs are either complete and valid or absent.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// Writes `contents` to `path` via a temporary file in the same directory
/// followed by an atomic rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
