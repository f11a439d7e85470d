use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

static FAIL_BEFORE_RENAME: AtomicBool = AtomicBool::new(false);

/// Test hook: make the next atomic write fail after the temp file is written
/// but before it replaces the target.
#[doc(hidden)]
pub fn inject_write_failure(on: bool) {
    FAIL_BEFORE_RENAME.store(on, Ordering::SeqCst);
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    if FAIL_BEFORE_RENAME.swap(false, Ordering::SeqCst) {
        return Err(std::io::Error::other("injected failure before rename"));
    }
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
