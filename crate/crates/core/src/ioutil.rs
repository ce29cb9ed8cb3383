//! Small file-output helpers shared by the dataset, checkpoint, and report
//! writers.

use crate::Result;
use std::path::Path;

/// Writes `bytes` to `path` through a temp file in the same directory plus
/// an atomic rename, so interrupted runs never leave truncated output.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Float formatting for CSV cells: 17 significant digits, enough to
/// round-trip any f64 exactly.
pub fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}
