use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kdebias_core::report::{to_json_bytes, FORMAT_VERSION};
use serde::Serialize;

/// Files produced by a command, written only after every computation
/// has succeeded.
#[derive(Default)]
pub struct Artifacts {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn write_all(self) -> Result<()> {
        for (path, bytes) in self.files {
            write_atomic(&path, &bytes)?;
        }
        Ok(())
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    format_version: u32,
    command: &'a str,
    config: &'a C,
    results: &'a R,
}

/// Report JSON: format version, command name, resolved config, results.
pub fn report_json<C: Serialize, R: Serialize>(command: &str, config: &C, results: &R) -> Result<Vec<u8>> {
    Ok(to_json_bytes(&Envelope { format_version: FORMAT_VERSION, command, config, results })?)
}
