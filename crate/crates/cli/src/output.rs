use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

/// Writes `bytes` next to `path` and renames it into place, so a failed run
/// never leaves a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", Path::new(&tmp).display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

/// CSV table buffered in memory and written in one piece.
pub struct Csv {
    writer: csv::Writer<Vec<u8>>,
}

impl Csv {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header.iter().map(|h| h.as_ref()))?;
        Ok(Csv { writer })
    }

    pub fn row<I>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator,
        I::Item: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(cells)?)
    }

    pub fn write(self, path: &Path) -> Result<()> {
        let bytes = self
            .writer
            .into_inner()
            .map_err(|e| anyhow::anyhow!("cannot flush CSV: {}", e.error()))?;
        write_atomic(path, &bytes)
    }
}
