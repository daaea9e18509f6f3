//! Output writers: CSV bodies are byte-identical across re-runs; the single
//! timestamped meta line is suppressed by --no-meta. Loaders for the CSV
//! formats back the round-trip tests.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct OutputDir {
    dir: PathBuf,
    no_meta: bool,
    meta: String,
}

impl OutputDir {
    pub fn new(dir: &Path, no_meta: bool, command_line: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            no_meta,
            meta: format!("# chflow {command_line} epoch={ts}"),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_csv<I>(&self, name: &str, header: &str, rows: I) -> Result<PathBuf>
    where
        I: IntoIterator<Item = String>,
    {
        let path = self.path(name);
        let mut file = std::fs::File::create(&path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        if !self.no_meta {
            writeln!(file, "{}", self.meta)?;
        }
        writeln!(file, "{header}")?;
        for row in rows {
            writeln!(file, "{row}")?;
        }
        file.flush()?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// CSV writer that streams chunks and flushes after each one, so an
    /// interrupted run leaves the completed rows on disk.
    pub fn csv_stream(&self, name: &str, header: &str) -> Result<CsvStream> {
        let path = self.path(name);
        let mut file = std::fs::File::create(&path)
            .with_context(|| format!("cannot create {}", path.display()))?;
        if !self.no_meta {
            writeln!(file, "{}", self.meta)?;
        }
        writeln!(file, "{header}")?;
        file.flush()?;
        Ok(CsvStream { file, path })
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<PathBuf> {
        let path = self.path(name);
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        std::fs::write(&path, body)
            .with_context(|| format!("cannot create {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

pub struct CsvStream {
    file: std::fs::File,
    path: PathBuf,
}

impl CsvStream {
    pub fn write_rows<I>(&mut self, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = String>,
    {
        for row in rows {
            writeln!(self.file, "{row}")?;
        }
        self.file.flush()?;
        Ok(())
    }

    pub fn finish(self) -> PathBuf {
        log::info!("wrote {}", self.path.display());
        self.path
    }
}

/// Parse a CSV body produced by the writers above: meta lines start with '#',
/// the first remaining line is the header.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .context("empty CSV")?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .map(|l| l.split(',').map(|s| s.trim().to_string()).collect())
        .collect();
    Ok((header, rows))
}
