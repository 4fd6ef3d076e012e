use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use dwlab::Error;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Both,
}

impl Format {
    fn csv(self) -> bool {
        matches!(self, Self::Csv | Self::Both)
    }

    fn json(self) -> bool {
        matches!(self, Self::Json | Self::Both)
    }
}

/// Output directory plus the provenance lines stamped on every file.
pub struct Output {
    dir: PathBuf,
    format: Format,
    header: Vec<String>,
}

impl Output {
    pub fn new(dir: &Path, format: Format, command: &str, digest: &str, seed: Option<u64>) -> Result<Self, Error> {
        fs::create_dir_all(dir)?;
        let mut header = vec![
            format!("dwlab {}", env!("CARGO_PKG_VERSION")),
            format!("command {command}"),
            format!("config_sha256 {digest}"),
        ];
        if let Some(s) = seed {
            header.push(format!("seed {s}"));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            header,
        })
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    /// Header lines plus per-file column notes.
    pub fn header_with(&self, notes: &[&str]) -> Vec<String> {
        let mut h = self.header.clone();
        h.extend(notes.iter().map(|s| s.to_string()));
        h
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn csv(
        &self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> Result<(), Error>,
    ) -> Result<(), Error> {
        if !self.format.csv() {
            return Ok(());
        }
        let mut w = BufWriter::new(File::create(self.path(name))?);
        write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `{ "meta": [...header], "data": value }` when JSON output is on.
    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Error> {
        if !self.format.json() {
            return Ok(());
        }
        self.json_always(name, value)
    }

    /// Same as [`Output::json`], regardless of the format flag.
    pub fn json_always<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Error> {
        let text = serde_json::to_string_pretty(&Stamped {
            meta: self.header.clone(),
            data: value,
        })?;
        fs::write(self.path(name), text + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub meta: Vec<String>,
    pub data: T,
}

pub fn write_header<W: Write>(w: &mut W, header: &[String]) -> Result<(), Error> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}
