//! Line-oriented reports: `[section]` headers, `key = value` lines and aligned
//! tables. No timestamps or durations, so identical runs give identical bytes.

use std::path::{Path, PathBuf};

use caamargin::io::KeyValues;
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Artifact version tag: crate version plus the on-disk format version.
pub fn version_tag() -> String {
    format!(
        "caamargin-{}+fmt{}",
        env!("CARGO_PKG_VERSION"),
        caamargin::io::FORMAT_VERSION
    )
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// What a report needs to be rerun exactly.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub command: &'static str,
    pub config: KeyValues,
    pub seed: String,
    pub dataset_sha256: String,
    pub paths: Vec<(&'static str, PathBuf)>,
}

#[derive(Debug, Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn new(manifest: &Manifest) -> Self {
        let mut r = Self::default();
        r.section("manifest");
        r.kv("command", manifest.command);
        r.kv("version", version_tag());
        r.kv("seed", &manifest.seed);
        r.kv("dataset_sha256", &manifest.dataset_sha256);
        for (k, v) in manifest.config.iter() {
            r.kv(&format!("config.{k}"), v);
        }
        for (name, p) in &manifest.paths {
            r.kv(&format!("path.{name}"), p.display());
        }
        r
    }

    pub fn section(&mut self, name: &str) {
        if !self.text.is_empty() {
            self.text.push('\n');
        }
        self.text.push_str(&format!("[{name}]\n"));
    }

    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        self.text.push_str(&format!("{key} = {value}\n"));
    }

    /// Columns padded to their widest cell.
    pub fn table(&mut self, header: &[&str], rows: &[Vec<String>]) {
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: Vec<&str>| -> String {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        self.text.push_str(&line(header.to_vec()));
        for row in rows {
            self.text.push_str(&line(row.iter().map(String::as_str).collect()));
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_file(path, &self.text)
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Fixed-precision float cell.
pub fn cell(v: f64) -> String {
    format!("{v:.6}")
}

/// Exact (round-trip) number: plain decimal in the usual range, exponent form outside.
pub fn num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e12).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}
