//! Output directory handling, run metadata and exit-code mapping.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::manifest::ValidationError;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ValidationError>() {
            return EXIT_VALIDATION;
        }
        if let Some(e) = cause.downcast_ref::<spclab::Error>() {
            return if e.is_convergence() {
                EXIT_CONVERGENCE
            } else if e.is_io() {
                EXIT_IO
            } else {
                EXIT_VALIDATION
            };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

/// Collects the artifacts of one run inside its output directory.
pub struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Registers `name` (relative to the output directory) and returns its
    /// full path, creating parent directories.
    pub fn path(&mut self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        self.files.push(name.to_string());
        Ok(p)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let p = self.path(name)?;
        spclab::io::write_table(&p, header, rows)?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name)?;
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

#[derive(Debug, Serialize)]
pub struct RunRecord {
    pub command: String,
    pub arguments: Vec<String>,
    pub manifest: Option<String>,
    pub config_sha256: String,
    pub spclab_version: String,
    pub cli_version: String,
    pub seed: u64,
    pub rng_algorithm: String,
    pub threads: usize,
    pub status: String,
    pub exit_code: i32,
    pub error: Option<String>,
    pub outputs: Vec<String>,
    pub finished_unix_s: u64,
}

/// Hash over the manifest bytes and the command's own arguments.
pub fn config_hash(manifest: Option<&[u8]>, arguments: &[String]) -> String {
    let mut h = Sha256::new();
    if let Some(bytes) = manifest {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    for a in arguments {
        h.update((a.len() as u64).to_le_bytes());
        h.update(a.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// File-name-safe form of a label.
pub fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "series".into()
    } else {
        s
    }
}

/// Compact temperature tag for file names, e.g. `12.5K`.
pub fn temp_tag(t: f64) -> String {
    format!("{t}K")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_inputs() {
        let a = config_hash(Some(b"x"), &["spc".into(), "fit".into()]);
        assert_eq!(a, config_hash(Some(b"x"), &["spc".into(), "fit".into()]));
        assert_ne!(a, config_hash(Some(b"y"), &["spc".into(), "fit".into()]));
        assert_ne!(a, config_hash(Some(b"x"), &["spcfit".into()]));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn exit_codes() {
        let conv: anyhow::Error = spclab::Error::NotConverged {
            iterations: 1,
            cost: 1.0,
            reason: "x".into(),
        }
        .into();
        assert_eq!(exit_code(&conv), EXIT_CONVERGENCE);
        let io: anyhow::Error = std::io::Error::other("x").into();
        assert_eq!(exit_code(&io.context("reading")), EXIT_IO);
        let v: anyhow::Error = spclab::Error::NoDecay.into();
        assert_eq!(exit_code(&v), EXIT_VALIDATION);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("CuPc (perp)"), "CuPc__perp_");
        assert_eq!(temp_tag(12.5), "12.5K");
    }
}
