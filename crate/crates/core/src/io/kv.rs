//! `key = value` text files used for configs and manifests.
//!
//! Lines starting with `#` and blank lines are ignored. Keys are unique.
//! Output is sorted by key with LF line endings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type KeyValues = BTreeMap<String, String>;

pub fn parse_kv(text: &str, path: &Path) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {message}", n + 1),
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(format!("expected key = value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(parse_err("empty key".into()));
        }
        if out.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(parse_err(format!("duplicate key {k:?}")));
        }
    }
    Ok(out)
}

pub fn format_kv(map: &KeyValues) -> String {
    let mut s = String::new();
    for (k, v) in map {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn read_kv(path: &Path) -> Result<KeyValues> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    parse_kv(&text, path)
}

pub fn write_kv(path: &Path, map: &KeyValues) -> Result<()> {
    std::fs::write(path, format_kv(map)).map_err(|e| Error::io(path, e))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

/// Run record: effective config, inputs and output checksums. Holds no
/// timestamps or absolute paths so identical runs produce identical files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub entries: KeyValues,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

impl Manifest {
    pub fn new(stage: &str) -> Self {
        let mut m = Self::default();
        m.set("stage", stage);
        m.set("units", "space=mm time=s angle=deg");
        m.set("version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_owned(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Prefix every config key with `config.`.
    pub fn add_config(&mut self, config: &KeyValues) {
        for (k, v) in config {
            self.set(&format!("config.{k}"), v);
        }
    }

    /// Record size and checksum of `dir/name` under `file.<name>`.
    pub fn add_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.add_file_as("file", dir, name)
    }

    /// Record an input file under `input.<name>`.
    pub fn add_input(&mut self, dir: &Path, name: &str) -> Result<()> {
        self.add_file_as("input", dir, name)
    }

    fn add_file_as(&mut self, prefix: &str, dir: &Path, name: &str) -> Result<()> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.set(&format!("{prefix}.{name}.bytes"), bytes.len());
        self.set(&format!("{prefix}.{name}.sha256"), sha256_bytes(&bytes));
        Ok(())
    }

    /// Config entries with the `config.` prefix removed.
    pub fn config(&self) -> KeyValues {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|s| (s.to_owned(), v.clone())))
            .collect()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_kv(&dir.join(MANIFEST_NAME), &self.entries)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            entries: read_kv(&dir.join(MANIFEST_NAME))?,
        })
    }

    /// Check every recorded output checksum against the files in `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (k, v) in &self.entries {
            let Some(name) = k.strip_prefix("file.").and_then(|s| s.strip_suffix(".sha256")) else {
                continue;
            };
            let actual = sha256_file(&dir.join(name))?;
            if &actual != v {
                return Err(Error::Parse {
                    path: dir.join(MANIFEST_NAME),
                    message: format!("checksum mismatch for {name}"),
                });
            }
        }
        Ok(())
    }
}
