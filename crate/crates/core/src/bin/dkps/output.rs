use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Everything needed to re-run a command and check that it reproduced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub dataset_sha256: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: serde_json::Value) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            command: command.to_string(),
            argv: argv.to_vec(),
            config,
            dataset_sha256: None,
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }
}

/// Collects output files for one run and finishes with its manifest.
pub struct OutputDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> dkps::Result<()>,
    {
        write_atomic(&self.dir.join(name), fill)?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value).map_err(|e| dkps::Error::Parse {
                location: name.to_string(),
                message: e.to_string(),
            })?;
            w.write_all(b"\n").map_err(|e| dkps::Error::Io {
                path: name.into(),
                source: e,
            })
        })
    }

    /// Records files written by other means, e.g. a saved dataset.
    pub fn record(&mut self, names: impl IntoIterator<Item = String>) {
        self.written.extend(names);
    }

    pub fn finish(self, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = self.written;
        manifest.outputs.sort();
        let path = self.dir.join(MANIFEST_FILE);
        write_manifest(&path, &manifest)
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, manifest).map_err(|e| dkps::Error::Parse {
            location: MANIFEST_FILE.into(),
            message: e.to_string(),
        })?;
        w.write_all(b"\n").map_err(|e| dkps::Error::Io {
            path: MANIFEST_FILE.into(),
            source: e,
        })
    })
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> dkps::Result<()>,
{
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let file = File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    let mut w = BufWriter::new(file);
    let written = fill(&mut w).map_err(anyhow::Error::from).and_then(|()| {
        let file = w.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        Ok(())
    });
    if let Err(e) = written {
        let _ = fs::remove_file(&tmp);
        return Err(e.context(format!("cannot write {}", path.display())));
    }
    fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

/// SHA-256 over the names and contents of the files in a dataset directory.
pub fn dataset_checksum(dir: &Path) -> Result<String> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if dkps::cache::DATASET_FILES.contains(&name.as_str()) {
            names.push(name);
        }
    }
    names.sort();
    let mut hasher = Sha256::new();
    for name in names {
        let bytes = fs::read(dir.join(&name)).with_context(|| format!("cannot read {name}"))?;
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}
