use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Written next to every output so a run can be repeated exactly.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path -> sha256 hex digest. Directories hash the sorted list of
    /// their regular files (name and content digest).
    pub inputs: BTreeMap<String, String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize) -> Result<Self, CliError> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| CliError::Usage(format!("cannot record configuration: {e}")))?,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        let digest = digest_path(path)?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn inputs<'a>(
        mut self,
        paths: impl IntoIterator<Item = &'a PathBuf>,
    ) -> Result<Self, CliError> {
        for p in paths {
            self.input(p)?;
        }
        Ok(self)
    }

    /// Write to `<output>.manifest.json`, or `manifest.json` inside an output
    /// directory.
    pub fn write_for(&self, output: &Path) -> Result<PathBuf, CliError> {
        let path = if output.is_dir() {
            output.join("manifest.json")
        } else {
            let mut name = output.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        };
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

fn digest_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digest_path(path: &Path) -> Result<String, CliError> {
    if !path.is_dir() {
        return digest_file(path);
    }
    let mut names = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| CliError::io(path, e))? {
        let p = entry.map_err(|e| CliError::io(path, e))?.path();
        if p.is_file() {
            names.push(p);
        }
    }
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        h.update(name.as_bytes());
        h.update([0]);
        h.update(digest_file(&p)?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}
