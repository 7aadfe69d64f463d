//! Result serialization: CSV files with lossless floats and a TOML run
//! manifest written atomically.

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// 17 significant digits: doubles survive a round trip through the file.
pub fn sig(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn idx(i: usize) -> String {
    i.to_string()
}

/// An output directory that remembers which files it produced.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: PathBuf) -> CliResult<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Write one CSV file with a header row.
    pub fn write_csv(
        &mut self,
        name: &str,
        header: &str,
        rows: impl IntoIterator<Item = Vec<String>>,
    ) -> CliResult<()> {
        let path = self.dir.join(name);
        let mut out = String::new();
        out.push_str(header);
        out.push('\n');
        for row in rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        fs::write(&path, out)?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<()> {
        fs::write(self.dir.join(name), text)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunInfo {
    pub kind: String,
    pub version: String,
    pub seed: u64,
    pub wall_seconds: f64,
}

/// Everything a finished run leaves behind: the echoed configuration, the
/// produced files and the headline scalars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run: RunInfo,
    pub files: Vec<String>,
    pub results: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

impl RunManifest {
    /// Serialize and write `manifest.toml` atomically (temp file, then
    /// rename), and check the headline scalars for NaN on the way out.
    pub fn write(&self, dir: &Path) -> CliResult<PathBuf> {
        for (key, value) in &self.results {
            if !value.is_finite() {
                return Err(CliError::Numerical(format!(
                    "result scalar {key} is {value}"
                )));
            }
        }
        let text =
            toml::to_string(self).map_err(|e| CliError::Io(format!("manifest encode: {e}")))?;
        let final_path = dir.join("manifest.toml");
        let tmp_path = dir.join("manifest.toml.tmp");
        {
            let mut f = fs::File::create(&tmp_path)?;
            f.write_all(text.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp_path, &final_path)?;
        Ok(final_path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| CliError::Io(format!("manifest decode: {e}")))
    }
}
