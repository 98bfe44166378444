//! Run directory layout and the lock that keeps one writer per run.
//!
//! ```text
//! <root>/<name>/
//!   config.toml          effective config that produced this directory
//!   overrides.log        `--set` assignments, one per line
//!   state.json           current model version, rounds done, threshold
//!   data/                test.fsd, incoming.fsd, v<N>/node_<i>.fsd, v<N>/t_new.csv
//!   models/v<N>/         generator, discriminators and classifier checkpoints
//!   reports/             per-stage JSON plus plot-ready CSV tables
//!   report.json          assembled run report
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const ARTIFACTS_ENV: &str = "FOGSYNTH_ARTIFACTS";
pub const LOCK_FILE: &str = ".lock";

/// Pointer to the current model generation of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub version: u32,
    pub rounds_done: u32,
    pub alpha: Option<f64>,
}

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    _lock: Lock,
}

#[derive(Debug)]
struct Lock(PathBuf);

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl RunDir {
    /// Opens (creating if needed) the run directory for `cfg` and takes its
    /// lock. A directory made by a different config is refused.
    pub fn open(artifacts: &Path, cfg: &RunConfig, overrides: &[String]) -> Result<Self> {
        let root = artifacts.join(&cfg.name);
        fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        let lock_path = root.join(LOCK_FILE);
        let mut lock = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
            .with_context(|| {
                format!(
                    "run directory {} is locked by another writer (remove {} if it is stale)",
                    root.display(),
                    lock_path.display()
                )
            })?;
        writeln!(lock, "{}", std::process::id())?;
        let dir = Self {
            root,
            _lock: Lock(lock_path),
        };
        let text = cfg.to_toml()?;
        let config_path = dir.root.join("config.toml");
        match fs::read_to_string(&config_path) {
            Ok(existing) => {
                let existing =
                    RunConfig::from_toml(&existing).with_context(|| format!("reading {}", config_path.display()))?;
                if &existing != cfg {
                    bail!(
                        "run directory {} was produced by a different config; pick another `name`",
                        dir.root.display()
                    );
                }
            }
            Err(_) => fs::write(&config_path, text)?,
        }
        if !overrides.is_empty() {
            let mut log = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.root.join("overrides.log"))?;
            for o in overrides {
                writeln!(log, "{o}")?;
            }
        }
        for sub in ["data", "models", "reports"] {
            fs::create_dir_all(dir.root.join(sub))?;
        }
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> Result<RunConfig> {
        RunConfig::load(&self.root.join("config.toml"))
    }

    pub fn data(&self, file: &str) -> PathBuf {
        self.root.join("data").join(file)
    }

    pub fn data_version(&self, version: u32) -> Result<PathBuf> {
        let p = self.root.join("data").join(format!("v{version}"));
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn models(&self, version: u32) -> Result<PathBuf> {
        let p = self.root.join("models").join(format!("v{version}"));
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    pub fn report_path(&self, file: &str) -> PathBuf {
        self.root.join("reports").join(file)
    }

    pub fn write_report<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        write_json(&self.report_path(file), value)
    }

    pub fn read_report<T: DeserializeOwned>(&self, file: &str) -> Result<T> {
        read_json(&self.report_path(file))
    }

    pub fn state(&self) -> Result<RunState> {
        read_json(&self.root.join("state.json")).context("no trained model yet (run `train` first)")
    }

    pub fn set_state(&self, state: &RunState) -> Result<()> {
        write_json(&self.root.join("state.json"), state)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let first = RunDir::open(tmp.path(), &cfg, &[]).unwrap();
        let err = RunDir::open(tmp.path(), &cfg, &[]).unwrap_err();
        assert!(format!("{err:#}").contains("locked"));
        drop(first);
        RunDir::open(tmp.path(), &cfg, &[]).unwrap();
    }

    #[test]
    fn directory_keeps_its_config() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        let dir = RunDir::open(tmp.path(), &cfg, &["seed=1".into()]).unwrap();
        assert_eq!(dir.config().unwrap(), cfg);
        assert_eq!(
            fs::read_to_string(dir.root().join("overrides.log")).unwrap(),
            "seed=1\n"
        );
        drop(dir);
        let other = RunConfig { seed: 2, ..cfg };
        assert!(RunDir::open(tmp.path(), &other, &[]).is_err());
    }
}
