//! Run configuration: a TOML file merged with command-line overrides.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use intermittence::{Format, GroupSpec, ScoreError};
use serde::Deserialize;

use crate::error::{CliError, Result};

/// Everything a subcommand may read. Paths are resolved against the
/// directory of the file they were read from.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    pub format: Option<Format>,
    pub windows: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub spec_file: Option<PathBuf>,
    /// Inline group specs, used when no spec file is given.
    #[serde(default)]
    pub group: Vec<GroupSpec>,
    pub suite: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub revisions: Option<PathBuf>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
    pub jobs: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    group: Vec<GroupSpec>,
}

pub const DEFAULT_WINDOWS: [usize; 2] = [6, 13];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() && p.as_os_str() != "-" {
                *p = base.join(&*p);
            }
        };
        config.inputs.iter_mut().for_each(rebase);
        for p in [
            &mut config.out_dir,
            &mut config.spec_file,
            &mut config.suite,
            &mut config.annotations,
            &mut config.taxonomy,
            &mut config.revisions,
        ]
        .into_iter()
        .flatten()
        {
            rebase(p);
        }
        Ok(config)
    }

    /// Window sizes to score, ascending and deduplicated.
    pub fn windows(&self) -> Result<Vec<usize>> {
        let windows: BTreeSet<usize> = self
            .windows
            .clone()
            .unwrap_or_else(|| DEFAULT_WINDOWS.to_vec())
            .into_iter()
            .collect();
        if let Some(&w) = windows.iter().find(|&&w| w < 2) {
            return Err(CliError::usage(format!("WindowTooSmall: {}", ScoreError::WindowTooSmall(w))));
        }
        if windows.is_empty() {
            return Err(CliError::usage("no window sizes given"));
        }
        Ok(windows.into_iter().collect())
    }

    /// Group specs from the spec file, inline groups, or the defaults, in
    /// that order of preference. Explicit windows restrict the set.
    pub fn specs(&self) -> Result<Vec<GroupSpec>> {
        let (specs, source) = if let Some(path) = &self.spec_file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read spec file {}: {e}", path.display())))?;
            let file: SpecFile = toml::from_str(&text)
                .map_err(|e| CliError::usage(format!("invalid spec file {}: {e}", path.display())))?;
            (file.group, "spec file")
        } else if !self.group.is_empty() {
            (self.group.clone(), "config")
        } else {
            (GroupSpec::defaults(), "default groups")
        };
        let Some(_) = &self.windows else {
            return Ok(specs);
        };
        let windows = self.windows()?;
        for w in &windows {
            if !specs.iter().any(|s| s.window_size == *w) {
                return Err(CliError::usage(format!(
                    "the {source} define no group with window size {w}; pass --spec-file"
                )));
            }
        }
        Ok(specs.into_iter().filter(|s| windows.contains(&s.window_size)).collect())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn format_for(&self, path: &Path) -> Format {
        self.format.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Format::Csv,
            _ => Format::Jsonl,
        })
    }
}
