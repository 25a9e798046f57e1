use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_path: Option<String>,
    pub command: String,
    pub output_dir: String,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<Artifact>,
}

/// Writes files into one output directory and remembers their checksums for
/// the manifest.
pub struct OutputDir {
    root: PathBuf,
    artifacts: Vec<Artifact>,
    started_at: String,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl OutputDir {
    pub fn create(root: &Path) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
            started_at: now(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: &str) -> anyhow::Result<()> {
        let path = self.path(name);
        std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(contents.as_bytes())),
            bytes: contents.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Writes `manifest.json`; must be the last file of a run.
    pub fn finish(self, command: &str, config_path: Option<&Path>, seed: u64) -> anyhow::Result<()> {
        let manifest = RunManifest {
            config_path: config_path.map(|p| p.display().to_string()),
            command: command.to_string(),
            output_dir: self.root.display().to_string(),
            seed,
            started_at: self.started_at.clone(),
            finished_at: now(),
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Gnuplot script plotting columns `2..=last_col` of `csv` against column 1.
pub fn line_plot(csv: &str, title: &str, (xlabel, ylabel): (&str, &str), last_col: usize, log_y: bool) -> String {
    let stem = csv.trim_end_matches(".csv");
    let mut s = String::new();
    s.push_str("set datafile separator ','\n");
    s.push_str("set key autotitle columnhead outside\n");
    s.push_str(&format!("set title '{title}'\n"));
    s.push_str(&format!("set xlabel '{xlabel}'\n"));
    s.push_str(&format!("set ylabel '{ylabel}'\n"));
    if log_y {
        s.push_str("set logscale y\n");
    }
    s.push_str(&format!("set terminal pngcairo size 1000,600\nset output '{stem}.png'\n"));
    s.push_str(&format!("plot for [i=2:{last_col}] '{csv}' using 1:i with lines\n"));
    s
}
