//! Experiment configuration file (TOML).
//!
//! ```toml
//! dataset = "trajectories"   # one trajectory file or a directory of them
//! output_dir = "out"
//!
//! [pipeline]
//! num_steps = 40
//! frozen_steps = 2
//! seed = 7
//!
//! [grid]
//! width = 16
//! height = 16
//!
//! [ablations]
//! cross = true
//! spatial = true
//! temporal = false
//! ```
//!
//! Relative paths are resolved against the directory holding the config.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use peekaboo_core::geometry::LatentGrid;
use peekaboo_core::maskgen::AblationFlags;
use peekaboo_core::pipeline::PipelineConfig;

use crate::UsageError;

fn default_grid() -> LatentGrid {
    LatentGrid { width: 16, height: 16 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default = "default_grid")]
    pub grid: LatentGrid,
    #[serde(default)]
    pub ablations: AblationFlags,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| UsageError(format!("config: {e}")))?;
        cfg.pipeline.validate().map_err(|e| UsageError(format!("config: {e}")))?;
        LatentGrid::new(cfg.grid.width, cfg.grid.height).map_err(|e| UsageError(format!("config: {e}")))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Load and resolve relative paths against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.output_dir = base.join(&cfg.output_dir);
        if !cfg.dataset.exists() {
            return Err(UsageError(format!("dataset {} does not exist", cfg.dataset.display())).into());
        }
        Ok(cfg)
    }

    /// Trajectory files named by `dataset`, sorted by name.
    pub fn trajectory_files(&self) -> Result<Vec<PathBuf>> {
        trajectory_files(&self.dataset)
    }
}

/// A single file, or every `*.json` in a directory except the manifest.
pub fn trajectory_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| {
        p.extension().is_some_and(|e| e == "json")
            && p.file_name().is_some_and(|n| n != peekaboo_core::imc::MANIFEST_FILE)
    });
    files.sort();
    if files.is_empty() {
        return Err(UsageError(format!("no trajectory files in {}", path.display())).into());
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use peekaboo_core::pipeline::{GenerationMode, Instrumentation};

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = ExperimentConfig {
            dataset: "data".into(),
            output_dir: "out".into(),
            pipeline: PipelineConfig::imc(),
            grid: LatentGrid { width: 8, height: 12 },
            ablations: AblationFlags { cross: true, spatial: false, temporal: true },
        };
        cfg.pipeline.seed = 99;
        cfg.pipeline.mode = GenerationMode::Image;
        cfg.pipeline.instrumentation = Instrumentation::Sampled;
        cfg.pipeline.denoiser.gain = 0.125;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ExperimentConfig::from_toml("dataset = \"d\"\noutput_dir = \"o\"\n").unwrap();
        assert_eq!(cfg.pipeline.num_steps, 40);
        assert_eq!(cfg.pipeline.frozen_steps, 2);
        assert_eq!(cfg.grid, default_grid());
        assert_eq!(cfg.ablations, AblationFlags::ALL_ON);
    }

    #[test]
    fn rejects_bad_configs() {
        for text in [
            "output_dir = \"o\"\n",
            "dataset = \"d\"\noutput_dir = \"o\"\nbogus = 1\n",
            "dataset = \"d\"\noutput_dir = \"o\"\n[pipeline]\nfrozen_steps = 41\n",
            "dataset = \"d\"\noutput_dir = \"o\"\n[grid]\nwidth = 0\nheight = 4\n",
        ] {
            let err = ExperimentConfig::from_toml(text).unwrap_err();
            assert!(err.is::<UsageError>(), "{text}");
        }
    }
}
