//! JSON configuration surface shared by the CLI and the library API.
//!
//! Flag overrides beat config-file values; every command echoes its
//! effective configuration into the output directory so a run can be
//! reproduced from the echo plus the seed.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use lle_core::grid::{log_spaced, GridSpec};
use lle_core::params::PARAM_RANGES;
use lle_core::rng::fnv1a_64;
use lle_core::tasks::TaskKind;
use lle_core::PipelineSpec;

/// `{"order": ["E", "G", "S"], "w": 2}`
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PipelineSpecConfig {
    pub order: Vec<String>,
    pub w: usize,
}

impl Default for PipelineSpecConfig {
    fn default() -> Self {
        PipelineSpecConfig {
            order: vec!["E".into(), "G".into(), "S".into()],
            w: 2,
        }
    }
}

impl PipelineSpecConfig {
    pub fn to_spec(&self) -> Result<PipelineSpec> {
        let letters: String = self.order.join("");
        Ok(PipelineSpec::parse(&letters, self.w)?)
    }

    pub fn from_spec(spec: &PipelineSpec) -> Self {
        PipelineSpecConfig {
            order: spec.letters().chars().map(|c| c.to_string()).collect(),
            w: spec.window_half_width(),
        }
    }
}

/// `{"task": "ref_mse" | "feature_mse" | "blob_heatmap", "seed": …}`
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TaskConfig {
    pub task: String,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            task: "ref_mse".into(),
            seed: 0,
        }
    }
}

impl TaskConfig {
    pub fn kind(&self) -> Result<TaskKind> {
        match self.task.as_str() {
            "ref_mse" => Ok(TaskKind::RefMse),
            "feature_mse" => Ok(TaskKind::FeatureMse { seed: self.seed }),
            "blob_heatmap" => Ok(TaskKind::BlobHeatmap),
            other => anyhow::bail!(
                "unknown task '{other}' (expected ref_mse, feature_mse or blob_heatmap)"
            ),
        }
    }
}

/// Training settings; defaults are lr 1e-4, 10 epochs, batch size 8,
/// 256-pixel crops.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfigFile {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub seed: u64,
    pub pipeline: PipelineSpecConfig,
    pub task: TaskConfig,
    pub data: String,
    pub test_data: Option<String>,
}

impl Default for TrainConfigFile {
    fn default() -> Self {
        TrainConfigFile {
            lr: 1e-4,
            epochs: 10,
            batch_size: 8,
            crop_size: 256,
            seed: 0,
            pipeline: PipelineSpecConfig::default(),
            task: TaskConfig::default(),
            data: String::new(),
            test_data: None,
        }
    }
}

impl TrainConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
    }
}

/// Grid axis sizes for the search oracle; values are log-spaced over the
/// parameter ranges with σ tied across channels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct GridConfig {
    pub a_points: usize,
    pub gamma_points: usize,
    pub sigma1_points: usize,
    pub sigma2_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            a_points: 9,
            gamma_points: 7,
            sigma1_points: 5,
            sigma2_points: 5,
        }
    }
}

impl GridConfig {
    pub fn to_grid(&self) -> GridSpec {
        GridSpec {
            a: log_spaced(PARAM_RANGES[0].min, PARAM_RANGES[0].max, self.a_points),
            gamma: log_spaced(PARAM_RANGES[1].min, PARAM_RANGES[1].max, self.gamma_points),
            sigma1: log_spaced(PARAM_RANGES[2].min, PARAM_RANGES[2].max, self.sigma1_points),
            sigma2: log_spaced(PARAM_RANGES[5].min, PARAM_RANGES[5].max, self.sigma2_points),
        }
    }
}

/// Echo an effective configuration into the output directory and return
/// its FNV-1a digest (recorded in reports for provenance).
pub fn echo_config<T: Serialize>(out_dir: &Path, name: &str, cfg: &T) -> Result<u64> {
    fs::create_dir_all(out_dir)?;
    let text = serde_json::to_string_pretty(cfg)?;
    fs::write(out_dir.join(name), &text)
        .with_context(|| format!("echoing config to {}", out_dir.display()))?;
    Ok(fnv1a_64(text.bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipeline_config_roundtrip() {
        let cfg = PipelineSpecConfig::default();
        let spec = cfg.to_spec().unwrap();
        assert_eq!(spec.letters(), "EGS");
        assert_eq!(PipelineSpecConfig::from_spec(&spec), cfg);
    }

    #[test]
    fn train_defaults_match_documented_values() {
        let cfg = TrainConfigFile::default();
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.epochs, 10);
        assert_eq!(cfg.batch_size, 8);
        assert_eq!(cfg.crop_size, 256);
    }

    #[test]
    fn task_config_parses_all_kinds() {
        for (name, want) in [
            ("ref_mse", TaskKind::RefMse),
            ("feature_mse", TaskKind::FeatureMse { seed: 5 }),
            ("blob_heatmap", TaskKind::BlobHeatmap),
        ] {
            let kind = TaskConfig {
                task: name.into(),
                seed: 5,
            }
            .kind()
            .unwrap();
            assert_eq!(kind, want);
        }
        assert!(TaskConfig {
            task: "nope".into(),
            seed: 0
        }
        .kind()
        .is_err());
    }

    #[test]
    fn default_grid_config_matches_default_grid() {
        assert_eq!(GridConfig::default().to_grid(), GridSpec::default());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: TrainConfigFile = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.pipeline.w, 2);
    }
}
