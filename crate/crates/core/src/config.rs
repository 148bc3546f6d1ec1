//! Pipeline configuration: one TOML document holding every hyperparameter,
//! with per-stage tables and validation that names the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::depth_opt::{DepthObjective, OptimizerSettings};
use crate::error::{Error, Result};
use crate::events::PseudoIntensitySettings;
use crate::flow::FlowSettings;
use crate::pose_opt::PoseSettings;
use crate::renderer::RenderSettings;

/// Flow-based initialization of the inverse depth maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSettings {
    /// Added to the flow magnitude before inversion.
    pub flow_epsilon: f64,
    pub spatial_sigma: f64,
    pub range_sigma: f64,
    /// Joint bilateral passes over the flow-derived inverse depth.
    pub iterations: usize,
}

impl Default for InitSettings {
    fn default() -> Self {
        InitSettings {
            flow_epsilon: 0.1,
            spatial_sigma: 4.0,
            range_sigma: 0.05,
            iterations: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory (`frames/`, `frames.txt`, `events.txt`, `calib.txt`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seed of the single generator behind all randomness (simulation and
    /// event corruption).
    pub seed: u64,
    /// Edge-awareness of the depth smoothness prior.
    pub beta: f64,
    pub lambda_sm: f64,
    /// Weight of the composed-pose regularizer.
    pub lambda_r: f64,
    /// Events per block.
    pub block_size: usize,
    /// Complementary-filter cutoff in rad/s.
    pub cf_cutoff: f64,
    /// Log-intensity step per event assumed by the complementary filter.
    pub cf_contrast: f64,
    /// Blocks of event history integrated into each pseudo-intensity frame.
    pub history: usize,
    /// Initialize each block's pose from the previous block; otherwise every
    /// block starts from identity.
    pub warm_start: bool,
    pub flow: FlowSettings,
    pub init: InitSettings,
    pub depth_optimizer: OptimizerSettings,
    pub pseudo_intensity: PseudoIntensitySettings,
    pub pose: PoseSettings,
    pub render: RenderSettings,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            beta: 10.0,
            lambda_sm: 1.0,
            lambda_r: 0.01,
            block_size: 2000,
            cf_cutoff: 6.28,
            cf_contrast: 0.1,
            history: 10,
            warm_start: true,
            flow: FlowSettings::default(),
            init: InitSettings::default(),
            depth_optimizer: OptimizerSettings::default(),
            pseudo_intensity: PseudoIntensitySettings::default(),
            pose: PoseSettings::default(),
            render: RenderSettings::default(),
            paths: Paths::default(),
        }
    }
}

fn field_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        reason: reason.into(),
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_err(field, format!("must be positive and finite, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(field_err(field, format!("must be non-negative and finite, got {v}")))
    }
}

impl PipelineConfig {
    /// Parse and validate a TOML document. Missing keys take their defaults;
    /// unknown keys are rejected.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = e
                .span()
                .and_then(|s| text.get(s))
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .unwrap_or_else(|| "config".into());
            field_err(&field, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn objective(&self) -> DepthObjective {
        DepthObjective {
            beta: self.beta,
            lambda_sm: self.lambda_sm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("beta", self.beta)?;
        non_negative("lambda_sm", self.lambda_sm)?;
        non_negative("lambda_r", self.lambda_r)?;
        if self.block_size == 0 {
            return Err(field_err("block_size", "must be >= 1"));
        }
        positive("cf_cutoff", self.cf_cutoff)?;
        positive("cf_contrast", self.cf_contrast)?;
        if self.flow.levels == 0 {
            return Err(field_err("flow.levels", "must be >= 1"));
        }
        if self.flow.iterations == 0 {
            return Err(field_err("flow.iterations", "must be >= 1"));
        }
        positive("flow.smoothness", self.flow.smoothness)?;
        positive("init.flow_epsilon", self.init.flow_epsilon)?;
        positive("init.spatial_sigma", self.init.spatial_sigma)?;
        positive("init.range_sigma", self.init.range_sigma)?;
        self.depth_optimizer.validate("depth_optimizer")?;
        self.pseudo_intensity.validate()?;
        self.pose.validate()?;
        self.render.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn defaults_are_the_published_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.beta, 10.0);
        assert_eq!(c.lambda_sm, 1.0);
        assert_eq!(c.lambda_r, 0.01);
        assert_eq!(c.block_size, 2000);
        assert_eq!(c.cf_cutoff, 6.28);
        c.validate().unwrap();
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn toml_roundtrip() {
        let mut c = PipelineConfig {
            beta: 3.5,
            ..PipelineConfig::default()
        };
        c.pose.pyramid_levels = 2;
        c.paths.output = Some("out".into());
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_tables_keep_other_defaults() {
        let c = PipelineConfig::from_toml("lambda_r = 0.5\n[pose]\npyramid_levels = 1\n").unwrap();
        assert_eq!(c.lambda_r, 0.5);
        assert_eq!(c.pose.pyramid_levels, 1);
        assert_eq!(c.pose.optimizer, PoseSettings::default().optimizer);
    }

    #[test]
    fn negative_beta_names_the_field() {
        let e = PipelineConfig::from_toml("beta = -1.0\n").unwrap_err();
        assert_eq!(field_of(e), "beta");
    }

    #[test]
    fn nested_fields_are_named_with_their_table() {
        let e = PipelineConfig::from_toml("[depth_optimizer]\nstep_size = 0.0\n").unwrap_err();
        assert_eq!(field_of(e), "depth_optimizer.step_size");
        let e = PipelineConfig::from_toml("[render]\ngamma = -2.0\n").unwrap_err();
        assert_eq!(field_of(e), "render.gamma");
        let e = PipelineConfig::from_toml("block_size = 0\n").unwrap_err();
        assert_eq!(field_of(e), "block_size");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = PipelineConfig::from_toml("betta = 1.0\n").unwrap_err();
        assert!(e.to_string().contains("betta"), "{e}");
        assert!(PipelineConfig::from_toml("[pose]\nlevels = 2\n").is_err());
    }
}
