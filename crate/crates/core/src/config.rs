//! Experiment configuration: one TOML file drives generation, training,
//! evaluation and inference. Every seed is explicit; the file round-trips
//! losslessly through [`ExperimentConfig::to_toml`] / [`from_toml`].

use serde::{Deserialize, Serialize};

use crate::dataset::{GenConfig, PerturbConfig, SampleConfig};
use crate::error::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    /// Number of scenes `gen-data` writes.
    pub scenes: usize,
    /// Master seed for scene generation; per-scene seeds derive from it.
    pub seed: u64,
    #[serde(flatten)]
    pub gen: GenConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSection {
    /// Projected ROI feature width fed to the model.
    pub d_in: usize,
    pub noise_sigma: f64,
    /// Seed of the shared projection matrix (fixed per experiment).
    pub projection_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    pub feature_dim: usize,
    pub gate_templates: usize,
    pub refine_iterations: usize,
    pub message_passing: bool,
    pub caption_branch: bool,
    pub caption_supervision: bool,
    pub normalize_gate: bool,
    pub caption_embed_dim: usize,
    pub caption_hidden_dim: usize,
    pub caption_box_regression: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSection {
    #[serde(flatten)]
    pub sample: SampleConfig,
    pub train_object_nms: f64,
    pub train_caption_nms: f64,
    pub max_boxes_after_nms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSection {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub steps: usize,
    /// Learning-rate multiplier applied once `decay_at * steps` is reached.
    pub decay_factor: f64,
    pub decay_at: f64,
    /// Language-model parameters update with Adam at this rate.
    pub adam_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSection {
    pub k_values: Vec<usize>,
    pub object_nms: f64,
    pub caption_nms: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSection,
    pub features: FeaturesSection,
    pub proposals: PerturbConfig,
    pub model: ModelSection,
    pub sampling: SamplingSection,
    pub optimizer: OptimizerSection,
    pub eval: EvalSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            dataset: DatasetSection {
                scenes: 2000,
                seed: 7,
                gen: GenConfig::default(),
            },
            features: FeaturesSection {
                d_in: 64,
                noise_sigma: 0.05,
                projection_seed: 11,
            },
            proposals: PerturbConfig::default(),
            model: ModelSection {
                feature_dim: 64,
                gate_templates: 16,
                refine_iterations: 1,
                message_passing: true,
                caption_branch: true,
                caption_supervision: true,
                normalize_gate: false,
                caption_embed_dim: 32,
                caption_hidden_dim: 64,
                caption_box_regression: true,
            },
            sampling: SamplingSection {
                sample: SampleConfig::default(),
                train_object_nms: 0.7,
                train_caption_nms: 0.75,
                max_boxes_after_nms: 2000,
            },
            optimizer: OptimizerSection {
                learning_rate: 0.01,
                clip_norm: 10.0,
                steps: 4000,
                decay_factor: 0.1,
                decay_at: 2.0 / 3.0,
                adam_lr: 1e-3,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                adam_eps: 1e-8,
                seed: 13,
            },
            eval: EvalSection {
                k_values: vec![50, 100],
                object_nms: 0.35,
                caption_nms: 0.45,
                seed: 17,
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "config schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.dataset.gen.validate()?;
        if self.dataset.scenes == 0 {
            return Err(Error::invalid("dataset.scenes must be positive"));
        }
        if self.features.d_in == 0 {
            return Err(Error::invalid("features.d_in must be positive"));
        }
        if self.model.feature_dim == 0 || self.model.gate_templates == 0 {
            return Err(Error::invalid("model dims must be positive"));
        }
        if self.model.caption_supervision && !self.model.caption_branch {
            return Err(Error::invalid(
                "model.caption_supervision requires model.caption_branch",
            ));
        }
        if self.optimizer.steps == 0 {
            return Err(Error::invalid("optimizer.steps must be positive"));
        }
        if !(self.optimizer.decay_at > 0.0 && self.optimizer.decay_at <= 1.0) {
            return Err(Error::invalid("optimizer.decay_at must lie in (0, 1]"));
        }
        if self.eval.k_values.is_empty() || self.eval.k_values.iter().any(|&k| k == 0) {
            return Err(Error::invalid("eval.k_values must be positive"));
        }
        for (name, v) in [
            ("sampling.train_object_nms", self.sampling.train_object_nms),
            ("sampling.train_caption_nms", self.sampling.train_caption_nms),
            ("eval.object_nms", self.eval.object_nms),
            ("eval.caption_nms", self.eval.caption_nms),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_is_lossless() {
        let config = ExperimentConfig::default();
        let text = config.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(config, back);
        // And once more through the serialized form of the parsed value.
        assert_eq!(text, back.to_toml().unwrap());
    }

    #[test]
    fn rejects_bad_schema_version() {
        let mut config = ExperimentConfig::default();
        config.schema_version = 99;
        let text = toml::to_string(&config).unwrap();
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("schema_version"), "{err}");
    }

    #[test]
    fn rejects_supervision_without_branch() {
        let mut config = ExperimentConfig::default();
        config.model.caption_branch = false;
        config.model.caption_supervision = true;
        assert!(config.validate().is_err());
    }

    #[test]
    fn error_names_offending_field() {
        let mut config = ExperimentConfig::default();
        config.eval.object_nms = 1.5;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("eval.object_nms"), "{err}");
    }
}
