use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thermocae::augment::{AugmentParams, Stages, STAGE_NAMES};
use thermocae::cae::CaeConfig;
use thermocae::msssim::SsimParams;
use thermocae::pipeline::{EvalConfig, Seeds};
use thermocae::thermo::SceneConfig;
use thermocae::trainer::TrainConfig;

use crate::failure::Failure;

/// Input locations. Unset entries default to the layout under `--out`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub synth: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Grid of the capacity sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub num_layers: Vec<usize>,
    pub latent_dims: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            num_layers: vec![2, 3, 4, 5, 6],
            latent_dims: vec![8, 16, 32, 64, 128],
        }
    }
}

/// Dataset sizes and stages of the augmentation ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub counts: Vec<usize>,
    /// Stages left out one at a time, each at `augment.n_total` images.
    pub stages: Vec<String>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        AblateConfig {
            counts: vec![600, 1000, 2000, 5000, 10_000],
            stages: STAGE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub augment: AugmentParams,
    pub model: CaeConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
    pub seeds: Seeds,
    pub sweep: SweepConfig,
    pub ablate: AblateConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Failure::config(key, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::missing(path, &e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.scene.validate()?;
        self.augment.validate()?;
        if self.augment.n_total == 0 {
            return Err(Failure::config("augment.n_total", "must be at least 1"));
        }
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.augment.out_size != self.model.input_size {
            return Err(Failure::config(
                "augment.out_size",
                format!(
                    "augment.out_size {} differs from model.input_size {}",
                    self.augment.out_size, self.model.input_size
                ),
            ));
        }
        let min_side = SsimParams::default().min_side();
        if self.model.input_size < min_side {
            return Err(Failure::config(
                "model.input_size",
                format!(
                    "model.input_size {} is below the {min_side} pixels the training loss needs",
                    self.model.input_size
                ),
            ));
        }
        for (key, empty) in [
            ("sweep.num_layers", self.sweep.num_layers.is_empty()),
            ("sweep.latent_dims", self.sweep.latent_dims.is_empty()),
        ] {
            if empty {
                return Err(Failure::config(key, format!("{key} must not be empty")));
            }
        }
        if let Some(&n) = self.ablate.counts.iter().find(|&&n| n == 0) {
            return Err(Failure::config("ablate.counts", format!("ablate.counts: {n} is not a dataset size")));
        }
        let mut probe = Stages::default();
        for name in &self.ablate.stages {
            probe
                .disable(name)
                .map_err(|e| Failure::config("ablate.stages", e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(RunConfig::parse("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse(r#"{"train": {"epochz": 3}}"#).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("train.epochz"));
        let err = RunConfig::parse(r#"{"colour": 1}"#).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("colour"));
    }

    #[test]
    fn wrong_type_is_named() {
        let err = RunConfig::parse(r#"{"model": {"num_layers": "five"}}"#).unwrap_err();
        assert_eq!(err.key.as_deref(), Some("model.num_layers"));
    }

    #[test]
    fn mismatched_sizes_are_rejected() {
        let mut cfg = RunConfig::default();
        cfg.augment.out_size = 64;
        assert_eq!(cfg.validate().unwrap_err().key.as_deref(), Some("augment.out_size"));
        let mut cfg = RunConfig::default();
        cfg.ablate.stages.push("blur".into());
        assert_eq!(cfg.validate().unwrap_err().key.as_deref(), Some("ablate.stages"));
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }
}
