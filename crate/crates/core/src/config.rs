//! Pipeline configuration: one TOML document with a section per stage,
//! every field optional, plus `section.key=value` overrides.

use serde::{Deserialize, Serialize};

use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::losses::{LossWeights, TrainerConfig};
use crate::metrics::EvalConfig;
use crate::postprocess::ProposalConfig;
use crate::pseudolabel::RefinementConfig;
use crate::synth::SynthConfig;
use crate::types::Pyramid;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub synth: SynthConfig,
    pub refine: RefinementConfig,
    pub proposal: ProposalConfig,
    pub loss: LossWeights,
    pub trainer: TrainerConfig,
    /// Also fixes the pyramid (`sigma`, `levels`) used by the pyramid
    /// training and inference stages.
    pub backbone: BackboneConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            synth: SynthConfig::default(),
            refine: RefinementConfig::default(),
            proposal: ProposalConfig::default(),
            loss: LossWeights::default(),
            trainer: TrainerConfig::default(),
            backbone: BackboneConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.synth.validate()?;
        if !(self.refine.default_duration > 0.0 && self.refine.default_duration.is_finite()) {
            return Err(Error::Config(format!(
                "refine.default_duration must be positive, got {}",
                self.refine.default_duration
            )));
        }
        self.proposal.validate()?;
        self.loss.validate()?;
        self.trainer.validate()?;
        self.backbone.validate()?;
        self.eval.validate()
    }

    pub fn pyramid(&self) -> Pyramid {
        self.backbone.pyramid()
    }

    /// Parses `text` as TOML, applies `overrides` and validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let config: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Canonical TOML form; parsing it back gives an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }
}

/// Applies one `section.key=value` override. The value is read as a TOML
/// value when possible and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form section.key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override {item:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut cursor = table;
    for key in parents {
        let entry = cursor
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {item:?}: `{key}` is not a section")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(PipelineConfig::from_toml("", &[]).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn echo_is_canonical() {
        let cfg = PipelineConfig::from_toml(
            "[synth]\nnum_videos = 3\n[loss]\ntop_k = 2\n",
            &["trainer.steps=50".into(), "eval.interpolation=eleven_point".into()],
        )
        .unwrap();
        assert_eq!(cfg.synth.num_videos, 3);
        assert_eq!(cfg.trainer.steps, 50);
        let echo = cfg.to_toml();
        let again = PipelineConfig::from_toml(&echo, &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), echo);
    }

    #[test]
    fn durations_echo() {
        let text = "[synth]\nnum_classes = 2\n[[synth.durations]]\nmean = 5.0\nspread = 1.0\n[[synth.durations]]\nmean = 9.0\nspread = 2.0\n";
        let cfg = PipelineConfig::from_toml(text, &[]).unwrap();
        assert_eq!(PipelineConfig::from_toml(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let err = PipelineConfig::from_toml("[trainer]\nstpes = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("stpes"), "{err}");
        let err = PipelineConfig::from_toml("", &["loss.gamma=\"x\"".into()]).unwrap_err();
        assert!(err.to_string().contains("loss.gamma"), "{err}");
        assert!(PipelineConfig::from_toml("", &["trainer.steps=0".into()]).is_err());
        assert!(PipelineConfig::from_toml("", &["nonsense".into()]).is_err());
    }
}
