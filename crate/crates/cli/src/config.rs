//! Run configuration: one JSON document covering model, training and data,
//! with dotted-path overrides such as `train.lr=5e-4`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vcformer::data::SplitRatios;
use vcformer::model::ModelConfig;
use vcformer::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV with a header row.
    pub path: Option<PathBuf>,
    /// Whether the first column is a timestamp.
    pub has_timestamp: bool,
    pub split: SplitRatios,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Sets the field at dotted `key`. The value is read as JSON when it
    /// parses, otherwise as a string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), CliError> {
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| CliError::Usage(format!("unknown config key {key}")))?;
        }
        if slot.is_object() {
            return Err(CliError::Usage(format!("{key} is a section, not a field")));
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        *self = serde_json::from_value(doc)
            .map_err(|e| CliError::Usage(format!("bad value {raw:?} for {key}: {e}")))?;
        Ok(())
    }

    pub fn apply(&mut self, overrides: &[(String, String)]) -> Result<(), CliError> {
        overrides.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.split.validate()?;
        Ok(())
    }
}

/// Pulls `--a.b value` and `--a.b=value` pairs out of `args`.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--").filter(|f| f.split('=').next().is_some_and(|k| k.contains('.'))) else {
            rest.push(arg);
            continue;
        };
        match flag.split_once('=') {
            Some((k, v)) => overrides.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?;
                overrides.push((flag.to_string(), v));
            }
        }
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"model": {"heads": 4}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"optimizer": {}}"#).is_err());
        assert!(RunConfig::default().set("train.momentum", "0.9").is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut c = RunConfig::default();
        c.set("train.lr", "0.5").unwrap();
        c.set("model.activation", "relu").unwrap();
        c.set("data.path", "/tmp/x.csv").unwrap();
        c.set("data.split.val", "0.1").unwrap();
        assert_eq!(c.train.lr, 0.5);
        assert_eq!(c.model.activation, vcformer::nn::Activation::Relu);
        assert_eq!(c.data.path.as_deref(), Some(Path::new("/tmp/x.csv")));
        assert_eq!(c.data.split.val, 0.1);
        assert!(c.set("model.d_model", "wide").is_err());
        assert!(c.set("model", "1").is_err());
    }

    #[test]
    fn override_extraction() {
        let args = ["train", "--model.d_model", "64", "--train.lr=1e-4", "--out", "x"].map(String::from).to_vec();
        let (rest, ov) = extract_overrides(args).unwrap();
        assert_eq!(rest, ["train", "--out", "x"]);
        assert_eq!(ov, [("model.d_model".into(), "64".into()), ("train.lr".into(), "1e-4".into())]);
        assert!(extract_overrides(vec!["--train.lr".into()]).is_err());
    }
}
