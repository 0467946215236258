//! Run configuration: JSON objects with flat dotted keys such as
//! `"model.d": 64` or `"train.epochs": 20`. Every key must already exist in
//! the defaults; anything else is rejected by name.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{load_annotated_jsonl, load_squad, AnnotatedExample, SyntheticConfig, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::{Corpus, TrainConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Generated in memory from `synthetic.*`.
    #[default]
    Synthetic,
    Squad,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub format: DataFormat,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    /// Optional text embedding file for the word table.
    pub embeddings: Option<PathBuf>,
    /// Optional CoVe archive stem.
    pub cove: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_dev: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Synthetic,
            train: None,
            dev: None,
            embeddings: None,
            cove: None,
            synthetic_train: 2000,
            synthetic_dev: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), v.clone());
        }
    }
}

fn unflatten(flat: &Map<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let parts: Vec<&str> = key.split('.').collect();
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("config sections are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    /// Every key with its current value.
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut out = Map::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    pub fn to_flat_json(&self) -> String {
        serde_json::to_string_pretty(&Value::Object(self.to_flat())).expect("config serializes")
    }

    /// Applies `key -> value` pairs on top of `self`.
    pub fn apply<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, Value)>) -> Result<Self> {
        let mut flat = self.to_flat();
        for (k, v) in pairs {
            match flat.get_mut(k) {
                Some(slot) => *slot = v,
                None => return Err(Error::Config(format!("unknown config key {k:?}"))),
            }
        }
        let cfg: RunConfig = serde_json::from_value(unflatten(&flat))
            .map_err(|e| Error::Config(format!("invalid config value: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_flat_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(map) = v else {
            return Err(Error::Config("config must be a JSON object of dotted keys".into()));
        };
        RunConfig::default().apply(map.iter().map(|(k, v)| (k.as_str(), v.clone())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_flat_json(&text)
    }

    /// Parses a `key=value` override; the value is read as JSON when it
    /// parses, otherwise as a string.
    pub fn parse_override(s: &str) -> Result<(String, Value)> {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {s:?} is not key=value")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        Ok((k.trim().to_string(), value))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.format != DataFormat::Synthetic && self.data.train.is_none() {
            return Err(Error::Config("data.train is required unless data.format is synthetic".into()));
        }
        Ok(())
    }
}


/// Reads examples in the given format. Synthetic data has no file.
pub fn load_examples(path: &Path, format: DataFormat) -> Result<Vec<AnnotatedExample>> {
    if !path.exists() {
        return Err(Error::Config(format!("data file {} does not exist", path.display())));
    }
    match format {
        DataFormat::Squad => {
            let loaded = load_squad(path)?;
            if loaded.skipped > 0 {
                log::warn!("{}: skipped {} unmappable answers", path.display(), loaded.skipped);
            }
            Ok(loaded.examples)
        }
        DataFormat::Jsonl | DataFormat::Synthetic => load_annotated_jsonl(path),
    }
}

impl RunConfig {
    /// Train/dev corpus described by `data.*` and `synthetic.*`.
    pub fn load_corpus(&self) -> Result<Corpus> {
        match self.data.format {
            DataFormat::Synthetic => {
                let c = SyntheticCorpus::generate(&self.synthetic, self.data.synthetic_train, self.data.synthetic_dev)?;
                Ok(Corpus::new(c.train, c.dev))
            }
            format => {
                let train_path = self
                    .data
                    .train
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.train is required".into()))?;
                let train = load_examples(train_path, format)?;
                let dev = match &self.data.dev {
                    Some(p) => load_examples(p, format)?,
                    None => Vec::new(),
                };
                Ok(Corpus::new(train, dev))
            }
        }
    }
}
