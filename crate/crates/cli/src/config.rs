//! Run configuration: a flat JSON object of dotted keys.

use std::path::{Path, PathBuf};

use serde_json::Value;

use semirnet_core::knowledge::ApiConfig;
use semirnet_core::model::{AblationFlags, ModelConfig, MODEL_KEYS};
use semirnet_core::training::{TrainConfig, TRAIN_KEYS};
use semirnet_core::{Error, Result};

/// File locations. Relative paths in a config file resolve against the
/// directory holding that file; unset outputs go to the working directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub image_features: Option<PathBuf>,
    pub numberbatch: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub knowledge: Option<PathBuf>,
    pub api_cache: Option<PathBuf>,
    pub model: PathBuf,
    pub log: PathBuf,
    pub ablation: PathBuf,
}

pub const PATH_KEYS: &[(&str, &str, &str)] = &[
    ("data.train", "", "training split (JSON lines)"),
    ("data.val", "", "validation split"),
    (
        "data.test",
        "",
        "held-out split used by `ablate` (falls back to data.val)",
    ),
    (
        "data.image_features",
        "",
        "precomputed image vectors keyed by sample id",
    ),
    ("knowledge.numberbatch", "", "Numberbatch text file"),
    ("knowledge.edges", "", "edge dump, CSV start,relation,end,weight"),
    (
        "knowledge.vocab",
        "",
        "one word per line; default: every word of the data splits",
    ),
    ("knowledge.cache", "", "concept cache written by knowledge-build"),
    (
        "conceptnet.cache_dir",
        "",
        "raw API response cache used when no edge dump is given",
    ),
    ("output.model", "model.sirn", "trained model file"),
    ("output.log", "train_log.jsonl", "epoch log"),
    ("output.ablation", "ablation.json", "ablation results"),
];

pub const API_KEYS: &[(&str, &str, &str)] = &[
    ("conceptnet.endpoint", "https://api.conceptnet.io", "REST endpoint"),
    ("conceptnet.timeout_ms", "10000", "request timeout"),
    (
        "conceptnet.network",
        "false",
        "allow requests for terms missing from the cache",
    ),
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub flags: AblationFlags,
    pub paths: Paths,
    pub api: ApiConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            flags: AblationFlags::FULL,
            paths: Paths {
                model: "model.sirn".into(),
                log: "train_log.jsonl".into(),
                ablation: "ablation.json".into(),
                ..Paths::default()
            },
            api: ApiConfig::default(),
        }
    }
}

fn scalar(key: &str, value: &Value) -> Result<String> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                _ => Err(Error::Config(format!("`{key}` must be a list of strings"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.join(",")),
        _ => Err(Error::Config(format!("`{key}` must be a string, number or boolean"))),
    }
}

impl RunConfig {
    /// Reads a config file. Missing keys keep their defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Value = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        let obj = doc
            .as_object()
            .ok_or_else(|| Error::format(path, "config must be a JSON object"))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = RunConfig::default();
        for (key, value) in obj {
            let v = scalar(key, value).map_err(|e| Error::format(path, e.to_string()))?;
            cfg.set(key, &v, &base)
                .map_err(|e| Error::format(path, e.to_string()))?;
        }
        cfg.model.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let resolve = |v: &str| base.join(v);
        let p = &mut self.paths;
        match key {
            "data.train" => p.train = Some(resolve(value)),
            "data.val" => p.val = Some(resolve(value)),
            "data.test" => p.test = Some(resolve(value)),
            "data.image_features" => p.image_features = Some(resolve(value)),
            "knowledge.numberbatch" => p.numberbatch = Some(resolve(value)),
            "knowledge.edges" => p.edges = Some(resolve(value)),
            "knowledge.vocab" => p.vocab = Some(resolve(value)),
            "knowledge.cache" => p.knowledge = Some(resolve(value)),
            "conceptnet.cache_dir" => p.api_cache = Some(resolve(value)),
            "output.model" => p.model = resolve(value),
            "output.log" => p.log = resolve(value),
            "output.ablation" => p.ablation = resolve(value),
            "conceptnet.endpoint" => self.api.endpoint = value.to_string(),
            "conceptnet.timeout_ms" => {
                self.api.timeout_ms = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))?
            }
            "conceptnet.network" => {
                self.api.network_enabled = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))?
            }
            k if k.starts_with("flags.") => self.flags.set(k, value)?,
            k if TRAIN_KEYS.iter().any(|(name, ..)| *name == k) => self.train.set(k, value)?,
            _ => self.model.set(key, value)?,
        }
        Ok(())
    }

    pub fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }
}

/// Every key with its default and description, for `--help`.
pub fn key_help() -> String {
    let flags = [
        ("flags.use_knowledge", "true", "concept-based word-level features"),
        (
            "flags.use_semantic",
            "true",
            "word- and sample-level similarity features",
        ),
        ("flags.use_contrastive", "true", "triplet loss term"),
    ];
    let mut out =
        String::from("Config keys (JSON object, default in brackets; unset outputs go to the working directory):\n");
    for (key, default, desc) in MODEL_KEYS
        .iter()
        .chain(TRAIN_KEYS)
        .chain(flags.iter())
        .chain(PATH_KEYS)
        .chain(API_KEYS)
    {
        let default = if default.is_empty() { "unset" } else { default };
        out.push_str(&format!("  {key:<24} [{default}] {desc}\n"));
    }
    out
}
