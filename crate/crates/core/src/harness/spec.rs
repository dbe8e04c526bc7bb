use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::condense::CondenseConfig;
use crate::data::toy::{self, ToySpec};
use crate::data::{load_retrieval_data, RetrievalData, RetrievalProtocol, Split};
use crate::error::{ensure, Error, Result};
use crate::hashing::{HashLossConfig, PLUGINS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Iem,
    DmPlain,
    Random,
    Herding,
    /// The full train split, for the upper-bound row.
    Whole,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Iem => "iem",
            Method::DmPlain => "dm-plain",
            Method::Random => "random",
            Method::Herding => "herding",
            Method::Whole => "whole",
        }
    }

    pub fn is_condensation(self) -> bool {
        matches!(self, Method::Iem | Method::DmPlain)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(Value::String(s.to_string()))
            .map_err(|_| Error::Config(format!("unknown method `{s}` (iem, dm-plain, random, herding, whole)")))
    }
}

/// In-memory toy data instead of files under `data_root`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyData {
    #[serde(flatten)]
    pub spec: ToySpec,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// mAP depth; `None` ranks the full database.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub precision_at: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { depth: None, precision_at: vec![100] }
    }
}

fn default_checkpoint() -> f64 {
    60.0
}
fn default_checkpoints() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    #[serde(default = "default_timing_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_seconds: f64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
}

fn default_timing_methods() -> Vec<Method> {
    vec![Method::Iem, Method::DmPlain]
}

impl Default for TimingConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

fn default_dataset() -> String {
    "cifar10".into()
}
fn default_ipc() -> usize {
    10
}
fn default_method() -> Method {
    Method::Iem
}
fn default_bits() -> Vec<usize> {
    vec![32]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    "outputs".into()
}
fn default_data_root() -> PathBuf {
    "data".into()
}
fn default_plugins() -> Vec<String> {
    PLUGINS.iter().map(|s| s.to_string()).collect()
}

/// One experiment: data, method, grid and every sub-config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default)]
    pub toy: Option<ToyData>,
    /// Keep only this many train images per class.
    #[serde(default)]
    pub train_per_class: Option<usize>,
    #[serde(default)]
    pub protocol: RetrievalProtocol,
    #[serde(default = "default_ipc")]
    pub ipc: usize,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_bits")]
    pub code_bits: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub condense: CondenseConfig,
    #[serde(default)]
    pub hashing: HashLossConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default = "default_plugins")]
    pub plugins: Vec<String>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_data_root")]
    pub data_root: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.seeds.is_empty(), Config, "seeds must not be empty");
        ensure!(!self.code_bits.is_empty(), Config, "code_bits must not be empty");
        ensure!(self.ipc >= 1, Config, "ipc must be >= 1");
        ensure!(self.train_per_class != Some(0), Config, "train_per_class must be >= 1");
        self.condense_config(self.seeds[0])?.validate()?;
        for &k in &self.code_bits {
            self.hash_config(k, self.seeds[0]).validate()?;
        }
        ensure!(self.eval.depth != Some(0), Config, "eval.depth must be >= 1");
        ensure!(
            self.timing.checkpoint_seconds > 0.0 && self.timing.checkpoints >= 1,
            Config,
            "timing needs a positive checkpoint spacing and at least one checkpoint"
        );
        Ok(())
    }

    /// The condensation config for one seed; `ipc`, `seed` and the method's
    /// switches come from the spec.
    pub fn condense_config(&self, seed: u64) -> Result<CondenseConfig> {
        let mut cfg = CondenseConfig { ipc: self.ipc, seed, ..self.condense.clone() };
        if self.method == Method::DmPlain {
            cfg.enable_na = false;
            cfg.enable_da = false;
        }
        Ok(cfg)
    }

    pub fn hash_config(&self, code_bits: usize, seed: u64) -> HashLossConfig {
        HashLossConfig { code_bits, seed, ..self.hashing.clone() }
    }

    /// `output/{dataset}/{method}/{ipc}ipc/{seed}/`
    pub fn run_dir(&self, method: &str, seed: u64) -> PathBuf {
        self.output_dir
            .join(&self.dataset)
            .join(method)
            .join(format!("{}ipc", self.ipc))
            .join(seed.to_string())
    }

    /// Loads the train/database/query splits, applying `train_per_class`.
    pub fn load_data(&self) -> Result<RetrievalData> {
        let mut data = match &self.toy {
            Some(t) => toy::retrieval_data(&t.spec, t.test_per_class, self.protocol)?,
            None => load_retrieval_data(&self.data_root, &self.dataset, self.protocol)?,
        };
        if let Some(n) = self.train_per_class {
            data.train = data.train.take_per_class(n)?;
            if self.protocol == RetrievalProtocol::TrainDatabase {
                data.database = data.train.clone();
                data.database.split = Split::Database;
            }
        }
        Ok(data)
    }
}

/// Applies `a.b.c=value` overrides. Values parse as JSON, falling back to a
/// plain string.
pub fn apply_overrides(mut root: Value, overrides: &[String]) -> Result<Value> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut node = &mut root;
        let keys: Vec<&str> = path.split('.').collect();
        ensure!(keys.iter().all(|k| !k.is_empty()), Config, "bad override path `{path}`");
        for key in &keys[..keys.len() - 1] {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("override `{path}`: `{key}` is not inside an object")))?;
            node = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
            if node.is_null() {
                *node = Value::Object(Default::default());
            }
        }
        node.as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}` does not address an object field")))?
            .insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(root)
}

/// Builds a spec from an optional JSON document plus overrides.
pub fn spec_from_json(doc: Option<Value>, overrides: &[String]) -> Result<ExperimentSpec> {
    let base = doc.unwrap_or_else(|| Value::Object(Default::default()));
    let merged = apply_overrides(base, overrides)?;
    let spec: ExperimentSpec =
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("invalid experiment spec: {e}")))?;
    spec.validate()?;
    Ok(spec)
}

pub fn load_spec(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentSpec> {
    let doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    spec_from_json(doc, overrides)
}
