//! Run configuration: a TOML file with dotted keys plus `--set key=value`
//! command-line overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::concepts::Strategy;
use crate::error::{Error, Result};

/// Whether the encoder uses the full interaction-aware prompt pipeline or
/// only the common prompt (the ablation baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Inp,
    Common,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    pub l: usize,
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub mode: PromptMode,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            l: 4,
            d: 64,
            m: 8,
            k: 2,
            mode: PromptMode::Inp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub c: usize,
    pub blocks: usize,
    pub heads: usize,
    pub n_queries: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            c: 64,
            blocks: 2,
            heads: 4,
            n_queries: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConceptsConfig {
    pub j: usize,
    pub negatives_per_step: usize,
    pub strategy: Strategy,
}

impl Default for ConceptsConfig {
    fn default() -> Self {
        ConceptsConfig {
            j: 64,
            negatives_per_step: 10,
            strategy: Strategy::Hard,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_b: f64,
    pub lambda_iou: f64,
    pub lambda_cls: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Absent in the file means: fall back to INPCC_SEED, then 0.
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 12,
            batch_size: 8,
            lr: 1e-3,
            lambda_b: 2.5,
            lambda_iou: 1.0,
            lambda_cls: 1.5,
            weight_decay: 0.0,
            grad_clip: 0.0,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub gamma: f64,
    pub iou_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            gamma: 1.0,
            iou_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub vocab: PathBuf,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub prompt: PromptConfig,
    pub net: NetConfig,
    pub concepts: ConceptsConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Loads the file, applies `key.path=value` overrides, validates.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: Config = value
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.prompt.l == 0 || self.prompt.d == 0 || self.prompt.m == 0 {
            return fail("prompt dimensions must be positive".to_string());
        }
        if self.prompt.k == 0 || self.prompt.k > self.prompt.m {
            return fail(format!(
                "prompt.k = {} must lie in 1..={}",
                self.prompt.k, self.prompt.m
            ));
        }
        if self.prompt.d != self.net.c {
            return fail(format!(
                "prompt.d = {} must equal net.c = {} (prompt rows join the token sequence)",
                self.prompt.d, self.net.c
            ));
        }
        if self.net.c == 0 || self.net.blocks == 0 || self.net.heads == 0 || self.net.n_queries == 0
        {
            return fail("net dimensions must be positive".to_string());
        }
        if self.net.c % 4 != 0 {
            return fail(format!(
                "net.c = {} must be divisible by 4 for the positional encoding",
                self.net.c
            ));
        }
        if self.net.c % self.net.heads != 0 {
            return fail(format!(
                "net.c = {} must be divisible by net.heads = {}",
                self.net.c, self.net.heads
            ));
        }
        if self.concepts.j == 0 {
            return fail("concepts.j must be positive".to_string());
        }
        if self.train.batch_size == 0 {
            return fail("train.batch_size must be positive".to_string());
        }
        if !(self.train.lr >= 0.0 && self.train.lr.is_finite()) {
            return fail(format!("train.lr = {} must be finite and >= 0", self.train.lr));
        }
        for (name, v) in [
            ("train.lambda_b", self.train.lambda_b),
            ("train.lambda_iou", self.train.lambda_iou),
            ("train.lambda_cls", self.train.lambda_cls),
            ("train.weight_decay", self.train.weight_decay),
            ("eval.gamma", self.eval.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold < 1.0) {
            return fail(format!(
                "eval.iou_threshold = {} must lie in (0, 1)",
                self.eval.iou_threshold
            ));
        }
        Ok(())
    }

    /// Seed resolution: config value, then INPCC_SEED, then 0.
    pub fn resolved_seed(&self) -> Result<u64> {
        if let Some(seed) = self.train.seed {
            return Ok(seed);
        }
        match std::env::var("INPCC_SEED") {
            Ok(text) => text.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("INPCC_SEED = '{text}' is not a valid seed"))
            }),
            Err(_) => Ok(0),
        }
    }

    /// The fully resolved config as TOML, for run logs.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Applies one `a.b.c=value` override onto a parsed TOML tree.
fn apply_override(root: &mut toml::Value, item: &str) -> Result<()> {
    let (key_path, raw_value) = item.split_once('=').ok_or_else(|| {
        Error::Config(format!("override '{item}' must look like section.key=value"))
    })?;
    let key_path = key_path.trim();
    let raw_value = raw_value.trim();
    if key_path.is_empty() {
        return Err(Error::Config(format!("override '{item}' has an empty key")));
    }
    // Parse the right-hand side with TOML's own syntax; bare words that are
    // not valid TOML scalars (e.g. hard) fall back to strings.
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Value>() {
        Ok(toml::Value::Table(t)) => t.get("v").cloned().expect("key v exists"),
        _ => toml::Value::String(raw_value.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key_path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override '{item}': '{part}' is not a table"))
        })?;
        node = table
            .entry(part.to_string())
            .or_insert(toml::Value::Table(toml::map::Map::new()));
    }
    let last = parts.last().expect("non-empty key path");
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override '{item}': parent is not a table")))?;
    table.insert(last.to_string(), parsed);
    Ok(())
}
