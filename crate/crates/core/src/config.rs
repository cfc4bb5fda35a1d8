//! Layered run configuration.
//!
//! Resolution order, later layers winning: built-in defaults, a TOML file
//! (given explicitly or through `URBANPROMPT_CONFIG`), `key.path=value`
//! overrides, then whatever the caller sets directly. The resolved document
//! is hashed (SHA-256 of its canonical JSON) and the hash is stamped on every
//! artifact.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::GraphConfig;
use crate::pretrain::PretrainConfig;
use crate::prompt::PromptConfig;
use crate::synth::SynthSpec;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "URBANPROMPT_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub alpha: f64,
    pub folds: usize,
    pub few_shot_ratio: f64,
    pub few_shot_repeats: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            folds: 5,
            few_shot_ratio: 0.1,
            few_shot_repeats: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    /// Embedding source tag, e.g. `pretrained` or `manual:P1`.
    pub source: String,
    /// Seed for manual-prompt deletions and random embeddings.
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            source: "pretrained".into(),
            seed: 0,
        }
    }
}

/// Artifact locations, relative to the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub city: PathBuf,
    pub graph: PathBuf,
    pub transr: PathBuf,
    pub model: PathBuf,
    pub loss_log: PathBuf,
    pub prompt: PathBuf,
    pub embeddings: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            city: "city".into(),
            graph: "graph".into(),
            transr: "transr.ckpt".into(),
            model: "model.ckpt".into(),
            loss_log: "loss_log.csv".into(),
            prompt: "prompt.ckpt".into(),
            embeddings: "embeddings".into(),
            reports: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthSpec,
    pub graph: GraphConfig,
    pub pretrain: PretrainConfig,
    pub prompt: PromptConfig,
    pub embed: EmbedConfig,
    pub eval: EvalConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            synth: SynthSpec::default(),
            graph: GraphConfig::default(),
            pretrain: PretrainConfig::default(),
            prompt: PromptConfig::default(),
            embed: EmbedConfig::default(),
            eval: EvalConfig::default(),
            paths: Paths::default(),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Recursively overlays `top` onto `base`; tables merge, everything else
/// replaces.
fn merge(base: &mut toml::Value, top: toml::Value) {
    match (base, top) {
        (toml::Value::Table(b), toml::Value::Table(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed key `{key}`")));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a table entry")))?;
        cur = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    cur.as_table_mut()
        .ok_or_else(|| Error::Config(format!("`{key}` does not name a table entry")))?
        .insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults, then `file` (or the file named by [`CONFIG_ENV`]), then
    /// every `key.path=value` override.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let env_file = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        let file = file.map(Path::to_path_buf).or(env_file);
        let mut doc = toml::Value::try_from(RunConfig::default()).map_err(config_err)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let top: toml::Table = toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut doc, toml::Value::Table(top));
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut doc, k.trim(), parse_value(v.trim()))?;
        }
        Self::from_value(doc)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let top: toml::Table = toml::from_str(text).map_err(config_err)?;
        let mut doc = toml::Value::try_from(RunConfig::default()).map_err(config_err)?;
        merge(&mut doc, toml::Value::Table(top));
        Self::from_value(doc)
    }

    fn from_value(doc: toml::Value) -> Result<Self> {
        let cfg: RunConfig = doc.try_into().map_err(config_err)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        self.pretrain.check()?;
        self.prompt.check()?;
        self.synth.check()?;
        if self.eval.folds < 2 {
            return Err(Error::Config("eval.folds must be at least 2".into()));
        }
        if !(self.eval.alpha >= 0.0) {
            return Err(Error::Config("eval.alpha must be >= 0".into()));
        }
        if !(self.eval.few_shot_ratio > 0.0 && self.eval.few_shot_ratio <= 1.0) {
            return Err(Error::Config("eval.few_shot_ratio must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Canonical JSON: object keys sorted, no whitespace.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("json value serializes")
    }

    /// Hex SHA-256 of [`RunConfig::canonical_json`].
    pub fn hash(&self) -> String {
        hash_of(&self.canonical_json())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn hash_of(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn layering_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 4\n[pretrain]\nepochs = 3\nlr = 0.5\n").unwrap();
        let cfg = RunConfig::resolve(
            Some(&path),
            &["pretrain.epochs=7".into(), "embed.source=manual:P1".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.pretrain.epochs, 7);
        assert_eq!(cfg.pretrain.lr, 0.5);
        assert_eq!(cfg.pretrain.margin, 2.0);
        assert_eq!(cfg.embed.source, "manual:P1");
    }

    #[test]
    fn bad_values_are_config_errors() {
        let e = RunConfig::resolve(None, &["pretrain.epochs=-1".into()]).unwrap_err();
        assert_eq!(e.kind(), "config");
        assert!(RunConfig::resolve(None, &["nokey".into()]).is_err());
        assert!(RunConfig::parse("[eval]\nfolds = 1\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.pretrain.epochs += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_eq!(
            hash_of("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
