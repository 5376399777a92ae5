//! Run configuration: one TOML document with a section per module, dotted
//! `key=value` overrides, and strict validation before any work starts.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsr::{DsrHyper, HeadInit};
use crate::eki::EkiHyper;
use crate::epa::{ArbiterKind, ArbiterModel, GPT4O_ACCURACY};
use crate::error::{Error, Result};
use crate::world::{KindMix, WorldSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub dim: usize,
    pub concepts: usize,
    pub eta: f64,
    pub train_size: usize,
    pub val_size: usize,
    /// Precomputed embedding files used instead of generated splits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_path: Option<PathBuf>,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self {
            dim: 256,
            concepts: 4096,
            eta: 0.05,
            train_size: 2000,
            val_size: 500,
            train_path: None,
            val_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub sigma: f64,
    pub kind_mix: KindMix,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            kind_mix: KindMix::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpaSection {
    pub arbiter: ArbiterKind,
    pub p_clean_correct: f64,
    pub p_noisy_correct: f64,
    pub anchor_size: usize,
    /// Recorded responses (`{"id", "response"}` per line) for the remote arbiter.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_path: Option<PathBuf>,
    /// Live endpoint for the remote arbiter; only used with `allow_network`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub allow_network: bool,
    pub timeout_secs: u64,
}

impl Default for EpaSection {
    fn default() -> Self {
        Self {
            arbiter: ArbiterKind::Oracle,
            p_clean_correct: GPT4O_ACCURACY,
            p_noisy_correct: GPT4O_ACCURACY,
            anchor_size: 1024,
            replay_path: None,
            endpoint: None,
            allow_network: false,
            timeout_secs: 60,
        }
    }
}

impl EpaSection {
    pub fn oracle_model(&self) -> Result<ArbiterModel> {
        ArbiterModel::oracle(self.p_clean_correct, self.p_noisy_correct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub ks: Vec<usize>,
    pub subset_ks: Vec<usize>,
    pub m_distractors: usize,
    pub sweep_p: Vec<f64>,
    pub sweep_lambda: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10, 50],
            subset_ks: vec![1, 2, 3],
            m_distractors: 5,
            sweep_p: vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            sweep_lambda: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub world: WorldSection,
    pub noise: NoiseSection,
    pub epa: EpaSection,
    pub heads: HeadInit,
    pub eki: EkiHyper,
    pub dsr: DsrHyper,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            world: WorldSection::default(),
            noise: NoiseSection::default(),
            epa: EpaSection::default(),
            heads: HeadInit::default(),
            eki: EkiHyper::default(),
            dsr: DsrHyper::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn world_spec(&self) -> WorldSpec {
        WorldSpec {
            embed_dim: self.world.dim,
            concept_count: self.world.concepts,
            intra_noise: self.world.eta,
            seed: self.seed,
        }
    }

    /// Checks every section against the preconditions of the module that
    /// consumes it.
    pub fn validate(&self) -> Result<()> {
        self.world_spec().validate()?;
        let w = &self.world;
        if w.train_size < 2 || w.val_size == 0 {
            return Err(Error::config(
                "world.train_size must be >= 2 and world.val_size >= 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.noise.sigma) {
            return Err(Error::config(format!(
                "noise.sigma = {} outside [0, 1]",
                self.noise.sigma
            )));
        }
        self.noise.kind_mix.validate()?;
        match self.epa.arbiter {
            ArbiterKind::Oracle => {
                self.epa.oracle_model()?;
            }
            ArbiterKind::Remote => {
                if self.epa.replay_path.is_none() && !self.epa.allow_network {
                    return Err(Error::config(
                        "epa.arbiter = \"remote\" needs epa.replay_path or epa.allow_network",
                    ));
                }
                if self.epa.allow_network && self.epa.endpoint.is_none() {
                    return Err(Error::config("epa.allow_network needs epa.endpoint"));
                }
            }
        }
        if w.train_path.is_none() && self.epa.anchor_size > w.train_size {
            return Err(Error::config(format!(
                "epa.anchor_size = {} exceeds world.train_size = {}",
                self.epa.anchor_size, w.train_size
            )));
        }
        self.heads.validate()?;
        self.eki.validate()?;
        self.dsr.validate()?;
        let e = &self.eval;
        if e.ks.is_empty() || e.ks.contains(&0) || e.subset_ks.contains(&0) {
            return Err(Error::config("eval.ks must be nonempty and positive"));
        }
        if w.train_path.is_none() {
            if let Some(&k) = e.ks.iter().find(|&&k| k > w.val_size) {
                return Err(Error::config(format!(
                    "eval.ks contains {k} > world.val_size"
                )));
            }
            if e.m_distractors + 1 > w.val_size {
                return Err(Error::config(
                    "eval.m_distractors + 1 exceeds world.val_size",
                ));
            }
        }
        if let Some(&k) = e.subset_ks.iter().find(|&&k| k > e.m_distractors + 1) {
            return Err(Error::config(format!(
                "eval.subset_ks contains {k} > m_distractors + 1"
            )));
        }
        if e.sweep_p.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::config("eval.sweep_p values must lie in [0, 1)"));
        }
        if e.sweep_lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config(
                "eval.sweep_lambda values must be nonnegative",
            ));
        }
        Ok(())
    }

    /// The effective configuration as TOML; feeding it back reproduces the run.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Splits `a.b.c=value` into its key path and value; the value is read as a
/// TOML literal and falls back to a bare string.
pub fn parse_override(text: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {text:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(format!("override {text:?} has an empty key")));
    }
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.split('.').map(String::from).collect(), value))
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty path");
    let mut cur = table;
    for (depth, part) in parents.iter().enumerate() {
        let entry = cur
            .entry(part.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::config(format!("{} is not a section", path[..=depth].join(".")))
        })?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn collect_keys(prefix: &str, table: &toml::Table, out: &mut BTreeSet<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        if let toml::Value::Table(t) = v {
            collect_keys(&key, t, out);
        }
        out.insert(key);
    }
}

/// Keys in `given` that the schema does not know. Optional fields that are
/// absent from the canonical rendering are listed in `optional`.
fn unknown_keys(given: &toml::Table, canonical: &toml::Table, optional: &[&str]) -> Vec<String> {
    let mut known = BTreeSet::new();
    collect_keys("", canonical, &mut known);
    known.extend(optional.iter().map(|s| s.to_string()));
    let mut seen = BTreeSet::new();
    collect_keys("", given, &mut seen);
    seen.into_iter().filter(|k| !known.contains(k)).collect()
}

const OPTIONAL_KEYS: [&str; 4] = [
    "world.train_path",
    "world.val_path",
    "epa.replay_path",
    "epa.endpoint",
];

/// Parses a config document, applies overrides and validates the result.
pub fn config_from_str(text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        Error::config(format!("config is not valid TOML: {}", e.message()))
    })?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        set_path(&mut table, &path, value)?;
    }
    let canonical: toml::Table =
        toml::from_str(&RunConfig::default().to_toml()).expect("default parses");
    if let Some(k) = unknown_keys(&table, &canonical, &OPTIONAL_KEYS).first() {
        return Err(Error::config(format!("unknown config key {k}")));
    }
    let cfg: RunConfig =
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::config(format!("{path}: {}", e.into_inner()))
        })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads the config at `path` (defaults when `None`) and applies overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    config_from_str(&text, overrides)
}
