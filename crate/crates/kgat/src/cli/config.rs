//! Flat `key=value` config files shared by every subcommand.
//!
//! Resolution order for each setting: explicit flag, then config file, then
//! built-in default. The resolver records the value actually used so `train`
//! can snapshot a complete, re-loadable config into the run directory.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::CliError;
use crate::model::{Aggregator, AttentionMode};

/// Every key any subcommand understands. Config files are validated against
/// this list so a typo fails instead of silently falling back to a default.
pub const KNOWN_KEYS: &[&str] = &[
    // dataset files
    "train_file",
    "test_file",
    "val_file",
    "kg_file",
    "interactions_file",
    "labels_file",
    "checkpoint",
    "out_dir",
    "run_dir",
    // shared numerics
    "seed",
    "eval_k",
    // prep
    "core",
    "test_fraction",
    "val_fraction",
    // stats expectations
    "expected_users",
    "expected_items",
    "expected_interactions",
    "expected_entities",
    "expected_relations",
    "expected_triples",
    // model shape
    "embed_dim",
    "relation_dim",
    "hidden_dims",
    "aggregator",
    "attention",
    // training
    "lr",
    "l2_lambda",
    "cf_batch_size",
    "kg_batch_size",
    "max_epochs",
    "early_stop_patience",
    "eval_every",
    "use_kge",
    "message_dropout",
    "node_dropout",
    // evaluation
    "num_groups",
    // explain
    "user",
    "item",
    "max_len",
    "beam",
    "top",
    // synth
    "users",
    "items",
    "entities",
    "relations",
    "interactions_per_user",
    "triples_per_item",
    "clusters",
];

/// Parsed contents of a config file (possibly empty when no file was given).
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Data(format!(
                    "{source}:{}: expected key=value, got '{line}'",
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            let value = value.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::Data(format!(
                    "{source}:{}: unknown config key '{key}'",
                    lineno + 1
                )));
            }
            values.insert(key.to_string(), value.to_string());
        }
        Ok(Self { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

/// Merges flags over file values and remembers what was decided.
pub struct Resolver<'a> {
    file: &'a FileConfig,
    snapshot: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(file: &'a FileConfig) -> Self {
        Self {
            file,
            snapshot: BTreeMap::new(),
        }
    }

    fn record<T: Display>(&mut self, key: &str, value: &T) {
        self.snapshot.insert(key.to_string(), value.to_string());
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Data(format!("config key '{key}': cannot parse '{raw}': {e}"))
            }),
        }
    }

    /// Flag beats file; error if neither is present.
    pub fn require<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.ok_or_else(|| {
                CliError::Usage(format!(
                    "missing required setting '{key}' (pass --{} or put it in the config file)",
                    key.replace('_', "-")
                ))
            })?,
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Flag beats file beats default.
    pub fn with_default<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
        default: T,
    ) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    /// Flag beats file; absent everywhere is fine.
    pub fn optional<T: FromStr + Display>(
        &mut self,
        key: &str,
        flag: Option<T>,
    ) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    /// The resolved settings as re-loadable `key=value` lines, sorted by key.
    pub fn snapshot_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.snapshot {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

pub fn parse_aggregator(name: &str) -> Result<Aggregator, CliError> {
    match name {
        "gcn" => Ok(Aggregator::Gcn),
        "graphsage" => Ok(Aggregator::GraphSage),
        "bi-interaction" => Ok(Aggregator::BiInteraction),
        other => Err(CliError::Data(format!(
            "unknown aggregator '{other}' (expected gcn, graphsage, or bi-interaction)"
        ))),
    }
}

pub fn aggregator_name(a: Aggregator) -> &'static str {
    match a {
        Aggregator::Gcn => "gcn",
        Aggregator::GraphSage => "graphsage",
        Aggregator::BiInteraction => "bi-interaction",
    }
}

pub fn parse_attention(name: &str) -> Result<AttentionMode, CliError> {
    match name {
        "softmax" => Ok(AttentionMode::KnowledgeAware),
        "uniform" => Ok(AttentionMode::Uniform),
        other => Err(CliError::Data(format!(
            "unknown attention mode '{other}' (expected softmax or uniform)"
        ))),
    }
}

pub fn attention_name(mode: AttentionMode) -> &'static str {
    match mode {
        AttentionMode::KnowledgeAware => "softmax",
        AttentionMode::Uniform => "uniform",
    }
}

/// Comma-separated layer widths, e.g. `64,32,16`.
pub fn parse_dims(raw: &str) -> Result<Vec<usize>, CliError> {
    let dims: Result<Vec<usize>, _> = raw.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match dims {
        Ok(d) if !d.is_empty() && d.iter().all(|&x| x > 0) => Ok(d),
        _ => Err(CliError::Data(format!(
            "cannot parse layer widths '{raw}' (expected comma-separated positive integers)"
        ))),
    }
}

/// Ranking cutoffs: comma-separated positive integers, e.g. "10,20".
pub fn parse_k_list(raw: &str) -> Result<Vec<usize>, CliError> {
    let ks: Result<Vec<usize>, _> = raw.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match ks {
        Ok(k) if !k.is_empty() && k.iter().all(|&x| x > 0) => Ok(k),
        _ => Err(CliError::Data(format!(
            "cannot parse ranking cutoffs '{raw}' (expected comma-separated positive integers)"
        ))),
    }
}
