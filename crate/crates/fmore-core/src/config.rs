//! Experiment configuration: a single TOML file plus dotted-path
//! command-line overrides. The default profile is the large round setup
//! (N = 100, K = 20, scaled-product rule with alpha = 25, two quality
//! dimensions).

use serde::{Deserialize, Serialize};

use crate::auction::{AuctionConfig, ScoreKind, ScoringRule, WinningProbMode};
use crate::error::{Error, Result};
use crate::flsim::experiment::{FlConfig, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub auction: AuctionConfig,
    pub fl: FlConfig,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            auction: AuctionConfig::new(
                100,
                20,
                1.0,
                ScoringRule::new(ScoreKind::ScaledProduct { alpha: 25.0 }, None).unwrap(),
                WinningProbMode::OrderStatistics,
            )
            .unwrap(),
            fl: FlConfig::default(),
            policies: vec![Policy::FMore, Policy::RandFL, Policy::FixedFL],
            seeds: (1..=20).collect(),
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.auction.validate()?;
        self.auction.rule.validate()?;
        self.fl.validate()?;
        if self.policies.is_empty() {
            return Err(Error::Config("policies must be non-empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        Ok(())
    }

    /// Parse from TOML text, then apply `key.path=value` overrides before
    /// typed decoding, so overrides get the same validation as the file.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut value: toml::Value = text
            .parse()
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        for (path, raw) in overrides {
            set_path(&mut value, path, raw)?;
        }
        let cfg: ExperimentConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("config field error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::parse(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialize error: {e}")))
    }
}

/// Set a dotted path inside a TOML value, creating tables as needed. The
/// raw value is parsed as a TOML literal, falling back to a plain string.
fn set_path(root: &mut toml::Value, path: &str, raw: &str) -> Result<()> {
    let parsed: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override path '{path}'")));
    }
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{path}' is not a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' is not a table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Parse repeated `--set key=value` arguments.
pub fn parse_set_args(sets: &[String]) -> Result<Vec<(String, String)>> {
    sets.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--set needs key=value, got '{s}'")))
        })
        .collect()
}
