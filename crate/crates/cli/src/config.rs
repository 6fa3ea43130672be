//! Run configuration: preset defaults, optional JSON file, flags.

use std::path::Path;

use minaction::metrics::ValidationConfig;
use minaction::orbitgen::GeneratorConfig;
use minaction::presets::Preset;
use minaction::sindy::SindyConfig;
use minaction::trainer::TrainConfig;
use minaction::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SEED_ENV: &str = "MINACTION_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub validation: ValidationConfig,
    pub sindy: SindyConfig,
}

impl RunConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            preset,
            seed: 0,
            generator: preset.generator(),
            train: preset.train(),
            validation: ValidationConfig::default(),
            sindy: SindyConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        self.sindy.library.validate()
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) if !s.trim().is_empty() => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        _ => Ok(None),
    }
}

/// Layer, lowest first: preset defaults, config file, flags. The seed is
/// taken from the file, then `MINACTION_SEED`, then `--seed`.
pub fn resolve(file: Option<&Path>, preset: Option<Preset>, seed: Option<u64>) -> Result<RunConfig> {
    let user: Value = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !user.is_object() {
        return Err(Error::Config("config file must hold a JSON object".into()));
    }
    let file_preset = match user.get("preset") {
        Some(v) => Some(
            serde_json::from_value::<Preset>(v.clone()).map_err(|e| Error::Config(format!("config preset: {e}")))?,
        ),
        None => None,
    };
    let preset = preset.or(file_preset).unwrap_or(Preset::KeplerDefault);
    let mut base = serde_json::to_value(RunConfig::from_preset(preset))?;
    merge(&mut base, user);
    base["preset"] = serde_json::to_value(preset)?;
    let mut cfg: RunConfig = serde_json::from_value(base).map_err(|e| Error::Config(format!("config: {e}")))?;
    if let Some(s) = env_seed()? {
        cfg.seed = s;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `"0..9"` (inclusive) or a comma-separated list.
pub fn parse_seeds(s: &str) -> std::result::Result<Vec<u64>, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad range start in {s:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad range end in {s:?}"))?;
        if b < a {
            return Err(format!("empty range {s:?}"));
        }
        return Ok((a..=b).collect());
    }
    let out: std::result::Result<Vec<u64>, _> = s.split(',').map(|t| t.trim().parse::<u64>()).collect();
    match out {
        Ok(v) if !v.is_empty() => Ok(v),
        _ => Err(format!("expected a range like 0..9 or a list like 1,2,3, got {s:?}")),
    }
}

pub fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad integer {t:?}")))
        .collect()
}
