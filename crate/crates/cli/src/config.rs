//! Versioned JSON configuration files with strict key checking.

use std::path::Path;

use anyhow::{bail, Context, Result};
use babf::pipeline::FitConfig;
use babf::simulation::SimDesign;
use babf::McmcConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u64 = 1;

/// Keys of `input` absent from `schema`, as dotted paths, recursing into
/// objects present in both.
pub fn unknown_keys(input: &Value, schema: &Value, prefix: &str) -> Vec<String> {
    let mut out = Vec::new();
    match (input, schema) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get(k) {
                    None => out.push(path),
                    Some(s) => out.extend(unknown_keys(v, s, &path)),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) if !b.is_empty() => {
            for (i, v) in a.iter().enumerate() {
                out.extend(unknown_keys(v, &b[0], &format!("{prefix}[{i}]")));
            }
        }
        _ => {}
    }
    out
}

/// Parse `text` as a versioned config: a top-level `version` key plus the
/// fields of `T`. Every unknown key is reported at once.
pub fn parse_versioned<T: DeserializeOwned>(text: &str, schema: &Value, source: &str) -> Result<T> {
    let mut value: Value = serde_json::from_str(text).with_context(|| format!("{source}: invalid JSON"))?;
    let obj = value.as_object_mut().with_context(|| format!("{source}: top level must be an object"))?;
    match obj.remove("version") {
        None => bail!("{source}: missing required key `version`"),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => {}
        Some(v) => bail!("{source}: unsupported version {v}, expected {SCHEMA_VERSION}"),
    }
    let unknown = unknown_keys(&value, schema, "");
    if !unknown.is_empty() {
        bail!("{source}: unknown keys: {}", unknown.join(", "));
    }
    serde_json::from_value(value).with_context(|| format!("{source}: invalid configuration"))
}

pub fn load_versioned<T: DeserializeOwned>(path: &Path, schema: &Value) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_versioned(&text, schema, &path.display().to_string())
}

fn schema_of<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("configuration types serialize")
}

pub fn fit_schema() -> Value {
    schema_of(&FitConfig::default())
}

pub fn design_schema() -> Value {
    schema_of(&SimDesign::stationary_common(0))
}

/// Named simulation designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    StationaryCommon,
    StationaryRandom,
    NonstationaryCommon,
    HermiteRandom,
}

impl Preset {
    pub fn design(self, seed: u64) -> SimDesign {
        match self {
            Preset::StationaryCommon => SimDesign::stationary_common(seed),
            Preset::StationaryRandom => SimDesign::stationary_random(seed),
            Preset::NonstationaryCommon => SimDesign::nonstationary_common(seed),
            Preset::HermiteRandom => SimDesign::hermite_random(seed),
        }
    }

    /// Matérn prior surface for stationary designs, empirical otherwise.
    pub fn stationary_prior(self) -> bool {
        !matches!(self, Preset::NonstationaryCommon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteDesign {
    pub name: String,
    #[serde(default)]
    pub preset: Option<Preset>,
    /// Explicit design; its seed is replaced per replication.
    #[serde(default)]
    pub design: Option<SimDesign>,
    /// Prior surface choice; defaults to the preset's, or true.
    #[serde(default)]
    pub stationary: Option<bool>,
    /// Multiply the noise variance at data generation while fitting with
    /// the noise variance pinned at the nominal value.
    #[serde(default)]
    pub misspecify_noise_factor: Option<f64>,
}

impl SuiteDesign {
    pub fn build(&self, seed: u64) -> Result<SimDesign> {
        match (self.preset, &self.design) {
            (Some(p), None) => Ok(p.design(seed)),
            (None, Some(d)) => Ok(SimDesign { seed, ..d.clone() }),
            _ => bail!("suite design `{}` needs exactly one of `preset` or `design`", self.name),
        }
    }

    pub fn stationary_prior(&self) -> bool {
        self.stationary.unwrap_or_else(|| self.preset.map_or(true, Preset::stationary_prior))
    }
}

fn default_replications() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    /// Replication `r` uses design seed `seed + r`.
    #[serde(default)]
    pub seed: u64,
    pub designs: Vec<SuiteDesign>,
    #[serde(default)]
    pub fit: FitConfig,
}

pub fn suite_schema() -> Value {
    let example = SuiteConfig {
        replications: 1,
        seed: 0,
        designs: vec![SuiteDesign {
            name: String::new(),
            preset: Some(Preset::StationaryCommon),
            design: Some(SimDesign::stationary_common(0)),
            stationary: Some(true),
            misspecify_noise_factor: Some(1.0),
        }],
        fit: FitConfig { mcmc: McmcConfig::default(), ..FitConfig::default() },
    };
    schema_of(&example)
}
