//! The structured command configuration (TOML). Every section has defaults,
//! unknown keys are rejected, and both parse and validation errors carry the
//! dotted key path of the offending value.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{CensorConfig, DropSchedule, FrameDrop, PolicyConfig};
use crate::detect::DetectConfig;
use crate::error::ConfigError;
use crate::flowtable::FlowTableConfig;
use crate::sim::{CovertChannelModel, SimSetup};
use crate::synth::SourceModel;

/// Frame-drop rates of the paper-style sweep.
pub const DEFAULT_SWEEP: [f64; 4] = [0.0, 0.05, 0.15, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CommandConfig {
    pub seed: u64,
    pub io: IoSection,
    pub attack: AttackSection,
    pub synth: SynthSection,
    pub sim: SimSection,
    pub detect: DetectSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<PathBuf>,
    /// Per-frame or per-window CSV time series.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub workers: usize,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { input: None, output: None, report: None, csv: None, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct AttackSection {
    pub policy: Vec<PolicyConfig>,
    pub table: FlowTableConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// WebRTC flow with data channel and media next to an ordinary DTLS flow.
    #[default]
    Snowflake,
    /// WebRTC handshake plus one video stream.
    Video,
    /// TLS over TCP.
    Tls,
    /// Clean phase then frame-drop phase, as seen after the censor.
    DetectPair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub scenario: Scenario,
    pub duration_s: f64,
    pub model: SourceModel,
    pub ssrc: u32,
    pub payload_type: u8,
    /// Frame-drop rate of the attack phase (detect_pair only).
    pub attack_rate: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            scenario: Scenario::Snowflake,
            duration_s: 10.0,
            model: SourceModel::default_adaptive(),
            ssrc: 0x1234_5678,
            payload_type: 102,
            attack_rate: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub covert: CovertChannelModel,
    pub video: SourceModel,
    /// One run per frame-drop rate; 0 means no frame dropping.
    pub rates: Vec<f64>,
    pub schedule: DropSchedule,
    /// Policies applied in every run after the frame-drop policy.
    pub extra_policy: Vec<PolicyConfig>,
    pub duration_s: f64,
    pub nack_recovery_prob: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            covert: CovertChannelModel::default(),
            video: SourceModel::default_adaptive(),
            rates: DEFAULT_SWEEP.to_vec(),
            schedule: DropSchedule::Bernoulli,
            extra_policy: Vec::new(),
            duration_s: 300.0,
            nack_recovery_prob: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    /// Start of the under-attack phase, in capture microseconds. Used when
    /// a single capture holds both phases.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split_us: Option<u64>,
    /// Separate under-attack capture; `io.input` is then the baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attack_input: Option<PathBuf>,
    pub classifier: DetectConfig,
}

fn prefixed(prefix: &str, e: ConfigError) -> ConfigError {
    let path = if e.path.is_empty() { prefix.to_owned() } else { format!("{prefix}.{}", e.path) };
    ConfigError { path, message: e.message }
}

/// Insert `value` at dotted `path` inside `table`, creating tables on the way.
fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| ConfigError::new(path, "empty key"))?;
    let mut t = table;
    for (i, part) in parts.iter().enumerate() {
        let entry = t.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| ConfigError::new(parts[..=i].join("."), "not a table"))?;
    }
    t.insert(last.to_owned(), value);
    Ok(())
}

/// Parse the value half of a `key=value` override as TOML, falling back to a
/// bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::new(spec, "override must be key=value"))?;
    let key = key.trim().to_owned();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    Ok((key, value))
}

impl CommandConfig {
    /// Parse TOML text with `overrides` (dotted key, value) applied on top.
    pub fn from_toml(text: &str, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map_or(1, |r| text[..r.start.min(text.len())].matches('\n').count() + 1);
            ConfigError::new("", format!("line {line}: {}", e.message().trim()))
        })?;
        for (k, v) in overrides {
            set_path(&mut table, k, v.clone())?;
        }
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { String::new() } else { path };
            ConfigError::new(path, e.into_inner().to_string().trim())
        })
    }

    /// Load an optional config file, apply overrides, and validate.
    pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self, ConfigError> {
        let text = match file {
            Some(p) => fs::read_to_string(p).map_err(|e| ConfigError::new("", format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let cfg = Self::from_toml(&text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.io.workers == 0 {
            return Err(ConfigError::new("io.workers", "must be > 0"));
        }
        self.censor().validate().map_err(|e| prefixed("attack", e))?;

        let s = &self.synth;
        if !(s.duration_s.is_finite() && s.duration_s > 0.0) {
            return Err(ConfigError::new("synth.duration_s", "must be > 0"));
        }
        s.model.validate("synth.model").map_err(synth_err)?;
        if !(0.0..=1.0).contains(&s.attack_rate) {
            return Err(ConfigError::new("synth.attack_rate", format!("{} is outside [0, 1]", s.attack_rate)));
        }
        if s.payload_type > 127 {
            return Err(ConfigError::new("synth.payload_type", "must fit in 7 bits"));
        }

        if self.sim.rates.is_empty() {
            return Err(ConfigError::new("sim.rates", "must not be empty"));
        }
        for (i, r) in self.sim.rates.iter().enumerate() {
            if !(r.is_finite() && (0.0..=1.0).contains(r)) {
                return Err(ConfigError::new(format!("sim.rates[{i}]"), format!("{r} is outside [0, 1]")));
            }
        }
        for setup in self.sim_setups() {
            setup.validate().map_err(|e| match e {
                crate::sim::SimError::Invalid { path, message } => prefixed("sim", ConfigError { path, message }),
                other => ConfigError::new("sim", other.to_string()),
            })?;
        }

        self.detect.classifier.validate().map_err(|e| ConfigError::new("detect.classifier", e.to_string()))?;
        Ok(())
    }

    pub fn censor(&self) -> CensorConfig {
        CensorConfig { policies: self.attack.policy.clone(), seed: self.seed, table: self.attack.table.clone() }
    }

    /// One simulation setup per swept rate, in `sim.rates` order.
    pub fn sim_setups(&self) -> Vec<SimSetup> {
        self.sim
            .rates
            .iter()
            .map(|&rate| {
                let mut policy = Vec::new();
                if rate > 0.0 {
                    let mut fd = FrameDrop::new(rate, self.seed);
                    fd.schedule = self.sim.schedule;
                    policy.push(PolicyConfig::FrameDrop(fd));
                }
                policy.extend(self.sim.extra_policy.iter().cloned());
                SimSetup {
                    covert: self.sim.covert.clone(),
                    video: self.sim.video.clone(),
                    policy,
                    duration_s: self.sim.duration_s,
                    seed: self.seed,
                    nack_recovery_prob: self.sim.nack_recovery_prob,
                }
            })
            .collect()
    }

    /// The effective configuration as JSON, for report echoing.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn synth_err(e: crate::synth::SynthError) -> ConfigError {
    match e {
        crate::synth::SynthError::Invalid { path, message } => ConfigError { path, message },
        other => ConfigError::new("synth", other.to_string()),
    }
}
