use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::flowtable::{IssuerMatch, MAX_RANDOM_STREAMS};
use crate::rtp::{Segmentation, VideoPtSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropSchedule {
    /// Independent Bernoulli draw per frame.
    #[default]
    Bernoulli,
    /// Deterministic: frame `k` is dropped when `floor((k+1)*rate) > floor(k*rate)`.
    Periodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataChannelBlock {
    #[serde(default)]
    pub issuer_match: IssuerMatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameDrop {
    pub rate: f64,
    /// Falls back to the run seed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub pt_set: VideoPtSet,
    #[serde(default)]
    pub schedule: DropSchedule,
    #[serde(default)]
    pub segmentation: Segmentation,
    /// Only act on flows flagged by the DTLS issuer check.
    #[serde(default)]
    pub require_webrtc_flag: bool,
}

impl FrameDrop {
    pub fn new(rate: f64, seed: u64) -> Self {
        FrameDrop {
            rate,
            seed: Some(seed),
            pt_set: VideoPtSet::default(),
            schedule: DropSchedule::Bernoulli,
            segmentation: Segmentation::default(),
            require_webrtc_flag: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformPacketLoss {
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedDelay {
    pub delay_ms: u32,
    /// Delay only packets sent from this address (one direction).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<IpAddr>,
}

/// One attack policy, or an ordered chain of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyConfig {
    DataChannelBlock(DataChannelBlock),
    FrameDrop(FrameDrop),
    UniformPacketLoss(UniformPacketLoss),
    FixedDelay(FixedDelay),
    Chain { policies: Vec<PolicyConfig> },
}

fn check_rate(rate: f64, path: &str) -> Result<(), ConfigError> {
    if rate.is_finite() && (0.0..=1.0).contains(&rate) {
        Ok(())
    } else {
        Err(ConfigError::new(format!("{path}.rate"), format!("{rate} is outside [0, 1]")))
    }
}

impl PolicyConfig {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::DataChannelBlock(_) => "data_channel_block",
            PolicyConfig::FrameDrop(_) => "frame_drop",
            PolicyConfig::UniformPacketLoss(_) => "uniform_packet_loss",
            PolicyConfig::FixedDelay(_) => "fixed_delay",
            PolicyConfig::Chain { .. } => "chain",
        }
    }

    pub fn frame_drop(rate: f64, seed: u64) -> Self {
        PolicyConfig::FrameDrop(FrameDrop::new(rate, seed))
    }

    pub fn uniform_loss(rate: f64, seed: u64) -> Self {
        PolicyConfig::UniformPacketLoss(UniformPacketLoss { rate, seed: Some(seed) })
    }

    pub fn fixed_delay(delay_ms: u32) -> Self {
        PolicyConfig::FixedDelay(FixedDelay { delay_ms, from: None })
    }

    pub fn data_channel_block() -> Self {
        PolicyConfig::DataChannelBlock(DataChannelBlock { issuer_match: IssuerMatch::default() })
    }

    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        match self {
            PolicyConfig::DataChannelBlock(c) => {
                if c.issuer_match.pattern.is_empty() {
                    return Err(ConfigError::new(format!("{path}.issuer_match.pattern"), "must not be empty"));
                }
            }
            PolicyConfig::FrameDrop(c) => {
                check_rate(c.rate, path)?;
                if c.pt_set.is_empty() {
                    return Err(ConfigError::new(format!("{path}.pt_set"), "must not be empty"));
                }
            }
            PolicyConfig::UniformPacketLoss(c) => check_rate(c.rate, path)?,
            PolicyConfig::FixedDelay(c) => {
                if c.delay_ms == 0 {
                    return Err(ConfigError::new(format!("{path}.delay_ms"), "must be > 0"));
                }
            }
            PolicyConfig::Chain { policies } => {
                if policies.is_empty() {
                    return Err(ConfigError::new(format!("{path}.policies"), "chain must not be empty"));
                }
                for (i, p) in policies.iter().enumerate() {
                    p.validate(&format!("{path}.policies[{i}]"))?;
                }
            }
        }
        Ok(())
    }

    /// Leaf policies in evaluation order.
    pub fn flatten(&self) -> Vec<&PolicyConfig> {
        match self {
            PolicyConfig::Chain { policies } => policies.iter().flat_map(|p| p.flatten()).collect(),
            leaf => vec![leaf],
        }
    }
}

/// Validate a top-level policy list (key path `policy[i]`).
pub fn validate_chain(policies: &[PolicyConfig]) -> Result<(), ConfigError> {
    for (i, p) in policies.iter().enumerate() {
        p.validate(&format!("policy[{i}]"))?;
    }
    let randomized = policies
        .iter()
        .flat_map(|p| p.flatten())
        .filter(|p| matches!(p, PolicyConfig::FrameDrop(_) | PolicyConfig::UniformPacketLoss(_)))
        .count();
    if randomized > MAX_RANDOM_STREAMS {
        return Err(ConfigError::new("policy", format!("at most {MAX_RANDOM_STREAMS} randomized policies per chain")));
    }
    Ok(())
}
