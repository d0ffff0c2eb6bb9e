//! JSON run reports. Field names carry their units (`_us`, `_bytes`, ...).

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::attack::AttackStats;
use crate::detect::DetectorReport;
use crate::error::Result;
use crate::flowtable::FlaggedFlow;
use crate::packet::FlowKey;

use super::engine::OfflineRun;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow: FlowKey,
    pub packets_in: u64,
    pub packets_dropped: u64,
    pub packets_delayed: u64,
    pub stun_packets: u64,
    pub dtls_packets: u64,
    pub rtp_packets: u64,
    pub other_packets: u64,
    pub webrtc_flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flagged_at_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    /// Wall-clock time the report was produced; the only field that differs
    /// between identical runs.
    pub generated_at_unix_ms: u64,
    pub tool_version: String,
    pub seed: u64,
    /// Effective configuration of the run.
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    pub packets_in: u64,
    pub packets_out: u64,
    pub stats: AttackStats,
    pub flows: Vec<FlowSummary>,
    pub flagged: Vec<FlaggedFlow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detector: Option<DetectorReport>,
}

fn now_unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl RunReport {
    pub fn new(config: serde_json::Value, seed: u64) -> Self {
        RunReport {
            schema_version: REPORT_SCHEMA_VERSION,
            generated_at_unix_ms: now_unix_ms(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            seed,
            config,
            input: None,
            output: None,
            packets_in: 0,
            packets_out: 0,
            stats: AttackStats::default(),
            flows: Vec::new(),
            flagged: Vec::new(),
            detector: None,
        }
    }

    /// Report for an offline engine run over `packets_in` input packets.
    pub fn from_run(run: &OfflineRun, packets_in: u64, config: serde_json::Value, seed: u64) -> Self {
        let mut r = RunReport::new(config, seed);
        r.packets_in = packets_in;
        r.packets_out = run.output.len() as u64;
        r.stats = run.stats.clone();
        r.flagged = run.flagged.clone();
        r.flows = flow_summaries(&run.stats, &run.flagged);
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn flow_summaries(stats: &AttackStats, flagged: &[FlaggedFlow]) -> Vec<FlowSummary> {
    stats
        .flows
        .iter()
        .map(|(flow, c)| {
            let flagged_at_us = flagged.iter().find(|f| f.flow == *flow || f.flow == flow.canonical()).map(|f| f.flagged_at_us);
            FlowSummary {
                flow: *flow,
                packets_in: c.packets_in,
                packets_dropped: c.packets_dropped,
                packets_delayed: c.packets_delayed,
                stun_packets: c.stun,
                dtls_packets: c.dtls,
                rtp_packets: c.rtp,
                other_packets: c.other,
                webrtc_flagged: flagged_at_us.is_some(),
                flagged_at_us,
            }
        })
        .collect()
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let mut s = report.to_json();
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    RunReport::from_json(&fs::read_to_string(path)?)
}
