//! Per-flow capture summary: traffic class mix, WebRTC flag, certificate
//! issuer, and RTP streams.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::attack::{Censor, CensorConfig};
use crate::detect::{frame_series, DetectConfig};
use crate::dtls::IssuerSource;
use crate::packet::{DemuxClass, FlowKey};
use crate::rtp::parse_rtp;

use super::Trace;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtpStreamSummary {
    pub ssrc: u32,
    pub payload_types: BTreeSet<u8>,
    pub packets: u64,
    /// Completed video frames; zero for non-video payload types.
    pub frames: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InspectedFlow {
    pub flow: FlowKey,
    pub udp: bool,
    pub packets: u64,
    pub bytes: u64,
    pub stun_packets: u64,
    pub dtls_packets: u64,
    pub rtp_packets: u64,
    pub other_packets: u64,
    pub webrtc_flagged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer: Option<String>,
    /// "parsed" or "scanned".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issuer_source: Option<String>,
    pub rtp_streams: Vec<RtpStreamSummary>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct InspectReport {
    pub packets: u64,
    pub flows: Vec<InspectedFlow>,
}

/// Summarize every flow in `trace`. Flags come from a policy-free censor
/// using `censor`'s issuer matcher and table settings.
pub fn inspect(trace: &Trace, censor: &CensorConfig) -> InspectReport {
    let mut c = Censor::new(censor).record_issuers();
    let mut flows: BTreeMap<FlowKey, InspectedFlow> = BTreeMap::new();
    let mut streams: BTreeMap<(FlowKey, u32), RtpStreamSummary> = BTreeMap::new();
    for p in &trace.packets {
        c.process(p);
        let Some(key) = p.flow else { continue };
        let f = flows.entry(key).or_insert_with(|| InspectedFlow {
            flow: key,
            udp: p.is_udp(),
            packets: 0,
            bytes: 0,
            stun_packets: 0,
            dtls_packets: 0,
            rtp_packets: 0,
            other_packets: 0,
            webrtc_flagged: false,
            issuer: None,
            issuer_source: None,
            rtp_streams: Vec::new(),
        });
        f.packets += 1;
        f.bytes += p.payload().len() as u64;
        let class = if p.is_udp() { p.demux() } else { DemuxClass::Unknown };
        match class {
            DemuxClass::Stun => f.stun_packets += 1,
            DemuxClass::Dtls => f.dtls_packets += 1,
            DemuxClass::Rtp => {
                f.rtp_packets += 1;
                if let Ok(h) = parse_rtp(p.payload()) {
                    let s = streams.entry((key, h.ssrc)).or_insert_with(|| RtpStreamSummary {
                        ssrc: h.ssrc,
                        payload_types: BTreeSet::new(),
                        packets: 0,
                        frames: 0,
                    });
                    s.packets += 1;
                    s.payload_types.insert(h.payload_type);
                }
            }
            DemuxClass::Unknown => f.other_packets += 1,
        }
    }

    let flagged: BTreeSet<FlowKey> = c.flagged().into_iter().map(|f| f.flow).collect();
    if let Some(issuers) = c.issuers() {
        for (key, info) in issuers {
            if let Some(f) = flows.get_mut(key) {
                f.issuer = Some(info.issuer_common_name.clone());
                f.issuer_source = Some(
                    match info.source {
                        IssuerSource::Parsed => "parsed",
                        IssuerSource::Scanned => "scanned",
                    }
                    .to_owned(),
                );
            }
        }
    }
    let detect = DetectConfig { pt_set: censor_pt_set(censor), ..DetectConfig::default() };
    for s in frame_series(trace, &detect, None).streams {
        if let Some(e) = streams.get_mut(&(s.flow, s.ssrc)) {
            e.frames = s.frame_bytes.len() as u64;
        }
    }
    for ((key, _), s) in streams {
        if let Some(f) = flows.get_mut(&key) {
            f.rtp_streams.push(s);
        }
    }
    for f in flows.values_mut() {
        f.webrtc_flagged = flagged.contains(&f.flow);
    }
    InspectReport { packets: trace.len() as u64, flows: flows.into_values().collect() }
}

fn censor_pt_set(cfg: &CensorConfig) -> crate::rtp::VideoPtSet {
    cfg.policies
        .iter()
        .flat_map(|p| p.flatten())
        .find_map(|p| match p {
            crate::attack::PolicyConfig::FrameDrop(f) => Some(f.pt_set.clone()),
            _ => None,
        })
        .unwrap_or_default()
}
