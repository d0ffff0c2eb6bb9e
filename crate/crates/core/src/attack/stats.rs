use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::packet::{DemuxClass, FlowKey};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyFlowCounters {
    pub packets_seen: u64,
    pub packets_dropped: u64,
    pub frames_seen: u64,
    pub frames_dropped: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub policy: String,
    pub packets_seen: u64,
    pub packets_dropped: u64,
    pub packets_delayed: u64,
    /// Frames whose drop decision this policy made.
    pub frames_seen: u64,
    pub frames_dropped: u64,
    /// Frames passed without a decision because their start was not observed
    /// (state evicted mid-frame).
    pub frames_failed_open: u64,
    pub app_data_seen: u64,
    pub app_data_dropped: u64,
    pub per_flow: BTreeMap<FlowKey, PolicyFlowCounters>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounters {
    pub packets_in: u64,
    pub packets_dropped: u64,
    pub packets_delayed: u64,
    pub stun: u64,
    pub dtls: u64,
    pub rtp: u64,
    pub other: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackStats {
    pub packets_seen: u64,
    pub packets_passed: u64,
    pub packets_dropped: u64,
    pub packets_delayed: u64,
    /// WebRTC payloads that failed to parse and were passed (fail open).
    pub parse_errors: u64,
    /// Flows whose handshake exceeded the reassembly limit.
    pub unparseable_handshakes: u64,
    pub certificates_seen: u64,
    pub webrtc_flags_set: u64,
    pub ssrc_slot_evictions: u64,
    /// Flow states evicted from the flow table at capacity.
    pub flow_evictions: u64,
    /// Largest serialized per-flow state observed, in bytes.
    pub max_flow_state_bytes: u64,
    /// Times a per-flow state exceeded the configured bound.
    pub state_bound_violations: u64,
    pub policies: Vec<PolicyStats>,
    pub flows: BTreeMap<FlowKey, FlowCounters>,
}

impl FlowCounters {
    pub(crate) fn count_class(&mut self, class: DemuxClass) {
        match class {
            DemuxClass::Stun => self.stun += 1,
            DemuxClass::Dtls => self.dtls += 1,
            DemuxClass::Rtp => self.rtp += 1,
            DemuxClass::Unknown => self.other += 1,
        }
    }

    fn merge(&mut self, o: &FlowCounters) {
        self.packets_in += o.packets_in;
        self.packets_dropped += o.packets_dropped;
        self.packets_delayed += o.packets_delayed;
        self.stun += o.stun;
        self.dtls += o.dtls;
        self.rtp += o.rtp;
        self.other += o.other;
    }
}

impl PolicyFlowCounters {
    fn merge(&mut self, o: &PolicyFlowCounters) {
        self.packets_seen += o.packets_seen;
        self.packets_dropped += o.packets_dropped;
        self.frames_seen += o.frames_seen;
        self.frames_dropped += o.frames_dropped;
    }
}

impl PolicyStats {
    fn merge(&mut self, o: &PolicyStats) {
        self.packets_seen += o.packets_seen;
        self.packets_dropped += o.packets_dropped;
        self.packets_delayed += o.packets_delayed;
        self.frames_seen += o.frames_seen;
        self.frames_dropped += o.frames_dropped;
        self.frames_failed_open += o.frames_failed_open;
        self.app_data_seen += o.app_data_seen;
        self.app_data_dropped += o.app_data_dropped;
        for (k, v) in &o.per_flow {
            self.per_flow.entry(*k).or_default().merge(v);
        }
    }
}

impl AttackStats {
    /// Combine stats from independent shards of one run.
    pub fn merge(&mut self, o: &AttackStats) {
        self.packets_seen += o.packets_seen;
        self.packets_passed += o.packets_passed;
        self.packets_dropped += o.packets_dropped;
        self.packets_delayed += o.packets_delayed;
        self.parse_errors += o.parse_errors;
        self.unparseable_handshakes += o.unparseable_handshakes;
        self.certificates_seen += o.certificates_seen;
        self.webrtc_flags_set += o.webrtc_flags_set;
        self.ssrc_slot_evictions += o.ssrc_slot_evictions;
        self.flow_evictions += o.flow_evictions;
        self.max_flow_state_bytes = self.max_flow_state_bytes.max(o.max_flow_state_bytes);
        self.state_bound_violations += o.state_bound_violations;
        if self.policies.is_empty() {
            self.policies = o.policies.iter().map(|p| PolicyStats { policy: p.policy.clone(), ..Default::default() }).collect();
        }
        for (mine, theirs) in self.policies.iter_mut().zip(&o.policies) {
            mine.merge(theirs);
        }
        for (k, v) in &o.flows {
            self.flows.entry(*k).or_default().merge(v);
        }
    }

    pub fn frames_seen(&self) -> u64 {
        self.policies.iter().map(|p| p.frames_seen).sum()
    }

    pub fn frames_dropped(&self) -> u64 {
        self.policies.iter().map(|p| p.frames_dropped).sum()
    }
}
