use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::config::{validate_chain, FixedDelay, FrameDrop, PolicyConfig, UniformPacketLoss};
use super::policy::{combine, decide_data_channel_block, decide_fixed_delay, decide_frame_drop, decide_uniform_loss, FrameOutcome, PacketView};
use super::stats::{AttackStats, PolicyStats};
use crate::dtls::{extract_issuer_with, CertificateInfo, DtlsError, IssuerOptions, MSG_CERTIFICATE};
use crate::error::ConfigError;
use crate::flowtable::{FlaggedFlow, FlowState, FlowTable, FlowTableConfig, IssuerMatch};
use crate::packet::{DemuxClass, FlowKey, Packet, Timestamp, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CensorConfig {
    #[serde(default)]
    pub policies: Vec<PolicyConfig>,
    /// Run seed, used by randomized policies without their own seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub table: FlowTableConfig,
}

impl CensorConfig {
    pub fn new(policies: Vec<PolicyConfig>, seed: u64) -> Self {
        CensorConfig { policies, seed, table: FlowTableConfig::default() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_chain(&self.policies)?;
        let t = &self.table;
        if t.capacity == 0 {
            return Err(ConfigError::new("table.capacity", "must be > 0"));
        }
        if t.partitions == 0 || t.partitions > t.capacity {
            return Err(ConfigError::new("table.partitions", "must be in 1..=capacity"));
        }
        if !(1..=crate::flowtable::MAX_SSRC_SLOTS).contains(&t.ssrc_slots) {
            return Err(ConfigError::new("table.ssrc_slots", format!("must be in 1..={}", crate::flowtable::MAX_SSRC_SLOTS)));
        }
        Ok(())
    }

    /// Issuer matcher used for flagging: the first data-channel-block
    /// policy's, or the default.
    pub fn issuer_match(&self) -> IssuerMatch {
        self.policies
            .iter()
            .flat_map(|p| p.flatten())
            .find_map(|p| match p {
                PolicyConfig::DataChannelBlock(c) => Some(c.issuer_match.clone()),
                _ => None,
            })
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
enum Leaf {
    DataChannelBlock,
    FrameDrop(FrameDrop, usize),
    UniformLoss(UniformPacketLoss, usize),
    FixedDelay(FixedDelay),
}

/// Stream seed for the `index`-th randomized policy. The first stream uses
/// the seed unchanged.
fn stream_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// The per-packet censor: DTLS inspection, flow state, and the policy chain.
#[derive(Debug)]
pub struct Censor {
    leaves: Vec<Leaf>,
    matcher: IssuerMatch,
    issuer_opts: IssuerOptions,
    table: FlowTable,
    flowless: FlowState,
    stats: AttackStats,
    issuers: Option<BTreeMap<FlowKey, CertificateInfo>>,
}

impl Censor {
    /// Build a censor. The configuration must already be valid.
    pub fn new(cfg: &CensorConfig) -> Self {
        let mut leaves = Vec::new();
        let mut seeds = Vec::new();
        let mut names = Vec::new();
        for p in cfg.policies.iter().flat_map(|p| p.flatten()) {
            names.push(p.name().to_owned());
            let leaf = match p {
                PolicyConfig::DataChannelBlock(_) => Leaf::DataChannelBlock,
                PolicyConfig::FrameDrop(c) => {
                    seeds.push(stream_seed(c.seed.unwrap_or(cfg.seed), seeds.len()));
                    Leaf::FrameDrop(c.clone(), seeds.len() - 1)
                }
                PolicyConfig::UniformPacketLoss(c) => {
                    seeds.push(stream_seed(c.seed.unwrap_or(cfg.seed), seeds.len()));
                    Leaf::UniformLoss(c.clone(), seeds.len() - 1)
                }
                PolicyConfig::FixedDelay(c) => Leaf::FixedDelay(c.clone()),
                PolicyConfig::Chain { .. } => unreachable!("flatten yields leaves"),
            };
            leaves.push(leaf);
        }
        let stats = AttackStats {
            policies: names.into_iter().map(|policy| PolicyStats { policy, ..Default::default() }).collect(),
            ..Default::default()
        };
        Censor {
            leaves,
            matcher: cfg.issuer_match(),
            issuer_opts: IssuerOptions::default(),
            flowless: FlowState::new(cfg.table.ssrc_slots, &seeds, 0),
            table: FlowTable::new(cfg.table.clone(), seeds),
            stats,
            issuers: None,
        }
    }

    /// Keep the first certificate issuer seen on each flow (for inspection
    /// reports; not part of the bounded censor state).
    pub fn record_issuers(mut self) -> Self {
        self.issuers = Some(BTreeMap::new());
        self
    }

    pub fn issuers(&self) -> Option<&BTreeMap<FlowKey, CertificateInfo>> {
        self.issuers.as_ref()
    }

    pub fn table(&self) -> &FlowTable {
        &self.table
    }

    pub fn stats(&self) -> &AttackStats {
        &self.stats
    }

    pub fn flagged(&self) -> Vec<FlaggedFlow> {
        self.table.flagged()
    }

    pub fn into_stats(self) -> AttackStats {
        self.stats
    }

    /// Decide one packet.
    pub fn process(&mut self, packet: &Packet) -> Verdict {
        let view = PacketView::new(packet);
        self.stats.packets_seen += 1;
        if view.parse_error {
            self.stats.parse_errors += 1;
        }
        if let (Some(flow), DemuxClass::Dtls) = (packet.flow, view.class) {
            self.inspect_dtls(&flow, &view, packet.timestamp);
        }
        let verdict = self.apply(&view);
        match verdict {
            Verdict::Pass => self.stats.packets_passed += 1,
            Verdict::Drop => self.stats.packets_dropped += 1,
            Verdict::Delay(_) => {
                self.stats.packets_passed += 1;
                self.stats.packets_delayed += 1;
            }
        }
        if let Some(flow) = packet.flow {
            let size = self.table.account(&flow);
            self.stats.max_flow_state_bytes = self.stats.max_flow_state_bytes.max(size as u64);
            self.stats.state_bound_violations = self.table.bound_violations();
            self.stats.flow_evictions = self.table.evictions();
            let fc = self.stats.flows.entry(flow).or_default();
            fc.packets_in += 1;
            fc.count_class(view.class);
            match verdict {
                Verdict::Drop => fc.packets_dropped += 1,
                Verdict::Delay(_) => fc.packets_delayed += 1,
                Verdict::Pass => {}
            }
        }
        verdict
    }

    fn inspect_dtls(&mut self, flow: &FlowKey, view: &PacketView<'_>, now: Timestamp) {
        let Some(records) = view.records.as_ref() else { return };
        if !records.iter().any(|r| r.content_type == crate::dtls::content_type::HANDSHAKE && r.epoch == 0) {
            return;
        }
        let already_flagged = self.table.lookup(flow).is_some_and(|s| s.webrtc_flagged);
        if already_flagged && self.issuers.is_none() {
            return;
        }
        let reassembler = self.table.reassembler(flow);
        if reassembler.is_failed() {
            return;
        }
        let mut messages = Vec::new();
        for r in records {
            match reassembler.push_record(r) {
                Ok(m) => messages.extend(m),
                Err(DtlsError::BufferExceeded { .. }) => {
                    self.stats.unparseable_handshakes += 1;
                    log::debug!("{flow}: handshake exceeds reassembly limit; flow left unflagged");
                    return;
                }
                Err(e) => {
                    self.stats.parse_errors += 1;
                    log::debug!("{flow}: {e}");
                    return;
                }
            }
        }
        for msg in messages.iter().filter(|m| m.msg_type == MSG_CERTIFICATE) {
            let Ok(info) = extract_issuer_with(msg, &self.issuer_opts) else {
                self.stats.parse_errors += 1;
                continue;
            };
            self.stats.certificates_seen += 1;
            if self.table.observe_dtls(flow, &info, &self.matcher, now) && !already_flagged {
                self.stats.webrtc_flags_set += 1;
            }
            self.table.release_reassembler(flow);
            if let Some(map) = self.issuers.as_mut() {
                map.entry(*flow).or_insert(info);
            }
        }
    }

    fn apply(&mut self, view: &PacketView<'_>) -> Verdict {
        if self.leaves.is_empty() {
            return Verdict::Pass;
        }
        let Censor { leaves, table, flowless, stats, .. } = self;
        let flow = view.packet.flow;
        let state = match flow {
            Some(f) => table.get_or_insert(&f),
            None => flowless,
        };
        let udp_flow = flow.filter(|_| view.packet.is_udp());
        let mut acc = Verdict::Pass;
        for (leaf, ps) in leaves.iter().zip(stats.policies.iter_mut()) {
            ps.packets_seen += 1;
            let v = match leaf {
                Leaf::DataChannelBlock => {
                    if udp_flow.is_none() {
                        Verdict::Pass
                    } else {
                        let is_ad = view.has_application_data();
                        let v = decide_data_channel_block(view, state);
                        if is_ad && state.webrtc_flagged {
                            ps.app_data_seen += 1;
                            if v.is_drop() {
                                ps.app_data_dropped += 1;
                            }
                        }
                        v
                    }
                }
                Leaf::FrameDrop(cfg, idx) => {
                    if udp_flow.is_none() {
                        Verdict::Pass
                    } else {
                        let d = decide_frame_drop(view, state, cfg, *idx);
                        if d.slot_evicted {
                            stats.ssrc_slot_evictions += 1;
                        }
                        match d.frame {
                            Some(FrameOutcome::Decided { dropped }) => {
                                ps.frames_seen += 1;
                                ps.frames_dropped += u64::from(dropped);
                                if let Some(f) = udp_flow {
                                    let pf = ps.per_flow.entry(f).or_default();
                                    pf.frames_seen += 1;
                                    pf.frames_dropped += u64::from(dropped);
                                }
                            }
                            Some(FrameOutcome::FailedOpen) => ps.frames_failed_open += 1,
                            None => {}
                        }
                        d.verdict
                    }
                }
                Leaf::UniformLoss(cfg, idx) => decide_uniform_loss(state.rng(*idx), cfg),
                Leaf::FixedDelay(cfg) => decide_fixed_delay(view.packet, cfg),
            };
            match v {
                Verdict::Drop => ps.packets_dropped += 1,
                Verdict::Delay(_) => ps.packets_delayed += 1,
                Verdict::Pass => {}
            }
            if let Some(f) = flow {
                let pf = ps.per_flow.entry(f).or_default();
                pf.packets_seen += 1;
                pf.packets_dropped += u64::from(v.is_drop());
            }
            acc = combine(acc, v);
            if acc.is_drop() {
                break;
            }
        }
        acc
    }
}
