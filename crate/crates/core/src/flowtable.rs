//! The censor's per-flow memory.
//!
//! Each flow holds a constant-size [`FlowState`]: the WebRTC flag, a fixed
//! table of per-SSRC frame trackers with their drop bits, and a handful of
//! seeded random streams. The table itself is capacity-bounded with
//! least-recently-active eviction, enforced independently in each partition
//! so that partitions can be processed by separate workers with identical
//! results.

use std::collections::{BTreeMap, HashMap, VecDeque};

use arrayvec::ArrayVec;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::dtls::{CertificateInfo, Reassembler, DEFAULT_REASSEMBLY_LIMIT};
use crate::packet::{FlowKey, Timestamp};
use crate::rtp::FrameTracker;

pub const MAX_SSRC_SLOTS: usize = 8;
pub const MAX_RANDOM_STREAMS: usize = 4;
pub const DEFAULT_STATE_BOUND: usize = 256;
const RECENTLY_EVICTED: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsrcSlot {
    pub ssrc: u32,
    pub tracker: FrameTracker,
    pub drop_current_frame: bool,
    /// The current frame began before this slot existed (state was evicted
    /// mid-frame); its remaining packets pass.
    pub fail_open: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub webrtc_flagged: bool,
    pub flagged_at: Option<Timestamp>,
    /// Least recently seen first.
    slots: ArrayVec<SsrcSlot, MAX_SSRC_SLOTS>,
    slot_capacity: u8,
    /// (ssrc, rtp timestamp) of the last slot evicted while its frame was open.
    evicted_mid_frame: Option<(u32, u32)>,
    /// Created again after the whole flow state had been evicted.
    resumed: bool,
    rngs: ArrayVec<SplitMix64, MAX_RANDOM_STREAMS>,
}

/// Outcome of [`FlowState::slot_for`].
pub struct SlotRef<'a> {
    pub slot: &'a mut SsrcSlot,
    /// The slot was created by this call.
    pub created: bool,
    /// Another SSRC's slot was evicted to make room.
    pub evicted_other: bool,
}

impl FlowState {
    pub fn new(slot_capacity: usize, stream_seeds: &[u64], flow_hash: u64) -> Self {
        assert!(slot_capacity >= 1 && slot_capacity <= MAX_SSRC_SLOTS, "ssrc slot capacity out of range");
        assert!(stream_seeds.len() <= MAX_RANDOM_STREAMS, "too many random streams");
        FlowState {
            webrtc_flagged: false,
            flagged_at: None,
            slots: ArrayVec::new(),
            slot_capacity: slot_capacity as u8,
            evicted_mid_frame: None,
            resumed: false,
            rngs: stream_seeds.iter().map(|s| SplitMix64::seed_from_u64(s ^ flow_hash)).collect(),
        }
    }

    pub fn is_resumed(&self) -> bool {
        self.resumed
    }

    pub fn slots(&self) -> &[SsrcSlot] {
        &self.slots
    }

    pub fn slot(&self, ssrc: u32) -> Option<&SsrcSlot> {
        self.slots.iter().find(|s| s.ssrc == ssrc)
    }

    /// Random stream `index` (one per randomized policy).
    pub fn rng(&mut self, index: usize) -> &mut SplitMix64 {
        &mut self.rngs[index]
    }

    /// Set the flag; the first observation's timestamp is kept.
    pub fn flag(&mut self, now: Timestamp) {
        if !self.webrtc_flagged {
            self.webrtc_flagged = true;
            self.flagged_at = Some(now);
        }
    }

    /// Slot for `ssrc`, created on first sight. When full, the
    /// least-recently-seen slot is evicted.
    pub fn slot_for(&mut self, ssrc: u32, rtp_timestamp: u32) -> SlotRef<'_> {
        let (i, created, evicted_other) = self.slot_index(ssrc, rtp_timestamp);
        SlotRef { slot: &mut self.slots[i], created, evicted_other }
    }

    /// [`slot_for`](Self::slot_for) together with random stream `rng_index`.
    pub fn slot_and_rng(&mut self, ssrc: u32, rtp_timestamp: u32, rng_index: usize) -> (SlotRef<'_>, &mut SplitMix64) {
        let (i, created, evicted_other) = self.slot_index(ssrc, rtp_timestamp);
        (SlotRef { slot: &mut self.slots[i], created, evicted_other }, &mut self.rngs[rng_index])
    }

    fn slot_index(&mut self, ssrc: u32, rtp_timestamp: u32) -> (usize, bool, bool) {
        if let Some(i) = self.slots.iter().position(|s| s.ssrc == ssrc) {
            self.slots[i..].rotate_left(1);
            return (self.slots.len() - 1, false, false);
        }
        let mut evicted_other = false;
        if self.slots.len() >= usize::from(self.slot_capacity) {
            let old = self.slots.remove(0);
            if old.tracker.started && !old.tracker.saw_marker_last {
                self.evicted_mid_frame = Some((old.ssrc, old.tracker.last_timestamp));
            }
            evicted_other = true;
        }
        let slot_was_evicted = self.evicted_mid_frame == Some((ssrc, rtp_timestamp));
        if slot_was_evicted {
            self.evicted_mid_frame = None;
        }
        // a resumed flow cannot tell which of its frames were already open
        let fail_open = self.resumed || slot_was_evicted;
        self.slots.push(SsrcSlot { ssrc, tracker: FrameTracker::default(), drop_current_frame: false, fail_open });
        (self.slots.len() - 1, true, evicted_other)
    }

    /// Size of the state in its binary serialized form.
    pub fn serialized_len(&self) -> usize {
        bincode::serialized_size(self).expect("flow state serializes") as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    /// Each direction has its own state.
    #[default]
    Directional,
    /// Both directions share one state.
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    #[default]
    Exact,
    Substring,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IssuerMatch {
    pub pattern: String,
    #[serde(default)]
    pub mode: MatchMode,
}

impl Default for IssuerMatch {
    fn default() -> Self {
        IssuerMatch { pattern: "WebRTC".to_owned(), mode: MatchMode::Exact }
    }
}

impl IssuerMatch {
    pub fn matches(&self, issuer: &str) -> bool {
        match self.mode {
            MatchMode::Exact => issuer == self.pattern,
            MatchMode::Substring => issuer.contains(&self.pattern),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowTableConfig {
    /// Total flow capacity, split evenly across partitions.
    pub capacity: usize,
    pub partitions: usize,
    pub ssrc_slots: usize,
    pub key_mode: KeyMode,
    /// Upper bound asserted on every per-flow state, in serialized bytes.
    pub state_bound: usize,
    pub reassembly_limit: usize,
}

impl Default for FlowTableConfig {
    fn default() -> Self {
        FlowTableConfig {
            capacity: 65_536,
            partitions: 16,
            ssrc_slots: MAX_SSRC_SLOTS,
            key_mode: KeyMode::Directional,
            state_bound: DEFAULT_STATE_BOUND,
            reassembly_limit: DEFAULT_REASSEMBLY_LIMIT,
        }
    }
}

impl FlowTableConfig {
    pub fn partition_capacity(&self) -> usize {
        self.capacity.div_ceil(self.partitions.max(1)).max(1)
    }
}

#[derive(Debug)]
struct Entry {
    state: FlowState,
    touched: u64,
    handshake: Option<Box<Reassembler>>,
}

#[derive(Debug, Default)]
struct Partition {
    map: HashMap<FlowKey, Entry>,
    lru: BTreeMap<u64, FlowKey>,
    clock: u64,
    recently_evicted: VecDeque<FlowKey>,
    evictions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlaggedFlow {
    pub flow: FlowKey,
    pub flagged_at_us: u64,
}

#[derive(Debug)]
pub struct FlowTable {
    cfg: FlowTableConfig,
    stream_seeds: Vec<u64>,
    parts: Vec<Partition>,
    max_state_bytes: usize,
    bound_violations: u64,
}

impl FlowTable {
    pub fn new(cfg: FlowTableConfig, stream_seeds: Vec<u64>) -> Self {
        assert!(cfg.partitions >= 1, "at least one partition");
        let parts = (0..cfg.partitions).map(|_| Partition::default()).collect();
        FlowTable { cfg, stream_seeds, parts, max_state_bytes: 0, bound_violations: 0 }
    }

    pub fn config(&self) -> &FlowTableConfig {
        &self.cfg
    }

    pub fn key_for(&self, flow: &FlowKey) -> FlowKey {
        match self.cfg.key_mode {
            KeyMode::Directional => *flow,
            KeyMode::Bidirectional => flow.canonical(),
        }
    }

    /// Partition of a flow; both directions always land in the same one.
    pub fn partition_of(&self, flow: &FlowKey) -> usize {
        (flow.canonical().stable_hash() % self.cfg.partitions as u64) as usize
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|p| p.map.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evictions(&self) -> u64 {
        self.parts.iter().map(|p| p.evictions).sum()
    }

    /// Current state without touching recency.
    pub fn lookup(&self, flow: &FlowKey) -> Option<&FlowState> {
        let key = self.key_for(flow);
        self.parts[self.partition_of(&key)].map.get(&key).map(|e| &e.state)
    }

    fn entry(&mut self, flow: &FlowKey) -> &mut Entry {
        let key = self.key_for(flow);
        let p = self.partition_of(&key);
        let cap = self.cfg.partition_capacity();
        let part = &mut self.parts[p];
        part.clock += 1;
        let clock = part.clock;
        if part.map.contains_key(&key) {
            let e = part.map.get_mut(&key).expect("present");
            part.lru.remove(&e.touched);
            e.touched = clock;
            part.lru.insert(clock, key);
            return e;
        }
        if part.map.len() >= cap {
            if let Some((_, victim)) = part.lru.pop_first() {
                part.map.remove(&victim);
                part.evictions += 1;
                if part.recently_evicted.len() == RECENTLY_EVICTED {
                    part.recently_evicted.pop_front();
                }
                part.recently_evicted.push_back(victim);
            }
        }
        let mut state = FlowState::new(self.cfg.ssrc_slots, &self.stream_seeds, key.stable_hash());
        if let Some(i) = part.recently_evicted.iter().position(|k| *k == key) {
            part.recently_evicted.remove(i);
            state.resumed = true;
        }
        part.lru.insert(clock, key);
        part.map.entry(key).or_insert(Entry { state, touched: clock, handshake: None })
    }

    /// State for `flow`, created if absent. Marks the flow most recently active.
    pub fn get_or_insert(&mut self, flow: &FlowKey) -> &mut FlowState {
        &mut self.entry(flow).state
    }

    /// The flow's handshake reassembler, created if absent.
    pub fn reassembler(&mut self, flow: &FlowKey) -> &mut Reassembler {
        let limit = self.cfg.reassembly_limit;
        self.entry(flow).handshake.get_or_insert_with(|| Box::new(Reassembler::new(limit)))
    }

    /// Release a flow's reassembly buffer once its handshake has been read.
    pub fn release_reassembler(&mut self, flow: &FlowKey) {
        let key = self.key_for(flow);
        let p = self.partition_of(&key);
        if let Some(e) = self.parts[p].map.get_mut(&key) {
            e.handshake = None;
        }
    }

    /// Flag `flow` and its reverse when the issuer matches. Returns whether
    /// the issuer matched.
    pub fn observe_dtls(&mut self, flow: &FlowKey, issuer: &CertificateInfo, matcher: &IssuerMatch, now: Timestamp) -> bool {
        if !matcher.matches(&issuer.issuer_common_name) {
            return false;
        }
        self.get_or_insert(flow).flag(now);
        self.get_or_insert(&flow.reverse()).flag(now);
        true
    }

    /// Reset a flow's flag and frame state (the only way a flag clears).
    pub fn reset(&mut self, flow: &FlowKey) {
        let key = self.key_for(flow);
        let p = self.partition_of(&key);
        let fresh = FlowState::new(self.cfg.ssrc_slots, &self.stream_seeds, key.stable_hash());
        if let Some(e) = self.parts[p].map.get_mut(&key) {
            e.state = fresh;
        }
    }

    /// State-size accounting hook: measure `flow`'s state and remember the
    /// maximum seen. Returns the measured size.
    pub fn account(&mut self, flow: &FlowKey) -> usize {
        let size = self.lookup(flow).map_or(0, FlowState::serialized_len);
        self.max_state_bytes = self.max_state_bytes.max(size);
        if size > self.cfg.state_bound {
            self.bound_violations += 1;
        }
        size
    }

    pub fn max_state_bytes(&self) -> usize {
        self.max_state_bytes
    }

    pub fn bound_violations(&self) -> u64 {
        self.bound_violations
    }

    /// Flagged flows, sorted by key.
    pub fn flagged(&self) -> Vec<FlaggedFlow> {
        let mut out: Vec<FlaggedFlow> = self
            .parts
            .iter()
            .flat_map(|p| p.map.iter())
            .filter_map(|(k, e)| e.state.flagged_at.map(|t| FlaggedFlow { flow: *k, flagged_at_us: t.as_micros() }))
            .collect();
        out.sort_by_key(|f| f.flow);
        out
    }

    /// JSON debugging dump of flagged flows.
    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(&self.flagged()).expect("serializable")
    }
}
