//! Packet model, flow identity, verdicts, and first-byte demultiplexing.

use std::fmt;
use std::net::{IpAddr, SocketAddr};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::net::{self, LinkType};

/// Capture timestamp in microseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_micros(us: u64) -> Self {
        Timestamp(us)
    }

    pub fn from_parts(secs: u32, micros: u32) -> Self {
        Timestamp(u64::from(secs) * 1_000_000 + u64::from(micros))
    }

    pub fn from_secs_f64(secs: f64) -> Self {
        Timestamp((secs * 1e6).round().max(0.0) as u64)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn secs(self) -> u64 {
        self.0 / 1_000_000
    }

    pub fn subsec_micros(self) -> u32 {
        (self.0 % 1_000_000) as u32
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn plus_millis(self, ms: u64) -> Self {
        Timestamp(self.0 + ms * 1000)
    }

    pub fn plus_micros(self, us: u64) -> Self {
        Timestamp(self.0 + us)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:06}", self.secs(), self.subsec_micros())
    }
}

/// Directional UDP/TCP 4-tuple. `A->B` and `B->A` are distinct keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub src: SocketAddr,
    pub dst: SocketAddr,
}

impl FlowKey {
    pub fn new(src: SocketAddr, dst: SocketAddr) -> Self {
        FlowKey { src, dst }
    }

    pub fn reverse(&self) -> FlowKey {
        FlowKey { src: self.dst, dst: self.src }
    }

    /// Direction-agnostic representative: the smaller of `self` and its reverse.
    pub fn canonical(&self) -> FlowKey {
        let rev = self.reverse();
        if rev < *self {
            rev
        } else {
            *self
        }
    }

    /// Hash that is stable across runs, platforms, and toolchains (FNV-1a over
    /// the address and port bytes).
    pub fn stable_hash(&self) -> u64 {
        let mut h = Fnv64::new();
        for addr in [self.src, self.dst] {
            match addr.ip() {
                IpAddr::V4(v4) => {
                    h.write(&[4]);
                    h.write(&v4.octets());
                }
                IpAddr::V6(v6) => {
                    h.write(&[6]);
                    h.write(&v6.octets());
                }
            }
            h.write(&addr.port().to_be_bytes());
        }
        h.finish()
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.src, self.dst)
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid flow key {0:?}: expected <src addr:port>-><dst addr:port>")]
pub struct FlowKeyParseError(String);

impl FromStr for FlowKey {
    type Err = FlowKeyParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once("->").ok_or_else(|| FlowKeyParseError(s.to_owned()))?;
        let src = a.trim().parse().map_err(|_| FlowKeyParseError(s.to_owned()))?;
        let dst = b.trim().parse().map_err(|_| FlowKeyParseError(s.to_owned()))?;
        Ok(FlowKey { src, dst })
    }
}

impl Serialize for FlowKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FlowKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub(crate) struct Fnv64(u64);

impl Fnv64 {
    pub(crate) fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

/// Protocol class of a UDP payload, decided by its first byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemuxClass {
    Stun,
    Dtls,
    Rtp,
    Unknown,
}

/// Classify a co-located WebRTC UDP payload by its leading byte.
///
/// | first byte | class   |
/// |------------|---------|
/// | 0..=3      | Stun    |
/// | 20..=63    | Dtls    |
/// | 128..=191  | Rtp     |
/// | otherwise  | Unknown |
pub fn demux_first_byte(first_byte: u8) -> DemuxClass {
    match first_byte {
        0..=3 => DemuxClass::Stun,
        20..=63 => DemuxClass::Dtls,
        128..=191 => DemuxClass::Rtp,
        _ => DemuxClass::Unknown,
    }
}

pub fn demux_payload(payload: &[u8]) -> DemuxClass {
    payload.first().map_or(DemuxClass::Unknown, |b| demux_first_byte(*b))
}

/// Action taken by the censor on one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Drop,
    /// Hold the packet for the given number of milliseconds (always > 0).
    Delay(u32),
}

impl Verdict {
    pub fn is_drop(&self) -> bool {
        matches!(self, Verdict::Drop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Udp,
    Tcp,
    /// IP packet with some other protocol number, or an IP fragment.
    OtherIp(u8),
    /// Not IP, or headers too damaged to decode.
    Opaque,
}

/// One captured packet. The link-layer frame is kept verbatim so that
/// pass-through output is byte-identical to the input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub timestamp: Timestamp,
    pub original_index: u64,
    pub flow: Option<FlowKey>,
    pub transport: Transport,
    /// Original on-the-wire length from the capture record.
    pub orig_len: u32,
    wire: Vec<u8>,
    payload: Range<usize>,
}

impl Packet {
    /// Decode a captured frame. Frames whose IP/UDP headers do not parse are
    /// kept as opaque packets without a flow.
    pub fn from_wire(link: LinkType, timestamp: Timestamp, original_index: u64, wire: Vec<u8>, orig_len: u32) -> Packet {
        let (flow, transport, payload) = match net::decode_frame(link, &wire) {
            Ok(d) => (d.flow, d.transport, d.payload),
            Err(_) => (None, Transport::Opaque, wire.len()..wire.len()),
        };
        Packet { timestamp, original_index, flow, transport, orig_len, wire, payload }
    }

    /// Build a UDP packet with synthesized Ethernet/IP/UDP headers.
    pub fn udp(link: LinkType, timestamp: Timestamp, flow: FlowKey, payload: &[u8]) -> Packet {
        let (wire, range) = net::encode_udp(link, &flow, payload);
        Packet {
            timestamp,
            original_index: 0,
            flow: Some(flow),
            transport: Transport::Udp,
            orig_len: wire.len() as u32,
            wire,
            payload: range,
        }
    }

    /// Build a TCP segment (flags PSH|ACK) carrying `payload`.
    pub fn tcp(link: LinkType, timestamp: Timestamp, flow: FlowKey, seq: u32, payload: &[u8]) -> Packet {
        let (wire, range) = net::encode_tcp(link, &flow, seq, payload);
        Packet {
            timestamp,
            original_index: 0,
            flow: Some(flow),
            transport: Transport::Tcp,
            orig_len: wire.len() as u32,
            wire,
            payload: range,
        }
    }

    /// Transport payload (UDP payload for UDP packets).
    pub fn payload(&self) -> &[u8] {
        &self.wire[self.payload.clone()]
    }

    pub fn wire(&self) -> &[u8] {
        &self.wire
    }

    pub fn is_udp(&self) -> bool {
        self.transport == Transport::Udp
    }

    /// Demux class of the UDP payload; non-UDP packets are `Unknown`.
    pub fn demux(&self) -> DemuxClass {
        if self.is_udp() {
            demux_payload(self.payload())
        } else {
            DemuxClass::Unknown
        }
    }
}
