//! Ethernet / IPv4 / IPv6 / UDP / TCP header decoding and synthesis.
//!
//! Only what the capture engine needs: locate the transport payload and the
//! 4-tuple. No defragmentation and no checksum validation.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr, SocketAddr};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::packet::{FlowKey, Transport};

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_IPV6: u16 = 0x86dd;
const ETHERTYPE_VLAN: u16 = 0x8100;
const PROTO_TCP: u8 = 6;
const PROTO_UDP: u8 = 17;
const ETH_HEADER_LEN: usize = 14;
const UDP_HEADER_LEN: usize = 8;
const TCP_HEADER_LEN: usize = 20;

/// Link-layer type of a capture (classic capture link-type numbers).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkType {
    Ethernet,
    RawIp,
}

impl LinkType {
    pub fn code(self) -> u32 {
        match self {
            LinkType::Ethernet => 1,
            LinkType::RawIp => 101,
        }
    }

    pub fn from_code(code: u32) -> Option<LinkType> {
        match code {
            1 => Some(LinkType::Ethernet),
            101 => Some(LinkType::RawIp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum HeaderError {
    #[error("truncated {layer} header at offset {offset}")]
    Truncated { layer: &'static str, offset: usize },
    #[error("unsupported ethertype {ethertype:#06x} at offset {offset}")]
    UnsupportedEthertype { ethertype: u16, offset: usize },
    #[error("bad IP version {version} at offset {offset}")]
    BadIpVersion { version: u8, offset: usize },
    #[error("bad {layer} length field at offset {offset}")]
    BadLength { layer: &'static str, offset: usize },
    #[error("not a UDP packet")]
    NotUdp,
}

impl HeaderError {
    pub fn offset(&self) -> Option<usize> {
        match *self {
            HeaderError::Truncated { offset, .. }
            | HeaderError::UnsupportedEthertype { offset, .. }
            | HeaderError::BadIpVersion { offset, .. }
            | HeaderError::BadLength { offset, .. } => Some(offset),
            HeaderError::NotUdp => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub flow: Option<FlowKey>,
    pub transport: Transport,
    pub payload: Range<usize>,
}

fn be16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

/// Decode a link-layer frame down to its transport payload.
pub fn decode_frame(link: LinkType, frame: &[u8]) -> Result<Decoded, HeaderError> {
    match link {
        LinkType::RawIp => decode_ip(frame, 0),
        LinkType::Ethernet => {
            if frame.len() < ETH_HEADER_LEN {
                return Err(HeaderError::Truncated { layer: "ethernet", offset: 0 });
            }
            let mut at = 12;
            let mut ethertype = be16(frame, at);
            while ethertype == ETHERTYPE_VLAN {
                at += 4;
                if frame.len() < at + 2 {
                    return Err(HeaderError::Truncated { layer: "vlan", offset: at - 4 });
                }
                ethertype = be16(frame, at);
            }
            let ip_at = at + 2;
            match ethertype {
                ETHERTYPE_IPV4 | ETHERTYPE_IPV6 => decode_ip(frame, ip_at),
                other => Err(HeaderError::UnsupportedEthertype { ethertype: other, offset: at }),
            }
        }
    }
}

fn decode_ip(frame: &[u8], at: usize) -> Result<Decoded, HeaderError> {
    let first = *frame.get(at).ok_or(HeaderError::Truncated { layer: "ip", offset: at })?;
    match first >> 4 {
        4 => {
            if frame.len() < at + 20 {
                return Err(HeaderError::Truncated { layer: "ipv4", offset: at });
            }
            let ihl = usize::from(first & 0x0f) * 4;
            let total = usize::from(be16(frame, at + 2));
            if ihl < 20 || total < ihl {
                return Err(HeaderError::BadLength { layer: "ipv4", offset: at });
            }
            if frame.len() < at + ihl {
                return Err(HeaderError::Truncated { layer: "ipv4", offset: at });
            }
            // snaplen may cut the datagram short; Ethernet padding may extend it
            let end = (at + total).min(frame.len());
            let frag = be16(frame, at + 6);
            let proto = frame[at + 9];
            let src = IpAddr::V4(Ipv4Addr::new(frame[at + 12], frame[at + 13], frame[at + 14], frame[at + 15]));
            let dst = IpAddr::V4(Ipv4Addr::new(frame[at + 16], frame[at + 17], frame[at + 18], frame[at + 19]));
            let more_fragments = frag & 0x2000 != 0;
            let offset = frag & 0x1fff;
            if more_fragments || offset != 0 {
                return Ok(Decoded { flow: None, transport: Transport::OtherIp(proto), payload: at + ihl..end });
            }
            decode_transport(frame, proto, src, dst, at + ihl, end)
        }
        6 => {
            if frame.len() < at + 40 {
                return Err(HeaderError::Truncated { layer: "ipv6", offset: at });
            }
            let plen = usize::from(be16(frame, at + 4));
            let next = frame[at + 6];
            let mut s = [0u8; 16];
            let mut d = [0u8; 16];
            s.copy_from_slice(&frame[at + 8..at + 24]);
            d.copy_from_slice(&frame[at + 24..at + 40]);
            let end = (at + 40 + plen).min(frame.len());
            decode_transport(frame, next, IpAddr::V6(Ipv6Addr::from(s)), IpAddr::V6(Ipv6Addr::from(d)), at + 40, end)
        }
        version => Err(HeaderError::BadIpVersion { version, offset: at }),
    }
}

fn decode_transport(frame: &[u8], proto: u8, src: IpAddr, dst: IpAddr, at: usize, end: usize) -> Result<Decoded, HeaderError> {
    match proto {
        PROTO_UDP => {
            if end < at + UDP_HEADER_LEN {
                return Err(HeaderError::Truncated { layer: "udp", offset: at });
            }
            let sport = be16(frame, at);
            let dport = be16(frame, at + 2);
            let ulen = usize::from(be16(frame, at + 4));
            if ulen < UDP_HEADER_LEN {
                return Err(HeaderError::BadLength { layer: "udp", offset: at + 4 });
            }
            let pend = (at + ulen).min(end);
            Ok(Decoded {
                flow: Some(FlowKey::new(SocketAddr::new(src, sport), SocketAddr::new(dst, dport))),
                transport: Transport::Udp,
                payload: at + UDP_HEADER_LEN..pend,
            })
        }
        PROTO_TCP => {
            if end < at + TCP_HEADER_LEN {
                return Err(HeaderError::Truncated { layer: "tcp", offset: at });
            }
            let sport = be16(frame, at);
            let dport = be16(frame, at + 2);
            let doff = usize::from(frame[at + 12] >> 4) * 4;
            if doff < TCP_HEADER_LEN || at + doff > end {
                return Err(HeaderError::BadLength { layer: "tcp", offset: at + 12 });
            }
            Ok(Decoded {
                flow: Some(FlowKey::new(SocketAddr::new(src, sport), SocketAddr::new(dst, dport))),
                transport: Transport::Tcp,
                payload: at + doff..end,
            })
        }
        other => Ok(Decoded { flow: None, transport: Transport::OtherIp(other), payload: at..end }),
    }
}

/// The directional 4-tuple of a UDP packet starting at its IP header.
pub fn flow_key_of(ip_packet: &[u8]) -> Result<FlowKey, HeaderError> {
    let d = decode_ip(ip_packet, 0)?;
    match (d.transport, d.flow) {
        (Transport::Udp, Some(flow)) => Ok(flow),
        _ => Err(HeaderError::NotUdp),
    }
}

const SRC_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x01];
const DST_MAC: [u8; 6] = [0x02, 0x00, 0x00, 0x00, 0x00, 0x02];

fn checksum_add(mut sum: u32, bytes: &[u8]) -> u32 {
    let mut chunks = bytes.chunks_exact(2);
    for c in &mut chunks {
        sum += u32::from(u16::from_be_bytes([c[0], c[1]]));
    }
    if let [last] = chunks.remainder() {
        sum += u32::from(*last) << 8;
    }
    sum
}

fn checksum_fold(mut sum: u32) -> u16 {
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

fn pseudo_header_sum(flow: &FlowKey, proto: u8, len: usize) -> u32 {
    let mut sum = 0;
    for ip in [flow.src.ip(), flow.dst.ip()] {
        sum = match ip {
            IpAddr::V4(v4) => checksum_add(sum, &v4.octets()),
            IpAddr::V6(v6) => checksum_add(sum, &v6.octets()),
        };
    }
    sum + u32::from(proto) + len as u32
}

/// Build link + IP headers around an already-encoded transport segment.
fn encode_ip(link: LinkType, flow: &FlowKey, proto: u8, segment: &[u8]) -> (Vec<u8>, usize) {
    let mut out = Vec::with_capacity(ETH_HEADER_LEN + 40 + segment.len());
    let v6 = flow.src.is_ipv6() || flow.dst.is_ipv6();
    if link == LinkType::Ethernet {
        out.extend_from_slice(&DST_MAC);
        out.extend_from_slice(&SRC_MAC);
        out.extend_from_slice(&if v6 { ETHERTYPE_IPV6 } else { ETHERTYPE_IPV4 }.to_be_bytes());
    }
    let ip_at = out.len();
    match (flow.src.ip(), flow.dst.ip()) {
        (IpAddr::V4(s), IpAddr::V4(d)) => {
            let total = (20 + segment.len()) as u16;
            out.extend_from_slice(&[0x45, 0x00]);
            out.extend_from_slice(&total.to_be_bytes());
            out.extend_from_slice(&[0, 0, 0x40, 0x00, 64, proto, 0, 0]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
            let csum = checksum_fold(checksum_add(0, &out[ip_at..ip_at + 20]));
            out[ip_at + 10..ip_at + 12].copy_from_slice(&csum.to_be_bytes());
        }
        (s, d) => {
            let s = to_v6(s);
            let d = to_v6(d);
            out.extend_from_slice(&[0x60, 0, 0, 0]);
            out.extend_from_slice(&(segment.len() as u16).to_be_bytes());
            out.extend_from_slice(&[proto, 64]);
            out.extend_from_slice(&s.octets());
            out.extend_from_slice(&d.octets());
        }
    }
    let seg_at = out.len();
    out.extend_from_slice(segment);
    (out, seg_at)
}

fn to_v6(ip: IpAddr) -> Ipv6Addr {
    match ip {
        IpAddr::V4(v4) => v4.to_ipv6_mapped(),
        IpAddr::V6(v6) => v6,
    }
}

/// Encode a UDP datagram; returns the frame and the payload range inside it.
pub fn encode_udp(link: LinkType, flow: &FlowKey, payload: &[u8]) -> (Vec<u8>, Range<usize>) {
    let len = UDP_HEADER_LEN + payload.len();
    let mut seg = Vec::with_capacity(len);
    seg.extend_from_slice(&flow.src.port().to_be_bytes());
    seg.extend_from_slice(&flow.dst.port().to_be_bytes());
    seg.extend_from_slice(&(len as u16).to_be_bytes());
    seg.extend_from_slice(&[0, 0]);
    seg.extend_from_slice(payload);
    let sum = checksum_add(pseudo_header_sum(flow, PROTO_UDP, len), &seg);
    let csum = match checksum_fold(sum) {
        0 => 0xffff,
        c => c,
    };
    seg[6..8].copy_from_slice(&csum.to_be_bytes());
    let (frame, at) = encode_ip(link, flow, PROTO_UDP, &seg);
    let start = at + UDP_HEADER_LEN;
    let end = frame.len();
    (frame, start..end)
}

pub fn encode_tcp(link: LinkType, flow: &FlowKey, seq: u32, payload: &[u8]) -> (Vec<u8>, Range<usize>) {
    let len = TCP_HEADER_LEN + payload.len();
    let mut seg = Vec::with_capacity(len);
    seg.extend_from_slice(&flow.src.port().to_be_bytes());
    seg.extend_from_slice(&flow.dst.port().to_be_bytes());
    seg.extend_from_slice(&seq.to_be_bytes());
    seg.extend_from_slice(&[0, 0, 0, 0]);
    seg.extend_from_slice(&[0x50, 0x18, 0xff, 0xff, 0, 0, 0, 0]);
    seg.extend_from_slice(payload);
    let csum = checksum_fold(checksum_add(pseudo_header_sum(flow, PROTO_TCP, len), &seg));
    seg[16..18].copy_from_slice(&csum.to_be_bytes());
    let (frame, at) = encode_ip(link, flow, PROTO_TCP, &seg);
    let start = at + TCP_HEADER_LEN;
    let end = frame.len();
    (frame, start..end)
}
