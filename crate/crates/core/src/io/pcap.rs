//! Classic capture-file format (microsecond timestamps).

use std::fs;
use std::path::Path;

use crate::net::LinkType;
use crate::packet::{Packet, Timestamp};

pub const MAGIC: u32 = 0xa1b2_c3d4;
const FILE_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const DEFAULT_SNAPLEN: u32 = 65_535;

#[derive(Debug, thiserror::Error)]
pub enum CaptureError {
    #[error("unsupported capture format (magic {0:#010x})")]
    UnsupportedFormat(u32),
    #[error("truncated capture file header")]
    TruncatedHeader,
    #[error("unsupported link type {0}")]
    UnsupportedLinkType(u32),
    #[error("record {ordinal}: truncated packet record")]
    TruncatedRecord { ordinal: u64 },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// File header fields, kept so a rewrite reproduces the input bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptureHeader {
    /// Multi-byte fields are stored in the opposite byte order to the magic
    /// as written by this tool (big-endian).
    pub swapped: bool,
    pub version_major: u16,
    pub version_minor: u16,
    pub thiszone: i32,
    pub sigfigs: u32,
    pub snaplen: u32,
    pub link: LinkType,
}

impl CaptureHeader {
    pub fn new(link: LinkType) -> Self {
        CaptureHeader { swapped: false, version_major: 2, version_minor: 4, thiszone: 0, sigfigs: 0, snaplen: DEFAULT_SNAPLEN, link }
    }
}

/// An ordered packet list plus its capture metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub header: CaptureHeader,
    pub packets: Vec<Packet>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    swapped: bool,
}

impl Reader<'_> {
    fn u32(&mut self) -> Option<u32> {
        let b: [u8; 4] = self.buf.get(self.pos..self.pos + 4)?.try_into().ok()?;
        self.pos += 4;
        Some(if self.swapped { u32::from_be_bytes(b) } else { u32::from_le_bytes(b) })
    }

    fn u16(&mut self) -> Option<u16> {
        let b: [u8; 2] = self.buf.get(self.pos..self.pos + 2)?.try_into().ok()?;
        self.pos += 2;
        Some(if self.swapped { u16::from_be_bytes(b) } else { u16::from_le_bytes(b) })
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32, swapped: bool) {
    out.extend_from_slice(&if swapped { v.to_be_bytes() } else { v.to_le_bytes() });
}

fn put_u16(out: &mut Vec<u8>, v: u16, swapped: bool) {
    out.extend_from_slice(&if swapped { v.to_be_bytes() } else { v.to_le_bytes() });
}

impl Trace {
    pub fn new(link: LinkType) -> Self {
        Trace { header: CaptureHeader::new(link), packets: Vec::new() }
    }

    /// Wrap generated packets, numbering them in the given order.
    pub fn from_packets(link: LinkType, packets: Vec<Packet>) -> Self {
        let mut t = Trace { header: CaptureHeader::new(link), packets };
        for (i, p) in t.packets.iter_mut().enumerate() {
            p.original_index = i as u64;
        }
        t
    }

    pub fn link(&self) -> LinkType {
        self.header.link
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Stable sort by timestamp; ties keep capture order.
    pub fn normalize(&mut self) {
        self.packets.sort_by_key(|p| (p.timestamp, p.original_index));
    }

    pub fn is_normalized(&self) -> bool {
        self.packets.windows(2).all(|w| w[0].timestamp <= w[1].timestamp)
    }

    pub fn parse(bytes: &[u8]) -> Result<Trace, CaptureError> {
        if bytes.len() < FILE_HEADER_LEN {
            return Err(CaptureError::TruncatedHeader);
        }
        let magic_le = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
        let swapped = match magic_le {
            MAGIC => false,
            m if m.swap_bytes() == MAGIC => true,
            m => return Err(CaptureError::UnsupportedFormat(m)),
        };
        let mut r = Reader { buf: bytes, pos: 4, swapped };
        let version_major = r.u16().ok_or(CaptureError::TruncatedHeader)?;
        let version_minor = r.u16().ok_or(CaptureError::TruncatedHeader)?;
        let thiszone = r.u32().ok_or(CaptureError::TruncatedHeader)? as i32;
        let sigfigs = r.u32().ok_or(CaptureError::TruncatedHeader)?;
        let snaplen = r.u32().ok_or(CaptureError::TruncatedHeader)?;
        let link_code = r.u32().ok_or(CaptureError::TruncatedHeader)?;
        let link = LinkType::from_code(link_code).ok_or(CaptureError::UnsupportedLinkType(link_code))?;
        let header = CaptureHeader { swapped, version_major, version_minor, thiszone, sigfigs, snaplen, link };

        let mut packets = Vec::new();
        let mut ordinal = 0u64;
        while r.pos < bytes.len() {
            let truncated = CaptureError::TruncatedRecord { ordinal };
            if bytes.len() - r.pos < RECORD_HEADER_LEN {
                return Err(truncated);
            }
            let secs = r.u32().expect("length checked");
            let micros = r.u32().expect("length checked");
            let incl_len = r.u32().expect("length checked") as usize;
            let orig_len = r.u32().expect("length checked");
            let data = bytes.get(r.pos..r.pos + incl_len).ok_or(truncated)?;
            r.pos += incl_len;
            let ts = Timestamp::from_micros(u64::from(secs) * 1_000_000 + u64::from(micros));
            packets.push(Packet::from_wire(link, ts, ordinal, data.to_vec(), orig_len));
            ordinal += 1;
        }
        Ok(Trace { header, packets })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let s = h.swapped;
        let mut out = Vec::with_capacity(FILE_HEADER_LEN + self.packets.iter().map(|p| RECORD_HEADER_LEN + p.wire().len()).sum::<usize>());
        put_u32(&mut out, MAGIC, s);
        put_u16(&mut out, h.version_major, s);
        put_u16(&mut out, h.version_minor, s);
        put_u32(&mut out, h.thiszone as u32, s);
        put_u32(&mut out, h.sigfigs, s);
        put_u32(&mut out, h.snaplen, s);
        put_u32(&mut out, h.link.code(), s);
        for p in &self.packets {
            put_u32(&mut out, p.timestamp.secs() as u32, s);
            put_u32(&mut out, p.timestamp.subsec_micros(), s);
            put_u32(&mut out, p.wire().len() as u32, s);
            put_u32(&mut out, p.orig_len, s);
            out.extend_from_slice(p.wire());
        }
        out
    }
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<Trace, CaptureError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| CaptureError::Io { path: path.display().to_string(), source })?;
    Trace::parse(&bytes)
}

pub fn write_capture(trace: &Trace, path: impl AsRef<Path>) -> Result<(), CaptureError> {
    let path = path.as_ref();
    fs::write(path, trace.to_bytes()).map_err(|source| CaptureError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::FlowKey;

    fn sample(n: usize) -> Trace {
        let flow: FlowKey = "192.168.1.2:5004->192.168.1.3:5006".parse().unwrap();
        let pkts = (0..n)
            .map(|i| Packet::udp(LinkType::Ethernet, Timestamp::from_micros(1_000_000 + i as u64 * 10), flow, &[0x80, i as u8, 1, 2]))
            .collect();
        Trace::from_packets(LinkType::Ethernet, pkts)
    }

    #[test]
    fn round_trip_ten_packets() {
        let t = sample(10);
        let back = Trace::parse(&t.to_bytes()).unwrap();
        assert_eq!(back.len(), 10);
        for (a, b) in t.packets.iter().zip(&back.packets) {
            assert_eq!(a.payload(), b.payload());
            assert_eq!(a.flow, b.flow);
            assert_eq!(a.timestamp, b.timestamp);
        }
        assert_eq!(back.to_bytes(), t.to_bytes());
    }

    #[test]
    fn swapped_magic_reads_the_same() {
        let t = sample(3);
        let mut swapped = t.clone();
        swapped.header.swapped = true;
        let bytes = swapped.to_bytes();
        assert_eq!(&bytes[..4], &[0xa1, 0xb2, 0xc3, 0xd4]);
        let back = Trace::parse(&bytes).unwrap();
        assert!(back.header.swapped);
        assert_eq!(back.packets, t.packets);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_record_names_ordinal() {
        let bytes = sample(4).to_bytes();
        let cut = &bytes[..bytes.len() - 3];
        match Trace::parse(cut) {
            Err(CaptureError::TruncatedRecord { ordinal }) => assert_eq!(ordinal, 3),
            other => panic!("{other:?}"),
        }
        let cut = &bytes[..FILE_HEADER_LEN + 5];
        assert!(matches!(Trace::parse(cut), Err(CaptureError::TruncatedRecord { ordinal: 0 })));
    }

    #[test]
    fn rejects_bad_magic_and_link() {
        let mut bytes = sample(1).to_bytes();
        bytes[0] = 0x4d;
        assert!(matches!(Trace::parse(&bytes), Err(CaptureError::UnsupportedFormat(_))));
        let mut bytes = sample(1).to_bytes();
        bytes[20] = 228;
        assert!(matches!(Trace::parse(&bytes), Err(CaptureError::UnsupportedLinkType(228))));
        assert!(matches!(Trace::parse(&[0xd4, 0xc3]), Err(CaptureError::TruncatedHeader)));
    }

    #[test]
    fn empty_capture() {
        let t = Trace::new(LinkType::RawIp);
        let back = Trace::parse(&t.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.link(), LinkType::RawIp);
    }
}
