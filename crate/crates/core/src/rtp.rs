//! RTP/SRTP header parsing and marker-bit frame segmentation.
//!
//! SRTP leaves the 12-byte RTP header in plaintext, so the marker bit,
//! payload type, timestamp, and SSRC are all visible to an on-path observer.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const RTP_FIXED_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RtpError {
    #[error("RTP packet truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("not RTP: version {0}")]
    BadVersion(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtpExtension {
    pub profile: u16,
    /// Length of the extension data in 32-bit words.
    pub length_words: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RtpHeader {
    pub version: u8,
    pub padding: bool,
    pub marker: bool,
    pub payload_type: u8,
    pub sequence_number: u16,
    pub timestamp: u32,
    pub ssrc: u32,
    pub csrcs: Vec<u32>,
    pub extension: Option<RtpExtension>,
    /// Bytes consumed by the fixed header, CSRCs, and extension.
    pub header_length: usize,
    pub payload_length: usize,
}

impl RtpHeader {
    /// A plain header (no CSRCs, no extension) for `payload_length` payload bytes.
    pub fn new(payload_type: u8, sequence_number: u16, timestamp: u32, ssrc: u32, marker: bool, payload_length: usize) -> Self {
        RtpHeader {
            version: 2,
            padding: false,
            marker,
            payload_type: payload_type & 0x7f,
            sequence_number,
            timestamp,
            ssrc,
            csrcs: Vec::new(),
            extension: None,
            header_length: RTP_FIXED_HEADER_LEN,
            payload_length,
        }
    }

    pub fn csrc_count(&self) -> u8 {
        self.csrcs.len() as u8
    }

    pub fn has_extension(&self) -> bool {
        self.extension.is_some()
    }

    fn computed_header_length(&self) -> usize {
        RTP_FIXED_HEADER_LEN + 4 * self.csrcs.len() + self.extension.map_or(0, |e| 4 + 4 * usize::from(e.length_words))
    }

    /// Write the header; extension data words are zero-filled.
    pub fn write(&self, out: &mut Vec<u8>) {
        let b0 = (self.version << 6) | (u8::from(self.padding) << 5) | (u8::from(self.extension.is_some()) << 4) | (self.csrc_count() & 0x0f);
        out.push(b0);
        out.push((u8::from(self.marker) << 7) | (self.payload_type & 0x7f));
        out.extend_from_slice(&self.sequence_number.to_be_bytes());
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.ssrc.to_be_bytes());
        for c in &self.csrcs {
            out.extend_from_slice(&c.to_be_bytes());
        }
        if let Some(ext) = self.extension {
            out.extend_from_slice(&ext.profile.to_be_bytes());
            out.extend_from_slice(&ext.length_words.to_be_bytes());
            out.resize(out.len() + 4 * usize::from(ext.length_words), 0);
        }
    }

    /// Header followed by `payload`; `payload_length` is taken from the slice.
    pub fn to_packet(&self, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.computed_header_length() + payload.len());
        self.write(&mut out);
        out.extend_from_slice(payload);
        out
    }
}

/// Decode the RTP header at the front of a UDP payload. The SRTP
/// authentication tag (if any) is counted as payload.
pub fn parse_rtp(payload: &[u8]) -> Result<RtpHeader, RtpError> {
    if payload.len() < RTP_FIXED_HEADER_LEN {
        return Err(RtpError::Truncated { needed: RTP_FIXED_HEADER_LEN, available: payload.len() });
    }
    let version = payload[0] >> 6;
    if version != 2 {
        return Err(RtpError::BadVersion(version));
    }
    let padding = payload[0] & 0x20 != 0;
    let has_ext = payload[0] & 0x10 != 0;
    let cc = usize::from(payload[0] & 0x0f);
    let mut at = RTP_FIXED_HEADER_LEN + 4 * cc;
    if payload.len() < at {
        return Err(RtpError::Truncated { needed: at, available: payload.len() });
    }
    let csrcs = payload[RTP_FIXED_HEADER_LEN..at]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let extension = if has_ext {
        if payload.len() < at + 4 {
            return Err(RtpError::Truncated { needed: at + 4, available: payload.len() });
        }
        let profile = u16::from_be_bytes([payload[at], payload[at + 1]]);
        let length_words = u16::from_be_bytes([payload[at + 2], payload[at + 3]]);
        at += 4 + 4 * usize::from(length_words);
        if payload.len() < at {
            return Err(RtpError::Truncated { needed: at, available: payload.len() });
        }
        Some(RtpExtension { profile, length_words })
    } else {
        None
    };
    Ok(RtpHeader {
        version,
        padding,
        marker: payload[1] & 0x80 != 0,
        payload_type: payload[1] & 0x7f,
        sequence_number: u16::from_be_bytes([payload[2], payload[3]]),
        timestamp: u32::from_be_bytes([payload[4], payload[5], payload[6], payload[7]]),
        ssrc: u32::from_be_bytes([payload[8], payload[9], payload[10], payload[11]]),
        csrcs,
        extension,
        header_length: at,
        payload_length: payload.len() - at,
    })
}

/// Set of 7-bit payload types treated as video. Stored as a 128-bit mask.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct VideoPtSet(u128);

impl VideoPtSet {
    pub const DEFAULT_TYPES: [u8; 2] = [102, 77];

    pub fn empty() -> Self {
        VideoPtSet(0)
    }

    pub fn from_types<I: IntoIterator<Item = u8>>(types: I) -> Self {
        let mut s = VideoPtSet::empty();
        for t in types {
            s.insert(t);
        }
        s
    }

    pub fn insert(&mut self, pt: u8) {
        self.0 |= 1u128 << (pt & 0x7f);
    }

    pub fn contains(&self, pt: u8) -> bool {
        pt < 128 && self.0 & (1u128 << pt) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn types(&self) -> Vec<u8> {
        (0..128u8).filter(|pt| self.contains(*pt)).collect()
    }
}

impl Default for VideoPtSet {
    fn default() -> Self {
        VideoPtSet::from_types(Self::DEFAULT_TYPES)
    }
}

impl fmt::Debug for VideoPtSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.types()).finish()
    }
}

impl Serialize for VideoPtSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.types().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for VideoPtSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let types = Vec::<u8>::deserialize(deserializer)?;
        if let Some(bad) = types.iter().find(|t| **t > 127) {
            return Err(serde::de::Error::custom(format!("payload type {bad} exceeds 7 bits")));
        }
        Ok(VideoPtSet::from_types(types))
    }
}

pub fn is_video(header: &RtpHeader, pts: &VideoPtSet) -> bool {
    pts.contains(header.payload_type)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    FrameStart,
    FrameContinue,
    FrameEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub kind: FrameKind,
    pub ssrc: u32,
    pub frame_ordinal: u32,
    /// True when this packet opened a new frame. A single-packet frame reports
    /// `FrameEnd` with `starts_frame` set.
    pub starts_frame: bool,
    /// True when this packet opened a new frame while the previous frame of
    /// the SSRC never saw its marker (timestamp-change fallback).
    pub abandoned_previous: bool,
}

/// How the assembler decides a frame has begun.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    /// Previous packet had the marker bit, or the RTP timestamp changed.
    #[default]
    MarkerAndTimestamp,
    /// Previous packet had the marker bit.
    MarkerOnly,
}

/// Per-SSRC frame assembler state. Fixed size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FrameTracker {
    pub last_timestamp: u32,
    pub saw_marker_last: bool,
    pub frame_ordinal: u32,
    /// False until the first packet has been seen.
    pub started: bool,
}

impl FrameTracker {
    /// Classify one video packet and advance the state.
    pub fn frame_event(&mut self, header: &RtpHeader, mode: Segmentation) -> FrameEvent {
        let starts_frame = if !self.started {
            true
        } else {
            self.saw_marker_last || (mode == Segmentation::MarkerAndTimestamp && header.timestamp != self.last_timestamp)
        };
        let abandoned_previous = starts_frame && self.started && !self.saw_marker_last;
        if starts_frame && self.started {
            self.frame_ordinal = self.frame_ordinal.wrapping_add(1);
        }
        self.started = true;
        self.last_timestamp = header.timestamp;
        self.saw_marker_last = header.marker;
        let kind = if header.marker {
            FrameKind::FrameEnd
        } else if starts_frame {
            FrameKind::FrameStart
        } else {
            FrameKind::FrameContinue
        };
        FrameEvent { kind, ssrc: header.ssrc, frame_ordinal: self.frame_ordinal, starts_frame, abandoned_previous }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    const EXAMPLE: [u8; 12] = [0x80, 0x66, 0x00, 0x01, 0x00, 0x00, 0x00, 0x64, 0xde, 0xad, 0xbe, 0xef];

    #[test]
    fn parses_fixed_header_example() {
        let h = parse_rtp(&EXAMPLE).unwrap();
        assert_eq!(h.version, 2);
        assert!(!h.marker);
        assert_eq!(h.payload_type, 102);
        assert_eq!(h.sequence_number, 1);
        assert_eq!(h.timestamp, 100);
        assert_eq!(h.ssrc, 0xdeadbeef);
        assert_eq!(h.header_length, 12);
        assert_eq!(h.payload_length, 0);
    }

    #[test]
    fn marker_is_top_bit_of_second_byte() {
        let mut b = EXAMPLE;
        b[1] = 0xe6;
        let h = parse_rtp(&b).unwrap();
        assert!(h.marker);
        assert_eq!(h.payload_type, 102);
    }

    #[test]
    fn short_payload_truncated() {
        assert_eq!(parse_rtp(&EXAMPLE[..8]), Err(RtpError::Truncated { needed: 12, available: 8 }));
    }

    #[test]
    fn wrong_version_rejected() {
        let mut b = EXAMPLE;
        b[0] = 0x40;
        assert_eq!(parse_rtp(&b), Err(RtpError::BadVersion(1)));
    }

    #[test]
    fn csrc_and_extension_lengths() {
        let mut h = RtpHeader::new(102, 5, 9, 1, true, 0);
        h.csrcs = vec![7, 8];
        h.extension = Some(RtpExtension { profile: 0xbede, length_words: 3 });
        let bytes = h.to_packet(&[0xaa; 30]);
        let p = parse_rtp(&bytes).unwrap();
        assert_eq!(p.header_length, 12 + 8 + 4 + 12);
        assert_eq!(p.payload_length, 30);
        assert_eq!(p.csrcs, vec![7, 8]);
        // extension claims more words than present
        assert!(matches!(parse_rtp(&bytes[..30]), Err(RtpError::Truncated { .. })));
    }

    #[test]
    fn video_payload_types() {
        let pts = VideoPtSet::default();
        let h = |pt| RtpHeader::new(pt, 0, 0, 0, false, 0);
        assert!(is_video(&h(102), &pts));
        assert!(is_video(&h(77), &pts));
        assert!(!is_video(&h(111), &pts));
        assert_eq!(pts.types(), vec![77, 102]);
    }

    fn events(pkts: &[(u32, bool)], mode: Segmentation) -> Vec<(FrameKind, u32, bool)> {
        let mut t = FrameTracker::default();
        pkts.iter()
            .map(|(ts, m)| {
                let e = t.frame_event(&RtpHeader::new(102, 0, *ts, 1, *m, 0), mode);
                (e.kind, e.frame_ordinal, e.starts_frame)
            })
            .collect()
    }

    #[test]
    fn canonical_three_packet_frame() {
        use FrameKind::*;
        let e = events(&[(100, false), (100, false), (100, true)], Segmentation::MarkerAndTimestamp);
        assert_eq!(e, vec![(FrameStart, 0, true), (FrameContinue, 0, false), (FrameEnd, 0, false)]);
    }

    #[test]
    fn marker_only_frames() {
        use FrameKind::*;
        let e = events(&[(100, true), (200, true)], Segmentation::MarkerAndTimestamp);
        assert_eq!(e, vec![(FrameEnd, 0, true), (FrameEnd, 1, true)]);
    }

    /// Hand-tabled expectations for every two-packet (timestamp, marker)
    /// combination, with timestamps drawn from {100, 200}.
    #[test]
    fn two_packet_table() {
        use FrameKind::*;
        #[rustfmt::skip]
        let table: [((u32, bool), (u32, bool), [(FrameKind, u32, bool); 2], [(FrameKind, u32, bool); 2]); 8] = [
            // (p1, p2, marker+timestamp mode, marker-only mode)
            ((100, false), (100, false), [(FrameStart, 0, true), (FrameContinue, 0, false)], [(FrameStart, 0, true), (FrameContinue, 0, false)]),
            ((100, false), (100, true),  [(FrameStart, 0, true), (FrameEnd, 0, false)],      [(FrameStart, 0, true), (FrameEnd, 0, false)]),
            ((100, true),  (100, false), [(FrameEnd, 0, true),   (FrameStart, 1, true)],     [(FrameEnd, 0, true),   (FrameStart, 1, true)]),
            ((100, true),  (100, true),  [(FrameEnd, 0, true),   (FrameEnd, 1, true)],       [(FrameEnd, 0, true),   (FrameEnd, 1, true)]),
            ((100, false), (200, false), [(FrameStart, 0, true), (FrameStart, 1, true)],     [(FrameStart, 0, true), (FrameContinue, 0, false)]),
            ((100, false), (200, true),  [(FrameStart, 0, true), (FrameEnd, 1, true)],       [(FrameStart, 0, true), (FrameEnd, 0, false)]),
            ((100, true),  (200, false), [(FrameEnd, 0, true),   (FrameStart, 1, true)],     [(FrameEnd, 0, true),   (FrameStart, 1, true)]),
            ((100, true),  (200, true),  [(FrameEnd, 0, true),   (FrameEnd, 1, true)],       [(FrameEnd, 0, true),   (FrameEnd, 1, true)]),
        ];
        for (p1, p2, both, marker_only) in table {
            assert_eq!(events(&[p1, p2], Segmentation::MarkerAndTimestamp), both.to_vec(), "{p1:?} {p2:?}");
            assert_eq!(events(&[p1, p2], Segmentation::MarkerOnly), marker_only.to_vec(), "{p1:?} {p2:?} marker-only");
        }
    }

    proptest! {
        #[test]
        fn header_round_trip(pt in 0u8..128, seq: u16, ts: u32, ssrc: u32, m: bool, cc in 0usize..4, ext in proptest::option::of((any::<u16>(), 0u16..4)), plen in 0usize..64) {
            let mut h = RtpHeader::new(pt, seq, ts, ssrc, m, plen);
            h.csrcs = (0..cc as u32).collect();
            h.extension = ext.map(|(profile, length_words)| RtpExtension { profile, length_words });
            h.header_length = h.computed_header_length();
            let bytes = h.to_packet(&vec![0x5a; plen]);
            prop_assert_eq!(parse_rtp(&bytes).unwrap(), h);
        }

        #[test]
        fn frame_counts_bounded(pkts in prop::collection::vec((0u32..3, 0u32..4, any::<bool>()), 0..200), marker_only: bool) {
            let mode = if marker_only { Segmentation::MarkerOnly } else { Segmentation::MarkerAndTimestamp };
            let mut trackers: HashMap<u32, FrameTracker> = HashMap::new();
            let (mut starts, mut closed) = (0usize, 0usize);
            for (ssrc, ts, m) in pkts {
                let e = trackers.entry(ssrc).or_default().frame_event(&RtpHeader::new(102, 0, ts, ssrc, m, 0), mode);
                starts += usize::from(e.starts_frame);
                // a frame closes on its marker, or is abandoned by the timestamp fallback
                closed += usize::from(e.kind == FrameKind::FrameEnd) + usize::from(e.abandoned_previous);
                if marker_only {
                    prop_assert!(!e.abandoned_previous);
                }
                prop_assert!(closed <= starts);
                prop_assert!(starts <= closed + trackers.len());
            }
        }
    }
}
