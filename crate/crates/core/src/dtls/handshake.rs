use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use super::record::{content_type, DtlsRecord};
use super::DtlsError;

/// 1 (type) + 3 (length) + 2 (message_seq) + 3 (fragment_offset) + 3 (fragment_length).
pub const HANDSHAKE_HEADER_LEN: usize = 12;
pub const MSG_CERTIFICATE: u8 = 11;
pub const DEFAULT_REASSEMBLY_LIMIT: usize = 16 * 1024;

fn be24(b: &[u8]) -> u32 {
    u32::from_be_bytes([0, b[0], b[1], b[2]])
}

fn put24(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_be_bytes()[1..]);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandshakeFragment<'a> {
    pub msg_type: u8,
    pub total_length: u32,
    pub message_seq: u16,
    pub fragment_offset: u32,
    pub fragment_length: u32,
    pub body: &'a [u8],
}

impl HandshakeFragment<'_> {
    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.msg_type);
        put24(out, self.total_length);
        out.extend_from_slice(&self.message_seq.to_be_bytes());
        put24(out, self.fragment_offset);
        put24(out, self.fragment_length);
        out.extend_from_slice(self.body);
    }
}

/// Split the fragment of a handshake record into its handshake fragments.
pub fn parse_handshake_fragments(record_fragment: &[u8]) -> Result<Vec<HandshakeFragment<'_>>, DtlsError> {
    let mut out = Vec::new();
    let mut at = 0;
    while at < record_fragment.len() {
        let rest = &record_fragment[at..];
        if rest.len() < HANDSHAKE_HEADER_LEN {
            return Err(DtlsError::TruncatedHandshake { offset: at });
        }
        let fragment_length = be24(&rest[9..12]);
        let end = HANDSHAKE_HEADER_LEN + fragment_length as usize;
        if rest.len() < end {
            return Err(DtlsError::TruncatedHandshake { offset: at });
        }
        let frag = HandshakeFragment {
            msg_type: rest[0],
            total_length: be24(&rest[1..4]),
            message_seq: u16::from_be_bytes([rest[4], rest[5]]),
            fragment_offset: be24(&rest[6..9]),
            fragment_length,
            body: &rest[HANDSHAKE_HEADER_LEN..end],
        };
        if u64::from(frag.fragment_offset) + u64::from(frag.fragment_length) > u64::from(frag.total_length) {
            return Err(DtlsError::FragmentOutOfBounds { message_seq: frag.message_seq });
        }
        out.push(frag);
        at += end;
    }
    Ok(out)
}

/// A complete handshake message (fragment_offset 0, fragment_length = total_length).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeMessage {
    pub msg_type: u8,
    pub total_length: u32,
    pub message_seq: u16,
    pub fragment_offset: u32,
    pub fragment_length: u32,
    pub body: Vec<u8>,
}

impl HandshakeMessage {
    pub fn new(msg_type: u8, message_seq: u16, body: Vec<u8>) -> Self {
        let len = body.len() as u32;
        HandshakeMessage { msg_type, total_length: len, message_seq, fragment_offset: 0, fragment_length: len, body }
    }

    /// The message as fragments cut at the given body offsets.
    pub fn fragments(&self, cuts: &[u32]) -> Vec<HandshakeFragment<'_>> {
        let mut bounds: Vec<u32> = cuts.iter().copied().filter(|c| *c > 0 && *c < self.total_length).collect();
        bounds.sort_unstable();
        bounds.dedup();
        bounds.insert(0, 0);
        bounds.push(self.total_length);
        bounds
            .windows(2)
            .map(|w| HandshakeFragment {
                msg_type: self.msg_type,
                total_length: self.total_length,
                message_seq: self.message_seq,
                fragment_offset: w[0],
                fragment_length: w[1] - w[0],
                body: &self.body[w[0] as usize..w[1] as usize],
            })
            .collect()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        for f in self.fragments(&[]) {
            f.encode(out);
        }
    }
}

#[derive(Debug)]
struct Partial {
    msg_type: u8,
    total_length: u32,
    buf: Vec<u8>,
    /// Sorted, non-overlapping, non-adjacent covered byte ranges.
    covered: Vec<Range<u32>>,
}

impl Partial {
    fn check_overlap(&self, frag: &HandshakeFragment<'_>) -> bool {
        let start = frag.fragment_offset;
        let end = start + frag.fragment_length;
        self.covered.iter().all(|r| {
            let lo = r.start.max(start);
            let hi = r.end.min(end);
            lo >= hi || self.buf[lo as usize..hi as usize] == frag.body[(lo - start) as usize..(hi - start) as usize]
        })
    }

    fn insert(&mut self, frag: &HandshakeFragment<'_>) {
        let start = frag.fragment_offset;
        let end = start + frag.fragment_length;
        self.buf[start as usize..end as usize].copy_from_slice(frag.body);
        let mut merged = Range { start, end };
        let mut kept = Vec::with_capacity(self.covered.len() + 1);
        for r in self.covered.drain(..) {
            if r.end < merged.start || r.start > merged.end {
                kept.push(r);
            } else {
                merged = merged.start.min(r.start)..merged.end.max(r.end);
            }
        }
        kept.push(merged);
        kept.sort_by_key(|r| r.start);
        self.covered = kept;
    }

    fn is_complete(&self) -> bool {
        self.total_length == 0 || (self.covered.len() == 1 && self.covered[0] == (0..self.total_length))
    }
}

/// Per-flow handshake reassembly with a bounded buffer.
///
/// Once the buffer limit is exceeded the flow is marked unparseable and all
/// further input is ignored.
#[derive(Debug)]
pub struct Reassembler {
    limit: usize,
    buffered: usize,
    partial: BTreeMap<u16, Partial>,
    done: BTreeSet<u16>,
    failed: bool,
}

impl Default for Reassembler {
    fn default() -> Self {
        Reassembler::new(DEFAULT_REASSEMBLY_LIMIT)
    }
}

impl Reassembler {
    pub fn new(limit: usize) -> Self {
        Reassembler { limit, buffered: 0, partial: BTreeMap::new(), done: BTreeSet::new(), failed: false }
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    pub fn buffered_bytes(&self) -> usize {
        self.buffered
    }

    /// Feed one fragment; returns the message it completes, if any.
    pub fn push_fragment(&mut self, frag: &HandshakeFragment<'_>) -> Result<Option<HandshakeMessage>, DtlsError> {
        if self.failed || self.done.contains(&frag.message_seq) {
            return Ok(None);
        }
        if frag.fragment_length == 0 && frag.total_length > 0 {
            return Ok(None);
        }
        let entry = match self.partial.get_mut(&frag.message_seq) {
            Some(p) => {
                if p.msg_type != frag.msg_type || p.total_length != frag.total_length {
                    return Err(DtlsError::InconsistentFragment { message_seq: frag.message_seq });
                }
                p
            }
            None => {
                let need = frag.total_length as usize;
                if self.buffered + need > self.limit {
                    self.failed = true;
                    self.partial.clear();
                    self.buffered = 0;
                    return Err(DtlsError::BufferExceeded { limit: self.limit });
                }
                self.buffered += need;
                self.partial.entry(frag.message_seq).or_insert(Partial {
                    msg_type: frag.msg_type,
                    total_length: frag.total_length,
                    buf: vec![0; need],
                    covered: Vec::new(),
                })
            }
        };
        if !entry.check_overlap(frag) {
            return Err(DtlsError::InconsistentFragment { message_seq: frag.message_seq });
        }
        entry.insert(frag);
        if !entry.is_complete() {
            return Ok(None);
        }
        let p = self.partial.remove(&frag.message_seq).expect("entry present");
        self.buffered -= p.total_length as usize;
        self.done.insert(frag.message_seq);
        Ok(Some(HandshakeMessage::new(p.msg_type, frag.message_seq, p.buf)))
    }

    /// Feed one DTLS record. Non-handshake and encrypted (epoch > 0) records
    /// are ignored.
    pub fn push_record(&mut self, record: &DtlsRecord<'_>) -> Result<Vec<HandshakeMessage>, DtlsError> {
        if record.content_type != content_type::HANDSHAKE || record.epoch != 0 || self.failed {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for frag in parse_handshake_fragments(record.fragment)? {
            if let Some(m) = self.push_fragment(&frag)? {
                out.push(m);
            }
        }
        Ok(out)
    }
}

/// Reassemble all complete handshake messages from a record stream, ordered
/// by message_seq.
pub fn reassemble_handshake<'a, I>(records: I) -> Result<Vec<HandshakeMessage>, DtlsError>
where
    I: IntoIterator<Item = &'a DtlsRecord<'a>>,
{
    let mut r = Reassembler::default();
    let mut out = Vec::new();
    for rec in records {
        out.extend(r.push_record(rec)?);
    }
    out.sort_by_key(|m| m.message_seq);
    Ok(out)
}
