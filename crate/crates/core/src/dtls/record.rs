use super::DtlsError;

/// 1 (type) + 2 (version) + 2 (epoch) + 6 (sequence) + 2 (length).
pub const RECORD_HEADER_LEN: usize = 13;

pub mod content_type {
    pub const CHANGE_CIPHER_SPEC: u8 = 20;
    pub const ALERT: u8 = 21;
    pub const HANDSHAKE: u8 = 22;
    pub const APPLICATION_DATA: u8 = 23;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DtlsRecord<'a> {
    pub content_type: u8,
    pub version: u16,
    pub epoch: u16,
    /// 48-bit record sequence number.
    pub sequence_number: u64,
    pub fragment: &'a [u8],
}

impl<'a> DtlsRecord<'a> {
    pub fn length(&self) -> u16 {
        self.fragment.len() as u16
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.fragment.len()
    }

    pub fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.content_type);
        out.extend_from_slice(&self.version.to_be_bytes());
        out.extend_from_slice(&self.epoch.to_be_bytes());
        out.extend_from_slice(&self.sequence_number.to_be_bytes()[2..]);
        out.extend_from_slice(&self.length().to_be_bytes());
        out.extend_from_slice(self.fragment);
    }
}

pub fn is_application_data(record: &DtlsRecord<'_>) -> bool {
    record.content_type == content_type::APPLICATION_DATA
}

/// Records parsed from one datagram. `error` is set when bytes remain that
/// do not form a complete record; `records` still holds everything before it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordParse<'a> {
    pub records: Vec<DtlsRecord<'a>>,
    pub error: Option<DtlsError>,
}

impl<'a> RecordParse<'a> {
    pub fn is_complete(&self) -> bool {
        self.error.is_none()
    }

    pub fn into_result(self) -> Result<Vec<DtlsRecord<'a>>, DtlsError> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(self.records),
        }
    }
}

pub fn parse_records(datagram: &[u8]) -> RecordParse<'_> {
    let mut records = Vec::new();
    let mut at = 0;
    while at < datagram.len() {
        let rest = &datagram[at..];
        if rest.len() < RECORD_HEADER_LEN {
            return RecordParse { records, error: Some(DtlsError::TruncatedRecord { offset: at }) };
        }
        let length = usize::from(u16::from_be_bytes([rest[11], rest[12]]));
        if rest.len() < RECORD_HEADER_LEN + length {
            return RecordParse { records, error: Some(DtlsError::TruncatedRecord { offset: at }) };
        }
        let mut seq = [0u8; 8];
        seq[2..].copy_from_slice(&rest[5..11]);
        records.push(DtlsRecord {
            content_type: rest[0],
            version: u16::from_be_bytes([rest[1], rest[2]]),
            epoch: u16::from_be_bytes([rest[3], rest[4]]),
            sequence_number: u64::from_be_bytes(seq),
            fragment: &rest[RECORD_HEADER_LEN..RECORD_HEADER_LEN + length],
        });
        at += RECORD_HEADER_LEN + length;
    }
    RecordParse { records, error: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(ct: u8, body: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        DtlsRecord { content_type: ct, version: 0xfefd, epoch: 1, sequence_number: 7, fragment: body }.encode(&mut out);
        out
    }

    #[test]
    fn single_application_data_record() {
        let bytes = rec(23, &[1, 2, 3, 4, 5]);
        let parsed = parse_records(&bytes).into_result().unwrap();
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].content_type, 23);
        assert_eq!(parsed[0].length(), 5);
        assert_eq!(parsed[0].epoch, 1);
        assert_eq!(parsed[0].sequence_number, 7);
        assert!(is_application_data(&parsed[0]));
    }

    #[test]
    fn two_records_in_order() {
        let mut bytes = rec(22, &[9; 20]);
        bytes.extend(rec(23, &[8; 3]));
        let parsed = parse_records(&bytes).into_result().unwrap();
        assert_eq!(parsed.iter().map(|r| r.content_type).collect::<Vec<_>>(), vec![22, 23]);
    }

    #[test]
    fn short_datagram_is_truncated() {
        let p = parse_records(&[22u8; 10]);
        assert!(p.records.is_empty());
        assert_eq!(p.error, Some(DtlsError::TruncatedRecord { offset: 0 }));
    }

    #[test]
    fn trailing_garbage_keeps_complete_records() {
        let mut bytes = rec(23, &[1; 4]);
        let first_len = bytes.len();
        bytes.extend_from_slice(&[23, 0xfe, 0xfd, 0, 1]);
        let p = parse_records(&bytes);
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.error, Some(DtlsError::TruncatedRecord { offset: first_len }));
    }

    #[test]
    fn length_beyond_datagram_is_truncated() {
        let mut bytes = rec(23, &[1; 4]);
        bytes[12] = 40;
        assert_eq!(parse_records(&bytes).error, Some(DtlsError::TruncatedRecord { offset: 0 }));
    }

    #[test]
    fn application_data_predicate() {
        for (ct, expect) in [(23, true), (22, false), (20, false), (21, false)] {
            let r = DtlsRecord { content_type: ct, version: 0xfefd, epoch: 0, sequence_number: 0, fragment: &[] };
            assert_eq!(is_application_data(&r), expect);
        }
    }

    proptest! {
        #[test]
        fn encode_parse_round_trip(
            recs in prop::collection::vec((20u8..=23, any::<u16>(), any::<u16>(), 0u64..(1 << 48), prop::collection::vec(any::<u8>(), 0..64)), 1..5)
        ) {
            let mut bytes = Vec::new();
            for (ct, v, e, s, body) in &recs {
                DtlsRecord { content_type: *ct, version: *v, epoch: *e, sequence_number: *s, fragment: body }.encode(&mut bytes);
            }
            let parsed = parse_records(&bytes).into_result().unwrap();
            prop_assert_eq!(parsed.len(), recs.len());
            for (p, (ct, v, e, s, body)) in parsed.iter().zip(&recs) {
                prop_assert_eq!(p.content_type, *ct);
                prop_assert_eq!(p.version, *v);
                prop_assert_eq!(p.epoch, *e);
                prop_assert_eq!(p.sequence_number, *s);
                prop_assert_eq!(p.fragment, body.as_slice());
            }
        }
    }
}
