//! Plaintext DTLS inspection: record layer, handshake reassembly, and
//! certificate issuer extraction.
//!
//! Only epoch-0 handshake content is interpreted. Everything after the key
//! exchange is opaque and classified solely by its record content type.

mod cert;
mod handshake;
mod record;

pub use cert::{extract_issuer, extract_issuer_with, extract_issuers, CertificateInfo, IssuerOptions, IssuerSource, CN_OID_TLV};
pub use handshake::{
    parse_handshake_fragments, reassemble_handshake, HandshakeFragment, HandshakeMessage, Reassembler, DEFAULT_REASSEMBLY_LIMIT,
    HANDSHAKE_HEADER_LEN, MSG_CERTIFICATE,
};
pub use record::{content_type, is_application_data, parse_records, DtlsRecord, RecordParse, RECORD_HEADER_LEN};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DtlsError {
    #[error("truncated DTLS record at offset {offset}")]
    TruncatedRecord { offset: usize },
    #[error("truncated handshake fragment at offset {offset}")]
    TruncatedHandshake { offset: usize },
    #[error("handshake fragment exceeds message length (seq {message_seq})")]
    FragmentOutOfBounds { message_seq: u16 },
    #[error("inconsistent overlapping fragment for handshake message seq {message_seq}")]
    InconsistentFragment { message_seq: u16 },
    #[error("handshake reassembly buffer limit of {limit} bytes exceeded")]
    BufferExceeded { limit: usize },
    #[error("handshake message type {0} is not a Certificate")]
    NotCertificate(u8),
    #[error("certificate message carries no certificates")]
    NoCertificate,
    #[error("no issuer common name found")]
    NoIssuer,
}
