//! Deterministic fixture generators: DTLS flights with chosen certificate
//! issuers, application data, RTP video (adaptive and non-adaptive), audio,
//! and TLS over TCP.

mod der;
mod dtls;
mod scenario;
mod video;

pub use der::certificate;
pub use dtls::{certificate_message_body, dtls_record, gen_app_data, gen_dtls_flight, gen_tls_tcp, handshake_fragment, MAX_ISSUER_LEN};
pub use scenario::{snowflake_fixture, tls_fixture, video_fixture, SnowflakeFixture, OTHER_ISSUER, WEBRTC_ISSUER};
pub use video::{
    default_profile, default_profiles, gen_audio_stream, gen_video_stream, GeneratedFrame, KeyframeSpikes, ResolutionProfile, SourceModel,
    StreamSpec, VideoSource, Window, DEFAULT_FPS, FULL_HD_MEAN_FRAME_BYTES, RTP_VIDEO_CLOCK_HZ,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("issuer is {0} bytes; at most {max} allowed", max = MAX_ISSUER_LEN)]
    IssuerTooLong(usize),
    #[error("issuer must be non-empty printable ASCII")]
    IssuerNotPrintable,
    #[error("fragment offset {offset} outside the certificate message body (1..{length})")]
    FragmentOffset { offset: usize, length: usize },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl SynthError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        SynthError::Invalid { path: path.into(), message: message.into() }
    }
}
