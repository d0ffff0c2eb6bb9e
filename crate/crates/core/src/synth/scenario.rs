//! Ready-made multi-flow captures.

use super::dtls::{gen_app_data, gen_dtls_flight, gen_tls_tcp};
use super::video::{gen_audio_stream, gen_video_stream, SourceModel, StreamSpec};
use super::SynthError;
use crate::io::Trace;
use crate::net::LinkType;
use crate::packet::{FlowKey, Packet, Timestamp};

pub const WEBRTC_ISSUER: &str = "WebRTC";
pub const OTHER_ISSUER: &str = "Example Web CA";

/// Ground truth for [`snowflake_fixture`].
#[derive(Debug, Clone)]
pub struct SnowflakeFixture {
    pub trace: Trace,
    /// Carries a "WebRTC" certificate, data-channel records both ways, and
    /// SRTP video plus audio.
    pub webrtc_flow: FlowKey,
    /// Ordinary DTLS with another issuer.
    pub other_flow: FlowKey,
    pub webrtc_app_data_packets: u64,
    pub webrtc_srtp_packets: u64,
    pub other_flow_packets: u64,
}

fn sorted_trace(mut packets: Vec<Packet>) -> Trace {
    packets.sort_by_key(|p| p.timestamp);
    Trace::from_packets(LinkType::Ethernet, packets)
}

/// A WebRTC-flagged flow carrying both data-channel and media traffic next
/// to an unflagged DTLS flow.
pub fn snowflake_fixture(seed: u64, duration_s: f64) -> Result<SnowflakeFixture, SynthError> {
    let webrtc: FlowKey = "198.51.100.7:3478->192.168.1.20:50000".parse().expect("literal");
    let other: FlowKey = "203.0.113.9:4433->192.168.1.20:50100".parse().expect("literal");
    let t0 = Timestamp::from_micros(1_000_000);
    let media_start = t0.plus_millis(100);
    let interval_us = 20_000;
    let records = ((duration_s * 1e6) as u64 / interval_us) as usize;

    let mut pkts = gen_dtls_flight(WEBRTC_ISSUER, webrtc, None, t0)?;
    let mut app = gen_app_data(webrtc, records, 180, media_start, interval_us, seed);
    app.extend(gen_app_data(webrtc.reverse(), records, 120, media_start.plus_micros(3), interval_us, seed));
    let app_count = app.len() as u64;
    pkts.extend(app);

    let mut spec = StreamSpec::new(0x5eed_0001, duration_s, seed);
    spec.start_us = media_start.as_micros() + 11;
    let mut media = gen_video_stream(SourceModel::default_non_adaptive(), spec, webrtc, |_| 0.0)?;
    media.extend(gen_audio_stream(webrtc, 0x5eed_0002, duration_s, media_start));
    let srtp_count = media.len() as u64;
    pkts.extend(media);

    let mut o = gen_dtls_flight(OTHER_ISSUER, other, Some(40), t0.plus_micros(500))?;
    o.extend(gen_app_data(other, records, 200, media_start.plus_micros(5), interval_us, seed));
    o.extend(gen_app_data(other.reverse(), records, 90, media_start.plus_micros(9), interval_us, seed));
    let other_count = o.len() as u64;
    pkts.extend(o);

    Ok(SnowflakeFixture {
        trace: sorted_trace(pkts),
        webrtc_flow: webrtc,
        other_flow: other,
        webrtc_app_data_packets: app_count,
        webrtc_srtp_packets: srtp_count,
        other_flow_packets: other_count,
    })
}

/// A WebRTC handshake followed by one video stream on the same flow.
pub fn video_fixture(model: SourceModel, spec: StreamSpec, flow: FlowKey) -> Result<Trace, SynthError> {
    let mut spec = spec;
    let start = Timestamp::from_micros(spec.start_us);
    spec.start_us += 10_000;
    let mut pkts = gen_dtls_flight(WEBRTC_ISSUER, flow, None, start)?;
    pkts.extend(gen_video_stream(model, spec, flow, |_| 0.0)?);
    Ok(sorted_trace(pkts))
}

/// TLS over TCP carrying a certificate whose issuer would match the WebRTC
/// pattern; a UDP-only censor must leave it alone.
pub fn tls_fixture() -> Result<Trace, SynthError> {
    let flow: FlowKey = "192.0.2.10:443->192.168.1.20:51000".parse().expect("literal");
    Ok(sorted_trace(gen_tls_tcp(flow, WEBRTC_ISSUER, 20, Timestamp::from_micros(1_000_000))?))
}
