//! DTLS and TLS fixtures: handshake flights carrying a certificate, and
//! streams of opaque application data.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::der;
use super::SynthError;
use crate::net::LinkType;
use crate::packet::{FlowKey, Packet, Timestamp};

pub const MAX_ISSUER_LEN: usize = 64;
const DTLS_1_2: u16 = 0xfefd;
const MSG_SERVER_HELLO: u8 = 2;
const MSG_CERTIFICATE: u8 = 11;
const MSG_SERVER_HELLO_DONE: u8 = 14;

fn u24(v: usize) -> [u8; 3] {
    let b = (v as u32).to_be_bytes();
    [b[1], b[2], b[3]]
}

/// One DTLS record: type, version, epoch, 48-bit sequence, length, body.
pub fn dtls_record(content_type: u8, epoch: u16, sequence: u64, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(13 + body.len());
    out.push(content_type);
    out.extend_from_slice(&DTLS_1_2.to_be_bytes());
    out.extend_from_slice(&epoch.to_be_bytes());
    out.extend_from_slice(&sequence.to_be_bytes()[2..]);
    out.extend_from_slice(&(body.len() as u16).to_be_bytes());
    out.extend_from_slice(body);
    out
}

/// Handshake fragment header + fragment bytes of `body[range]`.
pub fn handshake_fragment(msg_type: u8, message_seq: u16, body: &[u8], range: std::ops::Range<usize>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + range.len());
    out.push(msg_type);
    out.extend_from_slice(&u24(body.len()));
    out.extend_from_slice(&message_seq.to_be_bytes());
    out.extend_from_slice(&u24(range.start));
    out.extend_from_slice(&u24(range.len()));
    out.extend_from_slice(&body[range]);
    out
}

/// Body of a Certificate handshake message holding one certificate.
pub fn certificate_message_body(cert: &[u8]) -> Vec<u8> {
    let mut body = Vec::with_capacity(cert.len() + 6);
    body.extend_from_slice(&u24(cert.len() + 3));
    body.extend_from_slice(&u24(cert.len()));
    body.extend_from_slice(cert);
    body
}

fn check_issuer(issuer: &str) -> Result<(), SynthError> {
    if issuer.len() > MAX_ISSUER_LEN {
        return Err(SynthError::IssuerTooLong(issuer.len()));
    }
    if issuer.is_empty() || !issuer.bytes().all(|b| (0x20..0x7f).contains(&b)) {
        return Err(SynthError::IssuerNotPrintable);
    }
    Ok(())
}

/// A server handshake flight from `flow.src` to `flow.dst`: ServerHello,
/// Certificate (issuer CN = `issuer`), ServerHelloDone, one record per
/// datagram, 1 ms apart starting at `start`. With `fragment_at`, the
/// Certificate message is split at that body offset across two records.
pub fn gen_dtls_flight(issuer: &str, flow: FlowKey, fragment_at: Option<usize>, start: Timestamp) -> Result<Vec<Packet>, SynthError> {
    check_issuer(issuer)?;
    let cert = der::certificate(issuer, issuer, flow.stable_hash() & 0xffff_ffff);
    let cert_body = certificate_message_body(&cert);
    let hello: Vec<u8> = [&[0xfe, 0xfd][..], &[0x5a; 32], &[0], &[0xc0, 0x2b], &[0]].concat();

    let mut records: Vec<Vec<u8>> = Vec::new();
    records.push(handshake_fragment(MSG_SERVER_HELLO, 0, &hello, 0..hello.len()));
    match fragment_at {
        None => records.push(handshake_fragment(MSG_CERTIFICATE, 1, &cert_body, 0..cert_body.len())),
        Some(at) => {
            if at == 0 || at >= cert_body.len() {
                return Err(SynthError::FragmentOffset { offset: at, length: cert_body.len() });
            }
            records.push(handshake_fragment(MSG_CERTIFICATE, 1, &cert_body, 0..at));
            records.push(handshake_fragment(MSG_CERTIFICATE, 1, &cert_body, at..cert_body.len()));
        }
    }
    records.push(handshake_fragment(MSG_SERVER_HELLO_DONE, 2, &[], 0..0));
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, body)| {
            let ts = start.plus_millis(i as u64);
            Packet::udp(LinkType::Ethernet, ts, flow, &dtls_record(22, 0, i as u64, body))
        })
        .collect())
}

/// `count` application_data records (epoch 1) of `size` random bytes,
/// `interval_us` apart.
pub fn gen_app_data(flow: FlowKey, count: usize, size: usize, start: Timestamp, interval_us: u64, seed: u64) -> Vec<Packet> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ flow.stable_hash());
    let mut body = vec![0u8; size];
    (0..count)
        .map(|i| {
            rng.fill(&mut body[..]);
            let ts = start.plus_micros(i as u64 * interval_us);
            Packet::udp(LinkType::Ethernet, ts, flow, &dtls_record(23, 1, i as u64 + 1, &body))
        })
        .collect()
}

/// A TLS-over-TCP exchange from `flow.src`: a Certificate handshake record
/// (issuer CN = `issuer`) followed by `count` application_data records.
pub fn gen_tls_tcp(flow: FlowKey, issuer: &str, count: usize, start: Timestamp) -> Result<Vec<Packet>, SynthError> {
    check_issuer(issuer)?;
    let tls_record = |ct: u8, body: &[u8]| -> Vec<u8> {
        let mut out = vec![ct, 0x03, 0x03];
        out.extend_from_slice(&(body.len() as u16).to_be_bytes());
        out.extend_from_slice(body);
        out
    };
    let cert_body = certificate_message_body(&der::certificate(issuer, issuer, 1));
    let mut hs = vec![MSG_CERTIFICATE];
    hs.extend_from_slice(&u24(cert_body.len()));
    hs.extend_from_slice(&cert_body);
    let mut segments = vec![tls_record(22, &hs)];
    segments.extend((0..count).map(|i| tls_record(23, &[i as u8; 300])));
    let mut seq = 1u32;
    Ok(segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = Packet::tcp(LinkType::Ethernet, start.plus_millis(i as u64), flow, seq, s);
            seq = seq.wrapping_add(s.len() as u32);
            p
        })
        .collect())
}
