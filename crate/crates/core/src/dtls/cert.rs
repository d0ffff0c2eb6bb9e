//! Issuer extraction from a DTLS Certificate handshake message.
//!
//! The DER walk covers only Certificate -> TBSCertificate -> issuer -> CN.
//! Anything it does not understand drops to a byte-pattern scan of the body.

use serde::{Deserialize, Serialize};

use super::handshake::{HandshakeMessage, MSG_CERTIFICATE};
use super::DtlsError;

/// DER TLV of OID 2.5.4.3 (id-at-commonName).
pub const CN_OID_TLV: [u8; 5] = [0x06, 0x03, 0x55, 0x04, 0x03];

const TAG_SEQUENCE: u8 = 0x30;
const TAG_SET: u8 = 0x31;
const TAG_OID: u8 = 0x06;
const TAG_INTEGER: u8 = 0x02;
const TAG_EXPLICIT_0: u8 = 0xa0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssuerSource {
    /// Found by walking the DER structure.
    Parsed,
    /// Found by the fallback byte-pattern scan.
    Scanned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateInfo {
    pub issuer_common_name: String,
    /// Issuer Name TLV; empty when the issuer was found by scanning.
    pub raw_issuer_der: Vec<u8>,
    pub source: IssuerSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuerOptions {
    /// Byte pattern that precedes the CN string in the fallback scan.
    pub scan_pattern: Vec<u8>,
    /// Inspect every certificate in the chain instead of only the first.
    pub all_certificates: bool,
}

impl Default for IssuerOptions {
    fn default() -> Self {
        IssuerOptions { scan_pattern: CN_OID_TLV.to_vec(), all_certificates: false }
    }
}

pub fn extract_issuer(msg: &HandshakeMessage) -> Result<CertificateInfo, DtlsError> {
    extract_issuer_with(msg, &IssuerOptions::default())
}

pub fn extract_issuer_with(msg: &HandshakeMessage, opts: &IssuerOptions) -> Result<CertificateInfo, DtlsError> {
    let first = IssuerOptions { all_certificates: false, ..opts.clone() };
    extract_issuers(msg, &first)?.into_iter().next().ok_or(DtlsError::NoIssuer)
}

/// Issuers of the first certificate, or of all certificates when
/// `opts.all_certificates` is set.
pub fn extract_issuers(msg: &HandshakeMessage, opts: &IssuerOptions) -> Result<Vec<CertificateInfo>, DtlsError> {
    if msg.msg_type != MSG_CERTIFICATE {
        return Err(DtlsError::NotCertificate(msg.msg_type));
    }
    let body = &msg.body;
    if body.len() >= 3 && be24(&body[..3]) == 0 {
        return Err(DtlsError::NoCertificate);
    }
    match certificate_list(body) {
        Some(certs) if !certs.is_empty() => {
            let take = if opts.all_certificates { certs.len() } else { 1 };
            let mut out = Vec::new();
            for der in &certs[..take] {
                match parse_issuer_cn(der) {
                    Some(Ok(info)) => out.push(info),
                    // well-formed issuer without a CN
                    Some(Err(())) => {}
                    None => out.extend(scan(der, &opts.scan_pattern)),
                }
            }
            if out.is_empty() {
                Err(DtlsError::NoIssuer)
            } else {
                Ok(out)
            }
        }
        _ => scan(body, &opts.scan_pattern).map(|i| vec![i]).ok_or(DtlsError::NoIssuer),
    }
}

fn be24(b: &[u8]) -> usize {
    (usize::from(b[0]) << 16) | (usize::from(b[1]) << 8) | usize::from(b[2])
}

fn certificate_list(body: &[u8]) -> Option<Vec<&[u8]>> {
    if body.len() < 3 {
        return None;
    }
    let list_len = be24(&body[..3]);
    let list = body.get(3..3 + list_len)?;
    let mut certs = Vec::new();
    let mut at = 0;
    while at < list.len() {
        let len = be24(list.get(at..at + 3)?);
        certs.push(list.get(at + 3..at + 3 + len)?);
        at += 3 + len;
    }
    Some(certs)
}

struct Tlv<'a> {
    tag: u8,
    content: &'a [u8],
    whole: &'a [u8],
}

/// Read one definite-length DER TLV from the front of `data`.
fn read_tlv(data: &[u8]) -> Option<(Tlv<'_>, &[u8])> {
    let tag = *data.first()?;
    if tag & 0x1f == 0x1f {
        return None; // high-tag-number form
    }
    let first = *data.get(1)?;
    let (len, hdr) = if first < 0x80 {
        (usize::from(first), 2)
    } else {
        let n = usize::from(first & 0x7f);
        if n == 0 || n > 4 {
            return None;
        }
        let mut len = 0usize;
        for b in data.get(2..2 + n)? {
            len = (len << 8) | usize::from(*b);
        }
        (len, 2 + n)
    };
    let end = hdr.checked_add(len)?;
    let content = data.get(hdr..end)?;
    Some((Tlv { tag, content, whole: &data[..end] }, &data[end..]))
}

/// `None` when the DER walk fails; `Some(Err(()))` when the issuer parses
/// but carries no CN.
fn parse_issuer_cn(der: &[u8]) -> Option<Result<CertificateInfo, ()>> {
    let (cert, _) = read_tlv(der)?;
    if cert.tag != TAG_SEQUENCE {
        return None;
    }
    let (tbs, _) = read_tlv(cert.content)?;
    if tbs.tag != TAG_SEQUENCE {
        return None;
    }
    let mut rest = tbs.content;
    let (mut el, r) = read_tlv(rest)?;
    rest = r;
    if el.tag == TAG_EXPLICIT_0 {
        let (next, r) = read_tlv(rest)?;
        el = next;
        rest = r;
    }
    if el.tag != TAG_INTEGER {
        return None;
    }
    let (sig_alg, rest) = read_tlv(rest)?;
    if sig_alg.tag != TAG_SEQUENCE {
        return None;
    }
    let (issuer, _) = read_tlv(rest)?;
    if issuer.tag != TAG_SEQUENCE {
        return None;
    }
    let mut rdns = issuer.content;
    while !rdns.is_empty() {
        let (set, r) = read_tlv(rdns)?;
        rdns = r;
        if set.tag != TAG_SET {
            return None;
        }
        let mut atvs = set.content;
        while !atvs.is_empty() {
            let (atv, r) = read_tlv(atvs)?;
            atvs = r;
            if atv.tag != TAG_SEQUENCE {
                return None;
            }
            let (oid, r) = read_tlv(atv.content)?;
            if oid.tag != TAG_OID {
                return None;
            }
            if oid.whole == CN_OID_TLV {
                let (value, _) = read_tlv(r)?;
                let name = decode_string(value.tag, value.content)?;
                return Some(Ok(CertificateInfo {
                    issuer_common_name: name,
                    raw_issuer_der: issuer.whole.to_vec(),
                    source: IssuerSource::Parsed,
                }));
            }
        }
    }
    Some(Err(()))
}

fn decode_string(tag: u8, content: &[u8]) -> Option<String> {
    match tag {
        // UTF8String
        0x0c => String::from_utf8(content.to_vec()).ok(),
        // PrintableString, T61String, IA5String: byte-per-char
        0x13 | 0x14 | 0x16 => Some(content.iter().map(|b| char::from(*b)).collect()),
        // BMPString
        0x1e => {
            if content.len() % 2 != 0 {
                return None;
            }
            let units: Vec<u16> = content.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
            String::from_utf16(&units).ok()
        }
        _ => None,
    }
}

fn scan(haystack: &[u8], pattern: &[u8]) -> Option<CertificateInfo> {
    if pattern.is_empty() || haystack.len() < pattern.len() {
        return None;
    }
    for at in 0..=haystack.len() - pattern.len() {
        if &haystack[at..at + pattern.len()] != pattern {
            continue;
        }
        if let Some((value, _)) = read_tlv(&haystack[at + pattern.len()..]) {
            if let Some(name) = decode_string(value.tag, value.content) {
                return Some(CertificateInfo { issuer_common_name: name, raw_issuer_der: Vec::new(), source: IssuerSource::Scanned });
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    // Hand-assembled DER, independent of the synth module's encoder.
    fn name_cn(tag: u8, cn: &[u8]) -> Vec<u8> {
        let mut atv = vec![0x30, (5 + 2 + cn.len()) as u8];
        atv.extend_from_slice(&CN_OID_TLV);
        atv.push(tag);
        atv.push(cn.len() as u8);
        atv.extend_from_slice(cn);
        let mut set = vec![0x31, atv.len() as u8];
        set.extend(atv);
        let mut name = vec![0x30, set.len() as u8];
        name.extend(set);
        name
    }

    fn cert(issuer: &[u8]) -> Vec<u8> {
        let mut tbs_content = vec![0xa0, 0x03, 0x02, 0x01, 0x02, 0x02, 0x01, 0x01, 0x30, 0x00];
        tbs_content.extend_from_slice(issuer);
        let mut tbs = vec![0x30, tbs_content.len() as u8];
        tbs.extend(tbs_content);
        let mut c = vec![0x30, 0x81, tbs.len() as u8];
        c.extend(tbs);
        c
    }

    fn message(certs: &[Vec<u8>]) -> HandshakeMessage {
        let mut list = Vec::new();
        for c in certs {
            list.extend_from_slice(&(c.len() as u32).to_be_bytes()[1..]);
            list.extend_from_slice(c);
        }
        let mut body = (list.len() as u32).to_be_bytes()[1..].to_vec();
        body.extend(list);
        HandshakeMessage::new(MSG_CERTIFICATE, 1, body)
    }

    #[test]
    fn parses_webrtc_issuer() {
        let issuer = name_cn(0x0c, b"WebRTC");
        let info = extract_issuer(&message(&[cert(&issuer)])).unwrap();
        assert_eq!(info.issuer_common_name, "WebRTC");
        assert_eq!(info.source, IssuerSource::Parsed);
        assert_eq!(info.raw_issuer_der, issuer);
    }

    #[test]
    fn printable_and_bmp_strings() {
        let info = extract_issuer(&message(&[cert(&name_cn(0x13, b"Example CA"))])).unwrap();
        assert_eq!(info.issuer_common_name, "Example CA");
        let bmp: Vec<u8> = "Wé".encode_utf16().flat_map(|u| u.to_be_bytes()).collect();
        let info = extract_issuer(&message(&[cert(&name_cn(0x1e, &bmp))])).unwrap();
        assert_eq!(info.issuer_common_name, "Wé");
    }

    #[test]
    fn empty_list_is_no_certificate() {
        let msg = HandshakeMessage::new(MSG_CERTIFICATE, 1, vec![0, 0, 0]);
        assert_eq!(extract_issuer(&msg), Err(DtlsError::NoCertificate));
    }

    #[test]
    fn wrong_message_type() {
        let msg = HandshakeMessage::new(2, 0, vec![0; 10]);
        assert_eq!(extract_issuer(&msg), Err(DtlsError::NotCertificate(2)));
    }

    #[test]
    fn broken_der_falls_back_to_scan() {
        let mut c = cert(&name_cn(0x0c, b"WebRTC"));
        c[0] = 0x31; // not a SEQUENCE anymore
        let info = extract_issuer(&message(&[c])).unwrap();
        assert_eq!(info.issuer_common_name, "WebRTC");
        assert_eq!(info.source, IssuerSource::Scanned);
        assert!(info.raw_issuer_der.is_empty());
    }

    #[test]
    fn broken_list_framing_scans_whole_body() {
        let mut msg = message(&[cert(&name_cn(0x0c, b"WebRTC"))]);
        msg.body[2] = msg.body[2].wrapping_add(50);
        let info = extract_issuer(&msg).unwrap();
        assert_eq!(info.source, IssuerSource::Scanned);
    }

    #[test]
    fn first_certificate_only_unless_configured() {
        let msg = message(&[cert(&name_cn(0x0c, b"Leaf CA")), cert(&name_cn(0x0c, b"Root CA"))]);
        assert_eq!(extract_issuer(&msg).unwrap().issuer_common_name, "Leaf CA");
        let all = extract_issuers(&msg, &IssuerOptions { all_certificates: true, ..Default::default() }).unwrap();
        let names: Vec<_> = all.iter().map(|i| i.issuer_common_name.as_str()).collect();
        assert_eq!(names, ["Leaf CA", "Root CA"]);
    }

    #[test]
    fn issuer_without_cn() {
        // issuer Name with only an O attribute (2.5.4.10)
        let name = vec![0x30, 0x0d, 0x31, 0x0b, 0x30, 0x09, 0x06, 0x03, 0x55, 0x04, 0x0a, 0x0c, 0x02, b'O', b'x'];
        assert_eq!(extract_issuer(&message(&[cert(&name)])), Err(DtlsError::NoIssuer));
    }
}
