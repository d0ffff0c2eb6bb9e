//! Minimal DER certificate writer. Only the fields the censor reads carry
//! meaningful values; keys and signatures are filler.

fn push_len(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = len.to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (bytes.len() - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

pub(crate) fn tlv(tag: u8, content: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(content.len() + 4);
    out.push(tag);
    push_len(&mut out, content.len());
    out.extend_from_slice(content);
    out
}

fn seq(parts: &[&[u8]]) -> Vec<u8> {
    tlv(0x30, &parts.concat())
}

// 1.2.840.10045.2.1 ecPublicKey, 1.2.840.10045.3.1.7 prime256v1,
// 1.2.840.10045.4.3.2 ecdsa-with-SHA256, 2.5.4.3 commonName
const OID_EC_PUBLIC_KEY: &[u8] = &[0x2a, 0x86, 0x48, 0xce, 0x3d, 0x02, 0x01];
const OID_PRIME256V1: &[u8] = &[0x2a, 0x86, 0x48, 0xce, 0x3d, 0x03, 0x01, 0x07];
const OID_ECDSA_SHA256: &[u8] = &[0x2a, 0x86, 0x48, 0xce, 0x3d, 0x04, 0x03, 0x02];
const OID_COMMON_NAME: &[u8] = &[0x55, 0x04, 0x03];

/// Name with a single CN attribute, encoded as UTF8String.
pub(crate) fn name(cn: &str) -> Vec<u8> {
    let atv = seq(&[&tlv(0x06, OID_COMMON_NAME), &tlv(0x0c, cn.as_bytes())]);
    seq(&[&tlv(0x31, &atv)])
}

/// A self-contained X.509 v3 certificate with the given issuer and subject
/// common names.
pub fn certificate(issuer_cn: &str, subject_cn: &str, serial: u64) -> Vec<u8> {
    let version = tlv(0xa0, &tlv(0x02, &[2]));
    let mut serial_bytes = serial.to_be_bytes().to_vec();
    while serial_bytes.len() > 1 && serial_bytes[0] == 0 && serial_bytes[1] & 0x80 == 0 {
        serial_bytes.remove(0);
    }
    if serial_bytes[0] & 0x80 != 0 {
        serial_bytes.insert(0, 0);
    }
    let sig_alg = seq(&[&tlv(0x06, OID_ECDSA_SHA256)]);
    let validity = seq(&[&tlv(0x17, b"260101000000Z"), &tlv(0x17, b"270101000000Z")]);
    let mut point = vec![0x04];
    point.extend((0..64u8).map(|i| i.wrapping_mul(37).wrapping_add(serial as u8)));
    let mut bits = vec![0];
    bits.extend_from_slice(&point);
    let spki = seq(&[&seq(&[&tlv(0x06, OID_EC_PUBLIC_KEY), &tlv(0x06, OID_PRIME256V1)]), &tlv(0x03, &bits)]);
    let tbs = seq(&[&version, &tlv(0x02, &serial_bytes), &sig_alg, &name(issuer_cn), &validity, &name(subject_cn), &spki]);
    let sig = tlv(0x03, &[0, 0x30, 0x06, 0x02, 0x01, 0x01, 0x02, 0x01, 0x01]);
    seq(&[&tbs, &sig_alg, &sig])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_form_lengths() {
        assert_eq!(tlv(0x04, &[0; 5])[..2], [0x04, 5]);
        assert_eq!(tlv(0x04, &[0; 200])[..3], [0x04, 0x81, 200]);
        assert_eq!(tlv(0x04, &[0; 300])[..4], [0x04, 0x82, 0x01, 0x2c]);
    }

    #[test]
    fn certificate_outer_length_is_consistent() {
        let c = certificate("WebRTC", "WebRTC", 0x1234);
        assert_eq!(c[0], 0x30);
        let (len, hdr) = match c[1] {
            l if l < 0x80 => (l as usize, 2),
            0x81 => (c[2] as usize, 3),
            _ => (u16::from_be_bytes([c[2], c[3]]) as usize, 4),
        };
        assert_eq!(len + hdr, c.len());
        let needle = [&[0x06, 0x03, 0x55, 0x04, 0x03, 0x0c, 6][..], b"WebRTC"].concat();
        assert!(c.windows(needle.len()).any(|w| w == needle));
    }
}
