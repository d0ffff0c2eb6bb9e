//! Offline engine properties on random multi-flow traces.

use ddlab::attack::{Censor, CensorConfig, PolicyConfig};
use ddlab::flowtable::FlowTableConfig;
use ddlab::io::{run_offline, run_offline_sharded, Trace};
use ddlab::net::LinkType;
use ddlab::rtp::RtpHeader;
use ddlab::synth::{gen_app_data, gen_dtls_flight, WEBRTC_ISSUER};
use ddlab::{FlowKey, Packet, Timestamp, Verdict};
use proptest::prelude::*;

fn flow(i: u16) -> FlowKey {
    format!("10.1.{}.{}:{}->10.2.0.1:443", i / 250, i % 250 + 1, 40000 + i).parse().unwrap()
}

/// One packet per `(flow, kind, n)`: kind 0 is app data, 1 video RTP, 2 audio
/// RTP. Flows listed in `flagged` open with a WebRTC handshake.
fn mixed_trace(spec: &[(u16, u8, u16)], flagged: &[u16]) -> Trace {
    let mut pkts: Vec<Packet> = Vec::new();
    for &f in flagged {
        pkts.extend(gen_dtls_flight(WEBRTC_ISSUER, flow(f), None, Timestamp::from_micros(u64::from(f))).unwrap());
    }
    let mut t = 10_000u64;
    let mut seq = 0u16;
    for &(f, kind, n) in spec {
        t += 250;
        seq = seq.wrapping_add(1);
        let p = match kind {
            0 => gen_app_data(flow(f), 1, 64 + usize::from(n % 300), Timestamp::from_micros(t), 1, u64::from(n)).remove(0),
            k => {
                let pt = if k == 1 { 102 } else { 111 };
                let ts = u32::from(n / 3) * 3750;
                let h = RtpHeader::new(pt, seq, ts, 7 + u32::from(f), n % 3 == 2, 200);
                Packet::udp(LinkType::Ethernet, Timestamp::from_micros(t), flow(f), &h.to_packet(&[0u8; 200]))
            }
        };
        pkts.push(p);
    }
    pkts.sort_by_key(|p| p.timestamp);
    Trace::from_packets(LinkType::Ethernet, pkts)
}

fn chain() -> Vec<PolicyConfig> {
    vec![
        PolicyConfig::data_channel_block(),
        PolicyConfig::frame_drop(0.3, 11),
        PolicyConfig::uniform_loss(0.05, 12),
        PolicyConfig::fixed_delay(40),
    ]
}

fn spec_strategy() -> impl Strategy<Value = Vec<(u16, u8, u16)>> {
    prop::collection::vec((0u16..12, 0u8..3, any::<u16>()), 0..400)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conservation_and_determinism(spec in spec_strategy(), flagged in prop::collection::vec(0u16..12, 0..4), seed: u64) {
        let trace = mixed_trace(&spec, &flagged);
        let cfg = CensorConfig::new(chain(), seed);
        let a = run_offline(&trace, &cfg).unwrap();
        let b = run_offline(&trace, &cfg).unwrap();
        prop_assert_eq!(a.output.to_bytes(), b.output.to_bytes());
        prop_assert_eq!(&a.stats, &b.stats);
        prop_assert_eq!(trace.len() as u64, a.output.len() as u64 + a.stats.packets_dropped);
        prop_assert!(a.output.is_normalized());
        for ps in &a.stats.policies {
            prop_assert!(ps.frames_dropped <= ps.frames_seen);
            prop_assert!(ps.packets_dropped <= ps.packets_seen);
        }
    }

    #[test]
    fn sharding_is_invisible(spec in spec_strategy(), flagged in prop::collection::vec(0u16..12, 0..4), workers in 2usize..6) {
        let trace = mixed_trace(&spec, &flagged);
        let cfg = CensorConfig::new(chain(), 99);
        let one = run_offline(&trace, &cfg).unwrap();
        let many = run_offline_sharded(&trace, &cfg, workers).unwrap();
        prop_assert_eq!(one.output.to_bytes(), many.output.to_bytes());
        prop_assert_eq!(one.stats, many.stats);
        prop_assert_eq!(one.flagged, many.flagged);
    }

    #[test]
    fn uniform_delay_preserves_flow_order(spec in spec_strategy(), ms in 1u32..500) {
        let trace = mixed_trace(&spec, &[]);
        let run = run_offline(&trace, &CensorConfig::new(vec![PolicyConfig::fixed_delay(ms)], 0)).unwrap();
        prop_assert_eq!(run.output.len(), trace.len());
        for f in 0..12 {
            let before: Vec<u64> = trace.packets.iter().filter(|p| p.flow == Some(flow(f))).map(|p| p.original_index).collect();
            let after: Vec<u64> = run.output.packets.iter().filter(|p| p.flow == Some(flow(f))).map(|p| p.original_index).collect();
            prop_assert_eq!(before, after);
        }
    }

    #[test]
    fn state_bound_and_flag_monotonicity(spec in spec_strategy(), flagged in prop::collection::vec(0u16..12, 1..4), capacity in 4usize..64) {
        let trace = mixed_trace(&spec, &flagged);
        let table = FlowTableConfig { capacity, partitions: 4, ..FlowTableConfig::default() };
        let mut cfg = CensorConfig::new(chain(), 5);
        cfg.table = table;
        let mut censor = Censor::new(&cfg);
        let mut seen = std::collections::BTreeSet::new();
        for p in &trace.packets {
            censor.process(p);
            let now: std::collections::BTreeSet<FlowKey> = censor.flagged().into_iter().map(|f| f.flow).collect();
            if censor.stats().flow_evictions == 0 {
                prop_assert!(seen.is_subset(&now));
            }
            seen = now;
        }
        prop_assert!(censor.stats().max_flow_state_bytes <= 256);
        prop_assert_eq!(censor.stats().state_bound_violations, 0);
    }
}

#[test]
fn tcp_bypasses_webrtc_policies_but_not_loss() {
    let flow: FlowKey = "192.0.2.10:443->192.168.1.20:51000".parse().unwrap();
    let pkts = ddlab::synth::gen_tls_tcp(flow, WEBRTC_ISSUER, 400, Timestamp::from_micros(1)).unwrap();
    let trace = Trace::from_packets(LinkType::Ethernet, pkts);
    let cfg = CensorConfig::new(vec![PolicyConfig::data_channel_block(), PolicyConfig::frame_drop(1.0, 1)], 1);
    let run = run_offline(&trace, &cfg).unwrap();
    assert_eq!(run.output.len(), trace.len());
    assert!(run.flagged.is_empty());
    let cfg = CensorConfig::new(vec![PolicyConfig::uniform_loss(0.5, 1)], 1);
    let run = run_offline(&trace, &cfg).unwrap();
    assert!(run.output.len() < trace.len() && !run.output.is_empty());
    let mut c = Censor::new(&CensorConfig::new(vec![PolicyConfig::fixed_delay(7)], 0));
    assert_eq!(c.process(&trace.packets[0]), Verdict::Delay(7));
}
