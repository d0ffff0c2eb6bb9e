//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line each; exits nonzero if any criterion fails.

use std::collections::HashSet;
use std::time::Instant;

use ddlab::attack::{Censor, CensorConfig, PolicyConfig};
use ddlab::detect::{detect_split, DetectConfig, Label};
use ddlab::dtls::{content_type, extract_issuer, parse_records, reassemble_handshake, MSG_CERTIFICATE};
use ddlab::flowtable::{FlowState, FlowTableConfig};
use ddlab::io::{run_offline, run_offline_sharded, RunReport, Trace};
use ddlab::net::LinkType;
use ddlab::rtp::parse_rtp;
use ddlab::sim::{analytic_frame_loss, detect_pair_fixture, differential_ratio, simulate, SimSetup};
use ddlab::synth::{gen_app_data, gen_audio_stream, gen_dtls_flight, snowflake_fixture, GeneratedFrame, SourceModel, StreamSpec, VideoSource, WEBRTC_ISSUER};
use ddlab::{DemuxClass, FlowKey, Packet, Timestamp};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn flow(i: u32) -> FlowKey {
    format!("10.{}.{}.{}:{}->192.168.0.1:50000", (i >> 16) & 0xff, (i >> 8) & 0xff, i & 0xff, 3478 + (i % 1000)).parse().unwrap()
}

fn video_frames(model: SourceModel, spec: StreamSpec, flow: FlowKey) -> Vec<GeneratedFrame> {
    let mut src = VideoSource::new(model, spec, flow).unwrap();
    let mut out = Vec::new();
    while let Some(w) = src.next_window() {
        out.extend(w.frames);
    }
    out
}

fn write_read(trace: &Trace) -> (Trace, bool) {
    let bytes = trace.to_bytes();
    let back = Trace::parse(&bytes).unwrap();
    let same = back.to_bytes() == bytes;
    (back, same)
}

fn ac1_parser_fidelity() -> Outcome {
    let mut mismatches = 0u64;
    let mut checked = 0u64;

    // DTLS flights: issuer survives fragmentation and the capture file.
    let mut rng = StdRng::seed_from_u64(1);
    let mut flights = Vec::new();
    for i in 0..200u32 {
        let len = rng.random_range(1..=64);
        let issuer: String = (0..len).map(|_| char::from(rng.random_range(0x20u8..0x7f))).collect();
        let frag = if i % 2 == 0 { None } else { Some(rng.random_range(1..100)) };
        let pkts = gen_dtls_flight(&issuer, flow(i), frag, Timestamp::from_micros(u64::from(i) * 10_000)).unwrap();
        flights.push((issuer, pkts));
    }
    let all: Vec<Packet> = flights.iter().flat_map(|(_, p)| p.clone()).collect();
    let (back, mut byte_exact) = write_read(&Trace::from_packets(LinkType::Ethernet, all));
    let mut at = 0;
    for (issuer, pkts) in &flights {
        let got = &back.packets[at..at + pkts.len()];
        at += pkts.len();
        let mut records = Vec::new();
        for p in got {
            records.extend(parse_records(p.payload()).into_result().unwrap_or_default());
        }
        let hs: Vec<_> = records.into_iter().filter(|r| r.content_type == content_type::HANDSHAKE).collect();
        let found = reassemble_handshake(hs.iter())
            .ok()
            .and_then(|m| m.into_iter().find(|m| m.msg_type == MSG_CERTIFICATE))
            .and_then(|m| extract_issuer(&m).ok())
            .map(|c| c.issuer_common_name);
        checked += 1;
        mismatches += u64::from(found.as_deref() != Some(issuer.as_str()));
    }

    // RTP video and DTLS application data: every header re-parses to the
    // generator's values. Ten 70 s streams plus data traffic give 100k+ packets.
    let mut pkts = Vec::new();
    let mut truth: Vec<(u32, u8, u32, bool, usize)> = Vec::new();
    for s in 0..10u32 {
        let mut spec = StreamSpec::new(0x1000 + s, 70.0, u64::from(s));
        spec.payload_type = if s % 2 == 0 { 102 } else { 77 };
        for f in video_frames(SourceModel::default_non_adaptive(), spec.clone(), flow(1000 + s)) {
            let mut left = f.size_bytes;
            let n = f.packets.len();
            for (k, p) in f.packets.into_iter().enumerate() {
                let chunk = if k + 1 == n { left } else { left.min(spec.mtu_payload_bytes) };
                left -= chunk;
                truth.push((spec.ssrc, spec.payload_type, f.rtp_timestamp, k + 1 == n, chunk));
                pkts.push(p);
            }
        }
    }
    let app = gen_app_data(flow(2000), 5000, 300, Timestamp::from_micros(7), 13_000, 9);
    let rtp_count = pkts.len();
    pkts.extend(app);
    let trace = Trace::from_packets(LinkType::Ethernet, pkts);
    let bytes = trace.to_bytes();

    let start = Instant::now();
    let back = Trace::parse(&bytes).unwrap();
    let mut parsed_rtp = Vec::with_capacity(rtp_count);
    let mut app_ok = 0u64;
    for p in &back.packets {
        match p.demux() {
            DemuxClass::Rtp => parsed_rtp.push(parse_rtp(p.payload()).ok()),
            DemuxClass::Dtls => {
                let r = parse_records(p.payload());
                app_ok += u64::from(r.is_complete() && r.records.len() == 1 && r.records[0].content_type == content_type::APPLICATION_DATA);
            }
            _ => {}
        }
    }
    let elapsed = start.elapsed();
    byte_exact &= back.to_bytes() == bytes;
    for (h, t) in parsed_rtp.iter().zip(&truth) {
        checked += 1;
        let ok = h.as_ref().is_some_and(|h| (h.ssrc, h.payload_type, h.timestamp, h.marker, h.payload_length) == *t);
        mismatches += u64::from(!ok);
    }
    mismatches += (truth.len() as u64).abs_diff(parsed_rtp.len() as u64) + (5000 - app_ok);
    checked += 5000;
    let total = back.len();
    outcome(
        byte_exact && mismatches == 0 && total >= 100_000 && elapsed.as_secs_f64() < 5.0,
        format!("byte-exact={byte_exact}, {mismatches} mismatches in {checked} records/headers, {total} packets read+parsed in {:.3} s", elapsed.as_secs_f64()),
    )
}

fn ac2_snowflake_filter() -> Outcome {
    let fx = snowflake_fixture(2024, 20.0).unwrap();
    let run = run_offline(&fx.trace, &CensorConfig::new(vec![PolicyConfig::data_channel_block()], 0)).unwrap();
    let kept: HashSet<u64> = run.output.packets.iter().map(|p| p.original_index).collect();
    let (mut app, mut app_dropped, mut srtp, mut srtp_dropped, mut other, mut other_dropped) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    for p in &fx.trace.packets {
        let dropped = !kept.contains(&p.original_index);
        let key = p.flow.unwrap();
        if key == fx.other_flow || key == fx.other_flow.reverse() {
            other += 1;
            other_dropped += u64::from(dropped);
        } else if p.demux() == DemuxClass::Rtp {
            srtp += 1;
            srtp_dropped += u64::from(dropped);
        } else if parse_records(p.payload()).records.iter().any(|r| r.content_type == content_type::APPLICATION_DATA) {
            app += 1;
            app_dropped += u64::from(dropped);
        }
    }
    let pass = app == fx.webrtc_app_data_packets
        && app_dropped == app
        && srtp == fx.webrtc_srtp_packets
        && srtp_dropped == 0
        && other == fx.other_flow_packets
        && other_dropped == 0;
    outcome(
        pass,
        format!("flagged application_data dropped {app_dropped}/{app}, SRTP dropped {srtp_dropped}/{srtp}, unflagged-flow dropped {other_dropped}/{other}"),
    )
}

fn ln_choose_table(n: u64) -> Vec<f64> {
    let mut lf = vec![0.0; n as usize + 1];
    for i in 1..=n as usize {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    lf
}

/// Central 99% interval of Binomial(n, p): [lo, hi] with at most 0.5% mass
/// on each side outside.
fn binomial_99(n: u64, p: f64) -> (u64, u64) {
    let lf = ln_choose_table(n);
    let pmf = |k: u64| (lf[n as usize] - lf[k as usize] - lf[(n - k) as usize] + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp();
    let mut cdf = 0.0;
    let mut lo = 0;
    for k in 0..=n {
        if cdf + pmf(k) > 0.005 {
            lo = k;
            break;
        }
        cdf += pmf(k);
    }
    let mut tail = 0.0;
    let mut hi = n;
    for k in (0..=n).rev() {
        if tail + pmf(k) > 0.005 {
            hi = k;
            break;
        }
        tail += pmf(k);
    }
    (lo, hi)
}

fn ac3_frame_drop_calibration() -> Outcome {
    let f = flow(77);
    let frames = video_frames(SourceModel::default_non_adaptive(), StreamSpec::new(0xfd, 220.0, 3), f);
    let trace = Trace::from_packets(LinkType::Ethernet, frames.iter().flat_map(|fr| fr.packets.clone()).collect());
    let n = frames.len() as u64;
    let mut pass = n >= 5000;
    let mut parts = Vec::new();
    let mut partial = 0;
    for p in [0.05, 0.15, 0.25, 0.50, 0.70] {
        let run = run_offline(&trace, &CensorConfig::new(vec![PolicyConfig::frame_drop(p, 1000 + (p * 100.0) as u64)], 0)).unwrap();
        let kept: HashSet<u64> = run.output.packets.iter().map(|q| q.original_index).collect();
        let mut dropped = 0u64;
        let mut idx = 0u64;
        for fr in &frames {
            let present = (idx..idx + fr.packets.len() as u64).filter(|i| kept.contains(i)).count();
            idx += fr.packets.len() as u64;
            if present == 0 {
                dropped += 1;
            } else if present != fr.packets.len() {
                partial += 1;
            }
        }
        let (lo, hi) = binomial_99(n, p);
        let inside = (lo..=hi).contains(&dropped);
        pass &= inside;
        parts.push(format!("p={p:.2}: {dropped}/{n} in [{lo},{hi}]{}", if inside { "" } else { " OUT" }));
    }
    pass &= partial == 0;
    outcome(pass, format!("{}; partial frames {partial}", parts.join(", ")))
}

fn ac4_analytic_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for q in [0.01, 0.05, 0.10] {
        for n in [1u32, 5, 10] {
            let frames = 1_000_000;
            let lost = (0..frames).filter(|_| (0..n).fold(false, |any, _| rng.random::<f64>() < q || any)).count();
            let mc = lost as f64 / frames as f64;
            let a = analytic_frame_loss(q, n).unwrap();
            worst = worst.max((mc - a).abs());
            parts.push(format!("({q},{n})={a:.4}/{mc:.4}"));
        }
    }
    outcome(worst <= 0.005, format!("max |analytic - MC| = {worst:.5} over 10^6 frames each; {}", parts.join(" ")))
}

fn ac5_differential_direction() -> Outcome {
    let seeds = 0..10u64;
    let mut ratio = [0.0f64; 2];
    let mut goodput_frac = 0.0;
    let mut fps_frac = 0.0;
    for seed in seeds.clone() {
        let base = simulate(&SimSetup::new(vec![], 300.0, seed)).unwrap();
        for (i, p) in [0.15, 0.25].into_iter().enumerate() {
            let r = simulate(&SimSetup::new(vec![PolicyConfig::frame_drop(p, seed)], 300.0, seed)).unwrap();
            ratio[i] += differential_ratio(&r, &base).unwrap().ratio;
            if i == 1 {
                goodput_frac += r.covert_goodput_bytes_per_s / base.covert_goodput_bytes_per_s;
                fps_frac += r.video_delivered_fps / base.video_delivered_fps;
            }
        }
    }
    let k = seeds.count() as f64;
    let (r15, r25, g, v) = (ratio[0] / k, ratio[1] / k, goodput_frac / k, fps_frac / k);
    outcome(
        r15 > 1.0 && r25 > 1.0 && g <= 0.20 && v >= 0.40,
        format!("mean ratio p=0.15: {r15:.2}, p=0.25: {r25:.2}; at p=0.25 covert goodput {:.1}% and video fps {:.1}% of baseline (10 seeds)", g * 100.0, v * 100.0),
    )
}

fn ac6_detector_accuracy() -> Outcome {
    let cfg = DetectConfig::default();
    let mut wrong = 0;
    let mut min_frames = u64::MAX;
    for seed in 0..100u64 {
        for (model, want) in [(SourceModel::default_adaptive(), Label::Adaptive), (SourceModel::default_non_adaptive(), Label::NonAdaptive)] {
            let (trace, split) = detect_pair_fixture(model, seed, 15.0, 0.25).unwrap();
            let r = detect_split(&trace, split, &cfg).unwrap();
            let ok = r.verdicts.len() == 1 && r.verdicts[0].verdict.label == want;
            if let Some(v) = r.verdicts.first() {
                min_frames = min_frames.min(v.verdict.frames_observed.0.min(v.verdict.frames_observed.1));
            }
            wrong += usize::from(!ok);
        }
    }
    outcome(
        wrong == 0 && min_frames >= 200,
        format!("{wrong} misclassifications over 100 seeds x (adaptive, non-adaptive); min frames per phase {min_frames}"),
    )
}

/// 1000 flows with 100 packets each: handshake, data channel, two video
/// SSRCs and audio.
fn stress_trace() -> Trace {
    let mut pkts = Vec::new();
    for i in 0..1000u32 {
        let f = flow(10_000 + i);
        let t0 = Timestamp::from_micros(u64::from(i) * 37);
        if i % 3 != 0 {
            pkts.extend(gen_dtls_flight(WEBRTC_ISSUER, f, None, t0).unwrap());
        } else {
            pkts.extend(gen_dtls_flight("Example Web CA", f, Some(50), t0).unwrap());
        }
        let media = t0.plus_millis(20);
        pkts.extend(gen_app_data(f, 12, 150, media, 90_000, u64::from(i)));
        pkts.extend(gen_app_data(f.reverse(), 6, 90, media.plus_micros(17), 180_000, u64::from(i)));
        for s in 0..2u32 {
            let mut spec = StreamSpec::new(i * 4 + s, 0.5, u64::from(i));
            spec.start_us = media.as_micros() + u64::from(s) * 5;
            spec.mtu_payload_bytes = 2000;
            let v = video_frames(SourceModel::default_non_adaptive(), spec, f);
            pkts.extend(v.into_iter().flat_map(|fr| fr.packets).take(34));
        }
        pkts.extend(gen_audio_stream(f, i * 4 + 3, 0.5, media).into_iter().take(100 - 3 - 18 - 68 - usize::from(i % 3 == 0)));
    }
    pkts.sort_by_key(|p| p.timestamp);
    Trace::from_packets(LinkType::Ethernet, pkts)
}

fn full_chain() -> Vec<PolicyConfig> {
    vec![PolicyConfig::data_channel_block(), PolicyConfig::frame_drop(0.25, 7), PolicyConfig::uniform_loss(0.02, 8), PolicyConfig::fixed_delay(30)]
}

fn ac7_state_bound(trace: &Trace) -> Outcome {
    let flows: HashSet<FlowKey> = trace.packets.iter().filter_map(|p| p.flow.map(|f| f.canonical())).collect();
    let mut cfg = CensorConfig::new(full_chain(), 1);
    cfg.table = FlowTableConfig { capacity: 4096, ..FlowTableConfig::default() };
    let mut censor = Censor::new(&cfg);
    for p in &trace.packets {
        censor.process(p);
    }
    let s = censor.stats();
    let max = s.max_flow_state_bytes;
    let inline = std::mem::size_of::<FlowState>();
    outcome(
        trace.len() >= 100_000 && flows.len() >= 1000 && max <= 256 && s.state_bound_violations == 0 && inline <= 256,
        format!(
            "{} packets, {} flows (both directions), max serialized state {max} B, in-memory state {inline} B, {} bound violations",
            trace.len(),
            flows.len(),
            s.state_bound_violations
        ),
    )
}

fn report_bytes(trace: &Trace, cfg: &CensorConfig, workers: usize) -> (Vec<u8>, String) {
    let run = if workers == 1 { run_offline(trace, cfg).unwrap() } else { run_offline_sharded(trace, cfg, workers).unwrap() };
    let mut r = RunReport::from_run(&run, trace.len() as u64, serde_json::to_value(cfg).unwrap(), cfg.seed);
    r.generated_at_unix_ms = 0;
    (run.output.to_bytes(), r.to_json())
}

fn ac8_determinism(trace: &Trace) -> Outcome {
    let cfg = CensorConfig::new(full_chain(), 42);
    let (out, rep) = report_bytes(trace, &cfg, 1);
    let mut same = true;
    let mut runs = 1;
    for workers in [1, 2, 4, 8] {
        let (o, r) = report_bytes(trace, &cfg, workers);
        same &= o == out && r == rep;
        runs += 1;
    }
    let snow = snowflake_fixture(5, 10.0).unwrap().trace;
    let (a, ra) = report_bytes(&snow, &cfg, 1);
    let (b, rb) = report_bytes(&snow, &cfg, 3);
    same &= a == b && ra == rb;
    outcome(same, format!("{runs} runs over the stress trace (1, 1, 2, 4, 8 workers) and 2 over the Snowflake fixture produce identical captures and reports"))
}

fn main() {
    let mut results: Vec<(&str, &str, Outcome)> = Vec::new();
    let started = Instant::now();
    results.push(("AC1", "parser fidelity", ac1_parser_fidelity()));
    results.push(("AC2", "data-channel filter", ac2_snowflake_filter()));
    results.push(("AC3", "frame-drop calibration", ac3_frame_drop_calibration()));
    results.push(("AC4", "analytic frame-loss oracle", ac4_analytic_oracle()));
    results.push(("AC5", "differential degradation", ac5_differential_direction()));
    results.push(("AC6", "detector accuracy", ac6_detector_accuracy()));
    let stress = stress_trace();
    results.push(("AC7", "constant per-flow state", ac7_state_bound(&stress)));
    results.push(("AC8", "determinism", ac8_determinism(&stress)));

    let mut failed = 0;
    for (id, name, o) in &results {
        println!("{id} {} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("AC9 N/A web-browsing measurements and application matrix: out of scope, they need live Tor/Protozoa deployments and human-operated applications");
    println!("{} passed, {failed} failed in {:.1} s", results.len() - failed, started.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
