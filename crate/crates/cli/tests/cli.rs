use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ddlab::io::{read_capture, write_capture, Trace};
use ddlab::net::LinkType;
use ddlab::DemuxClass;
use serde_json::Value;

fn ddlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddlab")).args(args).output().expect("spawn ddlab")
}

fn ok(args: &[&str]) -> String {
    let out = ddlab(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    serde_json::from_str(lines[0]).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn inspect_video_fixture_lists_flagged_flow() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("v.pcap");
    ok(&["synth", "--scenario", "video", "--seed", "1", "--duration-s", "3", "-o", p(&cap)]);
    let v: Value = serde_json::from_str(&ok(&["inspect", p(&cap), "--json"])).unwrap();
    let flows = v["flows"].as_array().unwrap();
    let media: Vec<&Value> = flows.iter().filter(|f| f["rtp_packets"].as_u64().unwrap() > 0).collect();
    assert_eq!(media.len(), 1);
    let f = media[0];
    assert_eq!(f["webrtc_flagged"], true);
    assert_eq!(f["issuer"], "WebRTC");
    let streams = f["rtp_streams"].as_array().unwrap();
    assert_eq!(streams.len(), 1);
    assert_eq!(streams[0]["payload_types"], serde_json::json!([102]));
    assert_eq!(streams[0]["frames"], 72);
}

#[test]
fn inspect_tls_has_no_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("t.pcap");
    ok(&["synth", "--scenario", "tls", "-o", p(&cap)]);
    let v: Value = serde_json::from_str(&ok(&["inspect", p(&cap), "--json"])).unwrap();
    let flows = v["flows"].as_array().unwrap();
    assert!(!flows.is_empty());
    assert!(flows.iter().all(|f| f["webrtc_flagged"] == false && f["udp"] == false));
}

#[test]
fn inspect_empty_capture() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("e.pcap");
    write_capture(&Trace::new(LinkType::Ethernet), &cap).unwrap();
    let v: Value = serde_json::from_str(&ok(&["inspect", p(&cap), "--json"])).unwrap();
    assert_eq!(v["packets"], 0);
    assert_eq!(v["flows"], serde_json::json!([]));
}

#[test]
fn unreadable_capture_fails_with_one_line() {
    let out = ddlab(&["inspect", "/nonexistent/capture.pcap"]);
    let e = error_json(&out);
    assert_eq!(e["error"], "io");
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn frame_drop_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cap = d.join("in.pcap");
    ok(&["synth", "--scenario", "video", "--seed", "2", "--duration-s", "5", "-o", p(&cap)]);
    let out = d.join("out.pcap");
    let rep = d.join("r.json");
    for i in 0..2 {
        ok(&["attack", "-i", p(&cap), "-o", p(&out), "-r", p(&rep), "--frame-drop", "0.25", "--seed", "7"]);
        fs::rename(&out, d.join(format!("out{i}.pcap"))).unwrap();
        fs::rename(&rep, d.join(format!("r{i}.json"))).unwrap();
    }
    assert_eq!(fs::read(d.join("out0.pcap")).unwrap(), fs::read(d.join("out1.pcap")).unwrap());
    ok(&["report", "--compare", p(&d.join("r0.json")), p(&d.join("r1.json"))]);
    let r = read_json(&d.join("r0.json"));
    assert_eq!(r["seed"], 7);
    assert_eq!(r["config"]["attack"]["policy"][0]["rate"], 0.25);
    assert!(r["stats"]["packets_dropped"].as_u64().unwrap() > 0);
}

#[test]
fn report_compare_detects_difference() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cap = d.join("in.pcap");
    ok(&["synth", "--scenario", "video", "--seed", "2", "--duration-s", "3", "-o", p(&cap)]);
    ok(&["attack", "-i", p(&cap), "-o", p(&d.join("a.pcap")), "-r", p(&d.join("a.json")), "--frame-drop", "0.25", "--seed", "1"]);
    ok(&["attack", "-i", p(&cap), "-o", p(&d.join("b.pcap")), "-r", p(&d.join("b.json")), "--frame-drop", "0.25", "--seed", "2"]);
    let out = ddlab(&["report", "--compare", p(&d.join("a.json")), p(&d.join("b.json"))]);
    assert_eq!(error_json(&out)["error"], "runtime");
}

#[test]
fn data_channel_block_on_snowflake_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cap = d.join("s.pcap");
    let out = d.join("o.pcap");
    let rep = d.join("r.json");
    ok(&["synth", "--scenario", "snowflake", "--seed", "5", "--duration-s", "4", "-o", p(&cap)]);
    ok(&["attack", "-i", p(&cap), "-o", p(&out), "-r", p(&rep), "--block-data-channel"]);
    let r = read_json(&rep);
    let ps = &r["stats"]["policies"][0];
    assert_eq!(ps["policy"], "data_channel_block");
    assert!(ps["app_data_seen"].as_u64().unwrap() > 0);
    // Both directions of the WebRTC flow carry data-channel records; only they go.
    let flagged_app = ps["app_data_dropped"].as_u64().unwrap();
    assert_eq!(r["stats"]["packets_dropped"].as_u64().unwrap(), flagged_app);
    let rtp = |t: &Trace| t.packets.iter().filter(|p| p.demux() == DemuxClass::Rtp).count();
    let before = read_capture(&cap).unwrap();
    let after = read_capture(&out).unwrap();
    assert!(rtp(&before) > 0);
    assert_eq!(rtp(&before), rtp(&after));
    assert_eq!(before.len() - after.len(), flagged_app as usize);
}

#[test]
fn rate_out_of_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[[attack.policy]]\nkind = \"frame_drop\"\nrate = 1.5\n").unwrap();
    let out = ddlab(&["attack", "-c", p(&cfg), "-i", "x.pcap", "-o", "y.pcap"]);
    let e = error_json(&out);
    assert_eq!(e["error"], "config");
    assert_eq!(e["path"], "attack.policy[0].rate");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[sim]\nratez = [0.1]\n").unwrap();
    let e = error_json(&ddlab(&["sim", "-c", p(&cfg)]));
    assert_eq!(e["path"], "sim.ratez");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("c.toml");
    fs::write(&cfg, "seed = 3\n[sim]\nrates = [0.5]\nduration_s = 20.0\n").unwrap();
    let rep = d.join("sim.json");
    ok(&["sim", "-c", p(&cfg), "--seed", "11", "--rates", "0.1", "-r", p(&rep)]);
    let v = read_json(&rep);
    assert_eq!(v["seed"], 11);
    assert_eq!(v["config"]["sim"]["rates"], serde_json::json!([0.1]));
    assert_eq!(v["config"]["sim"]["duration_s"], 20.0);
}

#[test]
fn sim_sweep_emits_one_report_per_rate() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("sim.json");
    let csv = dir.path().join("sim.csv");
    ok(&["sim", "--rates", "0,0.05,0.15,0.25", "--duration-s", "30", "--seed", "1", "-r", p(&rep), "--csv", p(&csv)]);
    let v = read_json(&rep);
    let runs = v["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    let rates: Vec<f64> = runs.iter().map(|r| r["rate"].as_f64().unwrap()).collect();
    assert_eq!(rates, [0.0, 0.05, 0.15, 0.25]);
    assert_eq!(runs[0]["differential"]["no_degradation"], true);
    let body = fs::read_to_string(&csv).unwrap();
    assert!(body.starts_with("rate,window,"));
    assert_eq!(body.lines().count(), 1 + 4 * 30);
}

#[test]
fn detect_labels_fixture_pair() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut labels = Vec::new();
    for model in ["adaptive", "non_adaptive"] {
        let cap = d.join(format!("{model}.pcap"));
        let set = format!("synth.model={{kind=\"{model}\"}}");
        let s: Value = serde_json::from_str(&ok(&[
            "synth", "--scenario", "detect_pair", "--duration-s", "30", "--seed", "9", "--set", &set, "-o", p(&cap),
        ]))
        .unwrap();
        let split = s["split_us"].as_u64().unwrap().to_string();
        let rep = d.join(format!("{model}.json"));
        ok(&["detect", "-i", p(&cap), "--split-us", &split, "-r", p(&rep)]);
        labels.push(read_json(&rep)["verdicts"][0]["verdict"]["label"].clone());
    }
    assert_eq!(labels, ["adaptive", "non_adaptive"]);
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for name in ["a", "b"] {
        ok(&["synth", "--seed", "42", "--duration-s", "3", "-o", p(&d.join(format!("{name}.pcap")))]);
    }
    assert_eq!(fs::read(d.join("a.pcap")).unwrap(), fs::read(d.join("b.pcap")).unwrap());
    ok(&["synth", "--seed", "43", "--duration-s", "3", "-o", p(&d.join("c.pcap"))]);
    assert_ne!(fs::read(d.join("a.pcap")).unwrap(), fs::read(d.join("c.pcap")).unwrap());
}

#[test]
fn sharded_attack_matches_single_threaded() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cap = d.join("s.pcap");
    ok(&["synth", "--seed", "8", "--duration-s", "4", "-o", p(&cap)]);
    ok(&["attack", "-i", p(&cap), "-o", p(&d.join("1.pcap")), "-r", p(&d.join("1.json")), "--frame-drop", "0.3", "--block-data-channel"]);
    ok(&[
        "attack", "-i", p(&cap), "-o", p(&d.join("4.pcap")), "-r", p(&d.join("4.json")), "--frame-drop", "0.3", "--block-data-channel", "--workers", "4",
    ]);
    assert_eq!(fs::read(d.join("1.pcap")).unwrap(), fs::read(d.join("4.pcap")).unwrap());
    let strip = |mut v: Value| {
        v["generated_at_unix_ms"] = Value::Null;
        v["config"]["io"] = Value::Null;
        v["output"] = Value::Null;
        v
    };
    assert_eq!(strip(read_json(&d.join("1.json"))), strip(read_json(&d.join("4.json"))));
}
