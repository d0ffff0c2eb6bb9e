use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use ddlab::config::{parse_override, CommandConfig, Scenario};
use ddlab::detect::{detect_phases, detect_split, frame_series, frames_csv, DetectorReport};
use ddlab::error::ConfigError;
use ddlab::io::{inspect, read_capture, read_report, run_offline, run_offline_sharded, write_capture, write_report, RunReport, Trace};
use ddlab::sim::{differential_ratio, series_csv, simulate_detailed, detect_pair_fixture, DegradationReport, Differential};
use ddlab::synth::{snowflake_fixture, tls_fixture, video_fixture, StreamSpec};
use ddlab::{FlowKey, Timestamp};
use serde::Serialize;

/// WebRTC traffic laboratory: inspect captures, run censor policies over
/// them, synthesize fixtures, simulate degradation, and detect adaptation.
#[derive(Parser)]
#[command(name = "ddlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key, e.g. `--set attack.table.capacity=1024`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize the flows in a capture.
    Inspect {
        /// io.input
        input: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// io.report
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Apply the configured policy chain to a capture.
    Attack {
        /// io.input
        #[arg(short, long)]
        input: Option<PathBuf>,
        /// io.output
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// io.report
        #[arg(short, long)]
        report: Option<PathBuf>,
        /// seed
        #[arg(long)]
        seed: Option<u64>,
        /// io.workers
        #[arg(long)]
        workers: Option<usize>,
        /// Appends a data_channel_block policy to attack.policy.
        #[arg(long)]
        block_data_channel: bool,
        /// Appends a frame_drop policy with this rate.
        #[arg(long, value_name = "RATE")]
        frame_drop: Option<f64>,
        /// Appends a uniform_packet_loss policy with this rate.
        #[arg(long, value_name = "RATE")]
        uniform_loss: Option<f64>,
        /// Appends a fixed_delay policy.
        #[arg(long, value_name = "MS")]
        delay_ms: Option<u32>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic capture.
    Synth {
        /// synth.scenario: snowflake, video, tls or detect_pair
        #[arg(long)]
        scenario: Option<String>,
        /// io.output
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// synth.duration_s
        #[arg(long)]
        duration_s: Option<f64>,
        /// seed
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate covert-channel and video degradation over a frame-drop sweep.
    Sim {
        /// sim.rates, comma separated
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
        /// sim.duration_s
        #[arg(long)]
        duration_s: Option<f64>,
        /// seed
        #[arg(long)]
        seed: Option<u64>,
        /// io.report
        #[arg(short, long)]
        report: Option<PathBuf>,
        /// io.csv: per-window series for every rate
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Classify video streams as adaptive or non-adaptive from frame sizes.
    Detect {
        /// io.input: the capture (or the baseline capture with --attack-input)
        #[arg(short, long)]
        input: Option<PathBuf>,
        /// detect.attack_input
        #[arg(long)]
        attack_input: Option<PathBuf>,
        /// detect.split_us
        #[arg(long)]
        split_us: Option<u64>,
        /// io.report
        #[arg(short, long)]
        report: Option<PathBuf>,
        /// io.csv: per-frame sizes of both phases
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize run reports, or compare them ignoring the run timestamp.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Exit nonzero unless all reports match apart from the run timestamp.
        #[arg(long)]
        compare: bool,
    },
}

struct Flags {
    overrides: Vec<(String, toml::Value)>,
    seed: Option<u64>,
}

impl Flags {
    fn new(common: &Common) -> Result<Self, ConfigError> {
        let overrides = common.overrides.iter().map(|s| parse_override(s)).collect::<Result<_, _>>()?;
        Ok(Flags { overrides, seed: None })
    }

    fn path(&mut self, key: &str, v: &Option<PathBuf>) {
        if let Some(p) = v {
            self.overrides.push((key.into(), toml::Value::String(p.to_string_lossy().into_owned())));
        }
    }

    fn set(&mut self, key: &str, v: Option<toml::Value>) {
        if let Some(v) = v {
            self.overrides.push((key.into(), v));
        }
    }

    fn load(self, common: &Common) -> Result<CommandConfig, ConfigError> {
        let mut cfg = CommandConfig::from_toml(&read_config(common.config.as_deref())?, &self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_config(path: Option<&Path>) -> Result<String, ConfigError> {
    match path {
        Some(p) => fs::read_to_string(p).map_err(|e| ConfigError::new("", format!("{}: {e}", p.display()))),
        None => Ok(String::new()),
    }
}

fn policy(kind: &str, fields: &[(&str, toml::Value)]) -> toml::Value {
    let mut t = toml::Table::new();
    t.insert("kind".into(), kind.into());
    for (k, v) in fields {
        t.insert((*k).into(), v.clone());
    }
    toml::Value::Table(t)
}

fn require(p: &Option<PathBuf>, key: &str) -> Result<PathBuf, ConfigError> {
    p.clone().ok_or_else(|| ConfigError::new(key, "required"))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).with_context(|| path.display().to_string())
}

fn cmd_inspect(input: Option<PathBuf>, json: bool, report: Option<PathBuf>, common: Common) -> anyhow::Result<()> {
    let mut f = Flags::new(&common)?;
    f.path("io.input", &input);
    f.path("io.report", &report);
    let cfg = f.load(&common)?;
    let trace = read_capture(require(&cfg.io.input, "io.input")?)?;
    let r = inspect(&trace, &cfg.censor());
    if let Some(p) = &cfg.io.report {
        write_json(p, &r)?;
    }
    if json {
        println!("{}", serde_json::to_string_pretty(&r)?);
        return Ok(());
    }
    println!("{} packets, {} flows", r.packets, r.flows.len());
    for fl in &r.flows {
        let streams: Vec<String> = fl
            .rtp_streams
            .iter()
            .map(|s| {
                let pts: Vec<String> = s.payload_types.iter().map(u8::to_string).collect();
                format!("ssrc={:#010x} pt={} packets={} frames={}", s.ssrc, pts.join("/"), s.packets, s.frames)
            })
            .collect();
        println!(
            "{} {} packets={} stun={} dtls={} rtp={} other={} webrtc={} issuer={}{}",
            fl.flow,
            if fl.udp { "udp" } else { "tcp" },
            fl.packets,
            fl.stun_packets,
            fl.dtls_packets,
            fl.rtp_packets,
            fl.other_packets,
            fl.webrtc_flagged,
            fl.issuer.as_deref().unwrap_or("-"),
            if streams.is_empty() { String::new() } else { format!(" [{}]", streams.join("; ")) },
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_attack(
    input: Option<PathBuf>,
    output: Option<PathBuf>,
    report: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
    extra: Vec<toml::Value>,
    common: Common,
) -> anyhow::Result<()> {
    let mut f = Flags::new(&common)?;
    f.path("io.input", &input);
    f.path("io.output", &output);
    f.path("io.report", &report);
    f.set("io.workers", workers.map(|w| toml::Value::Integer(w as i64)));
    f.seed = seed;
    let mut cfg = f.load(&common)?;
    if !extra.is_empty() {
        // Shorthand policy flags append to the configured chain.
        let mut t = toml::Table::new();
        t.insert("policy".into(), toml::Value::Array(extra));
        let added: ddlab::config::AttackSection = parse_policies(t)?;
        cfg.attack.policy.extend(added.policy);
        cfg.validate()?;
    }
    let in_path = require(&cfg.io.input, "io.input")?;
    let out_path = require(&cfg.io.output, "io.output")?;
    let trace = read_capture(&in_path)?;
    let censor = cfg.censor();
    let run = if cfg.io.workers > 1 { run_offline_sharded(&trace, &censor, cfg.io.workers)? } else { run_offline(&trace, &censor)? };
    write_capture(&run.output, &out_path)?;
    let mut r = RunReport::from_run(&run, trace.len() as u64, cfg.to_json(), cfg.seed);
    r.input = Some(in_path.display().to_string());
    r.output = Some(out_path.display().to_string());
    match &cfg.io.report {
        Some(p) => write_report(&r, p)?,
        None => println!("{}", r.to_json()),
    }
    log::info!("{} packets in, {} out, {} dropped", r.packets_in, r.packets_out, r.stats.packets_dropped);
    Ok(())
}

fn parse_policies(t: toml::Table) -> Result<ddlab::config::AttackSection, ConfigError> {
    let mut doc = toml::Table::new();
    doc.insert("attack".into(), toml::Value::Table(t));
    CommandConfig::from_toml(&toml::to_string(&doc).expect("table serializes"), &[]).map(|c| c.attack)
}

#[derive(Serialize)]
struct SynthSummary {
    output: String,
    scenario: Scenario,
    seed: u64,
    packets: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    split_us: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    webrtc_flow: Option<FlowKey>,
}

fn cmd_synth(scenario: Option<String>, output: Option<PathBuf>, duration_s: Option<f64>, seed: Option<u64>, common: Common) -> anyhow::Result<()> {
    let mut f = Flags::new(&common)?;
    f.set("synth.scenario", scenario.map(toml::Value::String));
    f.path("io.output", &output);
    f.set("synth.duration_s", duration_s.map(toml::Value::Float));
    f.seed = seed;
    let cfg = f.load(&common)?;
    let out = require(&cfg.io.output, "io.output")?;
    let s = &cfg.synth;
    let flow: FlowKey = "198.51.100.7:3478->192.168.1.20:50000".parse().expect("literal");
    let mut split_us = None;
    let mut webrtc_flow = None;
    let trace: Trace = match s.scenario {
        Scenario::Snowflake => {
            let fx = snowflake_fixture(cfg.seed, s.duration_s)?;
            webrtc_flow = Some(fx.webrtc_flow);
            fx.trace
        }
        Scenario::Video => {
            let mut spec = StreamSpec::new(s.ssrc, s.duration_s, cfg.seed);
            spec.payload_type = s.payload_type;
            spec.start_us = 1_000_000;
            webrtc_flow = Some(flow);
            video_fixture(s.model.clone(), spec, flow)?
        }
        Scenario::Tls => tls_fixture()?,
        Scenario::DetectPair => {
            let (t, split) = detect_pair_fixture(s.model.clone(), cfg.seed, s.duration_s / 2.0, s.attack_rate)?;
            split_us = Some(split.as_micros());
            webrtc_flow = Some(flow);
            t
        }
    };
    write_capture(&trace, &out)?;
    let summary = SynthSummary { output: out.display().to_string(), scenario: s.scenario, seed: cfg.seed, packets: trace.len(), split_us, webrtc_flow };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[derive(Serialize)]
struct SimRun {
    rate: f64,
    report: DegradationReport,
    differential: Differential,
}

#[derive(Serialize)]
struct SimDocument {
    tool_version: &'static str,
    seed: u64,
    config: serde_json::Value,
    baseline: DegradationReport,
    runs: Vec<SimRun>,
}

fn cmd_sim(
    rates: Option<Vec<f64>>,
    duration_s: Option<f64>,
    seed: Option<u64>,
    report: Option<PathBuf>,
    csv: Option<PathBuf>,
    common: Common,
) -> anyhow::Result<()> {
    let mut f = Flags::new(&common)?;
    f.set("sim.rates", rates.map(|r| toml::Value::Array(r.into_iter().map(toml::Value::Float).collect())));
    f.set("sim.duration_s", duration_s.map(toml::Value::Float));
    f.path("io.report", &report);
    f.path("io.csv", &csv);
    f.seed = seed;
    let cfg = f.load(&common)?;
    let setups = cfg.sim_setups();
    let (baseline, _) = simulate_detailed(&setups[0].baseline())?;
    let mut runs = Vec::new();
    let mut series = String::new();
    for (rate, setup) in cfg.sim.rates.iter().zip(&setups) {
        let (r, rows) = simulate_detailed(setup)?;
        let d = differential_ratio(&r, &baseline)?;
        let body = series_csv(&rows);
        let mut lines = body.lines();
        if series.is_empty() {
            series.push_str(&format!("rate,{}\n", lines.next().unwrap_or_default()));
        } else {
            lines.next();
        }
        for l in lines {
            series.push_str(&format!("{rate},{l}\n"));
        }
        runs.push(SimRun { rate: *rate, report: r, differential: d });
    }
    for run in &runs {
        let r = &run.report;
        eprintln!(
            "rate={:.2} goodput={:.0}B/s fps={:.1} profile={} frame_loss={:.3} ratio={}",
            run.rate,
            r.covert_goodput_bytes_per_s,
            r.video_delivered_fps,
            r.video_final_profile,
            r.frame_loss_achieved,
            run.differential.ratio
        );
    }
    let doc = SimDocument { tool_version: env!("CARGO_PKG_VERSION"), seed: cfg.seed, config: cfg.to_json(), baseline, runs };
    match &cfg.io.report {
        Some(p) => write_json(p, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    if let Some(p) = &cfg.io.csv {
        fs::write(p, series).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct DetectDocument {
    tool_version: &'static str,
    config: serde_json::Value,
    #[serde(flatten)]
    report: DetectorReport,
}

fn cmd_detect(
    input: Option<PathBuf>,
    attack_input: Option<PathBuf>,
    split_us: Option<u64>,
    report: Option<PathBuf>,
    csv: Option<PathBuf>,
    common: Common,
) -> anyhow::Result<()> {
    let mut f = Flags::new(&common)?;
    f.path("io.input", &input);
    f.path("detect.attack_input", &attack_input);
    f.set("detect.split_us", split_us.map(|s| toml::Value::Integer(s as i64)));
    f.path("io.report", &report);
    f.path("io.csv", &csv);
    let cfg = f.load(&common)?;
    let d = &cfg.detect;
    let trace = read_capture(require(&cfg.io.input, "io.input")?)?;
    let (r, frames) = match (&d.attack_input, d.split_us) {
        (Some(a), None) => {
            let attacked = read_capture(a)?;
            let b = frame_series(&trace, &d.classifier, None);
            let u = frame_series(&attacked, &d.classifier, None);
            let csv = format!("{}{}", frames_csv(&b), frames_csv(&u).lines().skip(1).map(|l| format!("{l}\n")).collect::<String>());
            (detect_phases(&b, &u, &d.classifier)?, csv)
        }
        (None, Some(split)) => (detect_split(&trace, Timestamp::from_micros(split), &d.classifier)?, frames_csv(&frame_series(&trace, &d.classifier, None))),
        (Some(_), Some(_)) => return Err(ConfigError::new("detect", "set either attack_input or split_us, not both").into()),
        (None, None) => return Err(ConfigError::new("detect.split_us", "required without detect.attack_input").into()),
    };
    for v in &r.verdicts {
        let frac = v.verdict.reduction_fraction.map_or("-".to_owned(), |x| format!("{x:.3}"));
        eprintln!("{} ssrc={:#010x} label={:?} reduction={} frames={}/{}", v.flow, v.ssrc, v.verdict.label, frac, v.verdict.frames_observed.0, v.verdict.frames_observed.1);
    }
    let doc = DetectDocument { tool_version: env!("CARGO_PKG_VERSION"), config: cfg.to_json(), report: r };
    match &cfg.io.report {
        Some(p) => write_json(p, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    if let Some(p) = &cfg.io.csv {
        fs::write(p, frames).with_context(|| p.display().to_string())?;
    }
    Ok(())
}

fn cmd_report(files: Vec<PathBuf>, compare: bool) -> anyhow::Result<()> {
    let mut reports = Vec::new();
    for p in &files {
        let r = read_report(p).with_context(|| p.display().to_string())?;
        println!(
            "{}: seed={} packets_in={} packets_out={} dropped={} delayed={} flagged_flows={} parse_errors={}",
            p.display(),
            r.seed,
            r.packets_in,
            r.packets_out,
            r.stats.packets_dropped,
            r.stats.packets_delayed,
            r.flagged.len(),
            r.stats.parse_errors
        );
        for ps in &r.stats.policies {
            println!(
                "  {}: packets {}/{} dropped, frames {}/{} dropped, app_data {}/{} dropped",
                ps.policy, ps.packets_dropped, ps.packets_seen, ps.frames_dropped, ps.frames_seen, ps.app_data_dropped, ps.app_data_seen
            );
        }
        reports.push(r);
    }
    if compare {
        let norm = |r: &RunReport| RunReport { generated_at_unix_ms: 0, ..r.clone() };
        if let Some((first, rest)) = reports.split_first() {
            for (i, r) in rest.iter().enumerate() {
                if norm(r) != norm(first) {
                    return Err(anyhow!("{} differs from {}", files[i + 1].display(), files[0].display()));
                }
            }
        }
        println!("reports match");
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Inspect { input, json, report, common } => cmd_inspect(input, json, report, common),
        Command::Attack { input, output, report, seed, workers, block_data_channel, frame_drop, uniform_loss, delay_ms, common } => {
            let mut extra = Vec::new();
            if block_data_channel {
                extra.push(policy("data_channel_block", &[]));
            }
            if let Some(r) = frame_drop {
                extra.push(policy("frame_drop", &[("rate", r.into())]));
            }
            if let Some(r) = uniform_loss {
                extra.push(policy("uniform_packet_loss", &[("rate", r.into())]));
            }
            if let Some(ms) = delay_ms {
                extra.push(policy("fixed_delay", &[("delay_ms", i64::from(ms).into())]));
            }
            cmd_attack(input, output, report, seed, workers, extra, common)
        }
        Command::Synth { scenario, output, duration_s, seed, common } => cmd_synth(scenario, output, duration_s, seed, common),
        Command::Sim { rates, duration_s, seed, report, csv, common } => cmd_sim(rates, duration_s, seed, report, csv, common),
        Command::Detect { input, attack_input, split_us, report, csv, common } => cmd_detect(input, attack_input, split_us, report, csv, common),
        Command::Report { files, compare } => cmd_report(files, compare),
    }
}

/// One JSON object on one line: `{"error":KIND,"path":KEY,"message":TEXT}`.
fn error_line(e: &anyhow::Error) -> (String, u8) {
    let config = e.downcast_ref::<ConfigError>().or(match e.downcast_ref::<ddlab::Error>() {
        Some(ddlab::Error::Config(c)) => Some(c),
        _ => None,
    });
    if let Some(c) = config {
        let mut obj = serde_json::json!({ "error": "config", "message": c.message.replace('\n', " ") });
        if !c.path.is_empty() {
            obj["path"] = c.path.clone().into();
        }
        return (obj.to_string(), 2);
    }
    let io = e.chain().any(|c| c.is::<std::io::Error>() || c.is::<ddlab::io::CaptureError>());
    let kind = if io { "io" } else { "runtime" };
    let mut message = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if !message.contains(&c) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&c);
        }
    }
    let message = message.replace('\n', " ");
    (serde_json::json!({ "error": kind, "message": message }).to_string(), 1)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (line, code) = error_line(&e);
            eprintln!("{line}");
            ExitCode::from(code)
        }
    }
}
