//! Differential degradation simulator.
//!
//! A reliable covert channel (windowed ARQ) rides inside the frames of a
//! non-adaptive carrier stream, while an adaptive video source streams on a
//! second flow. Both flows pass through the same censor. The report compares
//! what each side loses.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::net::IpAddr;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::attack::{Censor, CensorConfig, FixedDelay, PolicyConfig};
use crate::io::Trace;
use crate::net::LinkType;
use crate::packet::{FlowKey, Packet, Timestamp, Verdict};
use crate::synth::{default_profile, gen_dtls_flight, WEBRTC_ISSUER, GeneratedFrame, ResolutionProfile, SourceModel, StreamSpec, SynthError, VideoSource};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("{what} = {value} is outside its domain")]
    Domain { what: &'static str, value: f64 },
    #[error("baseline covert goodput is zero")]
    BaselineGoodputZero,
    #[error("baseline video frame rate is zero")]
    BaselineFpsZero,
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("policy `{0}` is not supported by the simulator")]
    UnsupportedPolicy(&'static str),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

/// Probability that a frame of `n` packets loses at least one packet when
/// each is lost independently with probability `q`.
pub fn analytic_frame_loss(q: f64, n: u32) -> Result<f64, SimError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(SimError::Domain { what: "q", value: q });
    }
    if n == 0 {
        return Err(SimError::Domain { what: "n", value: 0.0 });
    }
    Ok(1.0 - (1.0 - q).powi(n as i32))
}

fn d_message_bytes() -> usize {
    1500
}
fn d_rto() -> u64 {
    1000
}
fn d_backoff() -> f64 {
    2.0
}
fn d_rto_cap() -> u64 {
    60_000
}
fn d_window() -> usize {
    4
}
fn d_carrier() -> ResolutionProfile {
    default_profile("1080p").expect("built in")
}

/// Windowed ARQ tunnelled in carrier frames. Messages are packed whole; a
/// frame carries `floor(frame_bytes / message_bytes)` of them at most.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovertChannelModel {
    #[serde(default = "d_message_bytes")]
    pub message_bytes: usize,
    #[serde(default = "d_rto")]
    pub retransmit_timeout_ms: u64,
    #[serde(default = "d_backoff")]
    pub rto_backoff: f64,
    #[serde(default = "d_rto_cap")]
    pub rto_cap_ms: u64,
    #[serde(default = "d_window")]
    pub window_messages: usize,
    #[serde(default = "d_carrier")]
    pub carrier: ResolutionProfile,
}

impl Default for CovertChannelModel {
    fn default() -> Self {
        CovertChannelModel {
            message_bytes: d_message_bytes(),
            retransmit_timeout_ms: d_rto(),
            rto_backoff: d_backoff(),
            rto_cap_ms: d_rto_cap(),
            window_messages: d_window(),
            carrier: d_carrier(),
        }
    }
}

impl CovertChannelModel {
    pub fn validate(&self, path: &str) -> Result<(), SimError> {
        let bad = |k: &str, m: &str| Err(SimError::Invalid { path: format!("{path}.{k}"), message: m.to_owned() });
        if self.message_bytes == 0 {
            return bad("message_bytes", "must be > 0");
        }
        if self.retransmit_timeout_ms == 0 {
            return bad("retransmit_timeout_ms", "must be > 0");
        }
        if !(self.rto_backoff.is_finite() && self.rto_backoff >= 1.0) {
            return bad("rto_backoff", "must be >= 1");
        }
        if self.rto_cap_ms < self.retransmit_timeout_ms {
            return bad("rto_cap_ms", "must be >= retransmit_timeout_ms");
        }
        if self.window_messages == 0 {
            return bad("window_messages", "must be >= 1");
        }
        self.carrier.validate(&format!("{path}.carrier")).map_err(SimError::from)
    }
}

/// One simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSetup {
    #[serde(default)]
    pub covert: CovertChannelModel,
    #[serde(default = "SourceModel::default_adaptive")]
    pub video: SourceModel,
    /// Empty for a baseline run.
    #[serde(default)]
    pub policy: Vec<PolicyConfig>,
    pub duration_s: f64,
    pub seed: u64,
    /// Probability that a dropped frame is recovered by one retransmission
    /// round trip (stand-in for media-layer NACK/FEC); 0 disables it.
    #[serde(default)]
    pub nack_recovery_prob: f64,
}

impl SimSetup {
    pub fn new(policy: Vec<PolicyConfig>, duration_s: f64, seed: u64) -> Self {
        SimSetup {
            covert: CovertChannelModel::default(),
            video: SourceModel::default_adaptive(),
            policy,
            duration_s,
            seed,
            nack_recovery_prob: 0.0,
        }
    }

    pub fn baseline(&self) -> SimSetup {
        SimSetup { policy: Vec::new(), ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.covert.validate("covert")?;
        self.video.validate("video")?;
        crate::attack::validate_chain(&self.policy).map_err(|e| SimError::Invalid { path: e.path, message: e.message })?;
        for p in self.policy.iter().flat_map(|p| p.flatten()) {
            if matches!(p, PolicyConfig::DataChannelBlock(_)) {
                return Err(SimError::UnsupportedPolicy(p.name()));
            }
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(SimError::Invalid { path: "duration_s".into(), message: "must be > 0".into() });
        }
        if !(0.0..=1.0).contains(&self.nack_recovery_prob) {
            return Err(SimError::Invalid { path: "nack_recovery_prob".into(), message: "must be in [0, 1]".into() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub policy: Vec<PolicyConfig>,
    pub seed: u64,
    pub duration_s: f64,
    pub covert_offered_bytes_per_s: f64,
    pub covert_goodput_bytes_per_s: f64,
    /// Lost transmissions over all transmissions, retransmissions included.
    pub covert_message_loss_before_recovery: f64,
    /// Mean time from first transmission to first delivery; absent when
    /// nothing was delivered.
    pub covert_latency_ms: Option<f64>,
    pub covert_messages_delivered: u64,
    pub covert_transmissions: u64,
    pub video_source_fps: f64,
    pub video_delivered_fps: f64,
    pub video_final_profile: String,
    /// Frames the censor dropped over frames sent, both streams.
    pub frame_loss_achieved: f64,
}

/// Per-window time series row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub window: u64,
    pub start_s: f64,
    pub covert_delivered_bytes: u64,
    pub video_profile: String,
    pub video_frames_sent: u64,
    pub video_frames_lost: u64,
}

pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::from("window,start_s,covert_delivered_bytes,video_profile,video_frames_sent,video_frames_lost\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{},{},{},{}\n",
            r.window, r.start_s, r.covert_delivered_bytes, r.video_profile, r.video_frames_sent, r.video_frames_lost
        ));
    }
    out
}

const COVERT_STREAM: u64 = 0x636f_7665_7274;
const VIDEO_STREAM: u64 = 0x7669_6465_6f00;

fn covert_flow() -> FlowKey {
    "10.10.0.1:50000->10.20.0.1:50001".parse().expect("literal")
}

fn video_flow() -> FlowKey {
    "10.10.0.2:50002->10.20.0.2:50003".parse().expect("literal")
}

/// One-way delay the policy adds to packets sent from `ip`.
fn one_way_delay_ms(policy: &[PolicyConfig], ip: IpAddr) -> u64 {
    policy
        .iter()
        .flat_map(|p| p.flatten())
        .filter_map(|p| match p {
            PolicyConfig::FixedDelay(FixedDelay { delay_ms, from }) if from.is_none_or(|f| f == ip) => Some(u64::from(*delay_ms)),
            _ => None,
        })
        .sum()
}

struct FrameFate {
    dropped_by_censor: bool,
    /// Delivery time in microseconds, if the frame got through.
    delivered_us: Option<u64>,
}

struct Link<'a> {
    censor: &'a mut Censor,
    rng: Xoshiro256PlusPlus,
    nack_recovery_prob: f64,
    round_trip_us: u64,
}

impl Link<'_> {
    /// Push every packet of `frame` through the censor.
    fn send(&mut self, frame: &GeneratedFrame) -> FrameFate {
        let mut dropped = false;
        let mut arrival = frame.capture_time.as_micros();
        for p in &frame.packets {
            match self.censor.process(p) {
                Verdict::Drop => dropped = true,
                Verdict::Delay(ms) => arrival = arrival.max(p.timestamp.as_micros() + u64::from(ms) * 1000),
                Verdict::Pass => arrival = arrival.max(p.timestamp.as_micros()),
            }
        }
        if !dropped {
            return FrameFate { dropped_by_censor: false, delivered_us: Some(arrival) };
        }
        let recovered = self.nack_recovery_prob > 0.0 && self.rng.random::<f64>() < self.nack_recovery_prob;
        FrameFate { dropped_by_censor: true, delivered_us: recovered.then_some(arrival + self.round_trip_us) }
    }
}

#[derive(Debug, Clone)]
struct Message {
    first_sent_us: u64,
    delivered_us: Option<u64>,
    rto_ms: u64,
    deadline_us: u64,
    acked: bool,
    queued: bool,
}

/// Run the simulation; returns the report and a per-window time series.
pub fn simulate_detailed(setup: &SimSetup) -> Result<(DegradationReport, Vec<SeriesRow>), SimError> {
    setup.validate()?;
    let covert = &setup.covert;
    let mut censor = Censor::new(&CensorConfig::new(setup.policy.clone(), setup.seed));
    let cflow = covert_flow();
    let forward_ms = one_way_delay_ms(&setup.policy, cflow.src.ip());
    let reverse_ms = one_way_delay_ms(&setup.policy, cflow.dst.ip());
    let frame_interval_us = (1e6 / covert.carrier.fps) as u64;
    let mut link = Link {
        censor: &mut censor,
        rng: Xoshiro256PlusPlus::seed_from_u64(setup.seed ^ 0x6e61_636b),
        nack_recovery_prob: setup.nack_recovery_prob,
        round_trip_us: (forward_ms + reverse_ms) * 1000 + frame_interval_us,
    };
    let end_us = (setup.duration_s * 1e6).round() as u64;
    let window_us = match &setup.video {
        SourceModel::Adaptive { window_s, .. } => window_s * 1e6,
        SourceModel::NonAdaptive { .. } => 1e6,
    };
    let bucket = |t_us: u64| (t_us as f64 / window_us) as usize;
    let mut covert_bytes_per_window: Vec<u64> = Vec::new();

    // covert channel
    let carrier_model = SourceModel::NonAdaptive { profile: covert.carrier.clone() };
    let mut spec = StreamSpec::new(0xc0c0_0001, setup.duration_s, setup.seed ^ COVERT_STREAM);
    spec.mtu_payload_bytes = 1200;
    let mut carrier = VideoSource::new(carrier_model, spec, cflow)?;
    let mut msgs: Vec<Message> = Vec::new();
    let mut outstanding: VecDeque<usize> = VecDeque::new();
    let mut retx: VecDeque<usize> = VecDeque::new();
    let mut acks: BinaryHeap<Reverse<(u64, usize)>> = BinaryHeap::new();
    let (mut offered_msgs, mut transmissions, mut lost_tx) = (0u64, 0u64, 0u64);
    let (mut frames_sent, mut frames_dropped) = (0u64, 0u64);
    while let Some(w) = carrier.next_window() {
        for f in &w.frames {
            let t = f.capture_time.as_micros();
            while let Some(Reverse((at, id))) = acks.peek().copied() {
                if at > t {
                    break;
                }
                acks.pop();
                msgs[id].acked = true;
            }
            outstanding.retain(|&id| !msgs[id].acked);
            for &id in &outstanding {
                let m = &mut msgs[id];
                if !m.queued && m.deadline_us <= t {
                    m.queued = true;
                    m.rto_ms = ((m.rto_ms as f64 * covert.rto_backoff) as u64).min(covert.rto_cap_ms);
                    retx.push_back(id);
                }
            }
            let capacity = f.size_bytes / covert.message_bytes;
            offered_msgs += capacity.min(covert.window_messages) as u64;
            let mut payload = Vec::with_capacity(capacity);
            while payload.len() < capacity {
                let Some(id) = retx.pop_front() else { break };
                if !msgs[id].acked {
                    payload.push(id);
                }
            }
            while payload.len() < capacity && outstanding.len() < covert.window_messages {
                let id = msgs.len();
                msgs.push(Message {
                    first_sent_us: t,
                    delivered_us: None,
                    rto_ms: covert.retransmit_timeout_ms,
                    deadline_us: 0,
                    acked: false,
                    queued: false,
                });
                outstanding.push_back(id);
                payload.push(id);
            }
            frames_sent += 1;
            let fate = link.send(f);
            frames_dropped += u64::from(fate.dropped_by_censor);
            transmissions += payload.len() as u64;
            match fate.delivered_us {
                Some(at) => {
                    for &id in &payload {
                        let m = &mut msgs[id];
                        if m.delivered_us.is_none() && at <= end_us {
                            m.delivered_us = Some(at);
                            let b = bucket(at);
                            if covert_bytes_per_window.len() <= b {
                                covert_bytes_per_window.resize(b + 1, 0);
                            }
                            covert_bytes_per_window[b] += covert.message_bytes as u64;
                        }
                        acks.push(Reverse((at + reverse_ms * 1000, id)));
                    }
                }
                None => lost_tx += payload.len() as u64,
            }
            for &id in &payload {
                let m = &mut msgs[id];
                m.deadline_us = t + m.rto_ms * 1000;
                m.queued = false;
            }
        }
    }

    // adaptive video
    let mut video = VideoSource::new(setup.video.clone(), StreamSpec::new(0x7171_0001, setup.duration_s, setup.seed ^ VIDEO_STREAM), video_flow())?;
    let (mut video_sent, mut video_delivered) = (0u64, 0u64);
    let mut rows = Vec::new();
    while let Some(w) = video.next_window() {
        let mut lost = 0u64;
        for f in &w.frames {
            let fate = link.send(f);
            frames_dropped += u64::from(fate.dropped_by_censor);
            match fate.delivered_us {
                Some(_) => video_delivered += 1,
                None => lost += 1,
            }
        }
        let sent = w.frames.len() as u64;
        video_sent += sent;
        frames_sent += sent;
        rows.push(SeriesRow {
            window: w.index,
            start_s: w.start.as_secs_f64(),
            covert_delivered_bytes: covert_bytes_per_window.get(w.index as usize).copied().unwrap_or(0),
            video_profile: profile_name(video.model(), w.rung),
            video_frames_sent: sent,
            video_frames_lost: lost,
        });
        video.feedback(if sent == 0 { 0.0 } else { lost as f64 / sent as f64 });
    }

    let delivered: Vec<&Message> = msgs.iter().filter(|m| m.delivered_us.is_some()).collect();
    let latency = (!delivered.is_empty()).then(|| {
        delivered.iter().map(|m| (m.delivered_us.expect("filtered") - m.first_sent_us) as f64 / 1000.0).sum::<f64>() / delivered.len() as f64
    });
    let d = setup.duration_s;
    let mb = covert.message_bytes as f64;
    let report = DegradationReport {
        policy: setup.policy.clone(),
        seed: setup.seed,
        duration_s: d,
        covert_offered_bytes_per_s: offered_msgs as f64 * mb / d,
        covert_goodput_bytes_per_s: delivered.len() as f64 * mb / d,
        covert_message_loss_before_recovery: if transmissions == 0 { 0.0 } else { lost_tx as f64 / transmissions as f64 },
        covert_latency_ms: latency,
        covert_messages_delivered: delivered.len() as u64,
        covert_transmissions: transmissions,
        video_source_fps: video_sent as f64 / d,
        video_delivered_fps: video_delivered as f64 / d,
        video_final_profile: video.profile().name.clone(),
        frame_loss_achieved: if frames_sent == 0 { 0.0 } else { frames_dropped as f64 / frames_sent as f64 },
    };
    Ok((report, rows))
}

pub fn simulate(setup: &SimSetup) -> Result<DegradationReport, SimError> {
    simulate_detailed(setup).map(|(r, _)| r)
}

/// Normalized degradations and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Differential {
    pub d_covert: f64,
    pub d_video: f64,
    /// `d_covert / d_video`; positive infinity (serialized as `"inf"`) when
    /// only the covert side degraded.
    #[serde(with = "ratio_serde")]
    pub ratio: f64,
    /// Neither side degraded; `ratio` is 1 by convention.
    pub no_degradation: bool,
}

mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad ratio `{t}`"))),
        }
    }
}

pub fn differential_ratio(report: &DegradationReport, baseline: &DegradationReport) -> Result<Differential, SimError> {
    if baseline.covert_goodput_bytes_per_s <= 0.0 {
        return Err(SimError::BaselineGoodputZero);
    }
    if baseline.video_delivered_fps <= 0.0 {
        return Err(SimError::BaselineFpsZero);
    }
    let d_covert = 1.0 - report.covert_goodput_bytes_per_s / baseline.covert_goodput_bytes_per_s;
    let d_video = 1.0 - report.video_delivered_fps / baseline.video_delivered_fps;
    Ok(ratio_of(d_covert, d_video))
}

/// Ratio with the conventions for a non-degraded video side.
pub fn ratio_of(d_covert: f64, d_video: f64) -> Differential {
    if d_video == 0.0 {
        if d_covert > 0.0 {
            Differential { d_covert, d_video, ratio: f64::INFINITY, no_degradation: false }
        } else {
            Differential { d_covert, d_video, ratio: 1.0, no_degradation: true }
        }
    } else {
        Differential { d_covert, d_video, ratio: d_covert / d_video, no_degradation: false }
    }
}

/// Result of streaming a source through a censor with feedback.
#[derive(Debug, Clone, Default)]
pub struct ClosedLoop {
    /// Everything the source sent, in send order.
    pub sent: Vec<Packet>,
    /// What left the censor, delays applied, ordered by (timestamp, send order).
    pub delivered: Vec<Packet>,
    pub frames_sent: u64,
    pub frames_lost: u64,
    /// Resolution rung in effect for each window.
    pub rungs: Vec<usize>,
}

/// Streams `source` window by window. Packets captured before `attack_from`
/// bypass the censor; later ones are decided by it, and the source is told
/// each window's frame loss.
pub fn closed_loop(mut source: VideoSource, censor: &mut Censor, attack_from: Timestamp) -> ClosedLoop {
    let mut out = ClosedLoop::default();
    let mut delivered: Vec<(Timestamp, u64, Packet)> = Vec::new();
    while let Some(w) = source.next_window() {
        out.rungs.push(w.rung);
        let frames = w.frames.len() as u64;
        let mut lost = 0u64;
        for f in w.frames {
            let mut frame_lost = false;
            for p in f.packets {
                let v = if p.timestamp < attack_from { Verdict::Pass } else { censor.process(&p) };
                let order = out.sent.len() as u64;
                match v {
                    Verdict::Drop => frame_lost = true,
                    Verdict::Pass => delivered.push((p.timestamp, order, p.clone())),
                    Verdict::Delay(ms) => {
                        let mut q = p.clone();
                        q.timestamp = q.timestamp.plus_millis(u64::from(ms));
                        delivered.push((q.timestamp, order, q));
                    }
                }
                out.sent.push(p);
            }
            lost += u64::from(frame_lost);
        }
        out.frames_sent += frames;
        out.frames_lost += lost;
        source.feedback(if frames == 0 { 0.0 } else { lost as f64 / frames as f64 });
    }
    delivered.sort_by_key(|(t, o, _)| (*t, *o));
    out.delivered = delivered.into_iter().map(|(_, _, p)| p).collect();
    out
}

/// Baseline/attack pair for the distinguisher: a WebRTC handshake, then
/// `phase_s` seconds of clean video followed by `phase_s` seconds under
/// frame drop at `rate`, as seen downstream of the censor. Returns the
/// delivered trace and the start of the attack phase.
pub fn detect_pair_fixture(model: SourceModel, seed: u64, phase_s: f64, rate: f64) -> Result<(Trace, Timestamp), SimError> {
    let flow: FlowKey = "198.51.100.7:3478->192.168.1.20:50000".parse().expect("literal");
    let start = Timestamp::from_micros(1_000_000);
    let mut spec = StreamSpec::new(0x00de_7ec7, 2.0 * phase_s, seed);
    spec.start_us = start.as_micros() + 10_000;
    let attack_from = Timestamp::from_micros(spec.start_us).plus_micros((phase_s * 1e6).round() as u64);
    let source = VideoSource::new(model, spec, flow)?;
    let cfg = CensorConfig::new(vec![PolicyConfig::frame_drop(rate, seed)], seed);
    cfg.validate().map_err(|e| SimError::Invalid { path: e.path, message: e.message })?;
    let mut censor = Censor::new(&cfg);
    let flight = gen_dtls_flight(WEBRTC_ISSUER, flow, None, start)?;
    let mut packets = Vec::with_capacity(flight.len());
    for p in flight {
        censor.process(&p);
        packets.push(p);
    }
    packets.extend(closed_loop(source, &mut censor, attack_from).delivered);
    Ok((Trace::from_packets(LinkType::Ethernet, packets), attack_from))
}

fn profile_name(model: &SourceModel, rung: usize) -> String {
    match model {
        SourceModel::Adaptive { ladder, .. } => ladder[rung].name.clone(),
        SourceModel::NonAdaptive { profile } => profile.name.clone(),
    }
}
